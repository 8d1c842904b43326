//! IDX file ingestion (the MNIST container format).
//!
//! Images: magic `0x00000803`, then big-endian `u32` count, rows, cols, then
//! `count·rows·cols` unsigned bytes. Labels: magic `0x00000801`, a `u32` count,
//! then one byte per label.

use std::path::Path;

use thiserror::Error;

use super::{Dataset, SampleKind};
use crate::autodiff::Tensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum IdxError {
    #[error("{file}: bad magic {found:#010x} at offset 0, expected {expected:#010x}")]
    BadMagic {
        file: &'static str,
        found: u32,
        expected: u32,
    },
    #[error("{file}: truncated at offset {offset}: need {needed} more bytes")]
    Truncated {
        file: &'static str,
        offset: usize,
        needed: usize,
    },
    #[error("{file}: {extra} trailing bytes after offset {offset}")]
    Trailing {
        file: &'static str,
        offset: usize,
        extra: usize,
    },
    #[error("image file holds {images} items but label file holds {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("{file}: {source}")]
    Io {
        file: &'static str,
        #[source]
        source: std::io::Error,
    },
}

struct Cursor<'a> {
    file: &'static str,
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IdxError> {
        let available = self.bytes.len() - self.offset;
        if available < n {
            return Err(IdxError::Truncated {
                file: self.file,
                offset: self.offset,
                needed: n - available,
            });
        }
        let out = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, IdxError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn magic(&mut self, expected: u32) -> Result<(), IdxError> {
        let found = self.u32()?;
        if found != expected {
            return Err(IdxError::BadMagic {
                file: self.file,
                found,
                expected,
            });
        }
        Ok(())
    }

    fn finish(&self) -> Result<(), IdxError> {
        let extra = self.bytes.len() - self.offset;
        if extra != 0 {
            return Err(IdxError::Trailing {
                file: self.file,
                offset: self.offset,
                extra,
            });
        }
        Ok(())
    }
}

/// Images as `(count, rows, cols, pixels scaled to [0, 1])`.
pub fn parse_images(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<f64>), IdxError> {
    let mut cur = Cursor {
        file: "images",
        bytes,
        offset: 0,
    };
    cur.magic(IMAGES_MAGIC)?;
    let count = cur.u32()? as usize;
    let rows = cur.u32()? as usize;
    let cols = cur.u32()? as usize;
    let pixels = cur.take(count * rows * cols)?;
    cur.finish()?;
    Ok((
        count,
        rows,
        cols,
        pixels.iter().map(|&p| f64::from(p) / 255.0).collect(),
    ))
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<usize>, IdxError> {
    let mut cur = Cursor {
        file: "labels",
        bytes,
        offset: 0,
    };
    cur.magic(LABELS_MAGIC)?;
    let count = cur.u32()? as usize;
    let labels = cur.take(count)?;
    cur.finish()?;
    Ok(labels.iter().map(|&l| usize::from(l)).collect())
}

/// Parses an image/label pair already in memory. The class count is one past the largest label.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> crate::error::Result<Dataset> {
    let (count, rows, cols, pixels) = parse_images(images)?;
    let labels = parse_labels(labels)?;
    if labels.len() != count {
        return Err(IdxError::CountMismatch {
            images: count,
            labels: labels.len(),
        }
        .into());
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    Dataset::new(
        Tensor::new(vec![count, rows, cols], pixels)?,
        labels,
        classes,
        SampleKind::Image {
            height: rows,
            width: cols,
        },
    )
}

pub fn load_idx(images: &Path, labels: &Path) -> crate::error::Result<Dataset> {
    let read = |file: &'static str, path: &Path| {
        std::fs::read(path).map_err(|source| IdxError::Io { file, source })
    };
    let image_bytes = read("images", images)?;
    let label_bytes = read("labels", labels)?;
    parse_idx(&image_bytes, &label_bytes)
}

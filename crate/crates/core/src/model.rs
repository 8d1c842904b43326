//! Feature extractor plus classification head, realised as a small ReLU MLP.
//!
//! `dims = [d_in, hidden.., d_f, C]`. Every layer up to `d_f` belongs to the
//! extractor; ReLU follows each of them except the last, so the representation
//! is the raw output of the final extractor layer. The head is a single linear
//! map `d_f -> C`.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

const CHECKPOINT_MAGIC: &str = "rerankmatch-mlp v1";

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// `[fan_in × fan_out]`
    pub weight: Tensor,
    /// `[1 × fan_out]`
    pub bias: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    dims: Vec<usize>,
    layers: Vec<Layer>,
}

/// Parameters registered as leaves of one graph.
#[derive(Clone, Debug)]
pub struct BoundParams {
    layers: Vec<(Var, Var)>,
}

impl BoundParams {
    /// Weight and bias vars, in layer order.
    pub fn vars(&self) -> impl Iterator<Item = Var> + '_ {
        self.layers.iter().flat_map(|&(w, b)| [w, b])
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ForwardOutput {
    /// `[n × d_f]`
    pub representation: Var,
    /// `[n × C]`
    pub logits: Var,
}

fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 3 {
        return Err(Error::config(
            "model.dims",
            format!("need at least [d_in, d_f, classes], got {dims:?}"),
        ));
    }
    if dims.contains(&0) {
        return Err(Error::config("model.dims", format!("zero-sized layer in {dims:?}")));
    }
    Ok(())
}

impl ModelParams {
    /// He-uniform weights (`U(-a, a)` with `a = sqrt(6 / fan_in)`, variance `2 / fan_in`), zero biases.
    pub fn init(seed: u64, dims: &[usize]) -> Result<Self> {
        validate_dims(dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / fan_in as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-bound..bound))
                    .collect();
                Layer {
                    weight: Tensor::new(vec![fan_in, fan_out], data).expect("layer shape"),
                    bias: Tensor::zeros(1, fan_out),
                }
            })
            .collect();
        Ok(Self {
            dims: dims.to_vec(),
            layers,
        })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        validate_dims(dims)?;
        let layers = dims
            .windows(2)
            .map(|w| Layer {
                weight: Tensor::zeros(w[0], w[1]),
                bias: Tensor::zeros(1, w[1]),
            })
            .collect();
        Ok(Self {
            dims: dims.to_vec(),
            layers,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn representation_dim(&self) -> usize {
        self.dims[self.dims.len() - 2]
    }

    pub fn class_count(&self) -> usize {
        self.dims[self.dims.len() - 1]
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn head(&self) -> &Layer {
        self.layers.last().expect("at least one layer")
    }

    /// Flat views of every parameter tensor, weight then bias per layer.
    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    /// Names in the same order as [`ModelParams::tensors`].
    pub fn names(&self) -> Vec<String> {
        (0..self.layers.len())
            .flat_map(|i| [format!("layer{i}.weight"), format!("layer{i}.bias")])
            .collect()
    }

    pub fn bind(&self, graph: &mut Graph) -> BoundParams {
        BoundParams {
            layers: self
                .layers
                .iter()
                .map(|l| (graph.leaf(l.weight.clone()), graph.leaf(l.bias.clone())))
                .collect(),
        }
    }

    pub fn forward(&self, graph: &mut Graph, bound: &BoundParams, x: Var) -> Result<ForwardOutput> {
        let cols = graph.value(x).cols();
        if cols != self.input_dim() {
            return Err(Error::shape(
                "forward",
                format!("input has {cols} features, model expects {}", self.input_dim()),
            ));
        }
        let n_extractor = bound.layers.len() - 1;
        let mut h = x;
        for (i, &(w, b)) in bound.layers[..n_extractor].iter().enumerate() {
            let z = graph.matmul(h, w)?;
            h = graph.add_row(z, b)?;
            if i + 1 < n_extractor {
                h = graph.relu(h);
            }
        }
        let representation = h;
        let (w, b) = bound.layers[n_extractor];
        let z = graph.matmul(representation, w)?;
        let logits = graph.add_row(z, b)?;
        Ok(ForwardOutput {
            representation,
            logits,
        })
    }

    /// Forward pass on constants; returns `(representation, logits)` values.
    pub fn predict(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut g = Graph::new();
        let layers = self
            .layers
            .iter()
            .map(|l| (g.constant(l.weight.clone()), g.constant(l.bias.clone())))
            .collect();
        let bound = BoundParams { layers };
        let xv = g.constant(x.clone());
        let out = self.forward(&mut g, &bound, xv)?;
        Ok((
            g.value(out.representation).clone(),
            g.value(out.logits).clone(),
        ))
    }

    /// Writes a header line with the layer dims followed by every parameter as
    /// little-endian `f64`, weight (row-major) then bias for each layer.
    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> Result<()> {
        let dims: Vec<String> = self.dims.iter().map(usize::to_string).collect();
        writeln!(out, "{CHECKPOINT_MAGIC} dims={}", dims.join(","))?;
        for t in self.tensors() {
            for v in t.data() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(input: R) -> Result<Self> {
        let mut reader = BufReader::new(input);
        let mut header = String::new();
        reader.read_line(&mut header)?;
        let header = header.trim_end_matches('\n');
        let dims_text = header
            .strip_prefix(CHECKPOINT_MAGIC)
            .and_then(|rest| rest.trim_start().strip_prefix("dims="))
            .ok_or_else(|| Error::Checkpoint(format!("bad header line `{header}`")))?;
        let dims = dims_text
            .split(',')
            .map(|d| d.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Checkpoint(format!("bad dims `{dims_text}`: {e}")))?;
        let mut params = Self::zeros(&dims).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut buf = [0u8; 8];
        for t in params.tensors_mut() {
            for v in t.data_mut() {
                reader.read_exact(&mut buf).map_err(|_| {
                    Error::Checkpoint("payload shorter than the header dims require".into())
                })?;
                *v = f64::from_le_bytes(buf);
            }
        }
        if reader.read(&mut buf)? != 0 {
            return Err(Error::Checkpoint("trailing bytes after parameters".into()));
        }
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_checkpoint(std::io::BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_checkpoint(std::fs::File::open(path)?)
    }
}

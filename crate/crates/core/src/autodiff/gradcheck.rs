//! Central-difference gradient checking.

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Compares the reverse-mode gradient of `f` at `x` with central differences.
///
/// `f` builds a scalar from the probe leaf it is handed. Returns the largest
/// `|analytic - numeric| / max(1, |analytic|)` over all coordinates.
pub fn check_gradient<F>(f: F, x: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    assert!(step > 0.0 && step <= 1e-2, "step must lie in (0, 1e-2]");

    let mut g = Graph::new();
    let leaf = g.leaf(x.clone());
    let root = f(&mut g, leaf)?;
    let grads = g.backward(root)?;
    let analytic = grads.get_or_zeros(leaf, x);

    let eval = |probe: Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let leaf = g.leaf(probe);
        let root = f(&mut g, leaf)?;
        Ok(g.value(root).item())
    };

    let mut worst: f64 = 0.0;
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.data_mut()[i] += step;
        let mut minus = x.clone();
        minus.data_mut()[i] -= step;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * step);
        let a = analytic.data()[i];
        worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares() {
        let x = Tensor::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        let err = check_gradient(
            |g, x| {
                let sq = g.mul(x, x)?;
                Ok(g.sum(sq))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "err = {err}");
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // The detached factor hides half the derivative of x², so the check must fail.
        let x = Tensor::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        let err = check_gradient(
            |g, x| {
                let d = g.detach(x);
                let sq = g.mul(x, d)?;
                Ok(g.sum(sq))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err > 0.1);
    }
}

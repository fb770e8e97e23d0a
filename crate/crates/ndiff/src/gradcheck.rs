use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Compares the tape gradient of a scalar function of `input` against central
/// finite differences. Returns the largest
/// `|analytic - numeric| / max(1e-12, |analytic| + |numeric|)` over coordinates.
pub fn grad_check<F>(f: F, input: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let analytic = {
        let mut g = Graph::new();
        let x = g.input(input.clone());
        let loss = f(&mut g, x)?;
        g.backward(loss)?.tensor(x)
    };
    let eval = |t: Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let x = g.input(t);
        let loss = f(&mut g, x)?;
        let v = g.value(loss);
        if v.len() != 1 {
            return Err(Error::NonScalarLoss(v.shape().to_vec()));
        }
        Ok(v.item())
    };

    let mut worst: f64 = 0.0;
    for i in 0..input.len() {
        let mut plus = input.clone();
        plus.data_mut()[i] += eps;
        let mut minus = input.clone();
        minus.data_mut()[i] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        let a = analytic.data()[i];
        let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-12);
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    // Dyadic values and a power-of-two step keep every finite difference exact.
    #[test]
    fn linear_map_is_exact() {
        let w = Tensor::new(&[3, 2], vec![0.5, -1.0, 2.0, 0.25, -0.75, 1.5]).unwrap();
        let x = Tensor::new(&[2, 3], vec![0.125, 0.25, -0.375, 1.0, -2.0, 0.5]).unwrap();
        let err = grad_check(
            |g, x| {
                let w = g.constant(w.clone());
                let y = g.matmul(x, w)?;
                g.sum(y)
            },
            &x,
            2f64.powi(-20),
        )
        .unwrap();
        assert!(err < 1e-10, "{err}");
    }
}

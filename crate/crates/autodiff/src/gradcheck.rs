use crate::{Result, Tensor};

/// Central-difference step used by [`grad_check`].
pub const FD_STEP: f64 = 1e-5;

/// `|a - n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares analytic gradients against central finite differences.
///
/// `f` maps a full parameter list to `(value, gradients)`; it must be
/// deterministic (fix any noise seeds inside it). Returns the maximum
/// relative error over every parameter entry.
pub fn grad_check<F>(f: F, params: &[Tensor]) -> Result<f64>
where
    F: Fn(&[Tensor]) -> Result<(f64, Vec<Tensor>)>,
{
    let (_, analytic) = f(params)?;
    let mut worst = 0.0f64;
    let mut probe = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        for j in 0..p.len() {
            let orig = p.data()[j];
            probe[pi].data_mut()[j] = orig + FD_STEP;
            let (plus, _) = f(&probe)?;
            probe[pi].data_mut()[j] = orig - FD_STEP;
            let (minus, _) = f(&probe)?;
            probe[pi].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(analytic[pi].data()[j], numeric));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Graph;

    #[test]
    fn square_at_three() {
        let f = |p: &[Tensor]| {
            let mut g = Graph::new();
            let x = g.leaf(p[0].clone());
            let y = g.mul(x, x)?;
            let s = g.sum(y);
            let grads = g.backward(s)?;
            Ok((g.value(s).item(), vec![grads.get_or_zeros(x, &p[0])]))
        };
        let p = [Tensor::scalar(3.0)];
        let (_, grads) = f(&p).unwrap();
        assert_eq!(grads[0].item(), 6.0);
        assert!(grad_check(f, &p).unwrap() < 1e-10);
    }

    #[test]
    fn constant_function_has_zero_gradients() {
        let f = |p: &[Tensor]| Ok((42.0, vec![Tensor::zeros(p[0].shape())]));
        let err = grad_check(
            f,
            &[Tensor::from_vec(vec![3], vec![1.0, 2.0, 3.0]).unwrap()],
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }
}

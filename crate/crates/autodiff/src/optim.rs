use crate::{AutodiffError, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Classic (coupled) L2: `weight_decay * param` is added to the gradient.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        Self {
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(AutodiffError::ShapeMismatch {
            op: "adam_step",
            expected: vec![params.len()],
            got: vec![grads.len(), state.m.len()],
        });
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[i].shape() {
            return Err(AutodiffError::ShapeMismatch {
                op: "adam_step",
                expected: p.shape().to_vec(),
                got: g.shape().to_vec(),
            });
        }
    }
    state.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.t as i32);
    for (i, p) in params.iter_mut().enumerate() {
        let g = grads[i].data();
        let pd = p.data_mut();
        let md = state.m[i].data_mut();
        for (j, mj) in md.iter_mut().enumerate() {
            let gj = g[j] + cfg.weight_decay * pd[j];
            *mj = cfg.beta1 * *mj + (1.0 - cfg.beta1) * gj;
        }
        let vd = state.v[i].data_mut();
        for (j, vj) in vd.iter_mut().enumerate() {
            let gj = g[j] + cfg.weight_decay * pd[j];
            *vj = cfg.beta2 * *vj + (1.0 - cfg.beta2) * gj * gj;
        }
        let (md, vd) = (state.m[i].data(), state.v[i].data());
        for j in 0..pd.len() {
            let mhat = md[j] / bc1;
            let vhat = vd[j] / bc2;
            pd[j] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Tensor::norm_sq).sum::<f64>().sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= scale);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = vec![Tensor::from_vec(vec![2], vec![0.5, -1.5]).unwrap()];
        let g = vec![Tensor::zeros(&[2])];
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &g, &mut s, &AdamConfig::default()).unwrap();
        assert_eq!(p[0].data(), &[0.5, -1.5]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // f(x) = x, gradient 1 everywhere
        let mut p = vec![Tensor::scalar(0.0)];
        let mut s = AdamState::new(&p);
        let cfg = AdamConfig {
            lr: 0.1,
            ..Default::default()
        };
        adam_step(&mut p, &[Tensor::scalar(1.0)], &mut s, &cfg).unwrap();
        assert!((p[0].item() + 0.1).abs() < 1e-7);
    }

    #[test]
    fn quadratic_bowl_converges() {
        let mut p = vec![Tensor::from_vec(vec![2], vec![3.0, -2.0]).unwrap()];
        let mut s = AdamState::new(&p);
        let cfg = AdamConfig {
            lr: 0.05,
            ..Default::default()
        };
        let mut steps = 0;
        while p[0].data().iter().any(|v| v.abs() >= 1e-3) {
            let g = p[0].map(|v| 2.0 * v);
            adam_step(&mut p, &[g], &mut s, &cfg).unwrap();
            steps += 1;
            assert!(steps <= 2000, "did not converge: {:?}", p[0].data());
        }
    }

    #[test]
    fn mismatched_state_is_rejected() {
        let mut p = vec![Tensor::zeros(&[2])];
        let mut s = AdamState::new(&[Tensor::zeros(&[3])]);
        assert!(adam_step(
            &mut p,
            &[Tensor::zeros(&[2])],
            &mut s,
            &AdamConfig::default()
        )
        .is_err());
    }

    #[test]
    fn clipping_caps_norm() {
        let mut g = vec![Tensor::from_vec(vec![2], vec![3.0, 4.0]).unwrap()];
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g[0].norm_sq().sqrt() - 1.0).abs() < 1e-12);
    }
}

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_WEIGHT_DECAY: f64 = 0.0005;

/// Momentum buffers plus the optimizer constants.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub velocities: Vec<Tensor>,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Completed update steps.
    pub iteration: usize,
}

impl OptimizerState {
    pub fn new(params: &[Tensor], momentum: f64, weight_decay: f64) -> Self {
        OptimizerState {
            velocities: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            momentum,
            weight_decay,
            iteration: 0,
        }
    }

    pub fn with_defaults(params: &[Tensor]) -> Self {
        Self::new(params, DEFAULT_MOMENTUM, DEFAULT_WEIGHT_DECAY)
    }
}

/// `v ← μ·v − lr·(g + wd·p)`, then `p ← p + v`.
pub fn sgd_step(params: &mut [Tensor], grads: &[Tensor], state: &mut OptimizerState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.velocities.len() {
        return Err(Error::shape(
            "sgd_step",
            "parameter count",
            params.len(),
            grads.len().min(state.velocities.len()),
        ));
    }
    for (i, ((p, g), v)) in params.iter().zip(grads).zip(&state.velocities).enumerate() {
        if !p.same_shape(g) || !p.same_shape(v) {
            return Err(Error::Mismatch(format!(
                "sgd_step: parameter {i} has shape {:?}, gradient {:?}, velocity {:?}",
                p.shape(),
                g.shape(),
                v.shape()
            )));
        }
    }
    let (mu, wd) = (state.momentum, state.weight_decay);
    for ((p, g), v) in params.iter_mut().zip(grads).zip(state.velocities.iter_mut()) {
        for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vv = mu * *vv - lr * (gv + wd * *pv);
            *pv += *vv;
        }
    }
    state.iteration += 1;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_no_decay_is_identity() {
        let mut p = vec![Tensor::vector(vec![1.0, -2.0])];
        let g = vec![Tensor::zeros(&[2])];
        let mut s = OptimizerState::new(&p, 0.9, 0.0);
        sgd_step(&mut p, &g, &mut s, 0.1).unwrap();
        assert_eq!(p[0].data(), &[1.0, -2.0]);
    }

    #[test]
    fn plain_step() {
        let mut p = vec![Tensor::scalar(1.0)];
        let g = vec![Tensor::scalar(1.0)];
        let mut s = OptimizerState::new(&p, 0.0, 0.0);
        sgd_step(&mut p, &g, &mut s, 0.1).unwrap();
        assert!((p[0].data()[0] - 0.9).abs() < 1e-15);
        assert_eq!(s.iteration, 1);
    }

    #[test]
    fn momentum_unrolled() {
        let mut p = vec![Tensor::scalar(0.0)];
        let g = vec![Tensor::scalar(2.0)];
        let mut s = OptimizerState::new(&p, 0.9, 0.0);
        sgd_step(&mut p, &g, &mut s, 0.1).unwrap();
        sgd_step(&mut p, &g, &mut s, 0.1).unwrap();
        // v1 = -0.2, v2 = 0.9·(-0.2) - 0.2 = -0.38, p = -0.58
        assert!((p[0].data()[0] + 0.58).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch() {
        let mut p = vec![Tensor::zeros(&[2])];
        let mut s = OptimizerState::with_defaults(&p);
        assert!(sgd_step(&mut p, &[Tensor::zeros(&[3])], &mut s, 0.1).is_err());
    }
}

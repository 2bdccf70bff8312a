//! ADAM with the usual bias correction.

use super::net::NetworkParams;
use crate::error::{param_err, Result};
use crate::real::Real;
use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moment estimates, one buffer per parameter group.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &NetworkParams<T>) -> Self {
        let zeros = || params.groups.iter().map(|g| vec![T::zero(); g.data.len()]).collect();
        Self {
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }
}

/// One update of every group whose `frozen` flag is false. Frozen groups keep
/// their values and moments.
pub fn adam_step<T: Real>(
    params: &mut NetworkParams<T>,
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    lr: f64,
    frozen: &[bool],
) -> Result<()> {
    let n = params.groups.len();
    if grads.len() != n || state.m.len() != n || state.v.len() != n || frozen.len() != n {
        return param_err("gradient, state and parameter group counts differ");
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::from_f64_lossy(BETA1), T::from_f64_lossy(BETA2));
    let c1 = T::from_f64_lossy(1.0 - BETA1.powi(t));
    let c2 = T::from_f64_lossy(1.0 - BETA2.powi(t));
    let (lr, eps) = (T::from_f64_lossy(lr), T::from_f64_lossy(EPSILON));
    for (i, group) in params.groups.iter_mut().enumerate() {
        if frozen[i] {
            continue;
        }
        let g = grads[i].data();
        if g.len() != group.data.len() || state.m[i].len() != g.len() {
            return param_err(format!("gradient for {} has the wrong length", group.name));
        }
        for (((p, &gj), m), v) in group
            .data
            .iter_mut()
            .zip(g)
            .zip(state.m[i].iter_mut())
            .zip(state.v[i].iter_mut())
        {
            *m = b1 * *m + (T::one() - b1) * gj;
            *v = b2 * *v + (T::one() - b2) * gj * gj;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::net::ParamGroup;
    use crate::tensor::Shape;

    fn params(v: Vec<f64>) -> NetworkParams<f64> {
        NetworkParams {
            groups: vec![ParamGroup {
                name: "p".into(),
                dims: vec![v.len()],
                data: v,
            }],
        }
    }

    fn grad(v: Vec<f64>) -> Vec<Tensor<f64>> {
        vec![Tensor::from_vec(Shape::new(v.len(), 1, 1), v).unwrap()]
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = params(vec![1.0, -2.0]);
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &grad(vec![0.0, 0.0]), &mut s, 0.1, &[false]).unwrap();
        assert_eq!(p.groups[0].data, vec![1.0, -2.0]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = params(vec![1.0, 1.0, 1.0]);
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &grad(vec![3.0, -0.02, 500.0]), &mut s, 0.01, &[false]).unwrap();
        for (v, sign) in p.groups[0].data.iter().zip([1.0, -1.0, 1.0]) {
            assert!((v - (1.0 - 0.01 * sign)).abs() < 1e-6, "{v}");
        }
    }

    #[test]
    fn identical_gradients_identical_trajectories() {
        let run = || {
            let mut p = params(vec![0.5, 0.25]);
            let mut s = AdamState::new(&p);
            for k in 0..20 {
                let g = grad(vec![(k as f64).sin(), 0.1 * k as f64]);
                adam_step(&mut p, &g, &mut s, 1e-2, &[false]).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn frozen_groups_do_not_move() {
        let mut p = params(vec![1.0]);
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &grad(vec![1.0]), &mut s, 0.1, &[true]).unwrap();
        assert_eq!(p.groups[0].data, vec![1.0]);
    }
}

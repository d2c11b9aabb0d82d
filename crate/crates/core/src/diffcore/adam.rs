//! Adam with bias correction.

use super::{DiffError, MlpGrads, MlpParams};

pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct AdamState {
    first: MlpParams,
    second: MlpParams,
    step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &MlpParams, learning_rate: f64) -> Self {
        Self {
            first: params.zeros_like(),
            second: params.zeros_like(),
            step: 0,
            learning_rate,
            beta1: DEFAULT_BETA1,
            beta2: DEFAULT_BETA2,
            eps: DEFAULT_EPS,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One in-place Adam update. Gradients are validated before anything is
/// touched, so a rejected step leaves both `params` and `state` unchanged.
pub fn adam_step(params: &mut MlpParams, grads: &MlpGrads, state: &mut AdamState) -> Result<(), DiffError> {
    if grads.widths() != params.widths() || state.first.widths() != params.widths() {
        return Err(DiffError::Dimension("adam: gradient/state shape differs from parameters".into()));
    }
    for (i, l) in grads.layers.iter().enumerate() {
        if !l.weight.is_finite() || l.bias.iter().any(|b| !b.is_finite()) {
            return Err(DiffError::NonFinite { layer: i });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let lr = state.learning_rate;
    let eps = state.eps;
    let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
        for (((pv, &gv), mv), vv) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mv = b1 * *mv + (1.0 - b1) * gv;
            *vv = b2 * *vv + (1.0 - b2) * gv * gv;
            let mhat = *mv / c1;
            let vhat = *vv / c2;
            *pv -= lr * mhat / (vhat.sqrt() + eps);
        }
    };
    for (i, layer) in params.layers.iter_mut().enumerate() {
        let g = &grads.layers[i];
        let (m, v) = (&mut state.first.layers[i], &mut state.second.layers[i]);
        update(
            layer.weight.as_mut_slice(),
            g.weight.as_slice(),
            m.weight.as_mut_slice(),
            v.weight.as_mut_slice(),
        );
        update(&mut layer.bias, &g.bias, &mut m.bias, &mut v.bias);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{Activation, RngStream};

    #[test]
    fn zero_gradient_leaves_params() {
        let mut rng = RngStream::new(0);
        let mut p = MlpParams::new(&[2, 3, 1], Activation::Identity, &mut rng).unwrap();
        let before = p.clone();
        let mut st = AdamState::new(&p, 0.01);
        let zero = p.zeros_like();
        adam_step(&mut p, &zero, &mut st).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // t = 1: m̂ = g, v̂ = g², update = η g / (|g| + ε) ≈ η sign(g)
        let mut p = MlpParams::zeros(&[2, 2], Activation::Identity).unwrap();
        let mut g = p.zeros_like();
        g.layers[0].weight.as_mut_slice().copy_from_slice(&[0.3, -2.0, 5.0, -0.01]);
        g.layers[0].bias = vec![1e-3, -7.0];
        let mut st = AdamState::new(&p, 0.05);
        adam_step(&mut p, &g, &mut st).unwrap();
        for (pv, gv) in p.flatten().iter().zip(g.flatten()) {
            let expect = -0.05 * gv / (gv.abs() + 1e-8);
            assert!((pv - expect).abs() < 1e-9, "{pv} vs {expect}");
        }
    }

    #[test]
    fn constant_gradient_descends() {
        let mut p = MlpParams::zeros(&[1, 1], Activation::Identity).unwrap();
        let mut g = p.zeros_like();
        g.layers[0].weight[(0, 0)] = 0.7;
        g.layers[0].bias = vec![-0.2];
        let mut st = AdamState::new(&p, 0.01);
        for _ in 0..100 {
            adam_step(&mut p, &g, &mut st).unwrap();
        }
        assert!(p.layers[0].weight[(0, 0)] < -0.5);
        assert!(p.layers[0].bias[0] > 0.5);
    }

    #[test]
    fn non_finite_gradient_reports_layer() {
        let mut p = MlpParams::zeros(&[2, 3, 1], Activation::Identity).unwrap();
        let mut g = p.zeros_like();
        g.layers[1].bias[0] = f64::NAN;
        let mut st = AdamState::new(&p, 0.01);
        let before = p.clone();
        assert!(matches!(adam_step(&mut p, &g, &mut st), Err(DiffError::NonFinite { layer: 1 })));
        assert_eq!(p, before);
        assert_eq!(st.step_count(), 0);
    }
}

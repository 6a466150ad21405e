use serde::{Deserialize, Serialize};

use super::{Array, DiffError};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub step: u64,
    pub first_moment: Vec<Array>,
    pub second_moment: Vec<Array>,
    pub hyper: AdamWConfig,
}

impl OptimizerState {
    pub fn new(params: &[Array], hyper: AdamWConfig) -> Self {
        Self {
            step: 0,
            first_moment: params.iter().map(|p| Array::zeros(p.shape())).collect(),
            second_moment: params.iter().map(|p| Array::zeros(p.shape())).collect(),
            hyper,
        }
    }
}

/// One AdamW update with decoupled weight decay:
/// `w ← w − lr·(m̂/(√v̂ + eps) + wd·w)`.
///
/// All gradients are validated before anything is modified, so a rejected
/// step leaves parameters and state untouched.
pub fn adamw_step(
    params: &mut [Array],
    grads: &[Array],
    names: &[String],
    state: &mut OptimizerState,
) -> Result<(), DiffError> {
    let name = |i: usize| names.get(i).cloned().unwrap_or_else(|| format!("#{i}"));
    if grads.len() != params.len()
        || state.first_moment.len() != params.len()
        || state.second_moment.len() != params.len()
    {
        return Err(DiffError::StateMismatch(name(params.len().min(grads.len()))));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape()
            || state.first_moment[i].shape() != p.shape()
            || state.second_moment[i].shape() != p.shape()
        {
            return Err(DiffError::StateMismatch(name(i)));
        }
        if !g.all_finite() {
            return Err(DiffError::NonFiniteGradient(name(i)));
        }
    }
    state.step += 1;
    let h = state.hyper;
    let bc1 = 1.0 - h.beta1.powi(state.step as i32);
    let bc2 = 1.0 - h.beta2.powi(state.step as i32);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = state.first_moment[i].data_mut();
        let v = state.second_moment[i].data_mut();
        for (((w, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
            *mv = h.beta1 * *mv + (1.0 - h.beta1) * gv;
            *vv = h.beta2 * *vv + (1.0 - h.beta2) * gv * gv;
            let mhat = *mv / bc1;
            let vhat = *vv / bc2;
            *w -= h.lr * (mhat / (vhat.sqrt() + h.eps) + h.weight_decay * *w);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hyper(wd: f64) -> AdamWConfig {
        AdamWConfig {
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: wd,
        }
    }

    fn names() -> Vec<String> {
        vec!["w".into()]
    }

    #[test]
    fn first_step_closed_form() {
        let mut p = vec![Array::scalar(1.0)];
        let mut st = OptimizerState::new(&p, hyper(0.01));
        adamw_step(&mut p, &[Array::scalar(0.5)], &names(), &mut st).unwrap();
        // m̂ = g, v̂ = g², so the adaptive term is g/(|g|+eps) ≈ 1.
        let expected = 1.0 - 0.1 * (0.5 / (0.5 + 1e-8) + 0.01);
        assert!((p[0].item() - expected).abs() < 1e-12);
        assert!((p[0].item() - 0.899).abs() <= 1e-6);
    }

    #[test]
    fn zero_gradient_zero_decay_is_identity() {
        let mut p = vec![Array::vector(vec![0.3, -2.0, 5.0])];
        let before = p.clone();
        let mut st = OptimizerState::new(&p, hyper(0.0));
        adamw_step(&mut p, &[Array::zeros(&[3])], &names(), &mut st).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn two_steps_match_scalar_recomputation() {
        let h = hyper(0.01);
        let mut p = vec![Array::scalar(1.0)];
        let mut st = OptimizerState::new(&p, h);
        let g = 0.5;
        adamw_step(&mut p, &[Array::scalar(g)], &names(), &mut st).unwrap();
        assert_eq!(st.step, 1);
        let after_one = p[0].item();
        adamw_step(&mut p, &[Array::scalar(g)], &names(), &mut st).unwrap();
        assert_eq!(st.step, 2);

        // independent scalar reference
        let (mut w, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        let mut trace = vec![];
        for t in 1..=2 {
            m = h.beta1 * m + (1.0 - h.beta1) * g;
            v = h.beta2 * v + (1.0 - h.beta2) * g * g;
            let mh = m / (1.0 - h.beta1.powi(t));
            let vh = v / (1.0 - h.beta2.powi(t));
            w -= h.lr * (mh / (vh.sqrt() + h.eps) + h.weight_decay * w);
            trace.push(w);
        }
        assert!((after_one - trace[0]).abs() <= 1e-12);
        assert!((p[0].item() - trace[1]).abs() <= 1e-12);
        assert_ne!(after_one - 1.0, p[0].item() - after_one);
    }

    #[test]
    fn non_finite_gradient_is_rejected_untouched() {
        let mut p = vec![Array::scalar(1.0)];
        let mut st = OptimizerState::new(&p, hyper(0.0));
        let err = adamw_step(&mut p, &[Array::scalar(f64::NAN)], &names(), &mut st).unwrap_err();
        assert_eq!(err, DiffError::NonFiniteGradient("w".into()));
        assert_eq!(st.step, 0);
        assert_eq!(p[0].item(), 1.0);
    }
}

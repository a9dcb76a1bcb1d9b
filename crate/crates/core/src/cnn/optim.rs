use serde::{Deserialize, Serialize};

use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        Self {
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected Adam update of every parameter tensor.
pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState, cfg: &AdamConfig) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        assert_eq!(p.len(), g.len());
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        for (i, (pv, &gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gv;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gv * gv;
            let mh = m[i] / c1;
            let vh = v[i] / c2;
            *pv -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = vec![Tensor::from_fn(&[3], |i| i as f64)];
        let before = p.clone();
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &[Tensor::zeros(&[3])], &mut st, &AdamConfig::default());
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_is_lr_times_sign() {
        let mut p = vec![Tensor::zeros(&[3])];
        let g = Tensor::new(&[3], vec![0.3, -7.0, 1e-3]).unwrap();
        let mut st = AdamState::new(&p);
        let cfg = AdamConfig::default();
        adam_step(&mut p, &[g.clone()], &mut st, &cfg);
        for (pv, gv) in p[0].data().iter().zip(g.data()) {
            // m_hat = g, v_hat = g^2 at t = 1
            let expect = -cfg.lr * gv / (gv.abs() + cfg.eps);
            assert!((pv - expect).abs() < 1e-15);
            assert!((pv + cfg.lr * gv.signum()).abs() < 1e-7);
        }
    }

    #[test]
    fn descends_a_quadratic() {
        // f(x) = (x - 3)^2
        let f = |x: f64| (x - 3.0).powi(2);
        let mut p = vec![Tensor::filled(&[1], 0.0)];
        let mut st = AdamState::new(&p);
        let cfg = AdamConfig { lr: 0.1, ..Default::default() };
        let mut last = f(0.0);
        for _ in 0..2 {
            let x = p[0].data()[0];
            adam_step(&mut p, &[Tensor::filled(&[1], 2.0 * (x - 3.0))], &mut st, &cfg);
            let now = f(p[0].data()[0]);
            assert!(now < last);
            last = now;
        }
    }
}

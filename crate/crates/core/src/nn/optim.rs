//! AdamW with decoupled weight decay, and a plateau-triggered learning-rate
//! halving schedule.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::params::{Gradients, ParamSet};
use super::tensor::Tensor;

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
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamWState {
    pub step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamWState {
    pub fn new(params: &ParamSet) -> Self {
        let zeros: Vec<Tensor> = params
            .ids()
            .map(|id| Tensor::zeros(params.value(id).shape()))
            .collect();
        Self {
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }
}

/// One bias-corrected AdamW update. Parameters without a gradient are
/// treated as having a zero gradient (they still decay).
pub fn adamw_step(
    params: &mut ParamSet,
    grads: &Gradients,
    state: &mut AdamWState,
    cfg: &AdamWConfig,
) {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let i = id.0;
        let grad = grads.get(id);
        let m = state.first[i].data_mut();
        let v = state.second[i].data_mut();
        let theta = params.value_mut(id).data_mut();
        for k in 0..theta.len() {
            let g = grad.map_or(0.0, |t| t.data()[k]);
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g;
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            let old = theta[k];
            theta[k] =
                old - cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps) - cfg.lr * cfg.weight_decay * old;
        }
    }
}

/// Halves the learning rate when the moving average of the loss has not
/// reached a new minimum for `patience` consecutive steps.
#[derive(Clone, Debug)]
pub struct PlateauScheduler {
    window: usize,
    patience: usize,
    recent: VecDeque<f64>,
    running_sum: f64,
    best: f64,
    stale: usize,
    reductions: usize,
}

impl PlateauScheduler {
    pub fn new(window: usize, patience: usize) -> Self {
        Self {
            window: window.max(1),
            patience: patience.max(1),
            recent: VecDeque::new(),
            running_sum: 0.0,
            best: f64::INFINITY,
            stale: 0,
            reductions: 0,
        }
    }

    /// Records a loss; returns the factor to apply to the learning rate
    /// (1.0 or 0.5).
    pub fn observe(&mut self, loss: f64) -> f64 {
        self.recent.push_back(loss);
        self.running_sum += loss;
        if self.recent.len() > self.window {
            self.running_sum -= self.recent.pop_front().unwrap_or(0.0);
        }
        if self.recent.len() < self.window {
            return 1.0;
        }
        let avg = self.running_sum / self.window as f64;
        if avg < self.best {
            self.best = avg;
            self.stale = 0;
            return 1.0;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            self.stale = 0;
            self.best = avg;
            self.reductions += 1;
            return 0.5;
        }
        1.0
    }

    pub fn moving_average(&self) -> Option<f64> {
        (self.recent.len() == self.window).then(|| self.running_sum / self.window as f64)
    }

    pub fn reductions(&self) -> usize {
        self.reductions
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::graph::Graph;
    use approx::assert_abs_diff_eq;

    fn scalar_set(v: f64) -> (ParamSet, crate::nn::ParamId) {
        let mut ps = ParamSet::default();
        let id = ps.add("theta", Tensor::scalar(v));
        (ps, id)
    }

    fn grads_of(ps: &ParamSet, id: crate::nn::ParamId, g: f64) -> Gradients {
        let mut out = Gradients::zeros_like(ps);
        out.accumulate(id, &Tensor::scalar(g));
        out
    }

    #[test]
    fn first_step_moves_by_lr() {
        let (mut ps, id) = scalar_set(0.5);
        let mut st = AdamWState::new(&ps);
        let cfg = AdamWConfig {
            lr: 0.01,
            weight_decay: 0.0,
            ..Default::default()
        };
        let grads = grads_of(&ps, id, 1.0);
        adamw_step(&mut ps, &grads, &mut st, &cfg);
        assert_abs_diff_eq!(ps.value(id).item(), 0.5 - 0.01, epsilon = 1e-9);
    }

    #[test]
    fn zero_gradient_is_pure_decay() {
        let (mut ps, id) = scalar_set(2.0);
        let mut st = AdamWState::new(&ps);
        let cfg = AdamWConfig {
            lr: 0.1,
            weight_decay: 0.5,
            ..Default::default()
        };
        let grads = grads_of(&ps, id, 0.0);
        adamw_step(&mut ps, &grads, &mut st, &cfg);
        assert_abs_diff_eq!(
            ps.value(id).item(),
            2.0 * (1.0 - 0.1 * 0.5),
            epsilon = 1e-15
        );
    }

    #[test]
    fn quadratic_descends_monotonically_after_warmup() {
        let (mut ps, id) = scalar_set(1.0);
        let mut st = AdamWState::new(&ps);
        let cfg = AdamWConfig {
            lr: 0.1,
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut trace = Vec::new();
        for _ in 0..100 {
            let grads = {
                let mut g = Graph::new(&ps);
                let x = g.param(id);
                let sq = g.mul(x, x).unwrap();
                g.backward(sq).unwrap()
            };
            adamw_step(&mut ps, &grads, &mut st, &cfg);
            trace.push(ps.value(id).item().abs());
        }
        // Adam overshoots zero eventually; the first stretch is the
        // monotone descent phase.
        let warmup = 2;
        let descent: Vec<_> = trace.iter().skip(warmup).take(8).collect();
        assert!(descent.windows(2).all(|w| w[1] < w[0]), "{descent:?}");
        assert!(trace.last().unwrap() < &0.05, "final {:?}", trace.last());
    }

    #[test]
    fn plateau_halves_after_patience() {
        let mut s = PlateauScheduler::new(2, 3);
        assert_eq!(s.observe(1.0), 1.0);
        assert_eq!(s.observe(1.0), 1.0); // window full, new best
        assert_eq!(s.observe(1.0), 1.0);
        assert_eq!(s.observe(1.0), 1.0);
        assert_eq!(s.observe(1.0), 0.5);
        assert_eq!(s.reductions(), 1);
        assert_eq!(s.observe(0.1), 1.0);
    }
}

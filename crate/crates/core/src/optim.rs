//! First-order optimizers over flat parameter vectors.

use serde::{Deserialize, Serialize};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl OptimizerKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sgd" => Some(OptimizerKind::Sgd),
            "adam" => Some(OptimizerKind::Adam),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        }
    }
}

/// Optimizer state for one parameter vector. Minimizes: `step` moves
/// against the gradient.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, len: usize) -> Self {
        let (m, v) = match kind {
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
            OptimizerKind::Adam => (vec![0.0; len], vec![0.0; len]),
        };
        Optimizer {
            kind,
            lr,
            m,
            v,
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        debug_assert_eq!(params.len(), grad.len());
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= self.lr * g;
                }
            }
            OptimizerKind::Adam => {
                self.t += 1;
                let bc1 = 1.0 - ADAM_BETA1.powi(self.t);
                let bc2 = 1.0 - ADAM_BETA2.powi(self.t);
                for (i, (p, g)) in params.iter_mut().zip(grad).enumerate() {
                    let m = &mut self.m[i];
                    let v = &mut self.v[i];
                    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p -= self.lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // f(p) = Σ c_i (p_i − t_i)²
    fn quadratic(p: &[f64]) -> (f64, Vec<f64>) {
        let c = [1.0, 4.0, 0.5];
        let t = [1.0, -2.0, 3.0];
        let mut v = 0.0;
        let mut g = vec![0.0; 3];
        for i in 0..3 {
            v += c[i] * (p[i] - t[i]).powi(2);
            g[i] = 2.0 * c[i] * (p[i] - t[i]);
        }
        (v, g)
    }

    #[test]
    fn both_optimizers_descend_monotonically() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let mut p = vec![0.0; 3];
            let mut opt = Optimizer::new(kind, 1e-3, 3);
            let (mut last, _) = quadratic(&p);
            for _ in 0..100 {
                let (_, g) = quadratic(&p);
                opt.step(&mut p, &g);
                let (v, _) = quadratic(&p);
                assert!(v < last, "{kind:?}: {v} !< {last}");
                last = v;
            }
        }
    }

    #[test]
    fn adam_first_step_is_lr_times_sign() {
        let mut p = vec![0.0, 0.0];
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.1, 2);
        opt.step(&mut p, &[3.0, -0.001]);
        assert!((p[0] + 0.1).abs() < 1e-9);
        assert!((p[1] - 0.1).abs() < 1e-5);
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let mut p = vec![1.5, -2.0];
            let mut opt = Optimizer::new(kind, 0.0, 2);
            opt.step(&mut p, &[10.0, -3.0]);
            assert_eq!(p, vec![1.5, -2.0]);
        }
    }
}

//! First-order optimizers over flat parameter slices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Adagrad { lr: f64, eps: f64 },
    SgdMomentum { lr: f64, momentum: f64 },
}

impl OptimizerKind {
    pub fn adagrad(lr: f64) -> Self {
        OptimizerKind::Adagrad { lr, eps: 1e-8 }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerKind::Adagrad { lr, .. } | OptimizerKind::SgdMomentum { lr, .. } => lr,
        }
    }
}

/// Optimizer hyperparameters plus per-parameter accumulators (squared
/// gradients for Adagrad, velocity for momentum SGD).
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub weight_decay: f64,
    accum: Vec<f64>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, weight_decay: f64, param_count: usize) -> Result<Self> {
        let lr = kind.lr();
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::config(format!(
                "learning rate must be >= 0, got {lr}"
            )));
        }
        if !(weight_decay >= 0.0) {
            return Err(Error::config("weight decay must be nonnegative"));
        }
        if let OptimizerKind::SgdMomentum { momentum, .. } = kind {
            if !(0.0..1.0).contains(&momentum) {
                return Err(Error::config(format!("momentum {momentum} outside [0, 1)")));
            }
        }
        Ok(Self {
            kind,
            weight_decay,
            accum: vec![0.0; param_count],
        })
    }

    pub fn lr(&self) -> f64 {
        self.kind.lr()
    }

    pub fn set_lr(&mut self, new_lr: f64) {
        match &mut self.kind {
            OptimizerKind::Adagrad { lr, .. } | OptimizerKind::SgdMomentum { lr, .. } => {
                *lr = new_lr
            }
        }
    }

    pub fn accumulators(&self) -> &[f64] {
        &self.accum
    }

    /// One update. Weight decay shrinks `p -= lr * wd * p` first and never
    /// enters the accumulators.
    ///
    /// - Adagrad: `acc += g^2; p -= lr * g / (sqrt(acc) + eps)`
    /// - Momentum: `v = mu * v - lr * g; p += v`
    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>) -> Result<()> {
        let total: usize = params.iter().map(|s| s.len()).sum();
        let gtotal: usize = grads.iter().map(|s| s.len()).sum();
        if total != self.accum.len() || gtotal != total || params.len() != grads.len() {
            return Err(Error::Structure(format!(
                "optimizer holds {} accumulators but got {total} parameters and {gtotal} gradients",
                self.accum.len()
            )));
        }
        let shrink = self.lr() * self.weight_decay;
        let mut acc = self.accum.iter_mut();
        for (p, g) in params.into_iter().zip(grads) {
            for (p, &g) in p.iter_mut().zip(g) {
                let a = acc.next().expect("length checked");
                if shrink != 0.0 {
                    *p -= shrink * *p;
                }
                match self.kind {
                    OptimizerKind::Adagrad { lr, eps } => {
                        *a += g * g;
                        if g != 0.0 {
                            *p -= lr * g / (a.sqrt() + eps);
                        }
                    }
                    OptimizerKind::SgdMomentum { lr, momentum } => {
                        *a = momentum * *a - lr * g;
                        *p += *a;
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn step1(opt: &mut OptimizerState, p: &mut [f64], g: &[f64]) {
        opt.step(vec![p], vec![g]).unwrap();
    }

    #[test]
    fn first_adagrad_step_normalizes() {
        let mut opt =
            OptimizerState::new(OptimizerKind::Adagrad { lr: 1.0, eps: 1e-8 }, 0.0, 1).unwrap();
        let mut p = [0.0];
        step1(&mut opt, &mut p, &[3.0]);
        assert_relative_eq!(p[0], -1.0, epsilon = 1e-8);
        assert_eq!(opt.accumulators(), &[9.0]);
    }

    #[test]
    fn momentum_two_steps() {
        let mut opt = OptimizerState::new(
            OptimizerKind::SgdMomentum {
                lr: 0.1,
                momentum: 0.9,
            },
            0.0,
            1,
        )
        .unwrap();
        let mut p = [0.0];
        step1(&mut opt, &mut p, &[1.0]);
        step1(&mut opt, &mut p, &[1.0]);
        // v1 = -0.1, v2 = 0.9 * -0.1 - 0.1 = -0.19
        assert_relative_eq!(p[0], -0.29, epsilon = 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        for kind in [
            OptimizerKind::adagrad(0.5),
            OptimizerKind::SgdMomentum {
                lr: 0.5,
                momentum: 0.9,
            },
        ] {
            let mut opt = OptimizerState::new(kind, 0.0, 3).unwrap();
            let mut p = [1.0, -2.0, 3.5];
            step1(&mut opt, &mut p, &[0.0; 3]);
            assert_eq!(p, [1.0, -2.0, 3.5]);
        }
    }

    #[test]
    fn weight_decay_is_decoupled() {
        let mut opt = OptimizerState::new(OptimizerKind::adagrad(0.1), 0.5, 1).unwrap();
        let mut p = [2.0];
        step1(&mut opt, &mut p, &[0.0]);
        assert_relative_eq!(p[0], 2.0 - 0.1 * 0.5 * 2.0);
        assert_eq!(opt.accumulators(), &[0.0]);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut opt = OptimizerState::new(OptimizerKind::adagrad(0.1), 0.0, 2).unwrap();
        let mut p = [0.0];
        assert!(opt.step(vec![&mut p[..]], vec![&[1.0][..]]).is_err());
    }

    #[test]
    fn bad_hyperparameters() {
        assert!(OptimizerState::new(OptimizerKind::adagrad(-1.0), 0.0, 1).is_err());
        assert!(OptimizerState::new(OptimizerKind::adagrad(1.0), -0.1, 1).is_err());
        assert!(OptimizerState::new(
            OptimizerKind::SgdMomentum {
                lr: 0.1,
                momentum: 1.0
            },
            0.0,
            1
        )
        .is_err());
    }
}

//! Central-difference checks of the analytic gradients.
//!
//! A check passes when `|analytic - numeric| <= max(rel_tol * max(|analytic|,
//! |numeric|), abs_floor)`. The floor absorbs the `eps / h` rounding noise of
//! the difference quotient on near-zero gradients.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::losses::{double_sigmoid_grads, double_sigmoid_loss, LossConfig};
use crate::nn::{init_network, AbstainNetwork, NetworkSpec, RejectionMode, RejectionSpec};
use crate::rng::SplitMix64;
use crate::training::sample_objective;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    pub step: f64,
    pub rel_tol: f64,
    pub abs_floor: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            step: 1e-5,
            rel_tol: 1e-5,
            abs_floor: 1e-8,
        }
    }
}

impl Tolerance {
    pub fn accepts(&self, analytic: f64, numeric: f64) -> bool {
        let err = (analytic - numeric).abs();
        err <= (self.rel_tol * analytic.abs().max(numeric.abs())).max(self.abs_floor)
    }
}

/// Worst disagreement seen over a set of scalar gradient entries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Worst {
    pub checked: usize,
    pub failures: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// `|a - n| / max(|a|, |n|)`, or 0 when both vanish.
    pub rel_err: f64,
}

impl Worst {
    fn new() -> Self {
        Self {
            checked: 0,
            failures: 0,
            index: 0,
            analytic: 0.0,
            numeric: 0.0,
            rel_err: 0.0,
        }
    }

    fn push(&mut self, index: usize, analytic: f64, numeric: f64, tol: &Tolerance) {
        let scale = analytic.abs().max(numeric.abs());
        let rel_err = if scale == 0.0 {
            0.0
        } else {
            (analytic - numeric).abs() / scale
        };
        let entry = Worst {
            checked: 1,
            failures: usize::from(!tol.accepts(analytic, numeric)),
            index,
            analytic,
            numeric,
            rel_err,
        };
        self.merge(&entry);
    }

    /// Failing entries outrank passing ones; ties go to the larger `rel_err`.
    fn merge(&mut self, other: &Worst) {
        let take = (other.failures > 0, other.rel_err) > (self.failures > 0, self.rel_err)
            || self.checked == 0;
        self.checked += other.checked;
        self.failures += other.failures;
        if take {
            self.index = other.index;
            self.analytic = other.analytic;
            self.numeric = other.numeric;
            self.rel_err = other.rel_err;
        }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// `(dL/dmargin, dL/drho)` of the double sigmoid loss against central differences.
pub fn check_loss(margin: f64, rho: f64, cfg: &LossConfig, tol: &Tolerance) -> Worst {
    let h = tol.step;
    let (dm, drho) = double_sigmoid_grads(margin, rho, cfg);
    let nm = (double_sigmoid_loss(margin + h, rho, cfg)
        - double_sigmoid_loss(margin - h, rho, cfg))
        / (2.0 * h);
    let nr = (double_sigmoid_loss(margin, rho + h, cfg)
        - double_sigmoid_loss(margin, rho - h, cfg))
        / (2.0 * h);
    let mut w = Worst::new();
    w.push(0, dm, nm, tol);
    w.push(1, drho, nr, tol);
    w
}

/// Every parameter gradient of the combined per-sample loss against central
/// differences, in [`AbstainNetwork::params_to_vec`] order.
pub fn check_network(
    net: &AbstainNetwork,
    x: &[f64],
    label: i8,
    cfg: &LossConfig,
    tol: &Tolerance,
) -> Result<Worst> {
    let (out, trace) = net.forward(x)?;
    let (_, _, up) = sample_objective(&out, label, cfg);
    let analytic = net.backward(&trace, &up)?.to_vec();
    let loss_at =
        |n: &AbstainNetwork| -> Result<f64> { Ok(sample_objective(&n.predict(x)?, label, cfg).0) };

    let mut probe = net.clone();
    let mut w = Worst::new();
    let mut flat = 0;
    let shapes: Vec<usize> = net.param_slices().iter().map(|s| s.len()).collect();
    for (slice, len) in shapes.into_iter().enumerate() {
        for j in 0..len {
            let orig = probe.param_slices_mut()[slice][j];
            probe.param_slices_mut()[slice][j] = orig + tol.step;
            let up_loss = loss_at(&probe)?;
            probe.param_slices_mut()[slice][j] = orig - tol.step;
            let down_loss = loss_at(&probe)?;
            probe.param_slices_mut()[slice][j] = orig;
            w.push(
                flat,
                analytic[flat],
                (up_loss - down_loss) / (2.0 * tol.step),
                tol,
            );
            flat += 1;
        }
    }
    Ok(w)
}

/// One randomized configuration of the gradient suite.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCase {
    pub net: AbstainNetwork,
    pub x: Vec<f64>,
    pub label: i8,
    pub loss: LossConfig,
    pub margin: f64,
    pub rho: f64,
}

fn widths(rng: &mut SplitMix64, max_layers: usize, max_width: usize) -> Vec<usize> {
    (0..rng.below(max_layers + 1))
        .map(|_| 1 + rng.below(max_width))
        .collect()
}

/// Small random architecture with every parameter drawn from `U(-1, 1)`.
///
/// Covers both band modes, optional prediction-head depth and an auxiliary
/// head mixed in with `alpha < 1` half of the time.
pub fn random_case(seed: u64) -> Result<GradCase> {
    let mut rng = SplitMix64::new(seed);
    let input_dim = 1 + rng.below(4);
    let mut body = vec![input_dim];
    body.extend((0..1 + rng.below(3)).map(|_| 1 + rng.below(6)));
    let rejection = if rng.bernoulli(0.5) {
        RejectionSpec::Scalar
    } else {
        RejectionSpec::Instance {
            hidden: widths(&mut rng, 2, 4),
        }
    };
    let with_aux = rng.bernoulli(0.5);
    let spec = NetworkSpec {
        widths: body,
        pred_hidden: widths(&mut rng, 2, 4),
        rejection,
        aux_hidden: with_aux.then(|| widths(&mut rng, 1, 4)),
        dropout: 0.0,
    };
    let mut net = init_network(&spec, rng.next_u64())?;
    for slice in net.param_slices_mut() {
        slice.iter_mut().for_each(|p| *p = rng.uniform(-1.0, 1.0));
    }
    // keep a scalar band off the ReLU kink
    if let RejectionMode::Scalar { raw_rho } = &mut net.rej_mode {
        *raw_rho = rng.uniform(0.05, 2.0);
    }
    let x = (0..input_dim).map(|_| rng.uniform(-2.0, 2.0)).collect();
    let label = if rng.bernoulli(0.5) { 1 } else { -1 };
    let alpha = if with_aux { rng.uniform(0.1, 1.0) } else { 1.0 };
    let loss = LossConfig::new(rng.uniform(0.01, 0.5), rng.uniform(0.25, 4.0), alpha)?;
    Ok(GradCase {
        net,
        x,
        label,
        loss,
        margin: rng.uniform(-5.0, 5.0),
        rho: rng.uniform(0.0, 3.0),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub cases: usize,
    pub loss: Worst,
    pub network: Worst,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.loss.passed() && self.network.passed()
    }
}

/// Loss and network checks on `cases` configurations drawn from `seed`.
pub fn run_suite(cases: usize, seed: u64, tol: &Tolerance) -> Result<SuiteReport> {
    let mut loss = Worst::new();
    let mut network = Worst::new();
    for i in 0..cases {
        let c = random_case(crate::rng::derive_seed(seed, &[i as u64]))?;
        loss.merge(&check_loss(c.margin, c.rho, &c.loss, tol));
        network.merge(&check_network(&c.net, &c.x, c.label, &c.loss, tol)?);
    }
    Ok(SuiteReport {
        cases,
        loss,
        network,
    })
}

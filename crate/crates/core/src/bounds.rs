//! Norm-based generalization bound for constant-band networks.
//!
//! For a scoring path of `n` weight matrices with group norms multiplying to
//! `beta`, maximum hidden width `H` and inputs with `max ||x||_{p*} <= X`, the
//! bound on the expected double sigmoid risk is
//!
//! ```text
//! emp + rho_bar / sqrt(m) + sqrt(8 ln(4/delta) / m) + sqrt(2 ln(2/delta) / m)
//!     + (2 beta X / sqrt(m)) * (2 H^[1/p* - 1/q]_+)^(n-1)
//! ```

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::{self, LossConfig};
use crate::nn::{AbstainNetwork, DenseLayer};
use crate::training::surrogate_risk;

/// Lipschitz constant of the loss in the score at `rho = 0`, `gamma = 1`.
pub const FIXED_LIPSCHITZ: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormSpec {
    /// Within-unit exponent, finite and `>= 1`.
    pub p: f64,
    /// Across-unit exponent, `>= 1`; `inf` takes the maximum.
    pub q: f64,
}

impl Default for NormSpec {
    fn default() -> Self {
        Self { p: 2.0, q: 2.0 }
    }
}

impl NormSpec {
    pub fn new(p: f64, q: f64) -> Result<Self> {
        let s = Self { p, q };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p >= 1.0 && self.p.is_finite()) {
            return Err(Error::config(format!(
                "p must be finite and >= 1, got {}",
                self.p
            )));
        }
        if !(self.q >= 1.0) {
            return Err(Error::config(format!("q must be >= 1, got {}", self.q)));
        }
        Ok(())
    }

    /// `1 / p*` with `1/p + 1/p* = 1` (0 at `p = 1`).
    pub fn inv_p_conj(&self) -> f64 {
        1.0 - 1.0 / self.p
    }

    /// `[1/p* - 1/q]_+`.
    pub fn width_exponent(&self) -> f64 {
        (self.inv_p_conj() - 1.0 / self.q).max(0.0)
    }
}

fn p_norm(v: impl Iterator<Item = f64>, p: f64) -> f64 {
    if p.is_infinite() {
        v.fold(0.0, |m, x| m.max(x.abs()))
    } else if p == 1.0 {
        v.map(f64::abs).sum()
    } else if p == 2.0 {
        v.map(|x| x * x).sum::<f64>().sqrt()
    } else {
        v.map(|x| x.abs().powf(p)).sum::<f64>().powf(1.0 / p)
    }
}

/// Dual norm `||x||_{p*}` of an input vector.
pub fn input_norm(x: &[f64], spec: &NormSpec) -> f64 {
    let inv = spec.inv_p_conj();
    let p_conj = if inv == 0.0 { f64::INFINITY } else { 1.0 / inv };
    p_norm(x.iter().copied(), p_conj)
}

/// `xi_{p,q}(W)`: the `p`-norm of each row (incoming weights of one unit),
/// combined across rows by the `q`-norm. `weights` is row-major `rows x cols`.
pub fn group_norm(weights: &[f64], cols: usize, spec: &NormSpec) -> f64 {
    let rows = weights
        .chunks_exact(cols.max(1))
        .map(|r| p_norm(r.iter().copied(), spec.p));
    p_norm(rows, spec.q)
}

pub fn layer_group_norm(layer: &DenseLayer, spec: &NormSpec) -> f64 {
    group_norm(&layer.weights, layer.cols, spec)
}

/// Product of the group norms of `layers` (biases ignored).
pub fn beta_product<'a>(
    layers: impl IntoIterator<Item = &'a DenseLayer>,
    spec: &NormSpec,
) -> Result<f64> {
    let mut beta = 1.0;
    let mut any = false;
    for l in layers {
        beta *= layer_group_norm(l, spec);
        any = true;
    }
    if !any {
        return Err(Error::config("beta of an empty layer list"));
    }
    Ok(beta)
}

/// `beta` of the bias-free equivalent network acting on `(x, 1)`: hidden
/// layers become `[[W, b], [0, 1]]` so the constant coordinate is carried
/// forward through the ReLUs, and the last layer becomes `[W, b]`.
pub fn bias_augmented_beta(layers: &[&DenseLayer], spec: &NormSpec) -> Result<f64> {
    if layers.is_empty() {
        return Err(Error::config("beta of an empty layer list"));
    }
    let mut beta = 1.0;
    for (i, l) in layers.iter().enumerate() {
        let cols = l.cols + 1;
        let mut w = Vec::with_capacity((l.rows + 1) * cols);
        for r in 0..l.rows {
            w.extend_from_slice(l.row(r));
            w.push(l.bias[r]);
        }
        if i + 1 < layers.len() {
            w.extend(std::iter::repeat(0.0).take(l.cols));
            w.push(1.0);
        }
        beta *= group_norm(&w, cols, spec);
    }
    Ok(beta)
}

/// `gamma * 2 s(rho) s(-rho)`, the slope bound of the loss in the score.
pub fn lipschitz_const(rho: f64, gamma: f64) -> f64 {
    gamma * 2.0 * losses::sigma(rho, gamma) * losses::sigma(-rho, gamma)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub m: usize,
    pub delta: f64,
    pub rho_bar: f64,
    /// Largest hidden width `H`.
    pub hidden_width: usize,
    /// Number of weight matrices `n`.
    pub layers: usize,
    pub beta: f64,
    pub x_norm_max: f64,
    pub empirical_risk: f64,
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::config("bound needs m >= 1"));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(Error::config(format!(
                "delta {} outside (0, 1]",
                self.delta
            )));
        }
        if self.layers == 0 {
            return Err(Error::config("bound needs at least one layer"));
        }
        if !(self.rho_bar >= 0.0 && self.beta >= 0.0 && self.x_norm_max >= 0.0) {
            return Err(Error::config(
                "rho_bar, beta and x_norm_max must be nonnegative",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundTerms {
    pub rho_term: f64,
    pub log4_term: f64,
    pub log2_term: f64,
    pub complexity: f64,
}

impl BoundTerms {
    /// Everything added to the empirical risk.
    pub fn total(&self) -> f64 {
        self.rho_term + self.log4_term + self.log2_term + self.complexity
    }
}

/// `(2 H^[1/p* - 1/q]_+)^(n-1)`.
pub fn depth_factor(hidden_width: usize, layers: usize, spec: &NormSpec) -> f64 {
    let per_layer = 2.0 * (hidden_width.max(1) as f64).powf(spec.width_exponent());
    per_layer.powi(layers as i32 - 1)
}

pub fn bound_terms(input: &BoundInputs, spec: &NormSpec) -> Result<BoundTerms> {
    input.validate()?;
    spec.validate()?;
    let m = input.m as f64;
    let sm = m.sqrt();
    Ok(BoundTerms {
        rho_term: input.rho_bar / sm,
        log4_term: (8.0 * (4.0 / input.delta).ln() / m).sqrt(),
        log2_term: (2.0 * (2.0 / input.delta).ln() / m).sqrt(),
        complexity: 2.0 * input.beta / sm
            * input.x_norm_max
            * depth_factor(input.hidden_width, input.layers, spec),
    })
}

pub fn generalization_bound(input: &BoundInputs, spec: &NormSpec) -> Result<f64> {
    Ok(input.empirical_risk + bound_terms(input, spec)?.total())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundSettings {
    pub spec: NormSpec,
    pub delta: f64,
    /// Defaults to the network's realized rho.
    pub rho_bar: Option<f64>,
}

impl Default for BoundSettings {
    fn default() -> Self {
        Self {
            spec: NormSpec::default(),
            delta: 0.1,
            rho_bar: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub m: usize,
    pub p: f64,
    pub q: f64,
    pub delta: f64,
    pub empirical_risk: f64,
    pub test_risk: Option<f64>,
    pub beta: f64,
    pub rho: f64,
    pub rho_bar: f64,
    pub hidden_width: usize,
    pub layers: usize,
    pub x_norm_max: f64,
    pub lipschitz: f64,
    pub lipschitz_fixed: f64,
    pub bound: f64,
    pub terms: BoundTerms,
    /// Same bound with biases folded into an extra constant input.
    pub beta_with_bias: f64,
    pub bound_with_bias: f64,
    /// `bound >= test_risk` when a test set was given.
    pub bound_holds: Option<bool>,
    pub warnings: Vec<String>,
}

/// Largest output width among all but the last scoring layer (1 for a single layer).
pub fn hidden_width(layers: &[&DenseLayer]) -> usize {
    layers[..layers.len().saturating_sub(1)]
        .iter()
        .map(|l| l.rows)
        .max()
        .unwrap_or(1)
}

pub fn x_norm_max(ds: &Dataset, spec: &NormSpec) -> f64 {
    ds.samples
        .iter()
        .map(|s| input_norm(&s.features, spec))
        .fold(0.0, f64::max)
}

/// Bound for a trained constant-band network on its training sample `train`,
/// with the held-out surrogate risk on `test` when given.
pub fn bound_report(
    net: &AbstainNetwork,
    train: &Dataset,
    test: Option<&Dataset>,
    loss: &LossConfig,
    settings: &BoundSettings,
) -> Result<BoundReport> {
    let rho = net
        .scalar_rho()
        .ok_or_else(|| Error::Scope("the bound covers constant rejection bands only".into()))?;
    settings.spec.validate()?;
    let spec = settings.spec;
    let layers: Vec<&DenseLayer> = net.scoring_layers().collect();
    let rho_bar = settings.rho_bar.unwrap_or(rho);
    let mut warnings = Vec::new();
    if rho_bar < rho {
        warnings.push(format!("rho_bar {rho_bar} is below the realized rho {rho}"));
    }
    if layers.iter().any(|l| l.bias.iter().any(|&b| b != 0.0)) {
        warnings
            .push("network has nonzero biases; `beta` ignores them, see `beta_with_bias`".into());
    }
    let empirical_risk = surrogate_risk(net, train, loss)?;
    let test_risk = test.map(|t| surrogate_risk(net, t, loss)).transpose()?;
    let inputs = BoundInputs {
        m: train.len(),
        delta: settings.delta,
        rho_bar,
        hidden_width: hidden_width(&layers),
        layers: layers.len(),
        beta: beta_product(layers.iter().copied(), &spec)?,
        x_norm_max: x_norm_max(train, &spec),
        empirical_risk,
    };
    let terms = bound_terms(&inputs, &spec)?;
    let bound = empirical_risk + terms.total();

    let aug_x = train
        .samples
        .iter()
        .map(|s| {
            let mut v = s.features.clone();
            v.push(1.0);
            input_norm(&v, &spec)
        })
        .fold(0.0, f64::max);
    let beta_with_bias = bias_augmented_beta(&layers, &spec)?;
    let aug = BoundInputs {
        hidden_width: inputs.hidden_width + 1,
        beta: beta_with_bias,
        x_norm_max: aug_x,
        ..inputs
    };
    let bound_with_bias = generalization_bound(&aug, &spec)?;

    Ok(BoundReport {
        m: inputs.m,
        p: spec.p,
        q: spec.q,
        delta: settings.delta,
        empirical_risk,
        test_risk,
        beta: inputs.beta,
        rho,
        rho_bar,
        hidden_width: inputs.hidden_width,
        layers: inputs.layers,
        x_norm_max: inputs.x_norm_max,
        lipschitz: lipschitz_const(rho, loss.gamma),
        lipschitz_fixed: FIXED_LIPSCHITZ,
        bound,
        terms,
        beta_with_bias,
        bound_with_bias,
        bound_holds: test_risk.map(|t| bound >= t),
        warnings,
    })
}

//! Pointwise theory of the double sigmoid loss at `gamma = 1`.
//!
//! For a point with posterior `eta = P(y = +1 | x)`, score `z` and fixed band
//! half-width `rho`, the conditional surrogate risk is
//!
//! ```text
//! r(z) = 2(1 - eta) + (2 eta - 2d) s(z + rho) + 2(eta + d - 1) s(z - rho),   s(a) = 1 / (1 + e^a)
//! ```
//!
//! Its stationary points satisfy `tanh(z / 2) = K` with `K` a root of
//! `theta zeta^2 K^2 - 2(1 - 2d) zeta K + theta = 0`, where `theta = 2 eta - 1`
//! and `zeta = tanh(rho / 2)`. The roots multiply to `1 / zeta^2`, so at most
//! the smaller-magnitude one, `K = T / (theta zeta)` with
//! `T = (1 - 2d) - sqrt((1 - 2d)^2 - theta^2)`, corresponds to a real score;
//! when `|K| >= 1` the risk is monotone and its infimum sits at `+/-inf`.
//!
//! The stationary score falls inside `[-rho, rho]` only when
//! `|theta| <= 2(1 - 2d) zeta^2 / (1 + zeta^4)` (see [`band_localization_limit`]);
//! outside that range the minimizer's band decision departs from the
//! generalized Bayes rule even though `d <= eta <= 1 - d`.
//!
//! Everything here is closed form except [`grid_minimize`], the brute-force
//! oracle used to check it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::losses::{self, LossConfig};
use crate::nn::{decide_score, Decision};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationContext {
    pub eta: f64,
    pub d: f64,
    pub rho: f64,
    /// `tanh(rho / 2)`.
    pub zeta: f64,
}

impl CalibrationContext {
    pub fn new(eta: f64, d: f64, rho: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::Domain(format!("eta {eta} outside [0, 1]")));
        }
        if !(d > 0.0 && d <= 0.5) {
            return Err(Error::Domain(format!("d {d} outside (0, 0.5]")));
        }
        if !(rho >= 0.0 && rho.is_finite()) {
            return Err(Error::Domain(format!("rho {rho} must be finite and >= 0")));
        }
        Ok(Self {
            eta,
            d,
            rho,
            zeta: (rho / 2.0).tanh(),
        })
    }

    /// Context for sigmoid sharpness `gamma`: since `s_gamma(a) = s_1(gamma a)`,
    /// the risk at score `z` equals the `gamma = 1` risk at `gamma z` with band
    /// `gamma rho`. Scores from the returned context must be divided by `gamma`.
    pub fn for_gamma(eta: f64, d: f64, rho: f64, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0) {
            return Err(Error::Domain(format!("gamma {gamma} must be > 0")));
        }
        Self::new(eta, d, gamma * rho)
    }

    fn theta(&self) -> f64 {
        2.0 * self.eta - 1.0
    }
}

/// Excess 0-d-1 risk `theta` with its auxiliary `T` (defined for `theta <= 1 - 2d`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExcessRiskPoint {
    pub theta: f64,
    pub t: Option<f64>,
}

impl ExcessRiskPoint {
    pub fn new(theta: f64, d: f64) -> Self {
        Self {
            theta,
            t: t_value(theta, d),
        }
    }
}

/// `T = (1 - 2d) - sqrt((1 - 2d)^2 - theta^2)`, evaluated as
/// `theta^2 / ((1 - 2d) + sqrt(...))` to avoid cancellation.
pub fn t_value(theta: f64, d: f64) -> Option<f64> {
    let c = 1.0 - 2.0 * d;
    let disc = c * c - theta * theta;
    if disc < 0.0 {
        return None;
    }
    let root = disc.sqrt();
    if c + root == 0.0 {
        return Some(0.0);
    }
    Some(theta * theta / (c + root))
}

/// A score that may be unbounded. Sentinels never enter arithmetic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Score {
    Finite(f64),
    PosInf,
    NegInf,
}

impl Score {
    pub fn finite(self) -> Option<f64> {
        match self {
            Score::Finite(z) => Some(z),
            _ => None,
        }
    }

    /// Band decision of this score against `rho`.
    pub fn decision(self, rho: f64) -> Decision {
        match self {
            Score::Finite(z) => decide_score(z, rho),
            Score::PosInf => Decision::Pos,
            Score::NegInf => Decision::Neg,
        }
    }
}

pub fn conditional_risk(z: f64, ctx: &CalibrationContext) -> f64 {
    let (eta, d, rho) = (ctx.eta, ctx.d, ctx.rho);
    2.0 * (1.0 - eta)
        + (2.0 * eta - 2.0 * d) * losses::sigma(z + rho, 1.0)
        + 2.0 * (eta + d - 1.0) * losses::sigma(z - rho, 1.0)
}

/// Conditional risk at a possibly unbounded score (limits at the sentinels).
pub fn conditional_risk_at(score: Score, ctx: &CalibrationContext) -> f64 {
    match score {
        Score::Finite(z) => conditional_risk(z, ctx),
        Score::PosInf => 2.0 * (1.0 - ctx.eta),
        Score::NegInf => 2.0 * ctx.eta,
    }
}

/// Minimizer `z*` of [`conditional_risk`].
pub fn optimal_score(ctx: &CalibrationContext) -> Result<Score> {
    let (eta, d) = (ctx.eta, ctx.d);
    if eta < d {
        return Ok(Score::NegInf);
    }
    if eta > 1.0 - d {
        return Ok(Score::PosInf);
    }
    let theta = ctx.theta();
    if theta == 0.0 {
        return Ok(Score::Finite(0.0));
    }
    if ctx.zeta == 0.0 {
        return Err(Error::DegenerateBand { eta });
    }
    let t = t_value(theta, d).unwrap_or(1.0 - 2.0 * d);
    let k = t / (theta * ctx.zeta);
    if k.abs() < 1.0 {
        Ok(Score::Finite(2.0 * k.atanh()))
    } else if theta > 0.0 {
        Ok(Score::PosInf)
    } else {
        Ok(Score::NegInf)
    }
}

/// Infimum of the conditional risk (`H(eta)`), valid for any `rho >= 0`.
pub fn optimal_risk(ctx: &CalibrationContext) -> f64 {
    match optimal_score(ctx) {
        Ok(s) => conditional_risk_at(s, ctx),
        // rho = 0: r is monotone with limits 2 eta and 2(1 - eta)
        Err(_) => (2.0 * ctx.eta).min(2.0 * (1.0 - ctx.eta)),
    }
}

/// Generalized Bayes rule for the 0-d-1 loss; ties at `d` and `1 - d` reject.
pub fn bayes_decision(eta: f64, d: f64) -> Decision {
    if eta > 1.0 - d {
        Decision::Pos
    } else if eta < d {
        Decision::Neg
    } else {
        Decision::Reject
    }
}

/// Conditional 0-d-1 risk of a decision at posterior `eta`.
pub fn decision_risk(decision: Decision, eta: f64, d: f64) -> f64 {
    match decision {
        Decision::Pos => 1.0 - eta,
        Decision::Neg => eta,
        Decision::Reject => d,
    }
}

/// Largest `|2 eta - 1|` for which the stationary score lies in `[-rho, rho]`.
pub fn band_localization_limit(d: f64, zeta: f64) -> f64 {
    2.0 * (1.0 - 2.0 * d) * zeta * zeta / (1.0 + zeta.powi(4))
}

pub fn h_minus(_theta: f64, d: f64, zeta: f64) -> f64 {
    1.0 - zeta + 2.0 * d * zeta
}

/// Closed-form risk at the interior stationary point for `eta = (1 + theta) / 2`,
/// when that point is a real score (`T < theta zeta`).
fn interior_optimum(theta: f64, d: f64, zeta: f64) -> Option<f64> {
    if !(theta > 0.0) || zeta == 0.0 {
        return None;
    }
    let t = t_value(theta, d)?;
    if t >= theta * zeta {
        return None;
    }
    let eta = (1.0 + theta) / 2.0;
    let z2 = zeta * zeta;
    Some(
        1.0 - (eta - d) * (t + z2 * theta) / (theta * zeta + t * zeta)
            - (eta + d - 1.0) * (t - z2 * theta) / (theta * zeta - t * zeta),
    )
}

/// Optimal conditional risk `H((1 + theta) / 2)`:
/// `1 + (2d - 1) zeta` at `theta = 0`, the interior closed form while the
/// stationary score is real, and `1 - theta` once the infimum moves to `+inf`.
pub fn h_opt(theta: f64, d: f64, zeta: f64) -> f64 {
    if theta == 0.0 {
        return 1.0 + (2.0 * d - 1.0) * zeta;
    }
    interior_optimum(theta, d, zeta).unwrap_or(1.0 - theta)
}

/// Excess-risk transform `psi(theta) = h_minus - h_opt`, branch by branch.
pub fn psi(theta: f64, d: f64, zeta: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::Domain(format!("theta {theta} outside [0, 1]")));
    }
    if !(d > 0.0 && d <= 0.5) {
        return Err(Error::Domain(format!("d {d} outside (0, 0.5]")));
    }
    if !(0.0..1.0).contains(&zeta) {
        return Err(Error::Domain(format!("zeta {zeta} outside [0, 1)")));
    }
    if theta == 0.0 {
        return Ok(0.0);
    }
    let c = 1.0 - 2.0 * d;
    Ok(match interior_optimum(theta, d, zeta) {
        Some(_) => {
            let t = t_value(theta, d).expect("interior branch has T");
            let z2 = zeta * zeta;
            (2.0 * d - 1.0) * zeta
                + ((theta + c) / 2.0) * ((t + z2 * theta) / (zeta * theta + t * zeta))
                + ((theta - c) / 2.0) * ((t - z2 * theta) / (zeta * theta - t * zeta))
        }
        None => theta + (2.0 * d - 1.0) * zeta,
    })
}

/// Brute-force minimizer of the conditional risk on a uniform grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZGrid {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl Default for ZGrid {
    fn default() -> Self {
        Self {
            lo: -20.0,
            hi: 20.0,
            step: 1e-4,
        }
    }
}

impl ZGrid {
    fn len(&self) -> usize {
        ((self.hi - self.lo) / self.step).round() as usize + 1
    }

    fn at(&self, i: usize) -> f64 {
        self.lo + i as f64 * self.step
    }
}

/// `(argmin z, min r)` over the grid; the first index wins ties.
pub fn grid_minimize(ctx: &CalibrationContext, grid: &ZGrid) -> (f64, f64) {
    let mut best = (grid.lo, f64::INFINITY);
    for i in 0..grid.len() {
        let z = grid.at(i);
        let r = conditional_risk(z, ctx);
        if r < best.1 {
            best = (z, r);
        }
    }
    best
}

/// Finite distribution on the real line with posterior `eta` at each atom.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointMass {
    pub x: f64,
    pub eta: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExcessRiskReport {
    pub risk_d: f64,
    pub bayes_risk_d: f64,
    pub risk_ds: f64,
    pub bayes_risk_ds: f64,
    pub theta: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Slack allowed when comparing the two sides of the excess-risk inequality.
pub const EXCESS_RISK_SLACK: f64 = 1e-9;

/// Both sides of `psi(R_d(f) - R_d*) <= R_ds(f) - R_ds*` by exact expectation.
///
/// `R_d*` uses [`bayes_decision`]; `R_ds*` is the infimal surrogate risk
/// `E[H(eta)]` from [`optimal_score`].
pub fn verify_excess_risk_bound(
    dist: &[PointMass],
    f: impl Fn(f64) -> f64,
    rho: f64,
    d: f64,
) -> Result<ExcessRiskReport> {
    if dist.is_empty() {
        return Err(Error::config("empty distribution"));
    }
    let total: f64 = dist.iter().map(|p| p.weight).sum();
    if (total - 1.0).abs() > 1e-9 || dist.iter().any(|p| p.weight < 0.0) {
        return Err(Error::Domain(format!(
            "weights must be nonnegative and sum to 1 (got {total})"
        )));
    }
    let cfg = LossConfig {
        d,
        gamma: 1.0,
        alpha: 1.0,
    };
    let (mut risk_d, mut bayes_d, mut risk_ds, mut bayes_ds) = (0.0, 0.0, 0.0, 0.0);
    for p in dist {
        let ctx = CalibrationContext::new(p.eta, d, rho)?;
        let z = f(p.x);
        risk_d += p.weight
            * (p.eta * losses::zero_d_one_loss(z, rho, d)
                + (1.0 - p.eta) * losses::zero_d_one_loss(-z, rho, d));
        bayes_d += p.weight * decision_risk(bayes_decision(p.eta, d), p.eta, d);
        risk_ds += p.weight
            * (p.eta * losses::double_sigmoid_loss(z, rho, &cfg)
                + (1.0 - p.eta) * losses::double_sigmoid_loss(-z, rho, &cfg));
        bayes_ds += p.weight * optimal_risk(&ctx);
    }
    let theta = (risk_d - bayes_d).clamp(0.0, 1.0);
    let lhs = psi(theta, d, (rho / 2.0).tanh())?;
    let rhs = risk_ds - bayes_ds;
    Ok(ExcessRiskReport {
        risk_d,
        bayes_risk_d: bayes_d,
        risk_ds,
        bayes_risk_ds: bayes_ds,
        theta,
        lhs,
        rhs,
        holds: lhs <= rhs + EXCESS_RISK_SLACK,
    })
}

// ---------------------------------------------------------------------------
// Grid verification report
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckConfig {
    pub etas: Vec<f64>,
    pub ds: Vec<f64>,
    pub rhos: Vec<f64>,
    pub grid: ZGrid,
    /// Step of the theta grid for the psi shape checks.
    pub theta_step: f64,
    /// Number of random finite distributions for the excess-risk inequality.
    pub random_trials: usize,
    pub seed: u64,
    /// Sharpness the report is requested for; the oracle itself runs at 1.
    pub gamma: f64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            etas: (1..=19).map(|i| i as f64 * 0.05).collect(),
            ds: vec![0.1, 0.2, 0.3, 0.4],
            rhos: vec![0.25, 0.5, 1.0, 2.0],
            grid: ZGrid::default(),
            theta_step: 1e-3,
            random_trials: 10_000,
            seed: 0,
            gamma: 1.0,
        }
    }
}

/// Closed-form vs grid minimizer and decision agreement for one `(eta, d, rho)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellCheck {
    pub eta: f64,
    pub d: f64,
    pub rho: f64,
    pub z_closed: Score,
    pub z_grid: f64,
    pub risk_closed: f64,
    pub risk_grid: f64,
    /// `|z_closed - z_grid|` for finite scores inside the grid window, else 0.
    pub z_gap: f64,
    /// Closed form and grid agree on the minimizer (within tolerance, or both at the same edge).
    pub score_agrees: bool,
    pub decision_from_score: Decision,
    pub bayes: Decision,
    pub decision_agrees: bool,
    /// `z*` inside `[-rho, rho]` whenever `d <= eta <= 1 - d` (vacuous otherwise).
    pub localized: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsiCheck {
    pub d: f64,
    pub rho: f64,
    pub zeta: f64,
    pub psi_at_zero: f64,
    /// `|psi(1e-9)|`, the right limit at 0.
    pub gap_at_zero: f64,
    /// `|psi((1-2d) - 1e-9) - ((1-2d) + (2d-1) zeta)|`.
    pub gap_at_knee: f64,
    pub min_second_difference: f64,
    pub min_first_difference: f64,
    /// Largest `h_opt - h_minus` on the theta grid (should be <= 0).
    pub max_h_excess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomCheck {
    pub trials: usize,
    pub violations: usize,
    pub worst_violation: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub gamma: f64,
    /// True only at `gamma = 1`, the sharpness the closed forms are derived for.
    pub gamma_verified: bool,
    pub z_tolerance: f64,
    pub cells: Vec<CellCheck>,
    pub cells_total: usize,
    pub score_agreement: usize,
    pub decision_agreement: usize,
    pub localized: usize,
    pub worst_z_gap: f64,
    pub worst_risk_gap: f64,
    pub psi: Vec<PsiCheck>,
    pub excess_risk: RandomCheck,
}

/// Tolerance on `|z_closed - z_grid|`.
pub const Z_TOLERANCE: f64 = 2e-4;

pub fn check_cell(eta: f64, d: f64, rho: f64, grid: &ZGrid) -> Result<CellCheck> {
    let ctx = CalibrationContext::new(eta, d, rho)?;
    let z_closed = optimal_score(&ctx)?;
    let (z_grid, risk_grid) = grid_minimize(&ctx, grid);
    let risk_closed = conditional_risk_at(z_closed, &ctx);
    let edge = grid.step * 0.5;
    let (z_gap, score_agrees) = match z_closed {
        Score::Finite(z) if z > grid.lo + edge && z < grid.hi - edge => {
            let gap = (z - z_grid).abs();
            (gap, gap <= Z_TOLERANCE)
        }
        // beyond the window the grid can only report its edge
        Score::Finite(z) => (0.0, (z_grid - z.clamp(grid.lo, grid.hi)).abs() <= edge),
        Score::PosInf => (0.0, z_grid >= grid.hi - edge),
        Score::NegInf => (0.0, z_grid <= grid.lo + edge),
    };
    let decision_from_score = z_closed.decision(rho);
    let bayes = bayes_decision(eta, d);
    let in_band = eta >= d && eta <= 1.0 - d;
    let localized = !in_band || matches!(z_closed, Score::Finite(z) if z.abs() <= rho);
    Ok(CellCheck {
        eta,
        d,
        rho,
        z_closed,
        z_grid,
        risk_closed,
        risk_grid,
        z_gap,
        score_agrees,
        decision_from_score,
        bayes,
        decision_agrees: decision_from_score == bayes,
        localized,
    })
}

pub fn check_psi(d: f64, rho: f64, theta_step: f64) -> Result<PsiCheck> {
    let zeta = (rho / 2.0).tanh();
    let c = 1.0 - 2.0 * d;
    let n = (1.0 / theta_step).round() as usize;
    let thetas: Vec<f64> = (0..=n).map(|i| (i as f64 * theta_step).min(1.0)).collect();
    let vals = thetas
        .iter()
        .map(|&t| psi(t, d, zeta))
        .collect::<Result<Vec<f64>>>()?;
    let min_second = vals
        .windows(3)
        .map(|w| w[2] - 2.0 * w[1] + w[0])
        .fold(f64::INFINITY, f64::min);
    let min_first = vals
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min);
    let max_h_excess = thetas
        .iter()
        .map(|&t| h_opt(t, d, zeta) - h_minus(t, d, zeta))
        .fold(f64::NEG_INFINITY, f64::max);
    let eps = 1e-9;
    Ok(PsiCheck {
        d,
        rho,
        zeta,
        psi_at_zero: psi(0.0, d, zeta)?,
        gap_at_zero: psi(eps, d, zeta)?.abs(),
        gap_at_knee: (psi(c - eps, d, zeta)? - (c + (2.0 * d - 1.0) * zeta)).abs(),
        min_second_difference: min_second,
        min_first_difference: min_first,
        max_h_excess,
    })
}

/// Random finite distribution with 1..=5 atoms and a piecewise-constant scorer.
pub fn random_excess_risk_case(rng: &mut SplitMix64) -> (Vec<PointMass>, Vec<f64>, f64, f64) {
    let atoms = 1 + rng.below(5);
    let raw: Vec<f64> = (0..atoms).map(|_| rng.next_f64() + 1e-3).collect();
    let total: f64 = raw.iter().sum();
    let dist: Vec<PointMass> = raw
        .iter()
        .enumerate()
        .map(|(i, w)| PointMass {
            x: i as f64,
            eta: rng.next_f64(),
            weight: w / total,
        })
        .collect();
    let scores: Vec<f64> = (0..atoms).map(|_| rng.uniform(-6.0, 6.0)).collect();
    let rho = rng.uniform(0.05, 3.0);
    let d = rng.uniform(0.01, 0.49);
    (dist, scores, rho, d)
}

pub fn check_excess_risk_random(trials: usize, seed: u64, exec: Exec) -> Result<RandomCheck> {
    let idx: Vec<u64> = (0..trials as u64).collect();
    let results = exec.map(&idx, |_, &i| {
        let mut rng = SplitMix64::stream(seed, &[i]);
        let (dist, scores, rho, d) = random_excess_risk_case(&mut rng);
        verify_excess_risk_bound(&dist, |x| scores[x as usize], rho, d)
    });
    let mut violations = 0;
    let mut worst: f64 = 0.0;
    for r in results {
        let r = r?;
        if !r.holds {
            violations += 1;
            worst = worst.max(r.lhs - r.rhs);
        }
    }
    Ok(RandomCheck {
        trials,
        violations,
        worst_violation: worst,
        seed,
    })
}

pub fn run_calibration_check(cfg: &CheckConfig, exec: Exec) -> Result<CalibrationReport> {
    let mut params = Vec::new();
    for &rho in &cfg.rhos {
        for &d in &cfg.ds {
            for &eta in &cfg.etas {
                params.push((eta, d, rho));
            }
        }
    }
    let cells = exec
        .map(&params, |_, &(eta, d, rho)| {
            check_cell(eta, d, rho, &cfg.grid)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let mut psi_checks = Vec::new();
    for &d in &cfg.ds {
        for &rho in &cfg.rhos {
            psi_checks.push(check_psi(d, rho, cfg.theta_step)?);
        }
    }
    let excess_risk = check_excess_risk_random(cfg.random_trials, cfg.seed, exec)?;
    Ok(CalibrationReport {
        gamma: cfg.gamma,
        gamma_verified: cfg.gamma == 1.0,
        z_tolerance: Z_TOLERANCE,
        cells_total: cells.len(),
        score_agreement: cells.iter().filter(|c| c.score_agrees).count(),
        decision_agreement: cells.iter().filter(|c| c.decision_agrees).count(),
        localized: cells.iter().filter(|c| c.localized).count(),
        worst_z_gap: cells.iter().map(|c| c.z_gap).fold(0.0, f64::max),
        worst_risk_gap: cells
            .iter()
            .map(|c| (c.risk_closed - c.risk_grid).abs())
            .fold(0.0, f64::max),
        cells,
        psi: psi_checks,
        excess_risk,
    })
}

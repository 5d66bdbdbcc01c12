//! End-to-end experiments on the sine-boundary synthetic data.
//!
//! All randomness in an experiment comes from its `seed` through
//! [`derive_seed`] with the `EXPERIMENT` tag: `[EXPERIMENT, 1]` draws the
//! training pool, `[EXPERIMENT, 2]` the test set, `[EXPERIMENT, 3]` the
//! initial weights, `[EXPERIMENT, 4, ...]` the training streams and
//! `[EXPERIMENT, 5, i]` the label noise of the `i`-th rate.

use serde::{Deserialize, Serialize};

use crate::bounds::{
    bound_report, bound_terms, x_norm_max, BoundInputs, BoundReport, BoundSettings, BoundTerms,
};
use crate::data::{
    generate_sine_dataset, inject_uniform_noise, sine_boundary, Dataset, SineMetadata,
};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::nn::{decide, init_network, Decision, NetworkSpec, RejectionMode};
use crate::rng::{derive_seed, tags};
use crate::training::{evaluate, train, Metrics, TrainConfig, TrainHistory};

fn seed_of(seed: u64, path: &[u64]) -> u64 {
    let mut full = vec![tags::EXPERIMENT];
    full.extend_from_slice(path);
    derive_seed(seed, &full)
}

pub fn pool_seed(seed: u64) -> u64 {
    seed_of(seed, &[1])
}

pub fn test_seed(seed: u64) -> u64 {
    seed_of(seed, &[2])
}

pub fn init_seed(seed: u64) -> u64 {
    seed_of(seed, &[3])
}

pub fn train_seed(seed: u64, run: u64) -> u64 {
    seed_of(seed, &[4, run])
}

pub fn noise_seed(seed: u64, rate_index: u64) -> u64 {
    seed_of(seed, &[5, rate_index])
}

/// Sine-boundary data parameters shared by the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SineData {
    pub n_train: usize,
    pub n_test: usize,
    pub flip_margin: f64,
    pub flip_prob: f64,
}

impl SineData {
    fn draw(&self, seed: u64) -> Result<((Dataset, SineMetadata), (Dataset, SineMetadata))> {
        Ok((
            generate_sine_dataset(
                self.n_train,
                self.flip_margin,
                self.flip_prob,
                pool_seed(seed),
            )?,
            generate_sine_dataset(
                self.n_test,
                self.flip_margin,
                self.flip_prob,
                test_seed(seed),
            )?,
        ))
    }
}

// ---------------------------------------------------------------------------
// Learned band vs. no band
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandExperimentConfig {
    pub data: SineData,
    pub network: NetworkSpec,
    pub train: TrainConfig,
    pub seed: u64,
    /// Required share of rejected test points inside the label-flip band.
    pub min_band_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandExperimentReport {
    pub d: f64,
    pub rho: f64,
    pub with_reject: Metrics,
    /// Same architecture, seeds and schedule with the band pinned at 0.
    pub no_reject: Metrics,
    pub rejected: usize,
    pub rejected_in_band: usize,
    pub band_share: Option<f64>,
    pub beats_reject_all: bool,
    pub beats_no_reject: bool,
    pub band_share_ok: bool,
    pub history: TrainHistory,
}

impl BandExperimentReport {
    pub fn passed(&self) -> bool {
        self.beats_reject_all && self.beats_no_reject && self.band_share_ok
    }
}

/// Train with a learned scalar band and with the band pinned at zero, then
/// compare test 0-d-1 risks and where the rejections fall.
pub fn band_experiment(cfg: &BandExperimentConfig, exec: Exec) -> Result<BandExperimentReport> {
    if !matches!(cfg.network.rejection, crate::nn::RejectionSpec::Scalar) {
        return Err(Error::config("band experiment uses a scalar band"));
    }
    let ((train_ds, _), (test_ds, _)) = cfg.data.draw(cfg.seed)?;
    let net = init_network(&cfg.network, init_seed(cfg.seed))?;
    let mut pinned = net.clone();
    // a zero raw band sits on the ReLU's flat side and receives no gradient
    pinned.rej_mode = RejectionMode::Scalar { raw_rho: 0.0 };
    let mut tcfg = cfg.train.clone();
    tcfg.seed = train_seed(cfg.seed, 0);
    let d = tcfg.loss.d;

    let runs = exec.map(&[net, pinned], |_, n| train(n, &train_ds, &tcfg));
    let mut runs = runs.into_iter();
    let (model, history) = runs.next().expect("two runs")?;
    let (baseline, _) = runs.next().expect("two runs")?;
    if baseline.scalar_rho() != Some(0.0) {
        return Err(Error::Structure("pinned band moved during training".into()));
    }

    let with_reject = evaluate(&model, &test_ds, d)?;
    let no_reject = evaluate(&baseline, &test_ds, d)?;
    let mut rejected = 0;
    let mut in_band = 0;
    for s in &test_ds.samples {
        if decide(&model.predict(&s.features)?) == Decision::Reject {
            rejected += 1;
            if sine_boundary(&s.features).abs() <= cfg.data.flip_margin {
                in_band += 1;
            }
        }
    }
    let band_share = (rejected > 0).then(|| in_band as f64 / rejected as f64);
    Ok(BandExperimentReport {
        d,
        rho: model.scalar_rho().unwrap_or(0.0),
        beats_reject_all: with_reject.zero_d_one_risk < d,
        beats_no_reject: with_reject.zero_d_one_risk < no_reject.zero_d_one_risk,
        band_share_ok: band_share.is_some_and(|s| s >= cfg.min_band_share),
        with_reject,
        no_reject,
        rejected,
        rejected_in_band: in_band,
        band_share,
        history,
    })
}

// ---------------------------------------------------------------------------
// Uniform label noise
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseExperimentConfig {
    /// Clean pool and clean test set; `flip_prob` is normally 0.
    pub data: SineData,
    pub rates: Vec<f64>,
    pub network: NetworkSpec,
    pub train: TrainConfig,
    pub seed: u64,
    /// Allowed drop in accuracy on unrejected clean test points.
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseRow {
    pub rate: f64,
    pub flips: usize,
    pub metrics: Metrics,
    /// Clean-trained minus noisy-trained accuracy on unrejected points.
    pub accuracy_gap: Option<f64>,
    pub within_tolerance: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseExperimentReport {
    pub d: f64,
    pub clean: Metrics,
    pub rows: Vec<NoiseRow>,
}

impl NoiseExperimentReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.within_tolerance)
    }
}

/// Train on the clean pool and on noisy copies of it (same init and training
/// streams), then evaluate every model on the clean test set.
pub fn noise_experiment(cfg: &NoiseExperimentConfig, exec: Exec) -> Result<NoiseExperimentReport> {
    let ((pool, _), (test_ds, _)) = cfg.data.draw(cfg.seed)?;
    let mut sets = vec![(0.0, 0usize, pool.clone())];
    for (i, &rate) in cfg.rates.iter().enumerate() {
        let (noisy, meta) = inject_uniform_noise(&pool, rate, noise_seed(cfg.seed, i as u64))?;
        sets.push((rate, meta.flips, noisy));
    }
    let net = init_network(&cfg.network, init_seed(cfg.seed))?;
    let mut tcfg = cfg.train.clone();
    tcfg.seed = train_seed(cfg.seed, 0);
    let d = tcfg.loss.d;
    let metrics = exec
        .map(&sets, |_, (_, _, ds)| {
            let (model, _) = train(&net, ds, &tcfg)?;
            evaluate(&model, &test_ds, d)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let clean = metrics[0];
    let rows = sets[1..]
        .iter()
        .zip(&metrics[1..])
        .map(|(&(rate, flips, _), &m)| {
            let gap = match (clean.accuracy_unrejected, m.accuracy_unrejected) {
                (Some(c), Some(n)) => Some(c - n),
                _ => None,
            };
            NoiseRow {
                rate,
                flips,
                metrics: m,
                accuracy_gap: gap,
                within_tolerance: gap.is_some_and(|g| g <= cfg.tolerance),
            }
        })
        .collect();
    Ok(NoiseExperimentReport { d, clean, rows })
}

// ---------------------------------------------------------------------------
// Bound vs. test risk as the sample grows
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCurveConfig {
    /// `n_train` is the pool size; each point trains on its first `m` samples.
    pub data: SineData,
    pub ms: Vec<usize>,
    pub network: NetworkSpec,
    pub train: TrainConfig,
    pub settings: BoundSettings,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCurvePoint {
    pub m: usize,
    /// Bound for the network trained at this `m`, from its own norms and band.
    pub report: BoundReport,
    /// Terms for the class bounded by the curve-wide `beta_bar`, `rho_bar`, `x_bar`.
    pub class_terms: BoundTerms,
    pub class_bound: f64,
    pub test_risk: f64,
    pub bound_holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCurveReport {
    pub d: f64,
    pub beta_bar: f64,
    pub rho_bar: f64,
    pub x_bar: f64,
    pub points: Vec<BoundCurvePoint>,
    pub all_bounds_hold: bool,
    /// Class-level `terms.total()` never increases with `m`.
    pub terms_nonincreasing: bool,
}

impl BoundCurveReport {
    pub fn passed(&self) -> bool {
        self.all_bounds_hold && self.terms_nonincreasing
    }
}

/// `start, start + step, ..., <= end`.
pub fn m_grid(start: usize, end: usize, step: usize) -> Result<Vec<usize>> {
    if start == 0 || step == 0 || end < start {
        return Err(Error::config("m grid needs 0 < start <= end and step > 0"));
    }
    Ok((start..=end).step_by(step).collect())
}

/// Train one network per `m` from a common initialization and compare each
/// bound with the held-out surrogate risk.
///
/// The class-level columns fix `beta`, `rho` and `max ||x||` at their largest
/// values along the curve, so every point is bounded as a member of one class.
pub fn bound_curve(cfg: &BoundCurveConfig, exec: Exec) -> Result<BoundCurveReport> {
    let Some(&m_max) = cfg.ms.iter().max() else {
        return Err(Error::config("empty m grid"));
    };
    if m_max > cfg.data.n_train {
        return Err(Error::config(format!(
            "m = {m_max} exceeds the pool of {}",
            cfg.data.n_train
        )));
    }
    let ((pool, _), (test_ds, _)) = cfg.data.draw(cfg.seed)?;
    let net = init_network(&cfg.network, init_seed(cfg.seed))?;
    let loss = cfg.train.loss;
    let reports = exec
        .map(&cfg.ms, |i, &m| {
            let sample = pool.head(m);
            let mut tcfg = cfg.train.clone();
            tcfg.seed = train_seed(cfg.seed, i as u64);
            let (model, _) = train(&net, &sample, &tcfg)?;
            bound_report(&model, &sample, Some(&test_ds), &loss, &cfg.settings)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let beta_bar = reports.iter().map(|r| r.beta).fold(0.0, f64::max);
    let rho_bar = reports.iter().map(|r| r.rho_bar).fold(0.0, f64::max);
    let x_bar = x_norm_max(&pool.head(m_max), &cfg.settings.spec);
    let mut points = Vec::with_capacity(reports.len());
    for r in reports {
        let class_terms = bound_terms(
            &BoundInputs {
                m: r.m,
                delta: r.delta,
                rho_bar,
                hidden_width: r.hidden_width,
                layers: r.layers,
                beta: beta_bar,
                x_norm_max: x_bar,
                empirical_risk: r.empirical_risk,
            },
            &cfg.settings.spec,
        )?;
        let test_risk = r.test_risk.expect("test set supplied");
        let class_bound = r.empirical_risk + class_terms.total();
        points.push(BoundCurvePoint {
            m: r.m,
            bound_holds: r.bound >= test_risk && class_bound >= test_risk,
            class_terms,
            class_bound,
            test_risk,
            report: r,
        });
    }
    let mut by_m: Vec<&BoundCurvePoint> = points.iter().collect();
    by_m.sort_by_key(|p| p.m);
    let terms_nonincreasing = by_m
        .windows(2)
        .all(|w| w[1].class_terms.total() <= w[0].class_terms.total());
    Ok(BoundCurveReport {
        d: loss.d,
        beta_bar,
        rho_bar,
        x_bar,
        all_bounds_hold: points.iter().all(|p| p.bound_holds),
        terms_nonincreasing,
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::LossConfig;

    fn small_train(epochs: usize) -> TrainConfig {
        let mut t = TrainConfig::new(LossConfig::new(0.25, 1.0, 1.0).unwrap(), epochs, 0);
        t.optimizer = crate::optim::OptimizerKind::adagrad(0.05);
        t
    }

    fn data(n: usize, flip_prob: f64) -> SineData {
        SineData {
            n_train: n,
            n_test: n,
            flip_margin: 0.75,
            flip_prob,
        }
    }

    #[test]
    fn band_experiment_pins_baseline() {
        let cfg = BandExperimentConfig {
            data: data(60, 0.5),
            network: NetworkSpec::scalar(&[2, 6]),
            train: small_train(2),
            seed: 1,
            min_band_share: 0.7,
        };
        let r = band_experiment(&cfg, Exec::Sequential).unwrap();
        assert_eq!(r.no_reject.rejected, 0);
        assert_eq!(r.with_reject.n, 60);
        assert_eq!(
            r,
            band_experiment(&cfg, Exec::Parallel { jobs: 2 }).unwrap()
        );
    }

    #[test]
    fn noise_rows_follow_rates() {
        let cfg = NoiseExperimentConfig {
            data: data(40, 0.0),
            rates: vec![0.0, 1.0],
            network: NetworkSpec::scalar(&[2, 4]),
            train: small_train(1),
            seed: 2,
            tolerance: 0.05,
        };
        let r = noise_experiment(&cfg, Exec::Sequential).unwrap();
        assert_eq!(r.rows.len(), 2);
        assert_eq!(r.rows[0].flips, 0);
        assert_eq!(r.rows[1].flips, 40);
        // zero noise reproduces the clean run exactly
        assert_eq!(r.rows[0].metrics, r.clean);
        assert_eq!(
            r.rows[0].accuracy_gap.map(|g| g == 0.0),
            r.clean.accuracy_unrejected.map(|_| true)
        );
    }

    #[test]
    fn bound_curve_class_terms_decrease() {
        let cfg = BoundCurveConfig {
            data: data(60, 0.5),
            ms: m_grid(20, 60, 20).unwrap(),
            network: NetworkSpec::scalar(&[2, 4]),
            train: small_train(2),
            settings: BoundSettings::default(),
            seed: 3,
        };
        let r = bound_curve(&cfg, Exec::Sequential).unwrap();
        assert_eq!(r.points.len(), 3);
        assert!(r.terms_nonincreasing);
        for p in &r.points {
            assert!(p.class_bound >= p.report.bound - 1e-12);
        }
        assert!(m_grid(0, 10, 1).is_err());
        assert_eq!(m_grid(100, 1000, 100).unwrap().len(), 10);
    }
}

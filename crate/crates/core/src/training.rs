//! Mini-batch training, evaluation and cost sweeps.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{standardize, Dataset, SplitPlan};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::losses::{self, LossConfig};
use crate::nn::{
    decide, init_network, AbstainNetwork, Decision, NetworkSpec, ParamGrads, Upstream,
};
use crate::optim::{OptimizerKind, OptimizerState};
use crate::rng::{derive_seed, tags, SplitMix64};

/// Minimum drop in epoch loss that counts as progress for the plateau schedule.
pub const PLATEAU_THRESHOLD: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Halve the learning rate after `patience` epochs without the training
    /// loss improving by [`PLATEAU_THRESHOLD`].
    HalveOnPlateau {
        patience: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub weight_decay: f64,
    pub schedule: LrSchedule,
    /// Overrides the per-layer dropout of every hidden layer when set.
    #[serde(default)]
    pub dropout: Option<f64>,
    pub seed: u64,
    pub shuffle: bool,
}

impl TrainConfig {
    /// Adagrad at `lr = 1e-3`, batches of 32, shuffled, constant schedule.
    pub fn new(loss: LossConfig, epochs: usize, seed: u64) -> Self {
        Self {
            loss,
            epochs,
            batch_size: 32,
            optimizer: OptimizerKind::adagrad(1e-3),
            weight_decay: 0.0,
            schedule: LrSchedule::Constant,
            dropout: None,
            seed,
            shuffle: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if self.epochs == 0 {
            return Err(Error::config("epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be >= 1"));
        }
        if let Some(p) = self.dropout {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::config(format!("dropout {p} outside [0, 1)")));
            }
        }
        if let LrSchedule::HalveOnPlateau { patience: 0 } = self.schedule {
            return Err(Error::config("plateau patience must be >= 1"));
        }
        Ok(())
    }
}

/// Running statistics of one epoch, accumulated over its mini-batches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training objective (combined loss when `alpha < 1`).
    pub loss: f64,
    /// Mean double sigmoid loss alone.
    pub ds_loss: f64,
    pub risk: f64,
    pub rejection_rate: f64,
    pub rho_min: f64,
    pub rho_mean: f64,
    pub rho_max: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    /// CSV with columns `epoch,loss,risk,rejection_rate,rho_mean`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["epoch", "loss", "risk", "rejection_rate", "rho_mean"])
            .map_err(csv_err)?;
        for e in &self.epochs {
            w.write_record([
                e.epoch.to_string(),
                fmt(e.loss),
                fmt(e.risk),
                fmt(e.rejection_rate),
                fmt(e.rho_mean),
            ])
            .map_err(csv_err)?;
        }
        finish_csv(w)
    }
}

fn fmt(v: f64) -> String {
    crate::data::format_real(v)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io {
        path: "<csv>".into(),
        source: std::io::Error::other(e.to_string()),
    }
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| csv_err(e.into_error().into()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Combined loss, its double sigmoid part, and the upstream gradients for
/// one sample.
pub fn sample_objective(
    out: &crate::nn::HeadOutputs,
    label: i8,
    cfg: &LossConfig,
) -> (f64, f64, Upstream) {
    let y = f64::from(label);
    let margin = y * out.f;
    let ds = losses::double_sigmoid_loss(margin, out.rho, cfg);
    let (dm, drho) = losses::double_sigmoid_grads(margin, out.rho, cfg);
    let a = cfg.alpha;
    let (loss, daux) = match out.aux_logits {
        Some(logits) if a < 1.0 => {
            let g = losses::aux_cross_entropy_grad(logits, label);
            (
                a * ds + (1.0 - a) * losses::aux_cross_entropy(logits, label),
                Some([(1.0 - a) * g[0], (1.0 - a) * g[1]]),
            )
        }
        _ => (ds, None),
    };
    let up = Upstream {
        df: a * y * dm,
        drho: a * drho,
        daux,
    };
    (loss, ds, up)
}

/// Train a copy of `net` on `ds`.
///
/// Each epoch shuffles with the `[SHUFFLE, epoch]` stream of `cfg.seed`,
/// draws dropout masks from `[DROPOUT, epoch]`, and steps once per batch on
/// the batch-mean gradient. The last batch may be short.
pub fn train(
    net: &AbstainNetwork,
    ds: &Dataset,
    cfg: &TrainConfig,
) -> Result<(AbstainNetwork, TrainHistory)> {
    cfg.validate()?;
    net.validate()?;
    if ds.dim != net.input_dim {
        return Err(Error::InputShape {
            expected: net.input_dim,
            got: ds.dim,
        });
    }
    if cfg.loss.alpha < 1.0 && net.aux_head.is_none() {
        return Err(Error::config(format!(
            "alpha = {} needs an auxiliary head",
            cfg.loss.alpha
        )));
    }

    let mut net = net.clone();
    if let Some(p) = cfg.dropout {
        set_hidden_dropout(&mut net, p);
    }
    let uses_dropout = all_layers(&net).any(|l| l.dropout > 0.0);
    let mut opt = OptimizerState::new(cfg.optimizer, cfg.weight_decay, net.param_count())?;
    let mut grads = ParamGrads::zeros_like(&net);
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut best = f64::INFINITY;
    let mut stale = 0usize;
    let n = ds.len() as f64;

    for epoch in 0..cfg.epochs {
        if cfg.shuffle {
            order.sort_unstable();
            SplitMix64::stream(cfg.seed, &[tags::SHUFFLE, epoch as u64]).shuffle(&mut order);
        }
        let mut drop_rng = SplitMix64::stream(cfg.seed, &[tags::DROPOUT, epoch as u64]);
        let mut acc = EpochAccumulator::default();

        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            grads.scale(0.0);
            let scale = 1.0 / idx.len() as f64;
            let mut batch_loss = 0.0;
            for &i in idx {
                let s = &ds.samples[i];
                let rng = if uses_dropout {
                    Some(&mut drop_rng)
                } else {
                    None
                };
                let (out, trace) = net.forward_with(&s.features, rng)?;
                let (loss, ds_loss, up) = sample_objective(&out, s.label, &cfg.loss);
                batch_loss += loss;
                acc.add(&out, s.label, cfg.loss.d, ds_loss);
                net.backward_into(&trace, &up, scale, &mut grads)?;
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch,
                    param_norm: net.param_norm(),
                });
            }
            acc.loss += batch_loss;
            opt.step(net.param_slices_mut(), grads.slices())?;
        }

        let loss = acc.loss / n;
        history.epochs.push(EpochRecord {
            epoch,
            loss,
            ds_loss: acc.ds_loss / n,
            risk: acc.risk / n,
            rejection_rate: acc.rejected as f64 / n,
            rho_min: acc.rho_min,
            rho_mean: acc.rho_sum / n,
            rho_max: acc.rho_max,
            lr: opt.lr(),
        });

        if let LrSchedule::HalveOnPlateau { patience } = cfg.schedule {
            if loss < best - PLATEAU_THRESHOLD {
                best = loss;
                stale = 0;
            } else {
                stale += 1;
                if stale >= patience {
                    opt.set_lr(opt.lr() * 0.5);
                    stale = 0;
                }
            }
        }
    }
    Ok((net, history))
}

fn all_layers(net: &AbstainNetwork) -> impl Iterator<Item = &crate::nn::DenseLayer> {
    let rej: &[crate::nn::DenseLayer] = match &net.rej_mode {
        crate::nn::RejectionMode::Scalar { .. } => &[],
        crate::nn::RejectionMode::InstanceHead { layers } => layers,
    };
    net.body
        .iter()
        .chain(&net.pred_head)
        .chain(rej)
        .chain(net.aux_head.iter().flatten())
}

/// Set dropout on every ReLU layer; output layers stay deterministic.
fn set_hidden_dropout(net: &mut AbstainNetwork, p: f64) {
    let rej: &mut [crate::nn::DenseLayer] = match &mut net.rej_mode {
        crate::nn::RejectionMode::Scalar { .. } => &mut [],
        crate::nn::RejectionMode::InstanceHead { layers } => layers,
    };
    for l in net
        .body
        .iter_mut()
        .chain(net.pred_head.iter_mut())
        .chain(rej.iter_mut())
        .chain(net.aux_head.iter_mut().flatten())
    {
        if l.activation == crate::nn::Activation::Relu {
            l.dropout = p;
        }
    }
}

#[derive(Debug)]
struct EpochAccumulator {
    loss: f64,
    ds_loss: f64,
    risk: f64,
    rejected: usize,
    rho_sum: f64,
    rho_min: f64,
    rho_max: f64,
}

impl Default for EpochAccumulator {
    fn default() -> Self {
        Self {
            loss: 0.0,
            ds_loss: 0.0,
            risk: 0.0,
            rejected: 0,
            rho_sum: 0.0,
            rho_min: f64::INFINITY,
            rho_max: f64::NEG_INFINITY,
        }
    }
}

impl EpochAccumulator {
    fn add(&mut self, out: &crate::nn::HeadOutputs, label: i8, d: f64, ds_loss: f64) {
        self.ds_loss += ds_loss;
        self.risk += losses::zero_d_one_loss(f64::from(label) * out.f, out.rho, d);
        if decide(out) == Decision::Reject {
            self.rejected += 1;
        }
        self.rho_sum += out.rho;
        self.rho_min = self.rho_min.min(out.rho);
        self.rho_max = self.rho_max.max(out.rho);
    }
}

/// Reject-option metrics from decision counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    pub correct: usize,
    pub errors: usize,
    pub rejected: usize,
    /// `correct / (n - rejected)`; `None` when everything is rejected.
    pub accuracy_unrejected: Option<f64>,
    pub rejection_rate: f64,
    /// `(errors + d * rejected) / n`.
    pub zero_d_one_risk: f64,
}

impl Metrics {
    pub fn from_counts(correct: usize, errors: usize, rejected: usize, d: f64) -> Self {
        let n = correct + errors + rejected;
        let accepted = correct + errors;
        Self {
            n,
            correct,
            errors,
            rejected,
            accuracy_unrejected: (accepted > 0).then(|| correct as f64 / accepted as f64),
            rejection_rate: rejected as f64 / n as f64,
            zero_d_one_risk: (errors as f64 + d * rejected as f64) / n as f64,
        }
    }
}

fn outcome(decision: Decision, label: i8) -> usize {
    match (decision, label > 0) {
        (Decision::Reject, _) => 2,
        (Decision::Pos, true) | (Decision::Neg, false) => 0,
        _ => 1,
    }
}

pub fn evaluate(net: &AbstainNetwork, ds: &Dataset, d: f64) -> Result<Metrics> {
    evaluate_with(net, ds, d, Exec::Sequential)
}

/// [`evaluate`] with the per-sample forward passes distributed by `exec`.
pub fn evaluate_with(net: &AbstainNetwork, ds: &Dataset, d: f64, exec: Exec) -> Result<Metrics> {
    if ds.dim != net.input_dim {
        return Err(Error::InputShape {
            expected: net.input_dim,
            got: ds.dim,
        });
    }
    let outcomes = exec.map(&ds.samples, |_, s| {
        net.predict(&s.features)
            .map(|o| outcome(decide(&o), s.label))
    });
    let mut counts = [0usize; 3];
    for o in outcomes {
        counts[o?] += 1;
    }
    Ok(Metrics::from_counts(counts[0], counts[1], counts[2], d))
}

/// Mean double sigmoid loss of `net` on `ds`.
pub fn surrogate_risk(net: &AbstainNetwork, ds: &Dataset, cfg: &LossConfig) -> Result<f64> {
    let mut total = 0.0;
    for s in &ds.samples {
        let o = net.predict(&s.features)?;
        total += losses::double_sigmoid_loss(f64::from(s.label) * o.f, o.rho, cfg);
    }
    Ok(total / ds.len() as f64)
}

/// Everything a sweep cell needs apart from `d` and its seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTemplate {
    pub network: NetworkSpec,
    pub train: TrainConfig,
    /// z-score features with each fold's training statistics.
    pub standardize: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub d_index: usize,
    pub rep: usize,
    pub fold: usize,
    pub seed: u64,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, std })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub d: f64,
    pub cells: usize,
    /// Over the cells that accepted at least one point.
    pub accuracy: Option<MeanStd>,
    pub rejection_rate: MeanStd,
    pub risk: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub cells: Vec<CellResult>,
}

impl SweepTable {
    /// CSV with columns `d,acc_mean,acc_std,rej_mean,rej_std,risk_mean,risk_std`;
    /// accuracy cells are empty when undefined.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "d",
            "acc_mean",
            "acc_std",
            "rej_mean",
            "rej_std",
            "risk_mean",
            "risk_std",
        ])
        .map_err(csv_err)?;
        for r in &self.rows {
            let (am, asd) = r.accuracy.map_or((String::new(), String::new()), |a| {
                (fmt(a.mean), fmt(a.std))
            });
            w.write_record([
                fmt(r.d),
                am,
                asd,
                fmt(r.rejection_rate.mean),
                fmt(r.rejection_rate.std),
                fmt(r.risk.mean),
                fmt(r.risk.std),
            ])
            .map_err(csv_err)?;
        }
        finish_csv(w)
    }
}

/// Seed of the sweep cell `(rep, fold, d_index)`.
pub fn cell_seed(base: u64, rep: usize, fold: usize, d_index: usize) -> u64 {
    derive_seed(base, &[tags::CELL, rep as u64, fold as u64, d_index as u64])
}

/// Cross-validated metrics for each rejection cost.
///
/// Every `(rep, fold, d)` cell trains a fresh network whose init and training
/// seeds both come from [`cell_seed`] of `template.train.seed`, so the table is
/// identical under any [`Exec`]. Rows average over all `rep x fold` cells.
pub fn sweep_d(
    ds: &Dataset,
    d_values: &[f64],
    plan: &SplitPlan,
    template: &SweepTemplate,
    exec: Exec,
) -> Result<SweepTable> {
    if d_values.is_empty() {
        return Err(Error::config("empty d grid"));
    }
    for &d in d_values {
        LossConfig {
            d,
            ..template.train.loss
        }
        .validate()?;
    }
    template.train.validate()?;
    let folds = plan.folds(ds.len())?;
    let splits = folds
        .iter()
        .map(|f| {
            let train = ds.subset(&f.train);
            let val = ds.subset(&f.validation);
            if template.standardize {
                let (t, mut o, _) = standardize(&train, &[&val])?;
                Ok((t, o.pop().expect("one transformed set")))
            } else {
                Ok((train, val))
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let jobs: Vec<(usize, usize)> = (0..folds.len())
        .flat_map(|fi| (0..d_values.len()).map(move |di| (fi, di)))
        .collect();
    let base = template.train.seed;
    let cells = exec
        .map(&jobs, |_, &(fi, di)| {
            let fold = &folds[fi];
            let seed = cell_seed(base, fold.rep, fold.fold, di);
            let mut cfg = template.train.clone();
            cfg.loss.d = d_values[di];
            cfg.seed = seed;
            let net = init_network(&template.network, seed)?;
            let (trained, _) = train(&net, &splits[fi].0, &cfg)?;
            Ok(CellResult {
                d_index: di,
                rep: fold.rep,
                fold: fold.fold,
                seed,
                metrics: evaluate(&trained, &splits[fi].1, cfg.loss.d)?,
            })
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let rows = d_values
        .iter()
        .enumerate()
        .map(|(di, &d)| {
            let mine: Vec<&CellResult> = cells.iter().filter(|c| c.d_index == di).collect();
            let acc: Vec<f64> = mine
                .iter()
                .filter_map(|c| c.metrics.accuracy_unrejected)
                .collect();
            let rej: Vec<f64> = mine.iter().map(|c| c.metrics.rejection_rate).collect();
            let risk: Vec<f64> = mine.iter().map(|c| c.metrics.zero_d_one_risk).collect();
            SweepRow {
                d,
                cells: mine.len(),
                accuracy: MeanStd::of(&acc),
                rejection_rate: MeanStd::of(&rej).expect("every d has cells"),
                risk: MeanStd::of(&risk).expect("every d has cells"),
            }
        })
        .collect();
    Ok(SweepTable { rows, cells })
}

/// `d_min, d_min + step, ...` up to `d_max` inclusive, snapped to the step grid.
pub fn d_grid(d_min: f64, d_max: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || d_max < d_min {
        return Err(Error::config("d grid needs step > 0 and d_max >= d_min"));
    }
    let count = ((d_max - d_min) / step + 1e-9).floor() as usize + 1;
    Ok((0..count)
        .map(|i| {
            let v = d_min + i as f64 * step;
            (v * 1e12).round() / 1e12
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_sine_dataset, Sample};
    use crate::nn::{Activation, DenseLayer, RejectionMode};
    use approx::assert_relative_eq;

    fn tiny_net(raw_rho: f64) -> AbstainNetwork {
        AbstainNetwork {
            input_dim: 1,
            body: vec![],
            pred_head: vec![DenseLayer::from_rows(
                &[&[1.0]],
                &[0.0],
                Activation::Identity,
            )],
            rej_mode: RejectionMode::Scalar { raw_rho },
            aux_head: None,
        }
    }

    fn line(points: &[(f64, i8)]) -> Dataset {
        Dataset::new(
            points
                .iter()
                .map(|&(x, label)| Sample {
                    features: vec![x],
                    label,
                })
                .collect(),
        )
        .unwrap()
    }

    fn cfg(d: f64, epochs: usize) -> TrainConfig {
        TrainConfig::new(LossConfig::new(d, 1.0, 1.0).unwrap(), epochs, 11)
    }

    #[test]
    fn evaluate_hand_count() {
        // f(x) = x with rho = 0.5: 4 correct, 2 wrong, 4 rejected.
        let ds = line(&[
            (2.0, 1),
            (3.0, 1),
            (-2.0, -1),
            (-1.0, -1),
            (1.0, -1),
            (-1.0, 1),
            (0.1, 1),
            (-0.1, -1),
            (0.5, 1),
            (0.0, -1),
        ]);
        let m = evaluate(&tiny_net(0.5), &ds, 0.25).unwrap();
        assert_eq!((m.correct, m.errors, m.rejected), (4, 2, 4));
        assert_relative_eq!(m.accuracy_unrejected.unwrap(), 4.0 / 6.0);
        assert_relative_eq!(m.rejection_rate, 0.4);
        assert_relative_eq!(m.zero_d_one_risk, 0.3, epsilon = 1e-15);
    }

    #[test]
    fn evaluate_all_rejected_and_all_correct() {
        let ds = line(&[(0.1, 1), (-0.2, -1)]);
        let m = evaluate(&tiny_net(5.0), &ds, 0.3).unwrap();
        assert_eq!(m.accuracy_unrejected, None);
        assert_eq!(m.rejection_rate, 1.0);
        assert_relative_eq!(m.zero_d_one_risk, 0.3);

        let m = evaluate(&tiny_net(0.0), &ds, 0.3).unwrap();
        assert_eq!(m.accuracy_unrejected, Some(1.0));
        assert_eq!(m.zero_d_one_risk, 0.0);
    }

    #[test]
    fn evaluate_shape_mismatch() {
        let ds = Dataset::new(vec![Sample {
            features: vec![1.0, 2.0],
            label: 1,
        }])
        .unwrap();
        assert!(matches!(
            evaluate(&tiny_net(0.5), &ds, 0.2),
            Err(Error::InputShape {
                expected: 1,
                got: 2
            })
        ));
    }

    #[test]
    fn zero_epochs_rejected() {
        let ds = line(&[(1.0, 1), (-1.0, -1)]);
        assert!(matches!(
            train(&tiny_net(1.0), &ds, &cfg(0.2, 0)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn zero_lr_leaves_parameters() {
        let ds = line(&[(1.0, 1), (-1.0, -1), (0.3, 1)]);
        let mut c = cfg(0.2, 1);
        c.optimizer = OptimizerKind::adagrad(0.0);
        let net = tiny_net(1.0);
        let (trained, hist) = train(&net, &ds, &c).unwrap();
        assert_eq!(trained, net);
        assert_eq!(hist.epochs.len(), 1);
    }

    #[test]
    fn alpha_below_one_needs_aux_head() {
        let ds = line(&[(1.0, 1), (-1.0, -1)]);
        let mut c = cfg(0.2, 1);
        c.loss.alpha = 0.5;
        assert!(matches!(
            train(&tiny_net(1.0), &ds, &c),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn non_finite_loss_aborts() {
        let ds = line(&[(1.0, 1), (-1.0, -1)]);
        let mut net = tiny_net(1.0);
        net.pred_head[0].weights[0] = f64::MAX;
        let mut c = cfg(0.2, 1);
        c.loss.alpha = 0.5;
        net.aux_head = Some(vec![DenseLayer::from_rows(
            &[&[f64::MAX], &[-f64::MAX]],
            &[0.0, 0.0],
            Activation::Identity,
        )]);
        let mut big = ds.clone();
        big.samples[0].features[0] = 1e300;
        match train(&net, &big, &c) {
            Err(Error::NonFiniteLoss {
                epoch: 0, batch: 0, ..
            }) => {}
            other => panic!("expected NonFiniteLoss, got {other:?}"),
        }
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let (ds, _) = generate_sine_dataset(200, 0.75, 0.5, 3).unwrap();
        let net = init_network(&NetworkSpec::scalar(&[2, 16, 16]), 5).unwrap();
        let mut c = cfg(0.25, 20);
        c.optimizer = OptimizerKind::adagrad(0.05);
        let (a, ha) = train(&net, &ds, &c).unwrap();
        let (b, hb) = train(&net, &ds, &c).unwrap();
        assert_eq!(a, b);
        assert_eq!(ha, hb);
        assert_eq!(ha.epochs.len(), 20);
        let first: f64 = ha.epochs[..5].iter().map(|e| e.ds_loss).sum();
        let last: f64 = ha.epochs[15..].iter().map(|e| e.ds_loss).sum();
        assert!(last < first);
    }

    #[test]
    fn inert_aux_head_at_alpha_one() {
        let (ds, _) = generate_sine_dataset(64, 0.75, 0.5, 1).unwrap();
        let mut spec = NetworkSpec::scalar(&[2, 8]);
        let plain = init_network(&spec, 9).unwrap();
        spec.aux_hidden = Some(vec![]);
        let with_aux = init_network(&spec, 9).unwrap();
        let c = cfg(0.2, 3);
        let (a, ha) = train(&plain, &ds, &c).unwrap();
        let (b, hb) = train(&with_aux, &ds, &c).unwrap();
        assert_eq!(a.body, b.body);
        assert_eq!(a.pred_head, b.pred_head);
        assert_eq!(a.rej_mode, b.rej_mode);
        assert_eq!(ha, hb);
    }

    #[test]
    fn plateau_halves_learning_rate() {
        let ds = line(&[(1.0, 1), (-1.0, -1)]);
        let mut c = cfg(0.2, 6);
        c.optimizer = OptimizerKind::adagrad(0.0);
        c.schedule = LrSchedule::HalveOnPlateau { patience: 2 };
        let (_, h) = train(&tiny_net(1.0), &ds, &c).unwrap();
        let lrs: Vec<f64> = h.epochs.iter().map(|e| e.lr).collect();
        assert_eq!(lrs, vec![0.0; 6]);

        c.optimizer = OptimizerKind::SgdMomentum {
            lr: 1e-9,
            momentum: 0.0,
        };
        let (_, h) = train(&tiny_net(1.0), &ds, &c).unwrap();
        let lrs: Vec<f64> = h.epochs.iter().map(|e| e.lr).collect();
        // epoch 0 sets the best; epochs 1-2 stall, halving before epoch 3
        assert_eq!(lrs[..4], [1e-9, 1e-9, 1e-9, 5e-10]);
    }

    #[test]
    fn risk_identity_from_counts() {
        let m = Metrics::from_counts(7, 2, 3, 0.15);
        assert_eq!(m.n, 12);
        assert_eq!(m.zero_d_one_risk, (2.0 + 0.15 * 3.0) / 12.0);
    }

    #[test]
    fn mean_std() {
        let s = MeanStd::of(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_relative_eq!(s.mean, 2.5);
        assert_relative_eq!(s.std, (5.0f64 / 3.0).sqrt());
        assert_eq!(MeanStd::of(&[2.0]).unwrap().std, 0.0);
        assert!(MeanStd::of(&[]).is_none());
    }

    #[test]
    fn d_grid_endpoints() {
        let g = d_grid(0.05, 0.5, 0.05).unwrap();
        assert_eq!(g.len(), 10);
        assert_eq!(g[0], 0.05);
        assert_eq!(g[9], 0.5);
        assert_eq!(g[2], 0.15);
    }

    #[test]
    fn sweep_single_d_two_folds() {
        let (ds, _) = generate_sine_dataset(40, 0.75, 0.0, 2).unwrap();
        let template = SweepTemplate {
            network: NetworkSpec::scalar(&[2, 4]),
            train: cfg(0.2, 2),
            standardize: true,
        };
        let plan = SplitPlan::new(2, 1, 4);
        let t = sweep_d(&ds, &[0.2], &plan, &template, Exec::Sequential).unwrap();
        assert_eq!(t.rows.len(), 1);
        assert_eq!(t.rows[0].cells, 2);
        let mean = (t.cells[0].metrics.zero_d_one_risk + t.cells[1].metrics.zero_d_one_risk) / 2.0;
        assert_relative_eq!(t.rows[0].risk.mean, mean, epsilon = 1e-15);
        let csv = t.to_csv().unwrap();
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.starts_with("d,acc_mean,acc_std,rej_mean,rej_std,risk_mean,risk_std\n"));
    }

    #[test]
    fn sweep_independent_of_exec_mode() {
        let (ds, _) = generate_sine_dataset(30, 0.75, 0.3, 8).unwrap();
        let template = SweepTemplate {
            network: NetworkSpec::scalar(&[2, 4]),
            train: cfg(0.2, 2),
            standardize: false,
        };
        let plan = SplitPlan::new(3, 2, 1);
        let a = sweep_d(&ds, &[0.1, 0.3], &plan, &template, Exec::Sequential).unwrap();
        let b = sweep_d(
            &ds,
            &[0.1, 0.3],
            &plan,
            &template,
            Exec::Parallel { jobs: 3 },
        )
        .unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows.len(), 2);
    }

    #[test]
    fn history_csv_columns() {
        let ds = line(&[(1.0, 1), (-1.0, -1)]);
        let (_, h) = train(&tiny_net(1.0), &ds, &cfg(0.2, 2)).unwrap();
        let csv = h.to_csv().unwrap();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next(),
            Some("epoch,loss,risk,rejection_rate,rho_mean")
        );
        assert_eq!(lines.count(), 2);
    }
}

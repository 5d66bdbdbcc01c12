use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use abstain::bounds::{bound_report, BoundSettings, NormSpec};
use abstain::calibration::{run_calibration_check, CheckConfig, ZGrid};
use abstain::data::{
    format_real, generate_sine_dataset, load_csv, CsvSchema, Dataset, LabelMap, SplitPlan,
    Standardizer,
};
use abstain::exec::Exec;
use abstain::experiments::{self, m_grid, BoundCurveConfig, NoiseExperimentConfig, SineData};
use abstain::losses::LossConfig;
use abstain::model::ModelFile;
use abstain::nn::{init_network, NetworkSpec, RejectionSpec};
use abstain::optim::OptimizerKind;
use abstain::rng::{derive_seed, tags};
use abstain::training::{d_grid, evaluate, sweep_d, train, LrSchedule, SweepTemplate, TrainConfig};
use anyhow::{Context, Result};
use serde::Serialize;

use crate::args::*;
use crate::manifest::{sha256_file, unix_ms, InputFile, RunManifest};

/// Bad flag values detected after parsing; exits with the usage code.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Output sink for one run. Every file lands under `out_dir`.
struct Run {
    seed: u64,
    exec: Exec,
    out_dir: PathBuf,
    outputs: Vec<PathBuf>,
    derived: BTreeMap<String, u64>,
}

impl Run {
    fn write(&mut self, rel: &Path, text: &str) -> Result<()> {
        if rel.is_absolute()
            || rel
                .components()
                .any(|c| c == std::path::Component::ParentDir)
        {
            return Err(usage(format!(
                "output {} must be a plain path inside --out-dir",
                rel.display()
            )));
        }
        let path = self.out_dir.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)
                .with_context(|| format!("creating {}", parent.display()))?;
        }
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        self.outputs.push(rel.to_path_buf());
        Ok(())
    }

    fn write_json(&mut self, rel: &Path, value: &impl Serialize) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(rel, &text)
    }

    fn derive(&mut self, name: &str, path: &[u64]) -> u64 {
        let s = derive_seed(self.seed, path);
        self.derived.insert(name.to_string(), s);
        s
    }

    fn record(&mut self, name: &str, seed: u64) {
        self.derived.insert(name.to_string(), seed);
    }
}

fn with_extension(p: &Path, ext: &str) -> PathBuf {
    p.with_extension(ext)
}

fn input_paths(cmd: &mut Command) -> Vec<&mut PathBuf> {
    match cmd {
        Command::Train(a) => vec![&mut a.data],
        Command::Eval(a) => vec![&mut a.model, &mut a.data],
        Command::Sweep(a) => vec![&mut a.data],
        Command::Bound(a) => {
            let mut v = vec![&mut a.model, &mut a.data];
            if let Some(t) = &mut a.test {
                v.push(t);
            }
            v
        }
        _ => vec![],
    }
}

/// Make input paths absolute and check they exist.
fn resolve_inputs(cmd: &mut Command) -> Result<()> {
    for p in input_paths(cmd) {
        *p = std::fs::canonicalize(&*p).with_context(|| format!("input file {}", p.display()))?;
    }
    Ok(())
}

/// Run `cmd` and write its manifest. `out_dir` must exist or be creatable.
pub fn execute(mut cmd: Command, seed: u64, jobs: usize, out_dir: &Path) -> Result<RunManifest> {
    let started = unix_ms();
    resolve_inputs(&mut cmd)?;
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let out_dir = std::fs::canonicalize(out_dir)?;
    let mut inputs = Vec::new();
    for p in input_paths(&mut cmd) {
        inputs.push(InputFile {
            path: p.clone(),
            sha256: sha256_file(p)?,
        });
    }
    let mut run = Run {
        seed,
        exec: Exec::from_jobs(jobs),
        out_dir: out_dir.clone(),
        outputs: Vec::new(),
        derived: BTreeMap::new(),
    };
    match &cmd {
        Command::GenData(a) => gen_data(&mut run, a)?,
        Command::Train(a) => train_cmd(&mut run, a)?,
        Command::Eval(a) => eval_cmd(&mut run, a)?,
        Command::Sweep(a) => sweep_cmd(&mut run, a)?,
        Command::Noise(a) => noise_cmd(&mut run, a)?,
        Command::Bound(a) => bound_cmd(&mut run, a)?,
        Command::BoundCurve(a) => bound_curve_cmd(&mut run, a)?,
        Command::CalibrationCheck(a) => calibration_cmd(&mut run, a)?,
        Command::Replay(_) => unreachable!("replay is dispatched before execute"),
    }
    let manifest = RunManifest {
        tool: "abstain".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed,
        jobs,
        out_dir,
        derived_seeds: run.derived,
        inputs,
        outputs: run.outputs,
        started_unix_ms: started,
        finished_unix_ms: unix_ms(),
        command: cmd,
    };
    let path = manifest
        .out_dir
        .join(RunManifest::file_name(&manifest.command));
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(manifest)
}

/// Re-run the command recorded in `manifest`, into `out_dir` when given.
pub fn replay(manifest: &Path, out_dir: Option<&Path>) -> Result<RunManifest> {
    let m = RunManifest::load(manifest)?;
    m.verify_inputs()?;
    let dir = out_dir.map(Path::to_path_buf).unwrap_or(m.out_dir.clone());
    execute(m.command, m.seed, m.jobs, &dir)
}

fn schema(label: &LabelArgs) -> CsvSchema {
    CsvSchema {
        label_last: !label.label_first,
        label_map: match (&label.label_pos, &label.label_neg) {
            (Some(p), Some(n)) => LabelMap::tokens(p, n),
            _ => LabelMap::Numeric,
        },
    }
}

fn load(path: &Path, label: &LabelArgs) -> Result<Dataset> {
    Ok(load_csv(path, &schema(label))?)
}

fn train_config(m: &ModelArgs, loss: LossConfig, seed: u64) -> TrainConfig {
    TrainConfig {
        loss,
        epochs: m.epochs,
        batch_size: m.batch_size,
        optimizer: match m.optimizer {
            OptimizerChoice::Adagrad => OptimizerKind::adagrad(m.lr),
            OptimizerChoice::Momentum => OptimizerKind::SgdMomentum {
                lr: m.lr,
                momentum: m.momentum,
            },
        },
        weight_decay: m.weight_decay,
        schedule: m.patience.map_or(LrSchedule::Constant, |patience| {
            LrSchedule::HalveOnPlateau { patience }
        }),
        dropout: m.dropout,
        seed,
        shuffle: true,
    }
}

fn widths(input_dim: usize, hidden: &[usize]) -> Vec<usize> {
    std::iter::once(input_dim)
        .chain(hidden.iter().copied())
        .collect()
}

fn gen_data(run: &mut Run, a: &GenDataArgs) -> Result<()> {
    run.derive("points", &[tags::SINE_POINTS]);
    run.derive("flips", &[tags::SINE_FLIPS]);
    let (ds, meta) = generate_sine_dataset(a.n, a.flip_margin, a.flip_prob, run.seed)?;
    run.write(&a.out, &ds.to_csv())?;
    run.write_json(&with_extension(&a.out, "meta.json"), &meta)
}

fn train_cmd(run: &mut Run, a: &TrainArgs) -> Result<()> {
    let ds = load(&a.data, &a.label)?;
    let (ds, standardizer) = if a.no_standardize {
        (ds, None)
    } else {
        let s = Standardizer::fit(&ds)?;
        (s.apply(&ds)?, Some(s))
    };
    let loss = LossConfig::new(a.d, a.model.gamma, a.alpha)?;
    let spec = NetworkSpec {
        widths: widths(ds.dim, &a.model.hidden),
        pred_hidden: vec![],
        rejection: match &a.instance_rho {
            Some(hidden) => RejectionSpec::Instance {
                hidden: hidden.clone(),
            },
            None => RejectionSpec::Scalar,
        },
        aux_hidden: a.aux_hidden.clone(),
        dropout: 0.0,
    };
    run.record("init", run.seed);
    run.record("train", run.seed);
    let net = init_network(&spec, run.seed)?;
    let cfg = train_config(&a.model, loss, run.seed);
    let (trained, history) = train(&net, &ds, &cfg)?;
    let file = ModelFile::new(&trained, standardizer, Some(loss));
    run.write(&a.model_out, &file.to_json()?)?;
    run.write(&a.history_out, &history.to_csv()?)
}

fn load_model(path: &Path) -> Result<(ModelFile, abstain::nn::AbstainNetwork)> {
    let file = ModelFile::load(path)?;
    let net = file.network()?;
    Ok((file, net))
}

fn prepared(file: &ModelFile, ds: Dataset) -> Result<Dataset> {
    match &file.config.standardizer {
        Some(s) if s.means.len() == ds.dim => Ok(s.apply(&ds)?),
        _ => Ok(ds),
    }
}

fn eval_cmd(run: &mut Run, a: &EvalArgs) -> Result<()> {
    let (file, net) = load_model(&a.model)?;
    let ds = prepared(&file, load(&a.data, &a.label)?)?;
    let d =
        a.d.or(file.config.loss.map(|l| l.d))
            .ok_or_else(|| usage("model records no rejection cost; pass --d"))?;
    let metrics = evaluate(&net, &ds, d)?;
    run.write_json(&a.out, &metrics)
}

fn sweep_cmd(run: &mut Run, a: &SweepArgs) -> Result<()> {
    let ds = load(&a.data, &a.label)?;
    let ds_values = d_grid(a.d_min, a.d_max, a.d_step)?;
    let loss = LossConfig::new(ds_values[0], a.model.gamma, 1.0)?;
    let template = SweepTemplate {
        network: NetworkSpec::scalar(&widths(ds.dim, &a.model.hidden)),
        train: train_config(&a.model, loss, run.seed),
        standardize: !a.no_standardize,
    };
    // Cell seeds hang off the base as [CELL, rep, fold, d_index].
    run.record("cells", run.seed);
    for rep in 0..a.reps {
        run.derive(&format!("folds.{rep}"), &[tags::KFOLD, rep as u64]);
    }
    let plan = SplitPlan::new(a.folds, a.reps, run.seed);
    let table = sweep_d(&ds, &ds_values, &plan, &template, run.exec)?;
    run.write(&a.out, &table.to_csv()?)?;
    run.write_json(&with_extension(&a.out, "json"), &table)
}

fn noise_cmd(run: &mut Run, a: &NoiseArgs) -> Result<()> {
    let loss = LossConfig::new(a.d, a.model.gamma, 1.0)?;
    let cfg = NoiseExperimentConfig {
        data: SineData {
            n_train: a.n,
            n_test: a.synthetic.n_test,
            flip_margin: a.synthetic.flip_margin,
            flip_prob: 0.0,
        },
        rates: a.rates.clone(),
        network: NetworkSpec::scalar(&widths(2, &a.model.hidden)),
        train: train_config(&a.model, loss, 0),
        seed: run.seed,
        tolerance: a.tolerance,
    };
    record_experiment_seeds(run);
    run.record("train", experiments::train_seed(run.seed, 0));
    for i in 0..a.rates.len() {
        run.record(
            &format!("noise.{i}"),
            experiments::noise_seed(run.seed, i as u64),
        );
    }
    let report = experiments::noise_experiment(&cfg, run.exec)?;
    let mut csv = String::from(
        "rate,flips,acc_unrejected,rejection_rate,risk,accuracy_gap,within_tolerance\n",
    );
    let opt = |v: Option<f64>| v.map(format_real).unwrap_or_default();
    writeln!(
        csv,
        "0.0,0,{},{},{},,",
        opt(report.clean.accuracy_unrejected),
        format_real(report.clean.rejection_rate),
        format_real(report.clean.zero_d_one_risk)
    )?;
    for r in &report.rows {
        writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            format_real(r.rate),
            r.flips,
            opt(r.metrics.accuracy_unrejected),
            format_real(r.metrics.rejection_rate),
            format_real(r.metrics.zero_d_one_risk),
            opt(r.accuracy_gap),
            r.within_tolerance
        )?;
    }
    run.write(&a.out, &csv)?;
    run.write_json(&with_extension(&a.out, "json"), &report)
}

fn record_experiment_seeds(run: &mut Run) {
    let s = run.seed;
    run.record("pool", experiments::pool_seed(s));
    run.record("test", experiments::test_seed(s));
    run.record("init", experiments::init_seed(s));
}

fn norm_settings(n: &NormArgs) -> Result<BoundSettings> {
    Ok(BoundSettings {
        spec: NormSpec::new(n.p, n.q)?,
        delta: n.delta,
        rho_bar: n.rho_bar,
    })
}

fn bound_cmd(run: &mut Run, a: &BoundArgs) -> Result<()> {
    let (file, net) = load_model(&a.model)?;
    let loss = file
        .config
        .loss
        .ok_or_else(|| usage("model records no loss settings"))?;
    let ds = prepared(&file, load(&a.data, &a.label)?)?;
    let test = a
        .test
        .as_ref()
        .map(|p| prepared(&file, load(p, &a.label)?))
        .transpose()?;
    let report = bound_report(&net, &ds, test.as_ref(), &loss, &norm_settings(&a.norm)?)?;
    run.write_json(&a.out, &report)
}

fn bound_curve_cmd(run: &mut Run, a: &BoundCurveArgs) -> Result<()> {
    let loss = LossConfig::new(a.d, a.model.gamma, 1.0)?;
    let cfg = BoundCurveConfig {
        data: SineData {
            n_train: a.m_end,
            n_test: a.synthetic.n_test,
            flip_margin: a.synthetic.flip_margin,
            flip_prob: a.flip_prob,
        },
        ms: m_grid(a.m_start, a.m_end, a.m_step)?,
        network: NetworkSpec::scalar(&widths(2, &a.model.hidden)),
        train: train_config(&a.model, loss, 0),
        settings: norm_settings(&a.norm)?,
        seed: run.seed,
    };
    record_experiment_seeds(run);
    for i in 0..cfg.ms.len() {
        run.record(
            &format!("train.{i}"),
            experiments::train_seed(run.seed, i as u64),
        );
    }
    let report = experiments::bound_curve(&cfg, run.exec)?;
    let mut csv = String::from(
        "m,empirical_risk,test_risk,beta,rho_bar,bound,class_bound,rho_term,log4_term,log2_term,complexity,bound_holds\n",
    );
    for p in &report.points {
        let t = &p.class_terms;
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            p.m,
            format_real(p.report.empirical_risk),
            format_real(p.test_risk),
            format_real(p.report.beta),
            format_real(p.report.rho_bar),
            format_real(p.report.bound),
            format_real(p.class_bound),
            format_real(t.rho_term),
            format_real(t.log4_term),
            format_real(t.log2_term),
            format_real(t.complexity),
            p.bound_holds
        )?;
    }
    run.write(&a.out, &csv)?;
    run.write_json(&with_extension(&a.out, "json"), &report)
}

fn calibration_cmd(run: &mut Run, a: &CalibrationArgs) -> Result<()> {
    if !(a.gamma > 0.0) {
        return Err(usage("--gamma must be > 0"));
    }
    if !(a.z_step > 0.0) {
        return Err(usage("--z-step must be > 0"));
    }
    let cfg = CheckConfig {
        grid: ZGrid {
            step: a.z_step,
            ..ZGrid::default()
        },
        random_trials: a.trials,
        seed: run.seed,
        gamma: a.gamma,
        ..CheckConfig::default()
    };
    let report = run_calibration_check(&cfg, run.exec)?;
    run.write_json(&a.out, &report)
}

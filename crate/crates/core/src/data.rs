//! Datasets: synthetic generation, CSV ingestion, label noise, standardization
//! and cross-validation splits.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{tags, SplitMix64};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    /// +1 or -1.
    pub label: i8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub dim: usize,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        let dim = samples
            .first()
            .map(|s| s.features.len())
            .ok_or_else(|| Error::config("dataset is empty"))?;
        if dim == 0 {
            return Err(Error::config("samples have no features"));
        }
        for (i, s) in samples.iter().enumerate() {
            if s.features.len() != dim {
                return Err(Error::config(format!(
                    "sample {i} has {} features, expected {dim}",
                    s.features.len()
                )));
            }
            if s.label != 1 && s.label != -1 {
                return Err(Error::config(format!("sample {i} has label {}", s.label)));
            }
            if s.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::config(format!(
                    "sample {i} has a non-finite feature"
                )));
            }
        }
        Ok(Self { samples, dim })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            samples: idx.iter().map(|&i| self.samples[i].clone()).collect(),
            dim: self.dim,
        }
    }

    /// First `m` samples.
    pub fn head(&self, m: usize) -> Dataset {
        Dataset {
            samples: self.samples[..m.min(self.len())].to_vec(),
            dim: self.dim,
        }
    }

    /// Counts of (+1, -1) labels.
    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.samples.iter().filter(|s| s.label == 1).count();
        (pos, self.len() - pos)
    }

    /// Header `x1..xD,label`, reals in shortest round-trip form.
    pub fn to_csv(&self) -> String {
        let mut out = (1..=self.dim).map(|i| format!("x{i},")).collect::<String>();
        out.push_str("label\n");
        for s in &self.samples {
            for v in &s.features {
                out.push_str(&format_real(*v));
                out.push(',');
            }
            out.push_str(&s.label.to_string());
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Shortest decimal that parses back to the same `f64`.
pub fn format_real(v: f64) -> String {
    format!("{v:?}")
}

/// Value of the sine boundary function `x2 - x1 - 2 sin(x1)` at `x`.
pub fn sine_boundary(x: &[f64]) -> f64 {
    x[1] - x[0] - 2.0 * x[0].sin()
}

/// Clean label: sign of the boundary function, with exact zero mapped to +1.
pub fn sine_label(x: &[f64]) -> i8 {
    if sine_boundary(x) >= 0.0 {
        1
    } else {
        -1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SineMetadata {
    pub seed: u64,
    pub n: usize,
    pub flip_margin: f64,
    pub flip_prob: f64,
    /// Clean-label counts `[+1, -1]` before flipping.
    pub class_counts: [usize; 2],
    pub flips: usize,
    /// Indices of flipped samples.
    pub flipped: Vec<usize>,
}

/// Half-width of the square the synthetic points are drawn from.
pub const SINE_HALF_WIDTH: f64 = 1.5;

/// Balanced two-class sample in `[-1.5, 1.5]^2` separated by
/// `x2 - x1 - 2 sin(x1) = 0`.
///
/// Points are drawn uniformly (x1 then x2) from the `SINE_POINTS` stream and
/// kept only while their clean class has fewer than `n / 2` members. Then, in
/// sample order, every point with `|x2 - x1 - 2 sin(x1)| <= flip_margin` draws
/// one uniform from the `SINE_FLIPS` stream and has its label flipped when
/// the draw is below `flip_prob`.
pub fn generate_sine_dataset(
    n: usize,
    flip_margin: f64,
    flip_prob: f64,
    seed: u64,
) -> Result<(Dataset, SineMetadata)> {
    if n == 0 || n % 2 == 1 {
        return Err(Error::config(format!(
            "n must be a positive even count for balanced classes, got {n}"
        )));
    }
    if !(0.0..=1.0).contains(&flip_prob) {
        return Err(Error::config(format!(
            "flip_prob {flip_prob} outside [0, 1]"
        )));
    }
    if !(flip_margin >= 0.0) {
        return Err(Error::config("flip_margin must be nonnegative"));
    }
    let half = n / 2;
    let mut points = SplitMix64::stream(seed, &[tags::SINE_POINTS]);
    let mut samples = Vec::with_capacity(n);
    let (mut pos, mut neg) = (0, 0);
    while pos + neg < n {
        let x1 = points.uniform(-SINE_HALF_WIDTH, SINE_HALF_WIDTH);
        let x2 = points.uniform(-SINE_HALF_WIDTH, SINE_HALF_WIDTH);
        let features = vec![x1, x2];
        let label = sine_label(&features);
        let slot = if label == 1 { &mut pos } else { &mut neg };
        if *slot < half {
            *slot += 1;
            samples.push(Sample { features, label });
        }
    }

    let mut flips = SplitMix64::stream(seed, &[tags::SINE_FLIPS]);
    let mut flipped = Vec::new();
    for (i, s) in samples.iter_mut().enumerate() {
        if sine_boundary(&s.features).abs() <= flip_margin && flips.bernoulli(flip_prob) {
            s.label = -s.label;
            flipped.push(i);
        }
    }
    let meta = SineMetadata {
        seed,
        n,
        flip_margin,
        flip_prob,
        class_counts: [pos, neg],
        flips: flipped.len(),
        flipped,
    };
    Ok((Dataset { samples, dim: 2 }, meta))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseMetadata {
    pub seed: u64,
    pub rate: f64,
    pub flips: usize,
}

/// Flip each label independently with probability `rate`, one uniform draw
/// per sample in order from the `UNIFORM_NOISE` stream.
pub fn inject_uniform_noise(
    ds: &Dataset,
    rate: f64,
    seed: u64,
) -> Result<(Dataset, NoiseMetadata)> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::Domain(format!("noise rate {rate} outside [0, 1]")));
    }
    let mut rng = SplitMix64::stream(seed, &[tags::UNIFORM_NOISE]);
    let mut out = ds.clone();
    let mut flips = 0;
    for s in &mut out.samples {
        if rng.bernoulli(rate) {
            s.label = -s.label;
            flips += 1;
        }
    }
    Ok((out, NoiseMetadata { seed, rate, flips }))
}

/// Maps raw label tokens to +1 / -1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LabelMap {
    /// Accept `0/1`, `-1/+1` (and `1.0`-style spellings).
    Numeric,
    /// Explicit token table, e.g. `g -> +1, b -> -1`.
    Tokens(BTreeMap<String, i8>),
}

impl LabelMap {
    pub fn tokens(positive: &str, negative: &str) -> Self {
        let mut m = BTreeMap::new();
        m.insert(positive.to_string(), 1);
        m.insert(negative.to_string(), -1);
        LabelMap::Tokens(m)
    }

    fn map(&self, raw: &str) -> Option<i8> {
        let raw = raw.trim();
        match self {
            LabelMap::Tokens(m) => m.get(raw).copied(),
            LabelMap::Numeric => match raw.parse::<f64>().ok()? {
                1.0 => Some(1),
                0.0 | -1.0 => Some(-1),
                _ => None,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub label_last: bool,
    pub label_map: LabelMap,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            label_last: true,
            label_map: LabelMap::Numeric,
        }
    }
}

/// Parse comma-separated rows. A first row whose feature cells are not all
/// numeric is taken as a header. Row numbers in errors are 1-based file lines.
pub fn parse_csv(text: &str, schema: &CsvSchema) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            row: i + 1,
            msg: e.to_string(),
        })?;
        if rec.iter().all(|c| c.is_empty()) {
            continue;
        }
        rows.push((i + 1, rec));
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            row: 0,
            msg: "no data rows".into(),
        });
    }

    let split = |rec: &csv::StringRecord| -> (Vec<String>, String) {
        let cells: Vec<String> = rec.iter().map(str::to_string).collect();
        if schema.label_last {
            let (f, l) = cells.split_at(cells.len() - 1);
            (f.to_vec(), l[0].clone())
        } else {
            (cells[1..].to_vec(), cells[0].clone())
        }
    };

    let (first_features, _) = split(&rows[0].1);
    if rows[0].1.len() < 2 {
        return Err(Error::Parse {
            row: rows[0].0,
            msg: "need at least one feature column and a label".into(),
        });
    }
    let header = first_features.iter().any(|c| c.parse::<f64>().is_err());
    let width = rows[0].1.len();
    let mut samples = Vec::with_capacity(rows.len());
    for (row, rec) in rows.iter().skip(usize::from(header)) {
        if rec.len() != width {
            return Err(Error::Parse {
                row: *row,
                msg: format!("expected {width} columns, found {}", rec.len()),
            });
        }
        let (cells, raw_label) = split(rec);
        let features = cells
            .iter()
            .enumerate()
            .map(|(j, c)| {
                c.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Parse {
                        row: *row,
                        msg: format!("feature column {} is not a finite number: {c:?}", j + 1),
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        let label = schema
            .label_map
            .map(&raw_label)
            .ok_or_else(|| Error::Parse {
                row: *row,
                msg: format!("unmappable label {raw_label:?}"),
            })?;
        samples.push(Sample { features, label });
    }
    if samples.is_empty() {
        return Err(Error::Parse {
            row: rows[0].0,
            msg: "header without data rows".into(),
        });
    }
    Dataset::new(samples)
}

pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    let mut text = String::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|e| Error::io(path, e))?;
    parse_csv(&text, schema)
}

/// Per-feature z-score parameters fitted on a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Standardizer {
    /// Population mean and standard deviation of each feature.
    pub fn fit(train: &Dataset) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::config("cannot standardize an empty training set"));
        }
        let n = train.len() as f64;
        let mut means = vec![0.0; train.dim];
        for s in &train.samples {
            means.iter_mut().zip(&s.features).for_each(|(m, x)| *m += x);
        }
        means.iter_mut().for_each(|m| *m /= n);
        let mut vars = vec![0.0; train.dim];
        for s in &train.samples {
            for ((v, x), m) in vars.iter_mut().zip(&s.features).zip(&means) {
                *v += (x - m) * (x - m);
            }
        }
        let stds = vars.into_iter().map(|v| (v / n).sqrt()).collect();
        Ok(Self { means, stds })
    }

    /// Zero-variance features pass through unchanged.
    pub fn apply_point(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(&v, (&m, &s))| if s > 0.0 { (v - m) / s } else { v })
            .collect()
    }

    pub fn apply(&self, ds: &Dataset) -> Result<Dataset> {
        if ds.dim != self.means.len() {
            return Err(Error::InputShape {
                expected: self.means.len(),
                got: ds.dim,
            });
        }
        Ok(Dataset {
            samples: ds
                .samples
                .iter()
                .map(|s| Sample {
                    features: self.apply_point(&s.features),
                    label: s.label,
                })
                .collect(),
            dim: ds.dim,
        })
    }
}

/// Fit on `train` and transform `train` plus every dataset in `others`.
pub fn standardize(
    train: &Dataset,
    others: &[&Dataset],
) -> Result<(Dataset, Vec<Dataset>, Standardizer)> {
    let st = Standardizer::fit(train)?;
    let t = st.apply(train)?;
    let rest = others
        .iter()
        .map(|d| st.apply(d))
        .collect::<Result<Vec<_>>>()?;
    Ok((t, rest, st))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub k: usize,
    pub reps: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fold {
    pub rep: usize,
    pub fold: usize,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

impl SplitPlan {
    pub fn new(k: usize, reps: usize, seed: u64) -> Self {
        Self { k, reps, seed }
    }

    /// Fold index lists for every repetition.
    ///
    /// Repetition `r` shuffles `0..n` with the stream `[KFOLD, r]`; the first
    /// `n % k` folds get `ceil(n / k)` consecutive entries, the rest `floor(n / k)`.
    pub fn folds(&self, n: usize) -> Result<Vec<Fold>> {
        if self.k < 2 {
            return Err(Error::config(format!(
                "need at least 2 folds, got {}",
                self.k
            )));
        }
        if self.k > n {
            return Err(Error::config(format!(
                "{} folds exceed {n} samples",
                self.k
            )));
        }
        if self.reps == 0 {
            return Err(Error::config("need at least one repetition"));
        }
        let mut out = Vec::with_capacity(self.k * self.reps);
        for rep in 0..self.reps {
            let mut perm: Vec<usize> = (0..n).collect();
            SplitMix64::stream(self.seed, &[tags::KFOLD, rep as u64]).shuffle(&mut perm);
            let (base, extra) = (n / self.k, n % self.k);
            let mut start = 0;
            for fold in 0..self.k {
                let size = base + usize::from(fold < extra);
                let validation = perm[start..start + size].to_vec();
                let train = perm[..start]
                    .iter()
                    .chain(&perm[start + size..])
                    .copied()
                    .collect();
                out.push(Fold {
                    rep,
                    fold,
                    train,
                    validation,
                });
                start += size;
            }
        }
        Ok(out)
    }
}

/// `(train, validation)` dataset pairs for every fold of every repetition.
pub fn kfold<'a>(
    ds: &'a Dataset,
    plan: &SplitPlan,
) -> Result<impl Iterator<Item = (Dataset, Dataset)> + 'a> {
    let folds = plan.folds(ds.len())?;
    Ok(folds
        .into_iter()
        .map(move |f| (ds.subset(&f.train), ds.subset(&f.validation))))
}

//! Dense abstaining network.
//!
//! A shared body of dense layers feeds a prediction head (scalar score `f`),
//! a rejection output (`rho >= 0`) and, optionally, a two-logit auxiliary
//! head that only shapes training. The rejection output is either a single
//! trainable scalar, identical for every input, or a head on top of the body.
//!
//! Weights are row-major `(out_dim, in_dim)`. All numerics are `f64`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{tags, SplitMix64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative, with the ReLU subgradient at 0 taken as 0.
    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
    /// Inverted-dropout rate on this layer's output during training.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub dropout: f64,
}

fn is_zero(x: &f64) -> bool {
    *x == 0.0
}

impl DenseLayer {
    pub fn zeros(rows: usize, cols: usize, activation: Activation) -> Self {
        Self {
            rows,
            cols,
            weights: vec![0.0; rows * cols],
            bias: vec![0.0; rows],
            activation,
            dropout: 0.0,
        }
    }

    pub fn from_rows(rows: &[&[f64]], bias: &[f64], activation: Activation) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == cols), "ragged weight rows");
        assert_eq!(bias.len(), rows.len(), "bias length");
        Self {
            rows: rows.len(),
            cols,
            weights: rows.iter().flat_map(|r| r.iter().copied()).collect(),
            bias: bias.to_vec(),
            activation,
            dropout: 0.0,
        }
    }

    #[inline]
    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.weights[row * self.cols..(row + 1) * self.cols]
    }

    fn pre_activation(&self, input: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.cols)
            .zip(&self.bias)
            .map(|(w, b)| b + w.iter().zip(input).map(|(a, x)| a * x).sum::<f64>())
            .collect()
    }

    fn check(&self, what: &str) -> Result<()> {
        if self.weights.len() != self.rows * self.cols || self.bias.len() != self.rows {
            return Err(Error::Structure(format!(
                "{what}: {}x{} layer holds {} weights and {} biases",
                self.rows,
                self.cols,
                self.weights.len(),
                self.bias.len()
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Structure(format!(
                "{what}: dropout rate {} outside [0, 1)",
                self.dropout
            )));
        }
        if self
            .weights
            .iter()
            .chain(&self.bias)
            .any(|v| !v.is_finite())
        {
            return Err(Error::Structure(format!("{what}: non-finite parameter")));
        }
        Ok(())
    }
}

/// How the rejection bandwidth is produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectionMode {
    /// Input-independent: `rho = relu(raw_rho)`.
    Scalar { raw_rho: f64 },
    /// Input-dependent head on the body output: `rho = relu(head(h))`.
    InstanceHead { layers: Vec<DenseLayer> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbstainNetwork {
    pub input_dim: usize,
    pub body: Vec<DenseLayer>,
    pub pred_head: Vec<DenseLayer>,
    pub rej_mode: RejectionMode,
    pub aux_head: Option<Vec<DenseLayer>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadOutputs {
    pub f: f64,
    pub rho: f64,
    pub aux_logits: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Pos,
    Neg,
    Reject,
}

/// Record of one layer's evaluation: its input, pre-activation and dropout
/// multipliers (empty when dropout was inactive).
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    pub input: Vec<f64>,
    pub pre: Vec<f64>,
    pub mask: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub body: Vec<LayerTrace>,
    pub pred: Vec<LayerTrace>,
    /// Instance-head traces; empty in scalar mode.
    pub rej: Vec<LayerTrace>,
    pub aux: Vec<LayerTrace>,
    /// Rejection value before the final ReLU.
    pub rho_raw: f64,
}

/// Gradients of a scalar loss w.r.t. the three network outputs.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Upstream {
    pub df: f64,
    pub drho: f64,
    pub daux: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerGrads {
    fn zeros_like(layer: &DenseLayer) -> Self {
        Self {
            weights: vec![0.0; layer.weights.len()],
            bias: vec![0.0; layer.bias.len()],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RejectionGrads {
    Scalar(f64),
    Head(Vec<LayerGrads>),
}

/// Gradients shaped like an [`AbstainNetwork`]'s parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub body: Vec<LayerGrads>,
    pub pred: Vec<LayerGrads>,
    pub rej: RejectionGrads,
    pub aux: Option<Vec<LayerGrads>>,
}

impl ParamGrads {
    pub fn zeros_like(net: &AbstainNetwork) -> Self {
        let z = |ls: &[DenseLayer]| ls.iter().map(LayerGrads::zeros_like).collect::<Vec<_>>();
        Self {
            body: z(&net.body),
            pred: z(&net.pred_head),
            rej: match &net.rej_mode {
                RejectionMode::Scalar { .. } => RejectionGrads::Scalar(0.0),
                RejectionMode::InstanceHead { layers } => RejectionGrads::Head(z(layers)),
            },
            aux: net.aux_head.as_deref().map(z),
        }
    }

    /// Parameter slices in the same order as [`AbstainNetwork::param_slices`].
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        fn push<'a>(out: &mut Vec<&'a [f64]>, ls: &'a [LayerGrads]) {
            for g in ls {
                out.push(&g.weights[..]);
                out.push(&g.bias[..]);
            }
        }
        push(&mut out, &self.body);
        push(&mut out, &self.pred);
        match &self.rej {
            RejectionGrads::Scalar(g) => out.push(std::slice::from_ref(g)),
            RejectionGrads::Head(ls) => push(&mut out, ls),
        }
        if let Some(ls) = &self.aux {
            push(&mut out, ls);
        }
        out
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        fn push<'a>(out: &mut Vec<&'a mut [f64]>, ls: &'a mut [LayerGrads]) {
            for g in ls {
                out.push(&mut g.weights[..]);
                out.push(&mut g.bias[..]);
            }
        }
        push(&mut out, &mut self.body);
        push(&mut out, &mut self.pred);
        match &mut self.rej {
            RejectionGrads::Scalar(g) => out.push(std::slice::from_mut(g)),
            RejectionGrads::Head(ls) => push(&mut out, ls),
        }
        if let Some(ls) = &mut self.aux {
            push(&mut out, ls);
        }
        out
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.slices().concat()
    }

    pub fn scale(&mut self, c: f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|v| *v *= c);
        }
    }

    /// `self += c * other`. Both must come from the same network.
    pub fn add_scaled(&mut self, other: &ParamGrads, c: f64) {
        for (a, b) in self.slices_mut().into_iter().zip(other.slices()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += c * y);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| *v == 0.0))
    }
}

/// Layer widths and head modes for [`init_network`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// Input dimension followed by the body's hidden widths, e.g. `[2, 64, 64, 64]`.
    pub widths: Vec<usize>,
    /// Hidden widths of the prediction head before its single output neuron.
    #[serde(default)]
    pub pred_hidden: Vec<usize>,
    pub rejection: RejectionSpec,
    /// Hidden widths of the auxiliary head; `None` builds no auxiliary head.
    #[serde(default)]
    pub aux_hidden: Option<Vec<usize>>,
    #[serde(default)]
    pub dropout: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectionSpec {
    Scalar,
    Instance { hidden: Vec<usize> },
}

impl NetworkSpec {
    pub fn scalar(widths: &[usize]) -> Self {
        Self {
            widths: widths.to_vec(),
            pred_hidden: Vec::new(),
            rejection: RejectionSpec::Scalar,
            aux_hidden: None,
            dropout: 0.0,
        }
    }
}

/// Initial value of the scalar rejection parameter.
pub const INITIAL_RAW_RHO: f64 = 1.0;

/// Build a network with He-uniform fan-in weights `U(-sqrt(6/fan_in), sqrt(6/fan_in))`,
/// zero biases and `raw_rho = 1`. Layers are filled in order body, prediction
/// head, rejection head, auxiliary head, row-major, from one seeded stream.
pub fn init_network(spec: &NetworkSpec, seed: u64) -> Result<AbstainNetwork> {
    if spec.widths.is_empty() {
        return Err(Error::config("network spec has no widths"));
    }
    let all_widths = spec
        .widths
        .iter()
        .chain(&spec.pred_hidden)
        .chain(match &spec.rejection {
            RejectionSpec::Scalar => &[][..],
            RejectionSpec::Instance { hidden } => &hidden[..],
        })
        .chain(spec.aux_hidden.iter().flatten());
    if all_widths.clone().any(|&w| w == 0) {
        return Err(Error::config("layer widths must be positive"));
    }
    if !(0.0..1.0).contains(&spec.dropout) {
        return Err(Error::config(format!(
            "dropout {} outside [0, 1)",
            spec.dropout
        )));
    }

    let mut rng = SplitMix64::stream(seed, &[tags::INIT]);
    let mut layer = |rows: usize, cols: usize, act: Activation, dropout: f64| {
        let limit = (6.0 / cols as f64).sqrt();
        let mut l = DenseLayer::zeros(rows, cols, act);
        l.weights
            .iter_mut()
            .for_each(|w| *w = rng.uniform(-limit, limit));
        l.dropout = dropout;
        l
    };
    let mut stack = |input: usize, hidden: &[usize], out: Option<usize>, dropout: f64| {
        let mut layers = Vec::new();
        let mut prev = input;
        for &h in hidden {
            layers.push(layer(h, prev, Activation::Relu, dropout));
            prev = h;
        }
        if let Some(o) = out {
            layers.push(layer(o, prev, Activation::Identity, 0.0));
        }
        layers
    };

    let input_dim = spec.widths[0];
    let body = stack(input_dim, &spec.widths[1..], None, spec.dropout);
    let feat = *spec.widths.last().unwrap();
    let pred_head = stack(feat, &spec.pred_hidden, Some(1), spec.dropout);
    let rej_mode = match &spec.rejection {
        RejectionSpec::Scalar => RejectionMode::Scalar {
            raw_rho: INITIAL_RAW_RHO,
        },
        RejectionSpec::Instance { hidden } => {
            let mut layers = stack(feat, hidden, Some(1), spec.dropout);
            // Start the band open, mirroring the scalar initialization.
            layers.last_mut().unwrap().bias[0] = INITIAL_RAW_RHO;
            RejectionMode::InstanceHead { layers }
        }
    };
    let aux_head = spec
        .aux_hidden
        .as_ref()
        .map(|hidden| stack(feat, hidden, Some(2), spec.dropout));

    let net = AbstainNetwork {
        input_dim,
        body,
        pred_head,
        rej_mode,
        aux_head,
    };
    net.validate()?;
    Ok(net)
}

fn run_stack(
    layers: &[DenseLayer],
    input: Vec<f64>,
    mut dropout: Option<&mut SplitMix64>,
    traces: Option<&mut Vec<LayerTrace>>,
) -> Vec<f64> {
    let mut x = input;
    let mut store = traces;
    for layer in layers {
        let pre = layer.pre_activation(&x);
        let mut out: Vec<f64> = pre.iter().map(|&z| layer.activation.apply(z)).collect();
        let mut mask = Vec::new();
        if layer.dropout > 0.0 {
            if let Some(rng) = dropout.as_deref_mut() {
                let keep = 1.0 - layer.dropout;
                mask = (0..out.len())
                    .map(|_| if rng.bernoulli(keep) { 1.0 / keep } else { 0.0 })
                    .collect();
                out.iter_mut().zip(&mask).for_each(|(o, m)| *o *= m);
            }
        }
        if let Some(t) = store.as_deref_mut() {
            t.push(LayerTrace {
                input: std::mem::take(&mut x),
                pre,
                mask,
            });
        }
        x = out;
    }
    x
}

/// Backpropagate `d_out` through a stack, accumulating `scale *` parameter
/// gradients, and return the gradient w.r.t. the stack's input.
fn backprop_stack(
    layers: &[DenseLayer],
    traces: &[LayerTrace],
    grads: &mut [LayerGrads],
    d_out: Vec<f64>,
    scale: f64,
) -> Vec<f64> {
    let mut d = d_out;
    for ((layer, t), g) in layers.iter().zip(traces).zip(grads.iter_mut()).rev() {
        let dz: Vec<f64> = d
            .iter()
            .enumerate()
            .map(|(i, &di)| {
                let m = if t.mask.is_empty() { 1.0 } else { t.mask[i] };
                di * m * layer.activation.derivative(t.pre[i])
            })
            .collect();
        let mut d_in = vec![0.0; layer.cols];
        for (i, &dzi) in dz.iter().enumerate() {
            if dzi == 0.0 {
                continue;
            }
            let row = layer.row(i);
            let grow = &mut g.weights[i * layer.cols..(i + 1) * layer.cols];
            for j in 0..layer.cols {
                grow[j] += scale * dzi * t.input[j];
                d_in[j] += row[j] * dzi;
            }
            g.bias[i] += scale * dzi;
        }
        d = d_in;
    }
    d
}

impl AbstainNetwork {
    pub fn validate(&self) -> Result<()> {
        fn chain(
            layers: &[DenseLayer],
            input: usize,
            out: Option<usize>,
            what: &str,
        ) -> Result<()> {
            let mut prev = input;
            for (i, l) in layers.iter().enumerate() {
                l.check(&format!("{what} layer {i}"))?;
                if l.cols != prev {
                    return Err(Error::Structure(format!(
                        "{what} layer {i} expects {} inputs but receives {prev}",
                        l.cols
                    )));
                }
                prev = l.rows;
            }
            if let Some(o) = out {
                if layers.is_empty() || prev != o {
                    return Err(Error::Structure(format!(
                        "{what} must end in a {o}-output layer"
                    )));
                }
            }
            Ok(())
        }
        if self.input_dim == 0 {
            return Err(Error::Structure("input_dim must be positive".into()));
        }
        chain(&self.body, self.input_dim, None, "body")?;
        let feat = self.feature_dim();
        chain(&self.pred_head, feat, Some(1), "prediction head")?;
        if self.pred_head.last().map(|l| l.activation) != Some(Activation::Identity) {
            return Err(Error::Structure(
                "prediction head must end in an identity layer".into(),
            ));
        }
        match &self.rej_mode {
            RejectionMode::Scalar { raw_rho } if !raw_rho.is_finite() => {
                return Err(Error::Structure("non-finite raw_rho".into()))
            }
            RejectionMode::Scalar { .. } => {}
            RejectionMode::InstanceHead { layers } => {
                chain(layers, feat, Some(1), "rejection head")?
            }
        }
        if let Some(aux) = &self.aux_head {
            chain(aux, feat, Some(2), "auxiliary head")?;
        }
        Ok(())
    }

    /// Width of the body output (the input dimension when the body is empty).
    pub fn feature_dim(&self) -> usize {
        self.body.last().map_or(self.input_dim, |l| l.rows)
    }

    pub fn is_scalar_rho(&self) -> bool {
        matches!(self.rej_mode, RejectionMode::Scalar { .. })
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::InputShape {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    fn eval(
        &self,
        x: &[f64],
        mut dropout: Option<&mut SplitMix64>,
        mut trace: Option<&mut ForwardTrace>,
    ) -> HeadOutputs {
        let h = run_stack(
            &self.body,
            x.to_vec(),
            dropout.as_deref_mut(),
            trace.as_deref_mut().map(|t| &mut t.body),
        );
        let f = run_stack(
            &self.pred_head,
            h.clone(),
            dropout.as_deref_mut(),
            trace.as_deref_mut().map(|t| &mut t.pred),
        )[0];
        let rho_raw = match &self.rej_mode {
            RejectionMode::Scalar { raw_rho } => *raw_rho,
            RejectionMode::InstanceHead { layers } => run_stack(
                layers,
                h.clone(),
                dropout.as_deref_mut(),
                trace.as_deref_mut().map(|t| &mut t.rej),
            )[0],
        };
        let aux_logits = self.aux_head.as_ref().map(|aux| {
            let o = run_stack(aux, h, dropout, trace.as_deref_mut().map(|t| &mut t.aux));
            [o[0], o[1]]
        });
        if let Some(t) = trace {
            t.rho_raw = rho_raw;
        }
        HeadOutputs {
            f,
            rho: rho_raw.max(0.0),
            aux_logits,
        }
    }

    /// Inference-mode outputs without recording a trace.
    pub fn predict(&self, x: &[f64]) -> Result<HeadOutputs> {
        self.check_input(x)?;
        Ok(self.eval(x, None, None))
    }

    /// Inference-mode forward pass, recording everything `backward` needs.
    pub fn forward(&self, x: &[f64]) -> Result<(HeadOutputs, ForwardTrace)> {
        self.forward_with(x, None)
    }

    /// Forward pass with dropout masks drawn from `dropout` when given.
    pub fn forward_with(
        &self,
        x: &[f64],
        dropout: Option<&mut SplitMix64>,
    ) -> Result<(HeadOutputs, ForwardTrace)> {
        self.check_input(x)?;
        let mut trace = ForwardTrace {
            body: Vec::with_capacity(self.body.len()),
            pred: Vec::with_capacity(self.pred_head.len()),
            rej: Vec::new(),
            aux: Vec::new(),
            rho_raw: 0.0,
        };
        let out = self.eval(x, dropout, Some(&mut trace));
        Ok((out, trace))
    }

    pub fn rho_of(&self, x: &[f64]) -> Result<f64> {
        match &self.rej_mode {
            RejectionMode::Scalar { raw_rho } => {
                self.check_input(x)?;
                Ok(raw_rho.max(0.0))
            }
            RejectionMode::InstanceHead { .. } => Ok(self.predict(x)?.rho),
        }
    }

    /// Realized scalar rho, or `None` for an instance head.
    pub fn scalar_rho(&self) -> Option<f64> {
        match self.rej_mode {
            RejectionMode::Scalar { raw_rho } => Some(raw_rho.max(0.0)),
            RejectionMode::InstanceHead { .. } => None,
        }
    }

    pub fn backward(&self, trace: &ForwardTrace, upstream: &Upstream) -> Result<ParamGrads> {
        let mut grads = ParamGrads::zeros_like(self);
        self.backward_into(trace, upstream, 1.0, &mut grads)?;
        Ok(grads)
    }

    /// Accumulate `scale *` the parameter gradients into `grads`.
    pub fn backward_into(
        &self,
        trace: &ForwardTrace,
        upstream: &Upstream,
        scale: f64,
        grads: &mut ParamGrads,
    ) -> Result<()> {
        self.check_trace(trace, upstream)?;
        let feat = self.feature_dim();
        let mut dh = backprop_stack(
            &self.pred_head,
            &trace.pred,
            &mut grads.pred,
            vec![upstream.df],
            scale,
        );
        let drho_raw = if trace.rho_raw > 0.0 {
            upstream.drho
        } else {
            0.0
        };
        match (&self.rej_mode, &mut grads.rej) {
            (RejectionMode::Scalar { .. }, RejectionGrads::Scalar(g)) => *g += scale * drho_raw,
            (RejectionMode::InstanceHead { layers }, RejectionGrads::Head(g)) => {
                let d = backprop_stack(layers, &trace.rej, g, vec![drho_raw], scale);
                dh.iter_mut().zip(d).for_each(|(a, b)| *a += b);
            }
            _ => {
                return Err(Error::Structure(
                    "gradient buffer shape differs from network".into(),
                ))
            }
        }
        if let (Some(aux), Some(daux), Some(g)) = (&self.aux_head, upstream.daux, &mut grads.aux) {
            let d = backprop_stack(aux, &trace.aux, g, daux.to_vec(), scale);
            dh.iter_mut().zip(d).for_each(|(a, b)| *a += b);
        }
        debug_assert_eq!(dh.len(), feat);
        backprop_stack(&self.body, &trace.body, &mut grads.body, dh, scale);
        Ok(())
    }

    fn check_trace(&self, trace: &ForwardTrace, upstream: &Upstream) -> Result<()> {
        let rej_len = match &self.rej_mode {
            RejectionMode::Scalar { .. } => 0,
            RejectionMode::InstanceHead { layers } => layers.len(),
        };
        let aux_len = self.aux_head.as_ref().map_or(0, Vec::len);
        let layers_match = |ls: &[DenseLayer], ts: &[LayerTrace]| {
            ls.len() == ts.len()
                && ls
                    .iter()
                    .zip(ts)
                    .all(|(l, t)| t.input.len() == l.cols && t.pre.len() == l.rows)
        };
        let ok = layers_match(&self.body, &trace.body)
            && layers_match(&self.pred_head, &trace.pred)
            && trace.rej.len() == rej_len
            && trace.aux.len() == aux_len;
        if !ok {
            return Err(Error::Structure(
                "trace was not produced by this network".into(),
            ));
        }
        if upstream.daux.is_some() && self.aux_head.is_none() {
            return Err(Error::Structure(
                "auxiliary gradient supplied to a network without an auxiliary head".into(),
            ));
        }
        Ok(())
    }

    /// Parameter slices: each layer's weights then bias, for body, prediction
    /// head, rejection (scalar or head) and auxiliary head in that order.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        fn push<'a>(out: &mut Vec<&'a mut [f64]>, ls: &'a mut [DenseLayer]) {
            for l in ls {
                out.push(&mut l.weights[..]);
                out.push(&mut l.bias[..]);
            }
        }
        let mut out = Vec::new();
        push(&mut out, &mut self.body);
        push(&mut out, &mut self.pred_head);
        match &mut self.rej_mode {
            RejectionMode::Scalar { raw_rho } => out.push(std::slice::from_mut(raw_rho)),
            RejectionMode::InstanceHead { layers } => push(&mut out, layers),
        }
        if let Some(ls) = &mut self.aux_head {
            push(&mut out, ls);
        }
        out
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        fn push<'a>(out: &mut Vec<&'a [f64]>, ls: &'a [DenseLayer]) {
            for l in ls {
                out.push(&l.weights[..]);
                out.push(&l.bias[..]);
            }
        }
        let mut out = Vec::new();
        push(&mut out, &self.body);
        push(&mut out, &self.pred_head);
        match &self.rej_mode {
            RejectionMode::Scalar { raw_rho } => out.push(std::slice::from_ref(raw_rho)),
            RejectionMode::InstanceHead { layers } => push(&mut out, layers),
        }
        if let Some(ls) = &self.aux_head {
            push(&mut out, ls);
        }
        out
    }

    pub fn params_to_vec(&self) -> Vec<f64> {
        self.param_slices().concat()
    }

    pub fn param_count(&self) -> usize {
        let n = |ls: &[DenseLayer]| {
            ls.iter()
                .map(|l| l.weights.len() + l.bias.len())
                .sum::<usize>()
        };
        n(&self.body)
            + n(&self.pred_head)
            + match &self.rej_mode {
                RejectionMode::Scalar { .. } => 1,
                RejectionMode::InstanceHead { layers } => n(layers),
            }
            + self.aux_head.as_deref().map_or(0, n)
    }

    pub fn param_norm(&self) -> f64 {
        self.params_to_vec()
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Weight matrices of the scoring path `W_1..W_n` (body then prediction head).
    pub fn scoring_layers(&self) -> impl Iterator<Item = &DenseLayer> {
        self.body.iter().chain(&self.pred_head)
    }
}

/// `Pos` iff `f > rho`, `Neg` iff `f < -rho`, otherwise `Reject`.
pub fn decide(out: &HeadOutputs) -> Decision {
    decide_score(out.f, out.rho)
}

pub fn decide_score(f: f64, rho: f64) -> Decision {
    if f > rho {
        Decision::Pos
    } else if f < -rho {
        Decision::Neg
    } else {
        Decision::Reject
    }
}

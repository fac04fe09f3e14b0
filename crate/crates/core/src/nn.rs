//! The two network families: an MLP classifier with a Hopkins tap on a
//! hidden layer, and a bottleneck autoencoder whose decoder mirrors the
//! encoder. A linear probe is the classifier with no hidden layers.
//!
//! Hidden layers are `linear → GELU → dropout`. The classifier tap is read
//! after the GELU and before dropout; the autoencoder bottleneck is linear.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::Rng;
use crate::tape::{Gradients, Mode, NodeId, Tape};

pub const DEFAULT_HIDDEN: [usize; 2] = [128, 128];
pub const DEFAULT_DROPOUT: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    /// `fan_in × fan_out`
    pub weight: Matrix,
    /// `1 × fan_out`
    pub bias: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub layers: Vec<Linear>,
}

/// Parameters recorded as leaves on a tape.
#[derive(Debug, Clone)]
pub struct RecordedParams {
    nodes: Vec<(NodeId, NodeId)>,
}

impl RecordedParams {
    /// Gradients in [`Params::tensors`] order; unused parameters get zeros.
    pub fn gradients(&self, grads: &Gradients, tape: &Tape) -> Vec<Matrix> {
        let mut out = Vec::with_capacity(self.nodes.len() * 2);
        for &(w, b) in &self.nodes {
            for id in [w, b] {
                out.push(grads.get(id).cloned().unwrap_or_else(|| {
                    let (r, c) = tape.value(id).shape();
                    Matrix::zeros(r, c)
                }));
            }
        }
        out
    }

    pub fn layer(&self, i: usize) -> (NodeId, NodeId) {
        self.nodes[i]
    }
}

impl Params {
    /// Uniform `±√(1/fan_in)` weights and zero biases, layer by layer.
    pub fn init(dims: &[(usize, usize)], rng: &mut Rng) -> Self {
        let layers = dims
            .iter()
            .map(|&(fan_in, fan_out)| {
                let bound = (1.0 / fan_in as f64).sqrt();
                Linear {
                    weight: Matrix::from_fn(fan_in, fan_out, |_, _| rng.uniform_in(-bound, bound)),
                    bias: Matrix::zeros(1, fan_out),
                }
            })
            .collect();
        Params { layers }
    }

    pub fn zeros(dims: &[(usize, usize)]) -> Self {
        Params {
            layers: dims
                .iter()
                .map(|&(i, o)| Linear {
                    weight: Matrix::zeros(i, o),
                    bias: Matrix::zeros(1, o),
                })
                .collect(),
        }
    }

    pub fn dims(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(|l| l.weight.shape()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Weight, bias, weight, bias, ...
    pub fn tensors(&self) -> Vec<&Matrix> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn record(&self, tape: &mut Tape) -> RecordedParams {
        RecordedParams {
            nodes: self
                .layers
                .iter()
                .map(|l| (tape.leaf(l.weight.clone()), tape.leaf(l.bias.clone())))
                .collect(),
        }
    }

    fn check_dims(&self, expected: &[(usize, usize)]) -> Result<()> {
        if self.dims() != expected {
            return Err(Error::dim(
                "params",
                format!("parameter shapes {:?}, model expects {:?}", self.dims(), expected),
            ));
        }
        Ok(())
    }

    /// Binary snapshot: `HKPM`, format version, layer count, then per layer
    /// the weight shape and row-major weight and bias payloads. Integers are
    /// little-endian `u32`/`u64`, values little-endian IEEE-754 `f64`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.param_count() * 8);
        out.extend_from_slice(SNAPSHOT_MAGIC);
        out.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for l in &self.layers {
            out.extend_from_slice(&(l.weight.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(l.weight.cols() as u64).to_le_bytes());
            for v in l.weight.data().iter().chain(l.bias.data()) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(4)? != SNAPSHOT_MAGIC {
            return Err(Error::Format("not a parameter snapshot (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != SNAPSHOT_VERSION {
            return Err(Error::Format(format!("unsupported snapshot version {version}")));
        }
        let count = r.u32()? as usize;
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let rows = r.u64()? as usize;
            let cols = r.u64()? as usize;
            let weight = Matrix::from_vec(rows, cols, r.f64s(rows * cols)?)?;
            let bias = Matrix::from_vec(1, cols, r.f64s(cols)?)?;
            layers.push(Linear { weight, bias });
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after snapshot",
                bytes.len() - r.pos
            )));
        }
        Ok(Params { layers })
    }
}

const SNAPSHOT_MAGIC: &[u8; 4] = b"HKPM";
const SNAPSHOT_VERSION: u32 = 1;

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("snapshot truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("size overflow".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// MLP classifier; with no hidden layers it is a linear probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub num_classes: usize,
    pub dropout: f64,
    /// 1-based hidden layer whose activation feeds the Hopkins loss.
    pub tap_layer: Option<usize>,
}

impl ClassifierSpec {
    /// Two GELU layers of width 128 with 20% dropout, tapped at layer 2.
    pub fn mlp(input_dim: usize, num_classes: usize) -> Self {
        Self {
            input_dim,
            hidden: DEFAULT_HIDDEN.to_vec(),
            num_classes,
            dropout: DEFAULT_DROPOUT,
            tap_layer: Some(2),
        }
    }

    /// A single linear layer followed by softmax.
    pub fn linear_probe(input_dim: usize, num_classes: usize) -> Self {
        Self {
            input_dim,
            hidden: Vec::new(),
            num_classes,
            dropout: 0.0,
            tap_layer: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.num_classes < 2 || self.hidden.contains(&0) {
            return Err(Error::Config(format!(
                "classifier needs positive widths and at least 2 classes: {self:?}"
            )));
        }
        if let Some(t) = self.tap_layer {
            if t == 0 || t > self.hidden.len() {
                return Err(Error::Config(format!(
                    "tap layer {t} outside hidden layers 1..={}",
                    self.hidden.len()
                )));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut widths = vec![self.input_dim];
        widths.extend(&self.hidden);
        widths.push(self.num_classes);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn init_params(&self, rng: &mut Rng) -> Params {
        Params::init(&self.layer_dims(), rng)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ClassifierOutput {
    /// Pre-softmax scores.
    pub logits: NodeId,
    pub tap: Option<NodeId>,
}

pub fn forward_classifier(
    spec: &ClassifierSpec,
    params: &RecordedParams,
    x: NodeId,
    mode: Mode,
    rng: &mut Rng,
    tape: &mut Tape,
) -> Result<ClassifierOutput> {
    if tape.value(x).cols() != spec.input_dim {
        return Err(Error::dim(
            "forward_classifier",
            format!(
                "input has {} columns, model expects {}",
                tape.value(x).cols(),
                spec.input_dim
            ),
        ));
    }
    let mut h = x;
    let mut tap = None;
    for i in 0..spec.hidden.len() {
        let (w, b) = params.layer(i);
        let z = tape.matmul(h, w)?;
        let z = tape.add_row(z, b)?;
        h = tape.gelu(z);
        if spec.tap_layer == Some(i + 1) {
            tap = Some(h);
        }
        h = tape.dropout(h, spec.dropout, mode, rng)?;
    }
    let (w, b) = params.layer(spec.hidden.len());
    let z = tape.matmul(h, w)?;
    let logits = tape.add_row(z, b)?;
    Ok(ClassifierOutput { logits, tap })
}

/// Encoder `d → widths…`, the last width being the linear bottleneck; the
/// decoder runs the widths in reverse back to `d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderSpec {
    pub input_dim: usize,
    pub encoder_widths: Vec<usize>,
    pub dropout: f64,
}

impl AutoencoderSpec {
    /// Encoder widths 128, 128, `bottleneck` with 20% dropout.
    pub fn standard(input_dim: usize, bottleneck: usize) -> Self {
        let mut encoder_widths = DEFAULT_HIDDEN.to_vec();
        encoder_widths.push(bottleneck);
        Self {
            input_dim,
            encoder_widths,
            dropout: DEFAULT_DROPOUT,
        }
    }

    pub fn bottleneck(&self) -> usize {
        *self.encoder_widths.last().expect("validated spec")
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.encoder_widths.is_empty() || self.encoder_widths.contains(&0) {
            return Err(Error::Config(format!(
                "autoencoder needs positive widths: {self:?}"
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Widths of the decoder outputs: reversed hidden encoder widths, then `d`.
    pub fn decoder_widths(&self) -> Vec<usize> {
        let hidden = &self.encoder_widths[..self.encoder_widths.len() - 1];
        hidden.iter().rev().copied().chain([self.input_dim]).collect()
    }

    pub fn encoder_layers(&self) -> usize {
        self.encoder_widths.len()
    }

    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut widths = vec![self.input_dim];
        widths.extend(&self.encoder_widths);
        widths.extend(self.decoder_widths());
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn init_params(&self, rng: &mut Rng) -> Params {
        Params::init(&self.layer_dims(), rng)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AutoencoderOutput {
    pub reconstruction: NodeId,
    pub bottleneck: NodeId,
}

/// Runs `count` layers starting at `first`; all but the last are
/// `GELU → dropout`, the last is linear.
fn stack(
    params: &RecordedParams,
    first: usize,
    count: usize,
    mut h: NodeId,
    dropout: f64,
    mode: Mode,
    rng: &mut Rng,
    tape: &mut Tape,
) -> Result<NodeId> {
    for i in 0..count {
        let (w, b) = params.layer(first + i);
        let z = tape.matmul(h, w)?;
        h = tape.add_row(z, b)?;
        if i + 1 < count {
            h = tape.gelu(h);
            h = tape.dropout(h, dropout, mode, rng)?;
        }
    }
    Ok(h)
}

pub fn encode(
    spec: &AutoencoderSpec,
    params: &RecordedParams,
    x: NodeId,
    mode: Mode,
    rng: &mut Rng,
    tape: &mut Tape,
) -> Result<NodeId> {
    if tape.value(x).cols() != spec.input_dim {
        return Err(Error::dim(
            "encode",
            format!(
                "input has {} columns, model expects {}",
                tape.value(x).cols(),
                spec.input_dim
            ),
        ));
    }
    stack(params, 0, spec.encoder_layers(), x, spec.dropout, mode, rng, tape)
}

pub fn forward_autoencoder(
    spec: &AutoencoderSpec,
    params: &RecordedParams,
    x: NodeId,
    mode: Mode,
    rng: &mut Rng,
    tape: &mut Tape,
) -> Result<AutoencoderOutput> {
    let bottleneck = encode(spec, params, x, mode, rng, tape)?;
    let n_enc = spec.encoder_layers();
    let reconstruction = stack(params, n_enc, n_enc, bottleneck, spec.dropout, mode, rng, tape)?;
    Ok(AutoencoderOutput {
        reconstruction,
        bottleneck,
    })
}

/// Eval-mode bottleneck features of every row of `x`, computed in batches.
pub fn extract_features(
    spec: &AutoencoderSpec,
    params: &Params,
    x: &Matrix,
    batch_size: usize,
) -> Result<Matrix> {
    params.check_dims(&spec.layer_dims())?;
    let mut rng = Rng::new(0); // unused in eval mode
    let mut parts = Vec::new();
    let rows: Vec<usize> = (0..x.rows()).collect();
    for chunk in rows.chunks(batch_size.max(1)) {
        let mut tape = Tape::new();
        let rec = params.record(&mut tape);
        let input = tape.leaf(x.select_rows(chunk));
        let z = encode(spec, &rec, input, Mode::Eval, &mut rng, &mut tape)?;
        parts.push(tape.value(z).clone());
    }
    if parts.is_empty() {
        return Ok(Matrix::zeros(0, spec.bottleneck()));
    }
    Matrix::vstack(&parts.iter().collect::<Vec<_>>())
}

/// Eval-mode class predictions (argmax of logits), computed in batches.
pub fn predict(
    spec: &ClassifierSpec,
    params: &Params,
    x: &Matrix,
    batch_size: usize,
) -> Result<Vec<usize>> {
    params.check_dims(&spec.layer_dims())?;
    let mut rng = Rng::new(0);
    let mut out = Vec::with_capacity(x.rows());
    let rows: Vec<usize> = (0..x.rows()).collect();
    for chunk in rows.chunks(batch_size.max(1)) {
        let mut tape = Tape::new();
        let rec = params.record(&mut tape);
        let input = tape.leaf(x.select_rows(chunk));
        let o = forward_classifier(spec, &rec, input, Mode::Eval, &mut rng, &mut tape)?;
        out.extend(tape.value(o.logits).argmax_rows());
    }
    Ok(out)
}

/// Eval-mode tap activations of the classifier for every row of `x`.
pub fn tap_features(
    spec: &ClassifierSpec,
    params: &Params,
    x: &Matrix,
    batch_size: usize,
) -> Result<Matrix> {
    params.check_dims(&spec.layer_dims())?;
    let mut rng = Rng::new(0);
    let mut parts = Vec::new();
    let rows: Vec<usize> = (0..x.rows()).collect();
    for chunk in rows.chunks(batch_size.max(1)) {
        let mut tape = Tape::new();
        let rec = params.record(&mut tape);
        let input = tape.leaf(x.select_rows(chunk));
        let o = forward_classifier(spec, &rec, input, Mode::Eval, &mut rng, &mut tape)?;
        let tap = o
            .tap
            .ok_or_else(|| Error::Config("classifier has no tap layer".into()))?;
        parts.push(tape.value(tap).clone());
    }
    Matrix::vstack(&parts.iter().collect::<Vec<_>>())
}

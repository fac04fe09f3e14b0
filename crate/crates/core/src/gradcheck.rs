//! Central finite-difference checks of parameter gradients.

use crate::error::Result;
use crate::hopkins::{hopkins_loss, hopkins_loss_with_witness, HopkinsConfig, HopkinsWitness};
use crate::matrix::Matrix;
use crate::nn::{forward_autoencoder, forward_classifier, AutoencoderSpec, ClassifierSpec, Params, RecordedParams};
use crate::rng::Rng;
use crate::tape::{Mode, NodeId, Tape};

/// Smallest magnitude used as the denominator of a relative error, so
/// gradients that are zero up to rounding compare on an absolute scale.
pub const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradCheck {
    /// Coordinates compared (excluded ones not counted).
    pub checked: usize,
    pub passed: usize,
    /// Coordinates sitting on a kink of the loss, where one-sided
    /// differences disagree and no derivative exists.
    pub excluded: usize,
    pub worst_relative_error: f64,
}

impl GradCheck {
    pub fn pass_fraction(&self) -> f64 {
        if self.checked == 0 {
            1.0
        } else {
            self.passed as f64 / self.checked as f64
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Compares `analytic` (in [`Params::tensors`] order) against central
/// differences of `loss` with step `eps`. `stride` > 1 checks every
/// `stride`-th coordinate only.
pub fn check_params(
    params: &Params,
    analytic: &[Matrix],
    loss: impl Fn(&Params) -> Result<f64>,
    eps: f64,
    tolerance: f64,
    stride: usize,
) -> Result<GradCheck> {
    let f0 = loss(params)?;
    let mut report = GradCheck::default();
    let mut probe = params.clone();
    let mut index = 0usize;
    for (t, grad) in analytic.iter().enumerate() {
        for k in 0..grad.len() {
            index += 1;
            if !(index - 1).is_multiple_of(stride.max(1)) {
                continue;
            }
            let original = probe.tensors()[t].data()[k];
            probe.tensors_mut()[t].data_mut()[k] = original + eps;
            let plus = loss(&probe)?;
            probe.tensors_mut()[t].data_mut()[k] = original - eps;
            let minus = loss(&probe)?;
            probe.tensors_mut()[t].data_mut()[k] = original;

            let numeric = (plus - minus) / (2.0 * eps);
            let err = relative_error(grad.data()[k], numeric);
            if err < tolerance {
                report.checked += 1;
                report.passed += 1;
                report.worst_relative_error = report.worst_relative_error.max(err);
                continue;
            }
            let right = (plus - f0) / eps;
            let left = (f0 - minus) / eps;
            if relative_error(right, left) > 1e-3 {
                report.excluded += 1;
            } else {
                report.checked += 1;
                report.worst_relative_error = report.worst_relative_error.max(err);
            }
        }
    }
    Ok(report)
}

/// Records the primary loss and the features the Hopkins term acts on.
type Head<'a> = dyn Fn(&mut Tape, &RecordedParams, NodeId, &mut Rng) -> Result<(NodeId, NodeId)> + 'a;

/// Seeds for the dropout masks and Hopkins draws of one probed batch.
const DROPOUT_SEED: u64 = 7;
const HOPKINS_SEED: u64 = 11;

/// Batch loss with dropout masks and the Hopkins witness held fixed, so that
/// every finite-difference evaluation sees the same function of the
/// parameters. With `witness` absent a fresh one is drawn and returned;
/// gradients are skipped when `probing`.
fn frozen_loss(
    params: &Params,
    x: &Matrix,
    weight: f64,
    cfg: &HopkinsConfig,
    witness: Option<&HopkinsWitness>,
    probing: bool,
    head: &Head,
) -> Result<(f64, Vec<Matrix>, Option<HopkinsWitness>)> {
    let mut tape = Tape::new();
    let rec = params.record(&mut tape);
    let input = tape.leaf(x.clone());
    let (primary, features) = head(&mut tape, &rec, input, &mut Rng::new(DROPOUT_SEED))?;
    let (total, drawn) = if weight >= 1.0 {
        (primary, None)
    } else {
        let h = match witness {
            Some(w) => hopkins_loss_with_witness(&mut tape, features, cfg, w.clone())?,
            None => hopkins_loss(&mut tape, features, cfg, &mut Rng::new(HOPKINS_SEED))?,
        };
        let a = tape.scale(primary, weight);
        let b = tape.scale(h.loss, 1.0 - weight);
        (tape.add(a, b)?, Some(h.witness))
    };
    let value = tape.value(total).get(0, 0);
    if probing {
        return Ok((value, Vec::new(), drawn));
    }
    let grads = tape.backward(total)?;
    Ok((value, rec.gradients(&grads, &tape), drawn))
}

fn check_frozen(
    params: &Params,
    x: &Matrix,
    weight: f64,
    cfg: &HopkinsConfig,
    opts: &CheckOptions,
    head: &Head,
) -> Result<GradCheck> {
    let (_, analytic, witness) = frozen_loss(params, x, weight, cfg, None, false, head)?;
    check_params(
        params,
        &analytic,
        |p| Ok(frozen_loss(p, x, weight, cfg, witness.as_ref(), true, head)?.0),
        opts.eps,
        opts.tolerance,
        opts.stride,
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckOptions {
    pub eps: f64,
    pub tolerance: f64,
    pub stride: usize,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            tolerance: 1e-4,
            stride: 1,
        }
    }
}

/// Checks `w·CE + (1 − w)·L_H` (on the tap layer) of a train-mode classifier.
pub fn check_classifier(
    spec: &ClassifierSpec,
    params: &Params,
    x: &Matrix,
    labels: &[usize],
    weight: f64,
    cfg: &HopkinsConfig,
    opts: &CheckOptions,
) -> Result<GradCheck> {
    let head = |tape: &mut Tape, rec: &RecordedParams, input: NodeId, rng: &mut Rng| {
        let out = forward_classifier(spec, rec, input, Mode::Train, rng, tape)?;
        let ce = tape.cross_entropy(out.logits, labels)?;
        Ok((ce, out.tap.unwrap_or(out.logits)))
    };
    check_frozen(params, x, weight, cfg, opts, &head)
}

/// Checks `w·MSE + (1 − w)·L_H` (on the bottleneck) of a train-mode autoencoder.
pub fn check_autoencoder(
    spec: &AutoencoderSpec,
    params: &Params,
    x: &Matrix,
    weight: f64,
    cfg: &HopkinsConfig,
    opts: &CheckOptions,
) -> Result<GradCheck> {
    let head = |tape: &mut Tape, rec: &RecordedParams, input: NodeId, rng: &mut Rng| {
        let out = forward_autoencoder(spec, rec, input, Mode::Train, rng, tape)?;
        let mse = tape.mse(out.reconstruction, input)?;
        Ok((mse, out.bottleneck))
    };
    check_frozen(params, x, weight, cfg, opts, &head)
}

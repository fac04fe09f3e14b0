//! Training pipeline: composite losses, Adam, reduce-on-plateau, early
//! stopping with best-validation snapshots, and the autoencoder → linear
//! probe protocol.
//!
//! Composite losses are `w·L_primary + (1−w)·L_H`. With `w = 1` the Hopkins
//! path is never entered. Batches with fewer than [`MIN_LOSS_ROWS`] rows
//! keep only the weighted primary term.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::hopkins::{hopkins_loss, hopkins_statistic, HopkinsConfig, HopkinsLoss, MIN_LOSS_ROWS};
use crate::matrix::Matrix;
use crate::nn::{
    extract_features, forward_autoencoder, forward_classifier, predict, tap_features,
    AutoencoderSpec, ClassifierSpec, Params,
};
use crate::rng::{streams, Rng};
use crate::tape::{Mode, NodeId, Tape};

pub const CLASSIFIER_LR: f64 = 1e-4;
pub const AUTOENCODER_LR: f64 = 4e-4;

/// Seed of the Hopkins draws used to score evaluation features, shared by
/// every run so conditions are compared on the same sampling.
pub const EVALUATION_SEED: u64 = 0x4b1d_5eed;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub early_stop_patience: usize,
    pub max_epochs: usize,
    /// Weight of the primary loss (`w_C` or `w_R`).
    pub loss_weight: f64,
    /// Sampling, metric and target `H_T` of the Hopkins term.
    pub hopkins: HopkinsConfig,
    /// Whether the validation loss includes the Hopkins term.
    pub validation_includes_hopkins: bool,
    pub seed: u64,
}

impl TrainConfig {
    fn base(learning_rate: f64, seed: u64) -> Self {
        Self {
            batch_size: 1024,
            learning_rate,
            plateau_factor: 0.5,
            plateau_patience: 30,
            early_stop_patience: 100,
            max_epochs: 1000,
            loss_weight: 1.0,
            hopkins: HopkinsConfig::default(),
            validation_includes_hopkins: true,
            seed,
        }
    }

    pub fn classifier(seed: u64) -> Self {
        Self::base(CLASSIFIER_LR, seed)
    }

    pub fn autoencoder(seed: u64) -> Self {
        Self::base(AUTOENCODER_LR, seed)
    }

    pub fn probe(seed: u64) -> Self {
        Self::base(AUTOENCODER_LR, seed)
    }

    /// Sets the primary-loss weight and the Hopkins target.
    pub fn with_hopkins(mut self, weight: f64, target: f64) -> Self {
        self.loss_weight = weight;
        self.hopkins.target = target;
        self
    }

    pub fn uses_hopkins(&self) -> bool {
        self.loss_weight < 1.0
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.learning_rate));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return bad(format!("plateau factor {} outside (0, 1)", self.plateau_factor));
        }
        if self.plateau_patience == 0 || self.early_stop_patience == 0 {
            return bad("patience values must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.loss_weight) {
            return bad(format!("loss weight {} outside [0, 1]", self.loss_weight));
        }
        self.hopkins.validate()
    }

    fn fingerprint(&self) -> serde_json::Value {
        serde_json::json!({
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "plateau_factor": self.plateau_factor,
            "plateau_patience": self.plateau_patience,
            "early_stop_patience": self.early_stop_patience,
            "max_epochs": self.max_epochs,
            "loss_weight": self.loss_weight,
            "hopkins_target": self.hopkins.target,
            "hopkins_fraction": self.hopkins.sampling_fraction,
            "hopkins_metric": self.hopkins.metric.name(),
            "validation_includes_hopkins": self.validation_includes_hopkins,
        })
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl AdamState {
    pub fn new(params: &[&Matrix]) -> Self {
        let zeros: Vec<Matrix> = params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn first_moments(&self) -> &[Matrix] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Matrix] {
        &self.v
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(
    params: &mut [&mut Matrix],
    grads: &[Matrix],
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::dim(
            "adam_step",
            format!(
                "{} parameters, {} gradients, {} moment slots",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        ));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[i].shape() {
            return Err(Error::dim(
                "adam_step",
                format!("tensor {i}: parameter {:?}, gradient {:?}", p.shape(), g.shape()),
            ));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let p = p.data_mut();
        let m = m.data_mut();
        let v = v.data_mut();
        for (k, &gk) in g.data().iter().enumerate() {
            m[k] = b1 * m[k] + (1.0 - b1) * gk;
            v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            p[k] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct CompositeLoss {
    pub total: NodeId,
    /// Cross-entropy or reconstruction error.
    pub primary: NodeId,
    /// Present when the Hopkins term was recorded.
    pub hopkins: Option<HopkinsLoss>,
}

fn combine(
    tape: &mut Tape,
    primary: NodeId,
    feature: Option<NodeId>,
    weight: f64,
    hopkins: &HopkinsConfig,
    rng: &mut Rng,
) -> Result<CompositeLoss> {
    if weight >= 1.0 {
        return Ok(CompositeLoss {
            total: primary,
            primary,
            hopkins: None,
        });
    }
    let feature =
        feature.ok_or_else(|| Error::Config("Hopkins term requested but model has no tap".into()))?;
    let rows = tape.value(feature).rows();
    let weighted = tape.scale(primary, weight);
    if rows < MIN_LOSS_ROWS {
        log::debug!("batch of {rows} rows: Hopkins term skipped");
        return Ok(CompositeLoss {
            total: weighted,
            primary,
            hopkins: None,
        });
    }
    let h = hopkins_loss(tape, feature, hopkins, rng)?;
    let h_weighted = tape.scale(h.loss, 1.0 - weight);
    let total = tape.add(weighted, h_weighted)?;
    Ok(CompositeLoss {
        total,
        primary,
        hopkins: Some(h),
    })
}

/// `w_C·CE + (1−w_C)·L_H` with the Hopkins term taken on `tap`.
pub fn composite_classification_loss(
    tape: &mut Tape,
    logits: NodeId,
    labels: &[usize],
    tap: Option<NodeId>,
    weight: f64,
    hopkins: &HopkinsConfig,
    rng: &mut Rng,
) -> Result<CompositeLoss> {
    let ce = tape.cross_entropy(logits, labels)?;
    combine(tape, ce, tap, weight, hopkins, rng)
}

/// `w_R·MSE + (1−w_R)·L_H` with the Hopkins term taken on `bottleneck`.
pub fn composite_ae_loss(
    tape: &mut Tape,
    reconstruction: NodeId,
    input: NodeId,
    bottleneck: NodeId,
    weight: f64,
    hopkins: &HopkinsConfig,
    rng: &mut Rng,
) -> Result<CompositeLoss> {
    let mse = tape.mse(reconstruction, input)?;
    combine(tape, mse, Some(bottleneck), weight, hopkins, rng)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Option<Vec<usize>>,
}

impl Dataset {
    pub fn rows(&self) -> usize {
        self.features.rows()
    }

    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(indices),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
        }
    }

    fn labels_or_err(&self) -> Result<&[usize]> {
        self.labels
            .as_deref()
            .ok_or_else(|| Error::Config("classification needs labelled data".into()))
    }
}

/// Per-column z-scoring with statistics from one matrix (the train split).
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub means: Vec<f64>,
    /// Population standard deviations; constant columns use 1.
    pub scales: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &Matrix) -> Self {
        let n = x.rows().max(1) as f64;
        let mut means = vec![0.0; x.cols()];
        for row in x.row_iter() {
            for (m, v) in means.iter_mut().zip(row) {
                *m += v / n;
            }
        }
        let mut scales = vec![0.0; x.cols()];
        for row in x.row_iter() {
            for ((s, v), m) in scales.iter_mut().zip(row).zip(&means) {
                *s += (v - m) * (v - m) / n;
            }
        }
        for s in &mut scales {
            *s = if *s > 0.0 { s.sqrt() } else { 1.0 };
        }
        Self { means, scales }
    }

    pub fn apply(&self, x: &Matrix) -> Matrix {
        Matrix::from_fn(x.rows(), x.cols(), |i, j| {
            (x.get(i, j) - self.means[j]) / self.scales[j]
        })
    }

    pub fn apply_splits(&self, s: &Splits) -> Splits {
        let f = |d: &Dataset| Dataset {
            features: self.apply(&d.features),
            labels: d.labels.clone(),
        };
        Splits {
            train: f(&s.train),
            validation: f(&s.validation),
            test: f(&s.test),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

impl Splits {
    /// Seeded random partition with `train` and `validation` fractions; the
    /// remainder is the test split.
    pub fn random(data: &Dataset, train: f64, validation: f64, seed: u64) -> Result<Splits> {
        if !(train > 0.0 && validation > 0.0 && train + validation < 1.0) {
            return Err(Error::Config(format!(
                "split fractions {train}/{validation} must be positive and leave a test split"
            )));
        }
        let n = data.rows();
        let n_train = (train * n as f64).round() as usize;
        let n_val = (validation * n as f64).round() as usize;
        if n_train == 0 || n_val == 0 || n_train + n_val >= n {
            return Err(Error::Config(format!("{n} rows are too few to split")));
        }
        let mut order: Vec<usize> = (0..n).collect();
        Rng::with_stream(seed, streams::SPLIT).shuffle(&mut order);
        Ok(Splits {
            train: data.select(&order[..n_train]),
            validation: data.select(&order[n_train..n_train + n_val]),
            test: data.select(&order[n_train + n_val..]),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Classifier(ClassifierSpec),
    Autoencoder(AutoencoderSpec),
}

impl Model {
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        match self {
            Model::Classifier(s) => s.layer_dims(),
            Model::Autoencoder(s) => s.layer_dims(),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Model::Classifier(s) => s.validate(),
            Model::Autoencoder(s) => s.validate(),
        }
    }

    fn input_dim(&self) -> usize {
        match self {
            Model::Classifier(s) => s.input_dim,
            Model::Autoencoder(s) => s.input_dim,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn batch_loss(
        &self,
        tape: &mut Tape,
        params: &Params,
        x: &Matrix,
        labels: Option<&[usize]>,
        mode: Mode,
        dropout_rng: &mut Rng,
        hopkins_rng: &mut Rng,
        weight: f64,
        hopkins: &HopkinsConfig,
    ) -> Result<(CompositeLoss, crate::nn::RecordedParams)> {
        let rec = params.record(tape);
        let input = tape.leaf(x.clone());
        let loss = match self {
            Model::Classifier(spec) => {
                let labels = labels.expect("labels checked before training");
                let out = forward_classifier(spec, &rec, input, mode, dropout_rng, tape)?;
                composite_classification_loss(
                    tape, out.logits, labels, out.tap, weight, hopkins, hopkins_rng,
                )?
            }
            Model::Autoencoder(spec) => {
                let out = forward_autoencoder(spec, &rec, input, mode, dropout_rng, tape)?;
                composite_ae_loss(
                    tape,
                    out.reconstruction,
                    input,
                    out.bottleneck,
                    weight,
                    hopkins,
                    hopkins_rng,
                )?
            }
        };
        Ok((loss, rec))
    }
}

/// One line of the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub duration_ms: f64,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    /// Snapshot with the lowest validation loss.
    pub params: Params,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub history: Vec<EpochLog>,
}

impl FitOutcome {
    pub fn epochs_run(&self) -> usize {
        self.history.len()
    }

    pub fn durations_ms(&self) -> Vec<f64> {
        self.history.iter().map(|e| e.duration_ms).collect()
    }
}

fn check_split(name: &str, d: &Dataset, model: &Model) -> Result<()> {
    if d.rows() == 0 {
        return Err(Error::Config(format!("{name} split is empty")));
    }
    if d.features.cols() != model.input_dim() {
        return Err(Error::dim(
            "fit",
            format!(
                "{name} split has {} columns, model expects {}",
                d.features.cols(),
                model.input_dim()
            ),
        ));
    }
    if let Model::Classifier(spec) = model {
        let labels = d.labels_or_err()?;
        if let Some(&bad) = labels.iter().find(|&&l| l >= spec.num_classes) {
            return Err(Error::Index {
                op: "fit",
                index: bad,
                bound: spec.num_classes,
            });
        }
    }
    Ok(())
}

/// Row-weighted mean loss over `data` in eval mode.
pub fn evaluate_loss(
    model: &Model,
    params: &Params,
    data: &Dataset,
    cfg: &TrainConfig,
    include_hopkins: bool,
) -> Result<f64> {
    let weight = if include_hopkins { cfg.loss_weight } else { 1.0 };
    let mut hopkins_rng = Rng::with_stream(cfg.seed, streams::VALIDATION_HOPKINS);
    let mut unused = Rng::new(0);
    let rows: Vec<usize> = (0..data.rows()).collect();
    let mut total = 0.0;
    for chunk in rows.chunks(cfg.batch_size) {
        let batch = data.select(chunk);
        let mut tape = Tape::new();
        let (loss, _) = model.batch_loss(
            &mut tape,
            params,
            &batch.features,
            batch.labels.as_deref(),
            Mode::Eval,
            &mut unused,
            &mut hopkins_rng,
            weight,
            &cfg.hopkins,
        )?;
        total += tape.value(loss.total).get(0, 0) * chunk.len() as f64;
    }
    Ok(total / data.rows() as f64)
}

/// Trains `model` on `splits.train`, selecting the epoch with the lowest
/// validation loss.
///
/// Improvement means strictly lower validation loss. The plateau and
/// early-stop counters reset together on improvement; a learning-rate
/// reduction resets only the plateau counter.
pub fn fit(model: &Model, splits: &Splits, cfg: &TrainConfig) -> Result<FitOutcome> {
    model.validate()?;
    cfg.validate()?;
    check_split("train", &splits.train, model)?;
    check_split("validation", &splits.validation, model)?;

    let mut init_rng = Rng::with_stream(cfg.seed, streams::INIT);
    let mut shuffle_rng = Rng::with_stream(cfg.seed, streams::SHUFFLE);
    let mut dropout_rng = Rng::with_stream(cfg.seed, streams::DROPOUT);
    let mut hopkins_rng = Rng::with_stream(cfg.seed, streams::HOPKINS);

    let mut params = Params::init(&model.layer_dims(), &mut init_rng);
    let mut adam = AdamState::new(&params.tensors());
    let mut lr = cfg.learning_rate;

    let mut best: Option<(Params, usize, f64)> = None;
    let mut since_best = 0usize;
    let mut since_plateau = 0usize;
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..splits.train.rows()).collect();

    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        shuffle_rng.shuffle(&mut order);
        let mut train_total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = splits.train.select(chunk);
            let mut tape = Tape::new();
            let (loss, rec) = model.batch_loss(
                &mut tape,
                &params,
                &batch.features,
                batch.labels.as_deref(),
                Mode::Train,
                &mut dropout_rng,
                &mut hopkins_rng,
                cfg.loss_weight,
                &cfg.hopkins,
            )?;
            train_total += tape.value(loss.total).get(0, 0) * chunk.len() as f64;
            let grads = tape.backward(loss.total)?;
            let grads = rec.gradients(&grads, &tape);
            adam_step(&mut params.tensors_mut(), &grads, &mut adam, lr)?;
        }
        let train_loss = train_total / splits.train.rows() as f64;
        let val_loss = evaluate_loss(
            model,
            &params,
            &splits.validation,
            cfg,
            cfg.validation_includes_hopkins,
        )?;
        let duration_ms = started.elapsed().as_secs_f64() * 1e3;
        log::debug!(
            "epoch {epoch}: train {train_loss:.6} val {val_loss:.6} lr {lr:e} ({duration_ms:.1} ms)"
        );
        history.push(EpochLog {
            epoch,
            train_loss,
            val_loss,
            lr,
            duration_ms,
        });

        let improved = match &best {
            None => val_loss.is_finite(),
            Some((_, _, b)) => val_loss < *b,
        };
        if improved {
            best = Some((params.clone(), epoch, val_loss));
            since_best = 0;
            since_plateau = 0;
        } else {
            since_best += 1;
            since_plateau += 1;
            if since_best >= cfg.early_stop_patience {
                log::debug!("early stop after epoch {epoch}");
                break;
            }
            if since_plateau >= cfg.plateau_patience {
                lr *= cfg.plateau_factor;
                since_plateau = 0;
            }
        }
    }

    match best {
        Some((params, best_epoch, best_val_loss)) => Ok(FitOutcome {
            params,
            best_epoch,
            best_val_loss,
            history,
        }),
        None if cfg.max_epochs == 0 => Err(Error::Config("max_epochs must be positive".into())),
        None => Err(Error::Numerical(
            "validation loss was never finite; training diverged".into(),
        )),
    }
}

pub fn accuracy(predicted: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = predicted.iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / labels.len() as f64
}

/// Hopkins statistic of evaluation features under the shared evaluation seed.
pub fn evaluation_hopkins(features: &Matrix, hopkins: &HopkinsConfig) -> Result<f64> {
    let mut rng = Rng::with_stream(EVALUATION_SEED, streams::EVAL_HOPKINS);
    Ok(hopkins_statistic(features, hopkins, &mut rng)?.statistic)
}

/// Per-run quantities aggregated by the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub task: String,
    pub condition: String,
    pub seed: u64,
    pub loss_weight: f64,
    pub target: Option<f64>,
    pub bottleneck: Option<usize>,
    /// Test accuracy of the classifier, or of the probe for autoencoders.
    pub accuracy: f64,
    /// Hopkins statistic of the test-split tap or bottleneck features.
    pub hopkins: f64,
    pub epoch_count: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub epoch_durations_ms: Vec<f64>,
    pub probe_epoch_count: Option<usize>,
    pub config_hash: String,
}

impl RunRecord {
    /// The record with wall-clock fields cleared, for reproducibility checks.
    pub fn without_timing(&self) -> RunRecord {
        RunRecord {
            epoch_durations_ms: Vec::new(),
            ..self.clone()
        }
    }
}

/// `baseline` when the Hopkins term is off, otherwise `ht=<H_T>`, with a
/// `b=<B>` prefix for autoencoders.
pub fn condition_label(cfg: &TrainConfig, bottleneck: Option<usize>) -> String {
    let core = if cfg.uses_hopkins() {
        format!("ht={}", cfg.hopkins.target)
    } else {
        "baseline".to_string()
    };
    match bottleneck {
        Some(b) => format!("b={b}/{core}"),
        None => core,
    }
}

/// SHA-256 over the run configuration with the seed left out, so runs of
/// the same condition share a hash.
pub fn config_hash(task: &str, model: &serde_json::Value, cfgs: &[&TrainConfig]) -> String {
    let doc = serde_json::json!({
        "task": task,
        "model": model,
        "train": cfgs.iter().map(|c| c.fingerprint()).collect::<Vec<_>>(),
    });
    hex::encode(Sha256::digest(doc.to_string().as_bytes()))
}

#[derive(Debug, Clone)]
pub struct ClassifierRun {
    pub fit: FitOutcome,
    pub record: RunRecord,
}

pub fn run_classifier(spec: &ClassifierSpec, splits: &Splits, cfg: &TrainConfig) -> Result<ClassifierRun> {
    check_split("test", &splits.test, &Model::Classifier(spec.clone()))?;
    let fit = fit(&Model::Classifier(spec.clone()), splits, cfg)?;
    let test_labels = splits.test.labels_or_err()?;
    let predicted = predict(spec, &fit.params, &splits.test.features, cfg.batch_size)?;
    let hopkins = match spec.tap_layer {
        Some(_) => {
            let tap = tap_features(spec, &fit.params, &splits.test.features, cfg.batch_size)?;
            evaluation_hopkins(&tap, &cfg.hopkins)?
        }
        None => evaluation_hopkins(&splits.test.features, &cfg.hopkins)?,
    };
    let model_doc = serde_json::to_value(spec).expect("spec serializes");
    let record = RunRecord {
        task: "classify".into(),
        condition: condition_label(cfg, None),
        seed: cfg.seed,
        loss_weight: cfg.loss_weight,
        target: cfg.uses_hopkins().then_some(cfg.hopkins.target),
        bottleneck: None,
        accuracy: accuracy(&predicted, test_labels),
        hopkins,
        epoch_count: fit.epochs_run(),
        best_epoch: fit.best_epoch,
        best_val_loss: fit.best_val_loss,
        epoch_durations_ms: fit.durations_ms(),
        probe_epoch_count: None,
        config_hash: config_hash("classify", &model_doc, &[cfg]),
    };
    Ok(ClassifierRun { fit, record })
}

/// Trains a linear probe on frozen features; the Hopkins term is forced off.
pub fn train_probe(features: &Splits, num_classes: usize, cfg: &TrainConfig) -> Result<ClassifierRun> {
    let spec = ClassifierSpec::linear_probe(features.train.features.cols(), num_classes);
    let mut cfg = cfg.clone();
    cfg.loss_weight = 1.0;
    run_classifier(&spec, features, &cfg)
}

#[derive(Debug, Clone)]
pub struct AutoencoderRun {
    pub fit: FitOutcome,
    pub probe: ClassifierRun,
    /// Bottleneck features of every split.
    pub features: Splits,
    pub record: RunRecord,
}

/// Trains the autoencoder, extracts bottleneck features for every split,
/// scores the raw test-split features and trains a linear probe on the
/// features z-scored with train-split statistics.
pub fn run_autoencoder(
    spec: &AutoencoderSpec,
    splits: &Splits,
    num_classes: usize,
    cfg: &TrainConfig,
    probe_cfg: &TrainConfig,
) -> Result<AutoencoderRun> {
    let model = Model::Autoencoder(spec.clone());
    check_split("test", &splits.test, &model)?;
    for d in [&splits.train, &splits.validation, &splits.test] {
        d.labels_or_err()?;
    }
    let fit = fit(&model, splits, cfg)?;
    let encode = |d: &Dataset| -> Result<Dataset> {
        Ok(Dataset {
            features: extract_features(spec, &fit.params, &d.features, cfg.batch_size)?,
            labels: d.labels.clone(),
        })
    };
    let features = Splits {
        train: encode(&splits.train)?,
        validation: encode(&splits.validation)?,
        test: encode(&splits.test)?,
    };
    let hopkins = evaluation_hopkins(&features.test.features, &cfg.hopkins)?;
    let probe_inputs = Standardizer::fit(&features.train.features).apply_splits(&features);
    let probe = train_probe(&probe_inputs, num_classes, probe_cfg)?;
    let model_doc = serde_json::json!({ "autoencoder": spec, "classes": num_classes });
    let record = RunRecord {
        task: "autoencode".into(),
        condition: condition_label(cfg, Some(spec.bottleneck())),
        seed: cfg.seed,
        loss_weight: cfg.loss_weight,
        target: cfg.uses_hopkins().then_some(cfg.hopkins.target),
        bottleneck: Some(spec.bottleneck()),
        accuracy: probe.record.accuracy,
        hopkins,
        epoch_count: fit.epochs_run(),
        best_epoch: fit.best_epoch,
        best_val_loss: fit.best_val_loss,
        epoch_durations_ms: fit.durations_ms(),
        probe_epoch_count: Some(probe.fit.epochs_run()),
        config_hash: config_hash("autoencode", &model_doc, &[cfg, probe_cfg]),
    };
    Ok(AutoencoderRun {
        fit,
        probe,
        features,
        record,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut p = Matrix::from_vec(1, 3, vec![1.0, -2.0, 3.0]).unwrap();
        let before = p.clone();
        let mut st = AdamState::new(&[&p]);
        adam_step(&mut [&mut p], &[Matrix::zeros(1, 3)], &mut st, 0.1).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn adam_first_step_is_lr_times_sign() {
        let mut p = Matrix::scalar(0.5);
        let mut st = AdamState::new(&[&p]);
        adam_step(&mut [&mut p], &[Matrix::scalar(1.0)], &mut st, 0.001).unwrap();
        assert!((p.get(0, 0) - (0.5 - 0.001)).abs() < 1e-10);
    }

    #[test]
    fn adam_shape_mismatch() {
        let mut p = Matrix::zeros(2, 2);
        let mut st = AdamState::new(&[&p]);
        assert!(adam_step(&mut [&mut p], &[Matrix::zeros(1, 2)], &mut st, 0.1).is_err());
        assert!(adam_step(&mut [&mut p], &[], &mut st, 0.1).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::classifier(0).validate().is_ok());
        let mut c = TrainConfig::classifier(0);
        c.loss_weight = 1.5;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::autoencoder(0);
        c.plateau_patience = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn labels() {
        let c = TrainConfig::classifier(0);
        assert_eq!(condition_label(&c, None), "baseline");
        let c = c.with_hopkins(0.75, 0.5);
        assert_eq!(condition_label(&c, Some(2)), "b=2/ht=0.5");
    }

    #[test]
    fn hash_ignores_seed() {
        let m = serde_json::json!({});
        let a = TrainConfig::classifier(1);
        let b = TrainConfig::classifier(2);
        let c = TrainConfig::classifier(1).with_hopkins(0.75, 0.5);
        assert_eq!(config_hash("t", &m, &[&a]), config_hash("t", &m, &[&b]));
        assert_ne!(config_hash("t", &m, &[&a]), config_hash("t", &m, &[&c]));
    }

    #[test]
    fn accuracy_counts() {
        assert_eq!(accuracy(&[0, 1, 1, 2], &[0, 1, 2, 2]), 0.75);
    }
}

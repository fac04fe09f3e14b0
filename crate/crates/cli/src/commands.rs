use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use hopkins_core::hopkins::hopkins_statistic;
use hopkins_core::nn::{AutoencoderSpec, ClassifierSpec};
use hopkins_core::rng::{streams, Rng};
use hopkins_core::stats::{mann_whitney_u, mean_ci95, quantile, std_dev};
use hopkins_core::synth::{generate, SynthKind, SynthSpec};
use hopkins_core::train::{
    fit, run_autoencoder, run_classifier, Dataset, Model, RunRecord, Splits, Standardizer,
    TrainConfig,
};
use hopkins_core::{DistanceMetric, HopkinsConfig};

use crate::args::{
    BenchArgs, Cli, Command, DataArgs, GenArgs, HopkinsArgs, Kind, MetricArg, ReportArgs, Task,
    TrainAeArgs, TrainClassifyArgs, TrainOpts,
};
use crate::data::{self, FeatureFile};
use crate::error::{CliError, CliResult};

pub const RUNS_FILE: &str = "runs.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const QUANTILES_FILE: &str = "quantiles.csv";

pub fn run(cli: Cli, out: &mut dyn Write) -> CliResult<()> {
    match cli.command {
        Command::Gen(a) => cmd_gen(&a, out),
        Command::Hopkins(a) => cmd_hopkins(&a, out),
        Command::TrainClassify(a) => cmd_train_classify(&a, out),
        Command::TrainAe(a) => cmd_train_ae(&a, out),
        Command::Report(a) => cmd_report(&a, out),
        Command::BenchEpoch(a) => cmd_bench_epoch(&a, out),
    }
}

fn emit(out: &mut dyn Write, line: impl AsRef<str>) -> CliResult<()> {
    writeln!(out, "{}", line.as_ref()).map_err(|e| CliError::Runtime(format!("stdout: {e}")))
}

fn metric_from(arg: MetricArg, data: Option<&hopkins_core::Matrix>) -> CliResult<DistanceMetric> {
    Ok(match arg {
        MetricArg::Chebyshev => DistanceMetric::Chebyshev,
        MetricArg::Euclidean => DistanceMetric::Euclidean,
        MetricArg::Manhattan => DistanceMetric::Manhattan,
        MetricArg::Cosine => DistanceMetric::Cosine,
        MetricArg::Mahalanobis => match data {
            Some(x) => DistanceMetric::mahalanobis_from_data(x)?,
            None => {
                return Err(CliError::Usage(
                    "mahalanobis needs a fixed covariance and is only available for `hopkins`"
                        .into(),
                ))
            }
        },
    })
}

fn cmd_gen(a: &GenArgs, out: &mut dyn Write) -> CliResult<()> {
    let kind = match a.kind {
        Kind::Grid => SynthKind::Grid { jitter: a.jitter },
        Kind::Uniform => SynthKind::Uniform,
        Kind::Clusters => SynthKind::Clusters {
            num_clusters: a.clusters,
            spread: a.spread,
            labelled: true,
        },
    };
    let spec = SynthSpec {
        kind,
        n: a.n,
        d: a.d,
    };
    let generated = generate(&spec, &mut Rng::with_stream(a.seed, streams::DATA))?;
    let file = FeatureFile::new(generated.features, generated.labels);
    data::write_csv(&a.out, &file)?;
    let h = if file.features.rows() >= 2 {
        let mut rng = Rng::with_stream(a.seed, streams::HOPKINS);
        hopkins_statistic(&file.features, &HopkinsConfig::default(), &mut rng)?.statistic
    } else {
        0.5
    };
    emit(
        out,
        format!(
            "wrote {} rows x {} features to {}",
            file.features.rows(),
            file.features.cols(),
            a.out.display()
        ),
    )?;
    emit(out, format!("hopkins {h}"))
}

fn cmd_hopkins(a: &HopkinsArgs, out: &mut dyn Write) -> CliResult<()> {
    if a.trials == 0 {
        return Err(CliError::Usage("--trials must be at least 1".into()));
    }
    let file = data::read_csv(&a.input)?;
    let metric = metric_from(a.metric, Some(&file.features))?;
    let cfg = HopkinsConfig::new(a.k, metric, 0.5)?;
    emit(out, "trial,hopkins")?;
    let mut values = Vec::with_capacity(a.trials);
    for t in 0..a.trials {
        let mut rng = Rng::new(a.seed.wrapping_add(t as u64));
        let h = hopkins_statistic(&file.features, &cfg, &mut rng)?.statistic;
        emit(out, format!("{t},{h}"))?;
        values.push(h);
    }
    if values.len() >= 2 {
        let (mean, half) = mean_ci95(&values)?;
        emit(out, format!("mean,{mean}"))?;
        emit(out, format!("ci95,{half}"))?;
    }
    Ok(())
}

/// Loaded and split data plus a description for the manifest.
pub struct LoadedData {
    pub splits: Splits,
    pub num_classes: Option<usize>,
    pub description: serde_json::Value,
}

impl LoadedData {
    pub fn input_dim(&self) -> usize {
        self.splits.train.features.cols()
    }
}

fn num_classes(splits: &Splits) -> Option<usize> {
    let mut max = None;
    for d in [&splits.train, &splits.validation, &splits.test] {
        let labels = d.labels.as_ref()?;
        max = labels.iter().copied().chain(max).max();
    }
    max.map(|m| m + 1)
}

pub fn load_data(a: &DataArgs, seed: u64) -> CliResult<LoadedData> {
    let seed = a.data_seed.unwrap_or(seed);
    let sources = [a.data.is_some(), a.idx_train_images.is_some(), a.synth]
        .iter()
        .filter(|&&s| s)
        .count();
    if sources != 1 {
        return Err(CliError::Usage(
            "give exactly one data source: --data, --idx-train-images (with the other IDX paths) or --synth".into(),
        ));
    }
    let (splits, description) = if let Some(path) = &a.data {
        let file = data::read_csv(path)?;
        let ds = file.dataset();
        let splits = if a.group_split {
            let groups = file.groups.as_ref().ok_or_else(|| {
                CliError::Data(format!("{}: --group-split needs a `group` column", path.display()))
            })?;
            data::group_splits(&ds, groups, a.train_fraction, a.validation_fraction, seed)?
        } else {
            Splits::random(&ds, a.train_fraction, a.validation_fraction, seed)?
        };
        (
            splits,
            serde_json::json!({ "csv": path.display().to_string(), "rows": ds.rows() }),
        )
    } else if let Some(train_images) = &a.idx_train_images {
        let need = |p: &Option<std::path::PathBuf>, name: &str| {
            p.clone()
                .ok_or_else(|| CliError::Usage(format!("--{name} is required with IDX input")))
        };
        let train = data::read_idx(train_images, &need(&a.idx_train_labels, "idx-train-labels")?)?;
        let test = data::read_idx(
            &need(&a.idx_test_images, "idx-test-images")?,
            &need(&a.idx_test_labels, "idx-test-labels")?,
        )?;
        if train.features.cols() != test.features.cols() {
            return Err(CliError::Data(format!(
                "IDX train images have {} pixels, test images {}",
                train.features.cols(),
                test.features.cols()
            )));
        }
        let n = train.features.rows();
        if a.idx_validation == 0 || a.idx_validation >= n {
            return Err(CliError::Usage(format!(
                "--idx-validation {} must be between 1 and {} (training rows - 1)",
                a.idx_validation,
                n.saturating_sub(1)
            )));
        }
        let mut order: Vec<usize> = (0..n).collect();
        Rng::with_stream(seed, streams::SPLIT).shuffle(&mut order);
        let ds = train.dataset();
        let splits = Splits {
            train: ds.select(&order[a.idx_validation..]),
            validation: ds.select(&order[..a.idx_validation]),
            test: test.dataset(),
        };
        (
            splits,
            serde_json::json!({
                "idx_train": train_images.display().to_string(),
                "idx_validation_rows": a.idx_validation,
            }),
        )
    } else {
        let spec = SynthSpec {
            kind: SynthKind::Clusters {
                num_clusters: a.synth_clusters,
                spread: a.synth_spread,
                labelled: true,
            },
            n: a.synth_n,
            d: a.synth_d,
        };
        let g = generate(&spec, &mut Rng::with_stream(seed, streams::DATA))?;
        let ds = Dataset {
            features: g.features,
            labels: g.labels,
        };
        let splits = Splits::random(&ds, a.train_fraction, a.validation_fraction, seed)?;
        (
            splits,
            serde_json::json!({
                "synthetic_clusters": a.synth_clusters,
                "n": a.synth_n,
                "d": a.synth_d,
                "spread": a.synth_spread,
            }),
        )
    };
    let splits = if a.zscore {
        Standardizer::fit(&splits.train.features).apply_splits(&splits)
    } else {
        splits
    };
    let mut description = description;
    description["seed"] = seed.into();
    description["zscore"] = a.zscore.into();
    description["split_rows"] = serde_json::json!([
        splits.train.rows(),
        splits.validation.rows(),
        splits.test.rows()
    ]);
    Ok(LoadedData {
        num_classes: num_classes(&splits),
        splits,
        description,
    })
}

fn require_classes(d: &LoadedData) -> CliResult<usize> {
    match d.num_classes {
        Some(c) if c >= 2 => Ok(c),
        Some(c) => Err(CliError::Data(format!("labels span {c} class; need at least 2"))),
        None => Err(CliError::Data("training needs an integer `label` column".into())),
    }
}

/// One cell of the experiment grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridEntry {
    pub run_id: String,
    pub condition: String,
    pub seed: u64,
    pub target: Option<f64>,
    pub bottleneck: Option<usize>,
}

/// A line of `runs.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLine {
    pub run_id: String,
    #[serde(flatten)]
    pub record: RunRecord,
}

fn check_opts(o: &TrainOpts) -> CliResult<()> {
    if o.repeats == 0 {
        return Err(CliError::Usage("--repeats must be at least 1".into()));
    }
    if o.max_epochs == 0 {
        return Err(CliError::Usage("--max-epochs must be at least 1".into()));
    }
    if let Some(t) = o.targets.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(CliError::Usage(format!("target {t} outside [0, 1]")));
    }
    if !o.baseline_only && !o.targets.is_empty() && !(0.0..1.0).contains(&o.weight) {
        return Err(CliError::Usage(format!(
            "--weight {} must lie in [0, 1) when Hopkins targets are trained",
            o.weight
        )));
    }
    Ok(())
}

fn train_config(base: TrainConfig, o: &TrainOpts, target: Option<f64>) -> CliResult<TrainConfig> {
    let mut cfg = base;
    cfg.max_epochs = o.max_epochs;
    cfg.validation_includes_hopkins = !o.validation_without_hopkins;
    cfg.hopkins = HopkinsConfig::new(o.k, metric_from(o.metric, None)?, target.unwrap_or(0.5))?;
    if target.is_some() {
        cfg.loss_weight = o.weight;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn grid(o: &TrainOpts, bottlenecks: &[Option<usize>]) -> Vec<GridEntry> {
    let mut conditions: Vec<Option<f64>> = vec![None];
    if !o.baseline_only {
        conditions.extend(o.targets.iter().map(|&t| Some(t)));
    }
    let mut entries = Vec::new();
    for &b in bottlenecks {
        for &t in &conditions {
            for r in 0..o.repeats {
                let seed = o.seed.wrapping_add(r as u64);
                let core = match t {
                    Some(t) => format!("ht={t}"),
                    None => "baseline".into(),
                };
                let condition = match b {
                    Some(b) => format!("b={b}/{core}"),
                    None => core,
                };
                let run_id = format!(
                    "{:04}_{}_seed{seed}",
                    entries.len(),
                    condition.replace(['/', '='], "")
                );
                entries.push(GridEntry {
                    run_id,
                    condition,
                    seed,
                    target: t,
                    bottleneck: b,
                });
            }
        }
    }
    entries
}

struct RunWriter<'a> {
    dir: &'a Path,
    lines: Vec<u8>,
}

impl<'a> RunWriter<'a> {
    fn new(dir: &'a Path) -> CliResult<Self> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let w = Self {
            dir,
            lines: Vec::new(),
        };
        data::write_file(&dir.join(RUNS_FILE), b"")?;
        Ok(w)
    }

    fn record(
        &mut self,
        entry: &GridEntry,
        record: &RunRecord,
        history: &[hopkins_core::train::EpochLog],
        snapshot: &[u8],
    ) -> CliResult<()> {
        let mut log = Vec::new();
        for e in history {
            log.extend(serde_json::to_vec(e).expect("epoch log serializes"));
            log.push(b'\n');
        }
        data::write_file(&self.dir.join("logs").join(format!("{}.jsonl", entry.run_id)), &log)?;
        data::write_file(
            &self.dir.join("snapshots").join(format!("{}.bin", entry.run_id)),
            snapshot,
        )?;
        let line = RunLine {
            run_id: entry.run_id.clone(),
            record: record.clone(),
        };
        self.lines
            .extend(serde_json::to_vec(&line).expect("run record serializes"));
        self.lines.push(b'\n');
        data::write_file(&self.dir.join(RUNS_FILE), &self.lines)
    }

    fn manifest(&self, doc: serde_json::Value) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(&doc).expect("manifest serializes");
        text.push('\n');
        data::write_file(&self.dir.join(MANIFEST_FILE), text.as_bytes())
    }
}

fn run_summary(entry: &GridEntry, r: &RunRecord) -> String {
    format!(
        "{} {} seed={} accuracy={} hopkins={} epochs={}",
        entry.run_id, entry.condition, entry.seed, r.accuracy, r.hopkins, r.epoch_count
    )
}

fn manifest_doc(
    task: &str,
    o: &TrainOpts,
    data: &LoadedData,
    entries: &[GridEntry],
    extra: serde_json::Value,
) -> serde_json::Value {
    serde_json::json!({
        "task": task,
        "data": data.description,
        "targets": if o.baseline_only { Vec::new() } else { o.targets.clone() },
        "weight": o.weight,
        "repeats": o.repeats,
        "base_seed": o.seed,
        "max_epochs": o.max_epochs,
        "metric": format!("{:?}", o.metric).to_lowercase(),
        "sampling_fraction": o.k,
        "validation_includes_hopkins": !o.validation_without_hopkins,
        "options": extra,
        "grid_size": entries.len(),
        "runs": entries,
    })
}

fn cmd_train_classify(a: &TrainClassifyArgs, out: &mut dyn Write) -> CliResult<()> {
    let o = &a.opts;
    check_opts(o)?;
    let data = load_data(&a.data, o.seed)?;
    let classes = require_classes(&data)?;
    let spec = ClassifierSpec::mlp(data.input_dim(), classes);
    spec.validate()?;
    let entries = grid(o, &[None]);
    let configs = entries
        .iter()
        .map(|e| train_config(TrainConfig::classifier(e.seed), o, e.target))
        .collect::<CliResult<Vec<_>>>()?;

    let mut writer = RunWriter::new(&o.out)?;
    for (entry, cfg) in entries.iter().zip(&configs) {
        log::info!("run {} ({})", entry.run_id, entry.condition);
        let run = run_classifier(&spec, &data.splits, cfg)?;
        writer.record(entry, &run.record, &run.fit.history, &run.fit.params.to_bytes())?;
        emit(out, run_summary(entry, &run.record))?;
    }
    writer.manifest(manifest_doc(
        "classify",
        o,
        &data,
        &entries,
        serde_json::json!({ "classes": classes }),
    ))
}

fn cmd_train_ae(a: &TrainAeArgs, out: &mut dyn Write) -> CliResult<()> {
    let o = &a.opts;
    check_opts(o)?;
    if a.bottlenecks.is_empty() {
        return Err(CliError::Usage("--bottlenecks needs at least one value".into()));
    }
    if a.probe_max_epochs == 0 {
        return Err(CliError::Usage("--probe-max-epochs must be at least 1".into()));
    }
    let data = load_data(&a.data, o.seed)?;
    let classes = require_classes(&data)?;
    let d = data.input_dim();
    if let Some(b) = a.bottlenecks.iter().find(|&&b| b == 0 || b >= d) {
        return Err(CliError::Usage(format!(
            "bottleneck {b} must be positive and below the input dimension {d}"
        )));
    }
    let bottlenecks: Vec<Option<usize>> = a.bottlenecks.iter().map(|&b| Some(b)).collect();
    let entries = grid(o, &bottlenecks);
    let mut plans = Vec::with_capacity(entries.len());
    for e in &entries {
        let spec = AutoencoderSpec::standard(d, e.bottleneck.expect("autoencoder grid"));
        spec.validate()?;
        let cfg = train_config(TrainConfig::autoencoder(e.seed), o, e.target)?;
        let mut probe = train_config(TrainConfig::probe(e.seed), o, None)?;
        probe.max_epochs = a.probe_max_epochs;
        plans.push((spec, cfg, probe));
    }

    let mut writer = RunWriter::new(&o.out)?;
    for (entry, (spec, cfg, probe)) in entries.iter().zip(&plans) {
        log::info!("run {} ({})", entry.run_id, entry.condition);
        let run = run_autoencoder(spec, &data.splits, classes, cfg, probe)?;
        writer.record(entry, &run.record, &run.fit.history, &run.fit.params.to_bytes())?;
        emit(out, run_summary(entry, &run.record))?;
    }
    writer.manifest(manifest_doc(
        "autoencode",
        o,
        &data,
        &entries,
        serde_json::json!({
            "classes": classes,
            "bottlenecks": a.bottlenecks,
            "probe_max_epochs": a.probe_max_epochs,
        }),
    ))
}

pub fn read_runs(dir: &Path) -> CliResult<Vec<RunLine>> {
    let path = dir.join(RUNS_FILE);
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| CliError::Data(format!("{}: line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

fn baseline_label(r: &RunRecord) -> String {
    match r.bottleneck {
        Some(b) => format!("b={b}/baseline"),
        None => "baseline".into(),
    }
}

fn opt_num(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn cmd_report(a: &ReportArgs, out: &mut dyn Write) -> CliResult<()> {
    let runs = read_runs(&a.runs)?;
    if runs.is_empty() {
        return Err(CliError::Data(format!("{}: no run records", a.runs.display())));
    }
    // conditions in order of first appearance
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Vec<&RunRecord>> = BTreeMap::new();
    for r in &runs {
        let rec = &r.record;
        if !groups.contains_key(&rec.condition) {
            order.push(rec.condition.clone());
        }
        groups.entry(rec.condition.clone()).or_default().push(rec);
    }
    for cond in &order {
        let base = baseline_label(groups[cond][0]);
        if !groups.contains_key(&base) {
            return Err(CliError::Data(format!(
                "baseline condition '{base}' is absent; it is needed to compare '{cond}'"
            )));
        }
    }
    let compare = order
        .iter()
        .any(|c| groups[c][0].target.is_some());

    let mut summary = String::from(
        "condition,runs,accuracy_mean,accuracy_ci95,accuracy_sd,hopkins_mean,hopkins_ci95",
    );
    if compare {
        summary.push_str(",u,p_value,stars,direction");
    }
    summary.push('\n');
    let mut quantiles = String::from("condition,metric,min,q1,median,q3,max\n");

    for cond in &order {
        let recs = &groups[cond];
        let acc: Vec<f64> = recs.iter().map(|r| r.accuracy).collect();
        let hop: Vec<f64> = recs.iter().map(|r| r.hopkins).collect();
        let ci = |x: &[f64]| mean_ci95(x).ok().map(|(_, h)| h);
        let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
        let acc_mean = mean(&acc);
        let mut row = format!(
            "{cond},{},{acc_mean},{},{},{},{}",
            recs.len(),
            opt_num(ci(&acc)),
            std_dev(&acc, acc_mean),
            mean(&hop),
            opt_num(ci(&hop)),
        );
        if compare {
            if recs[0].target.is_some() {
                let base: Vec<f64> = groups[&baseline_label(recs[0])]
                    .iter()
                    .map(|r| r.accuracy)
                    .collect();
                let c = mann_whitney_u(&acc, &base)?;
                let direction = if c.stars.as_str() == "ns" {
                    ""
                } else if c.u > (acc.len() * base.len()) as f64 / 2.0 {
                    "higher"
                } else {
                    "lower"
                };
                row.push_str(&format!(",{},{},{},{direction}", c.u, c.p_two_sided, c.stars));
            } else {
                row.push_str(",,,,");
            }
        }
        summary.push_str(&row);
        summary.push('\n');

        for (metric, values) in [("accuracy", &acc), ("hopkins", &hop)] {
            let mut s = values.clone();
            s.sort_by(f64::total_cmp);
            quantiles.push_str(&format!(
                "{cond},{metric},{},{},{},{},{}\n",
                s[0],
                quantile(&s, 0.25),
                quantile(&s, 0.5),
                quantile(&s, 0.75),
                s[s.len() - 1]
            ));
        }
    }
    let dir = a.out.as_deref().unwrap_or(&a.runs);
    data::write_file(&dir.join(SUMMARY_FILE), summary.as_bytes())?;
    data::write_file(&dir.join(QUANTILES_FILE), quantiles.as_bytes())?;
    out.write_all(summary.as_bytes())
        .map_err(|e| CliError::Runtime(format!("stdout: {e}")))
}

/// Mean and sample standard deviation of epoch durations per condition.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub condition: String,
    pub weight: f64,
    pub epochs: usize,
    pub mean_ms: f64,
    pub sd_ms: f64,
}

pub fn overhead_percent(with: f64, without: f64) -> f64 {
    (with - without) / without * 100.0
}

fn cmd_bench_epoch(a: &BenchArgs, out: &mut dyn Write) -> CliResult<()> {
    if !(0.0..1.0).contains(&a.weight) {
        return Err(CliError::Usage(format!("--weight {} must lie in [0, 1)", a.weight)));
    }
    let data = load_data(&a.data, a.seed)?;
    let d = data.input_dim();
    let (model, base_cfg) = match a.task {
        Task::Classify => {
            let c = require_classes(&data)?;
            (
                Model::Classifier(ClassifierSpec::mlp(d, c)),
                TrainConfig::classifier(a.seed),
            )
        }
        Task::Autoencode => {
            if a.bottleneck == 0 || a.bottleneck >= d {
                return Err(CliError::Usage(format!(
                    "bottleneck {} must be positive and below the input dimension {d}",
                    a.bottleneck
                )));
            }
            (
                Model::Autoencoder(AutoencoderSpec::standard(d, a.bottleneck)),
                TrainConfig::autoencoder(a.seed),
            )
        }
    };
    let mut header = String::from("condition,weight,epochs,mean_ms,sd_ms,overhead_percent\n");
    if a.epochs == 0 {
        emit(out, header.trim_end())?;
        if let Some(p) = &a.out {
            data::write_file(p, header.as_bytes())?;
        }
        return Ok(());
    }
    let mut rows = Vec::new();
    for (condition, weight) in [("baseline".to_string(), 1.0), (format!("ht={}", a.target), a.weight)] {
        let mut cfg = base_cfg.clone().with_hopkins(weight, a.target);
        cfg.max_epochs = a.epochs;
        cfg.early_stop_patience = a.epochs + 1;
        cfg.plateau_patience = a.epochs + 1;
        let outcome = fit(&model, &data.splits, &cfg)?;
        let durations = outcome.durations_ms();
        let mean = durations.iter().sum::<f64>() / durations.len() as f64;
        rows.push(BenchRow {
            condition,
            weight,
            epochs: durations.len(),
            mean_ms: mean,
            sd_ms: std_dev(&durations, mean),
        });
    }
    let overhead = overhead_percent(rows[1].mean_ms, rows[0].mean_ms);
    for (i, r) in rows.iter().enumerate() {
        header.push_str(&format!(
            "{},{},{},{:.3},{:.3},{}\n",
            r.condition,
            r.weight,
            r.epochs,
            r.mean_ms,
            r.sd_ms,
            if i == 1 { format!("{overhead:.2}") } else { String::new() }
        ));
    }
    if let Some(p) = &a.out {
        data::write_file(p, header.as_bytes())?;
    }
    out.write_all(header.as_bytes())
        .map_err(|e| CliError::Runtime(format!("stdout: {e}")))?;
    emit(out, format!("overhead {overhead:.2}%"))
}

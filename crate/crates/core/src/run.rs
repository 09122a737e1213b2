//! Command implementations behind the `unpg-kit` binary: training runs with
//! their on-disk artifacts, checkpoint evaluation, and run comparison or
//! whisker sweeps.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{read_checkpoint, write_checkpoint};
use crate::error::{Error, Result};
use crate::eval::{evaluate, histogram_csv, EvalConfig, Evaluation, MetricsReport, TarAtFar};
use crate::pairgen::FilterConfig;
use crate::sphere::Angle;
use crate::trainer::{gen_synthetic, SyntheticSpec, TrainConfig, Trainer};

/// Environment variable overriding `train.seed`.
pub const SEED_ENV: &str = "UNPG_SEED";

pub const CONFIG_FILE: &str = "config.json";
pub const LOSS_LOG_FILE: &str = "loss.jsonl";
pub const METRICS_LOG_FILE: &str = "metrics.jsonl";
pub const METRICS_FILE: &str = "metrics.json";
pub const RUN_FILE: &str = "run.json";
pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const HIST_POSITIVE_FILE: &str = "hist_positive.csv";
pub const HIST_NEGATIVE_FILE: &str = "hist_negative.csv";

fn default_eval_every() -> u64 {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    #[serde(default)]
    pub data: SyntheticSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    /// Metrics are recorded at step 0, every `eval_every` steps, and at the end.
    #[serde(default = "default_eval_every")]
    pub eval_every: u64,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.train.validate()?;
        self.eval.validate()?;
        if self.eval_every == 0 {
            return Err(Error::config("eval_every", "must be >= 1"));
        }
        if self.train.classes_per_batch > self.data.num_classes {
            return Err(Error::config(
                "train.classes_per_batch",
                format!("exceeds data.num_classes = {}", self.data.num_classes),
            ));
        }
        if self.train.samples_per_class_per_batch > self.data.samples_per_class {
            return Err(Error::config(
                "train.samples_per_class_per_batch",
                format!(
                    "exceeds data.samples_per_class = {}",
                    self.data.samples_per_class
                ),
            ));
        }
        if self.data.samples_per_class < 2 {
            return Err(Error::config(
                "data.samples_per_class",
                "evaluation needs at least two samples per class",
            ));
        }
        Ok(())
    }
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig =
        serde_json::from_str(text).map_err(|e| Error::config("config", e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

/// Parses the `UNPG_SEED` value.
pub fn parse_seed(value: &str) -> Result<u64> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::config("UNPG_SEED", format!("not an unsigned integer: {value:?}")))
}

/// Parses a comma-separated whisker list such as `0.5,1,1.5`.
pub fn parse_whisker_list(text: &str) -> Result<Vec<f64>> {
    if text.trim().is_empty() {
        return Err(Error::config("sweep_whisker", "empty whisker list"));
    }
    text.split(',')
        .map(|t| {
            let r: f64 = t
                .trim()
                .parse()
                .map_err(|_| Error::config("sweep_whisker", format!("not a number: {t:?}")))?;
            FilterConfig::new(r)
                .map_err(|_| Error::config("sweep_whisker", format!("{r} is not >= 0")))?;
            Ok(r)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TrainOptions {
    pub allow_nonfinite: bool,
    pub seed_override: Option<u64>,
}

/// One line of `loss.jsonl`. `loss` is null for a non-finite step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossLine {
    pub step: u64,
    pub lr: f64,
    pub loss: Option<f64>,
}

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsLine {
    pub step: u64,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub train_seconds: f64,
    pub eval_seconds: f64,
    pub total_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub complete: bool,
    pub total_steps: u64,
    pub losses: Vec<LossLine>,
    pub metrics: Vec<MetricsLine>,
    pub checkpoint: Option<PathBuf>,
    pub timings: Timings,
}

impl RunRecord {
    pub fn final_loss(&self) -> Option<f64> {
        self.losses.last().and_then(|l| l.loss)
    }

    pub fn final_metrics(&self) -> Option<&MetricsReport> {
        self.metrics.last().map(|m| &m.metrics)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })
}

struct JsonLines {
    path: PathBuf,
    out: BufWriter<File>,
}

impl JsonLines {
    fn create(path: PathBuf) -> Result<Self> {
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            out: BufWriter::new(file),
            path,
        })
    }

    fn push<T: Serialize>(&mut self, value: &T) -> Result<()> {
        let line = serde_json::to_string(value).map_err(|e| Error::Json {
            path: self.path.clone(),
            source: e,
        })?;
        writeln!(self.out, "{line}").map_err(|e| Error::io(&self.path, e))
    }

    fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

fn evaluate_trainer(trainer: &Trainer, cfg: &EvalConfig) -> Result<Evaluation> {
    evaluate(&trainer.embeddings()?, trainer.dataset().labels(), cfg)
}

fn write_histograms(dir: &Path, prefix: &str, eval: &Evaluation, bins: usize) -> Result<()> {
    for (name, values) in [
        (HIST_POSITIVE_FILE, &eval.sampled.positive_scores),
        (HIST_NEGATIVE_FILE, &eval.sampled.negative_scores),
    ] {
        let path = dir.join(format!("{prefix}{name}"));
        fs::write(&path, histogram_csv(values, bins)?).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Trains `cfg` to completion, writing every artifact into `cfg.output_dir`.
pub fn run_training(cfg: &RunConfig, opts: TrainOptions) -> Result<RunRecord> {
    cfg.validate()?;
    let start = Instant::now();
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_json(&dir.join(CONFIG_FILE), cfg)?;

    let dataset = gen_synthetic(&cfg.data)?;
    let mut trainer = Trainer::new(cfg.train, dataset)?.allow_nonfinite(opts.allow_nonfinite);
    let mut record = RunRecord {
        complete: false,
        total_steps: cfg.train.total_steps(),
        losses: Vec::new(),
        metrics: Vec::new(),
        checkpoint: None,
        timings: Timings::default(),
    };
    let run_path = dir.join(RUN_FILE);
    write_json(&run_path, &record)?;

    let mut loss_log = JsonLines::create(dir.join(LOSS_LOG_FILE))?;
    let mut metrics_log = JsonLines::create(dir.join(METRICS_LOG_FILE))?;
    let mut eval_time = 0.0;
    let mut record_metrics = |trainer: &Trainer, record: &mut RunRecord, log: &mut JsonLines| {
        let t = Instant::now();
        let ev = evaluate_trainer(trainer, &cfg.eval)?;
        eval_time += t.elapsed().as_secs_f64();
        let line = MetricsLine {
            step: trainer.state().step,
            metrics: ev.report.clone(),
        };
        log.push(&line)?;
        record.metrics.push(line);
        Ok::<_, Error>(ev)
    };

    let mut last = record_metrics(&trainer, &mut record, &mut metrics_log)?;
    let mut last_step = 0;
    while !trainer.is_done() {
        let outcome = match trainer.step() {
            Ok(o) => o,
            Err(e) => {
                loss_log.flush()?;
                metrics_log.flush()?;
                write_json(&run_path, &record)?;
                return Err(e);
            }
        };
        let value = outcome.loss.value;
        let line = LossLine {
            step: outcome.step,
            lr: outcome.lr,
            loss: value.is_finite().then_some(value),
        };
        loss_log.push(&line)?;
        record.losses.push(line);
        let step = trainer.state().step;
        if step % cfg.eval_every == 0 {
            last = record_metrics(&trainer, &mut record, &mut metrics_log)?;
            last_step = step;
        }
    }
    if last_step != trainer.state().step {
        last = record_metrics(&trainer, &mut record, &mut metrics_log)?;
    }
    loss_log.flush()?;
    metrics_log.flush()?;

    let ckpt = write_checkpoint(
        &dir.join(CHECKPOINT_DIR),
        trainer.state(),
        trainer.dataset().dim(),
        cfg,
    )?;
    write_json(&dir.join(METRICS_FILE), &last.report)?;
    write_histograms(dir, "", &last, cfg.eval.num_bins)?;

    let total = start.elapsed().as_secs_f64();
    record.checkpoint = Some(ckpt);
    record.complete = true;
    record.timings = Timings {
        train_seconds: total - eval_time,
        eval_seconds: eval_time,
        total_seconds: total,
    };
    write_json(&run_path, &record)?;
    Ok(record)
}

/// `unpg-kit train`: loads and validates the config, applies the seed
/// override, and trains.
pub fn cmd_train(config_path: &Path, opts: TrainOptions) -> Result<RunRecord> {
    let mut cfg = load_config(config_path)?;
    if let Some(seed) = opts.seed_override {
        cfg.train.seed = seed;
    }
    run_training(&cfg, opts)
}

/// `unpg-kit eval`: recomputes every metric for a checkpoint on the dataset
/// described by the JSON synthetic-data spec at `data_path`.
pub fn cmd_eval(checkpoint_path: &Path, data_path: &Path) -> Result<MetricsReport> {
    let ck = read_checkpoint(checkpoint_path)?;
    let text = fs::read_to_string(data_path).map_err(|e| Error::io(data_path, e))?;
    let spec: SyntheticSpec =
        serde_json::from_str(&text).map_err(|e| Error::config("data", e.to_string()))?;
    let dataset = gen_synthetic(&spec)?;
    let eval_cfg = ck
        .meta
        .config
        .get("eval")
        .and_then(|v| serde_json::from_value::<EvalConfig>(v.clone()).ok())
        .unwrap_or_default();
    let embeddings = ck.embeddings(&dataset)?;
    Ok(evaluate(&embeddings, dataset.labels(), &eval_cfg)?.report)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnalyzeOptions {
    pub bins: Option<usize>,
    /// Whisker sizes to retrain with; `Some` selects sweep mode.
    pub sweep_whisker: Option<Vec<f64>>,
    /// Where reports and histogram CSVs go. Comparison mode writes nothing
    /// without it; sweep mode defaults to the second directory.
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub unpg_enabled: bool,
    pub final_loss: Option<f64>,
    pub overlap_count: u64,
    pub num_bins: usize,
    pub wdfs_gap: f64,
    pub theta_p_max: Angle,
    pub theta_n_min: Angle,
}

/// Second run minus first run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Difference {
    pub overlap_count: i64,
    pub wdfs_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub whisker_r: f64,
    pub run_dir: PathBuf,
    pub final_loss: Option<f64>,
    pub verification_accuracy: f64,
    pub rank1: f64,
    pub overlap_count: u64,
    pub wdfs_gap: f64,
    pub tar_at_far: Vec<TarAtFar>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnalysisReport {
    Comparison {
        runs: Vec<RunSummary>,
        difference: Difference,
    },
    WhiskerSweep {
        base_config: PathBuf,
        rows: Vec<SweepRow>,
    },
}

fn load_complete_run(dir: &Path) -> Result<(RunConfig, RunRecord)> {
    let record: RunRecord =
        read_json(&dir.join(RUN_FILE)).map_err(|_| Error::RunIncomplete(dir.to_path_buf()))?;
    if !record.complete {
        return Err(Error::RunIncomplete(dir.to_path_buf()));
    }
    let cfg: RunConfig = read_json(&dir.join(CONFIG_FILE))?;
    Ok((cfg, record))
}

fn summarize(dir: &Path, bins: Option<usize>) -> Result<(RunSummary, Evaluation, usize)> {
    let (cfg, record) = load_complete_run(dir)?;
    let ck = read_checkpoint(&dir.join(CHECKPOINT_DIR))?;
    let dataset = gen_synthetic(&cfg.data)?;
    let mut eval_cfg = cfg.eval.clone();
    if let Some(b) = bins {
        eval_cfg.num_bins = b;
    }
    let ev = evaluate(&ck.embeddings(&dataset)?, dataset.labels(), &eval_cfg)?;
    let summary = RunSummary {
        dir: dir.to_path_buf(),
        unpg_enabled: cfg.train.loss.unpg_enabled,
        final_loss: record.final_loss(),
        overlap_count: ev.report.overlap_count,
        num_bins: eval_cfg.num_bins,
        wdfs_gap: ev.report.wdfs_gap,
        theta_p_max: ev.report.theta_p_max,
        theta_n_min: ev.report.theta_n_min,
    };
    Ok((summary, ev, eval_cfg.num_bins))
}

fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s =
        String::from("whisker_r,final_loss,verification_accuracy,rank1,overlap_count,wdfs_gap\n");
    for r in rows {
        let loss = r
            .final_loss
            .map_or_else(|| "nan".to_owned(), |l| l.to_string());
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.whisker_r, loss, r.verification_accuracy, r.rank1, r.overlap_count, r.wdfs_gap
        ));
    }
    s
}

/// `unpg-kit analyze`. Without a sweep, compares two completed runs. With
/// `sweep_whisker`, retrains the config of `dir_a` once per whisker size
/// (UNPG on) into subdirectories of `dir_b`, concurrently.
pub fn cmd_analyze(dir_a: &Path, dir_b: &Path, opts: &AnalyzeOptions) -> Result<AnalysisReport> {
    if let Some(b) = opts.bins {
        if b == 0 {
            return Err(Error::config("bins", "must be >= 1"));
        }
    }
    match &opts.sweep_whisker {
        None => {
            let (sa, ea, bins) = summarize(dir_a, opts.bins)?;
            let (sb, eb, _) = summarize(dir_b, opts.bins)?;
            let difference = Difference {
                overlap_count: sb.overlap_count as i64 - sa.overlap_count as i64,
                wdfs_gap: sb.wdfs_gap - sa.wdfs_gap,
            };
            let report = AnalysisReport::Comparison {
                runs: vec![sa, sb],
                difference,
            };
            if let Some(out) = &opts.out {
                fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
                write_histograms(out, "a_", &ea, bins)?;
                write_histograms(out, "b_", &eb, bins)?;
                write_json(&out.join("analysis.json"), &report)?;
            }
            Ok(report)
        }
        Some(list) => {
            if list.is_empty() {
                return Err(Error::config("sweep_whisker", "empty whisker list"));
            }
            let base_path = dir_a.join(CONFIG_FILE);
            let base: RunConfig = read_json(&base_path)?;
            let configs = list
                .iter()
                .map(|&r| {
                    let mut cfg = base.clone();
                    let quartiles = cfg
                        .train
                        .loss
                        .whisker
                        .map(|w| w.quartiles)
                        .unwrap_or_default();
                    cfg.train.loss.unpg_enabled = true;
                    cfg.train.loss.whisker = Some(FilterConfig {
                        whisker_r: r,
                        quartiles,
                    });
                    if let Some(b) = opts.bins {
                        cfg.eval.num_bins = b;
                    }
                    cfg.output_dir = dir_b.join(format!("whisker_{r}"));
                    cfg.validate()?;
                    Ok(cfg)
                })
                .collect::<Result<Vec<_>>>()?;
            let results: Vec<Result<RunRecord>> = std::thread::scope(|s| {
                let handles: Vec<_> = configs
                    .iter()
                    .map(|cfg| s.spawn(move || run_training(cfg, TrainOptions::default())))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("sweep worker panicked"))
                    .collect()
            });
            let mut rows = Vec::with_capacity(configs.len());
            for ((cfg, res), &r) in configs.iter().zip(results).zip(list) {
                let record = res?;
                let m = record
                    .final_metrics()
                    .ok_or_else(|| Error::RunIncomplete(cfg.output_dir.clone()))?;
                rows.push(SweepRow {
                    whisker_r: r,
                    run_dir: cfg.output_dir.clone(),
                    final_loss: record.final_loss(),
                    verification_accuracy: m.verification_accuracy,
                    rank1: m.rank1,
                    overlap_count: m.overlap_count,
                    wdfs_gap: m.wdfs_gap,
                    tar_at_far: m.tar_at_far.clone(),
                });
            }
            let out = opts.out.clone().unwrap_or_else(|| dir_b.to_path_buf());
            fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            let csv_path = out.join("sweep.csv");
            fs::write(&csv_path, sweep_csv(&rows)).map_err(|e| Error::io(&csv_path, e))?;
            let report = AnalysisReport::WhiskerSweep {
                base_config: base_path,
                rows,
            };
            write_json(&out.join("sweep.json"), &report)?;
            Ok(report)
        }
    }
}

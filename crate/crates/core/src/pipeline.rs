//! The three CLI commands as library calls, each writing only into its
//! output directory and leaving a manifest of what it read and wrote.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::dataset::{dataset_hash, generate_dataset, load_dataset, write_dataset, Dataset};
use crate::error::{Error, Result};
use crate::eval::{
    evaluate, write_nmse_steps_csv, write_results_csv, write_se_snr_csv, write_traces_csv, Baseline, EvalReport,
};
use crate::nn::{import_gpt2_safetensors, load_checkpoint, save_checkpoint, PortLlm};
use crate::train::{write_metrics_file, EpochRecord, Trainer};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// A file with its content hash. Paths are relative to the output directory
/// for outputs and as given for inputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

impl Artifact {
    pub fn of(path: &Path, shown: impl Into<String>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Ok(Artifact {
            path: shown.into(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        })
    }

    fn output(dir: &Path, name: &str) -> Result<Self> {
        Self::of(&dir.join(name), name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: RunConfig,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
    /// Free-form facts about the run, e.g. sample counts.
    pub summary: serde_json::Value,
    pub wall_clock_seconds: f64,
}

impl RunManifest {
    fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(format!("manifest-{}.json", self.command));
        std::fs::write(&path, serde_json::to_vec_pretty(self)?)?;
        Ok(path)
    }
}

fn prepare_dir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)
        .map_err(|e| Error::Data(format!("cannot create output directory {}: {e}", out.display())))
}

/// Size the global worker pool; `None` or `0` keeps the default.
pub fn configure_threads(threads: Option<usize>) -> Result<()> {
    match threads {
        Some(n) if n > 0 => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::config("FLUIDPORT_THREADS", e.to_string())),
        _ => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateSummary {
    pub sidecar: PathBuf,
    pub blob: PathBuf,
    pub dataset_hash: String,
    pub samples: usize,
    pub train: usize,
    pub test: usize,
    pub manifest: PathBuf,
}

pub fn cmd_generate(cfg: &RunConfig, out: &Path) -> Result<GenerateSummary> {
    cfg.validate()?;
    let start = Instant::now();
    prepare_dir(out)?;
    let ds = generate_dataset(&cfg.channel, &cfg.scenario, cfg.seed)?;
    let files = write_dataset(&ds, out)?;
    let name = |p: &Path| p.file_name().unwrap_or_default().to_string_lossy().into_owned();
    let manifest = RunManifest {
        command: "generate".into(),
        tool_version: TOOL_VERSION.into(),
        seed: cfg.seed,
        config_hash: cfg.hash(),
        config: cfg.clone(),
        inputs: Vec::new(),
        outputs: vec![
            Artifact::output(out, &name(&files.sidecar))?,
            Artifact::output(out, &name(&files.blob))?,
        ],
        summary: serde_json::json!({
            "dataset_hash": files.hash,
            "samples": ds.samples.len(),
            "train": ds.split.train.len(),
            "test": ds.split.test.len(),
            "train_fraction": cfg.scenario.train_fraction,
        }),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    Ok(GenerateSummary {
        samples: ds.samples.len(),
        train: ds.split.train.len(),
        test: ds.split.test.len(),
        dataset_hash: files.hash,
        sidecar: files.sidecar,
        blob: files.blob,
        manifest: manifest.write(out)?,
    })
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Continue from a checkpoint that carries training state.
    pub resume: Option<PathBuf>,
    /// Pre-trained GPT-2 weights for the frozen backbone.
    pub gpt2: Option<PathBuf>,
    /// Called after every epoch, e.g. for progress output.
    pub on_epoch: Option<fn(&EpochRecord)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub records: Vec<EpochRecord>,
    pub final_checkpoint: PathBuf,
    pub best_checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub manifest: PathBuf,
}

pub const METRICS_FILE: &str = "metrics.csv";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";

fn check_dataset(cfg: &RunConfig, ds: &Dataset) -> Result<()> {
    if ds.channel != cfg.channel || ds.scenario != cfg.scenario {
        return Err(Error::Data(
            "dataset was generated with different [channel] / [scenario] settings than the config".into(),
        ));
    }
    Ok(())
}

fn read_metrics(path: &Path, upto_epoch: usize) -> Result<Vec<EpochRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::Data(format!("malformed metrics line `{line}`"));
        if f.len() != 5 {
            return Err(bad());
        }
        let rec = EpochRecord {
            epoch: f[0].parse().map_err(|_| bad())?,
            step: f[1].parse().map_err(|_| bad())?,
            lr: f[2].parse().map_err(|_| bad())?,
            train_nmse: f[3].parse().map_err(|_| bad())?,
            val_nmse_v: f[4].parse().map_err(|_| bad())?,
            val_nmse_t: f64::NAN,
        };
        if rec.epoch <= upto_epoch {
            out.push(rec);
        }
    }
    Ok(out)
}

pub fn cmd_train(cfg: &RunConfig, dataset: &Path, out: &Path, opts: &TrainOptions) -> Result<TrainSummary> {
    cfg.validate()?;
    let start = Instant::now();
    let loaded = load_dataset(dataset)?;
    check_dataset(cfg, &loaded)?;
    let ds = &loaded;
    let sidecar = if dataset.is_dir() {
        dataset.join(format!("dataset-{}.json", dataset_hash(&ds.channel, &ds.scenario, ds.seed)))
    } else {
        dataset.to_path_buf()
    };
    prepare_dir(out)?;
    let metrics = out.join(METRICS_FILE);
    let mut inputs = vec![Artifact::of(&sidecar, sidecar.display().to_string())?];

    let (mut trainer, mut records) = match &opts.resume {
        Some(path) => {
            inputs.push(Artifact::of(path, path.display().to_string())?);
            let ck = load_checkpoint(path)?;
            if ck.model.config() != &cfg.net {
                return Err(Error::Data("checkpoint network does not match [net] in the config".into()));
            }
            let tr = Trainer::resume(ck, ds, &cfg.train)?;
            let prior = if metrics.exists() { read_metrics(&metrics, tr.epoch())? } else { Vec::new() };
            (tr, prior)
        }
        None => {
            let mut model = PortLlm::<f32>::new(cfg.net.clone(), cfg.seed)?;
            if let Some(path) = &opts.gpt2 {
                inputs.push(Artifact::of(path, path.display().to_string())?);
                import_gpt2_safetensors(&mut model, path)?;
            }
            (Trainer::new(model, ds, &cfg.train, cfg.seed)?, Vec::new())
        }
    };

    let save = |tr: &Trainer, name: &str| -> Result<()> {
        let (m, state, extra) = tr.checkpoint_parts();
        save_checkpoint(&out.join(name), m, Some(&state), &extra)
    };
    while !trainer.is_done() {
        let rec = trainer.run_epoch()?;
        records.push(rec);
        if let Some(cb) = opts.on_epoch {
            cb(&rec);
        }
        write_metrics_file(&metrics, &records)?;
        if trainer.best_val_nmse_v.is_none_or(|b| rec.val_nmse_v < b) {
            trainer.best_val_nmse_v = Some(rec.val_nmse_v);
            save(&trainer, BEST_CHECKPOINT)?;
        }
        let every = cfg.train.checkpoint_every;
        if every > 0 && rec.epoch % every == 0 {
            save(&trainer, LAST_CHECKPOINT)?;
        }
    }
    save(&trainer, FINAL_CHECKPOINT)?;
    if !out.join(BEST_CHECKPOINT).exists() {
        save(&trainer, BEST_CHECKPOINT)?;
    }
    write_metrics_file(&metrics, &records)?;

    let mut outputs = vec![Artifact::output(out, METRICS_FILE)?];
    for name in [FINAL_CHECKPOINT, BEST_CHECKPOINT, LAST_CHECKPOINT] {
        if out.join(name).exists() {
            outputs.push(Artifact::output(out, name)?);
        }
    }
    let manifest = RunManifest {
        command: "train".into(),
        tool_version: TOOL_VERSION.into(),
        seed: cfg.seed,
        config_hash: cfg.hash(),
        config: cfg.clone(),
        inputs,
        outputs,
        summary: serde_json::json!({
            "epochs": trainer.epoch(),
            "steps": trainer.step(),
            "trainable_parameters": trainer.model.trainable_count(),
            "frozen_parameters": trainer.model.frozen_count(),
            "frozen_checksum": trainer.model.frozen_checksum(),
            "best_val_nmse_v": trainer.best_val_nmse_v,
        }),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    Ok(TrainSummary {
        records,
        final_checkpoint: out.join(FINAL_CHECKPOINT),
        best_checkpoint: out.join(BEST_CHECKPOINT),
        metrics,
        manifest: manifest.write(out)?,
    })
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EvalOptions {
    /// Drop `port_llm` so no checkpoint is needed.
    pub baselines_only: bool,
    /// Also write the long-format plot CSVs.
    pub plot_data: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub report: EvalReport,
    pub results: PathBuf,
    pub written: Vec<PathBuf>,
    pub manifest: PathBuf,
}

pub const RESULTS_FILE: &str = "results.csv";
pub const TRACES_FILE: &str = "port_traces.csv";
pub const PLOT_NMSE_FILE: &str = "plot_nmse_vs_step.csv";
pub const PLOT_SE_FILE: &str = "plot_se_vs_snr.csv";

pub fn cmd_evaluate(cfg: &RunConfig, checkpoint: Option<&Path>, out: &Path, opts: EvalOptions) -> Result<EvalSummary> {
    let mut cfg = cfg.clone();
    if opts.baselines_only {
        cfg.eval.baselines.retain(|b| *b != Baseline::PortLlm);
    }
    cfg.validate()?;
    let start = Instant::now();
    let needs_model = cfg.eval.baselines.contains(&Baseline::PortLlm);
    let mut inputs = Vec::new();
    let model = match (needs_model, checkpoint) {
        (true, Some(path)) => {
            let ck = load_checkpoint(path)?;
            inputs.push(Artifact {
                path: path.display().to_string(),
                sha256: ck.file_sha256.clone(),
            });
            Some(ck.model)
        }
        (true, None) => {
            return Err(Error::config(
                "--checkpoint",
                "port_llm is in eval.baselines; pass a checkpoint or --baselines-only",
            ))
        }
        (false, _) => None,
    };
    let report = evaluate(&cfg, model.as_ref())?;
    prepare_dir(out)?;

    let mut comments = vec![
        ("config_hash", cfg.hash()),
        ("seed", cfg.seed.to_string()),
        ("tool_version", TOOL_VERSION.to_string()),
    ];
    if let Some(a) = inputs.first() {
        comments.push(("checkpoint_sha256", a.sha256.clone()));
    }
    let mut names = vec![RESULTS_FILE];
    let write = |name: &str, f: &dyn Fn(&mut Vec<u8>) -> Result<()>| -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        std::fs::write(out.join(name), buf)?;
        Ok(())
    };
    write(RESULTS_FILE, &|b| write_results_csv(b, &report.rows, &comments))?;
    if !report.traces.is_empty() {
        write(TRACES_FILE, &|b| write_traces_csv(b, &report.traces, &comments))?;
        names.push(TRACES_FILE);
    }
    if opts.plot_data {
        write(PLOT_NMSE_FILE, &|b| write_nmse_steps_csv(b, &report.steps, &comments))?;
        write(PLOT_SE_FILE, &|b| write_se_snr_csv(b, &report.rows, &comments))?;
        names.extend([PLOT_NMSE_FILE, PLOT_SE_FILE]);
    }
    let manifest = RunManifest {
        command: "evaluate".into(),
        tool_version: TOOL_VERSION.into(),
        seed: cfg.seed,
        config_hash: cfg.hash(),
        config: cfg.clone(),
        inputs,
        outputs: names.iter().map(|n| Artifact::output(out, n)).collect::<Result<_>>()?,
        summary: serde_json::json!({
            "rows": report.rows.len(),
            "baselines": cfg.eval.baselines.iter().map(|b| b.as_str()).collect::<Vec<_>>(),
        }),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    Ok(EvalSummary {
        written: names.iter().map(|n| out.join(n)).collect(),
        results: out.join(RESULTS_FILE),
        manifest: manifest.write(out)?,
        report,
    })
}

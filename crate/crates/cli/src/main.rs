use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fnirs_skill::config::RunConfig;
use fnirs_skill::data::Region;
use fnirs_skill::model::{load_classifier, Mode};
use fnirs_skill::pipeline::{self, Dataset, Prediction};
use fnirs_skill::preprocess::Preprocessor;
use fnirs_skill::{eval, synth, Error};

const EXIT_ARGS: u8 = 2;
const EXIT_CONFIG: u8 = 3;
const EXIT_IO: u8 = 4;
const EXIT_DATA: u8 = 5;
const EXIT_TRAINING: u8 = 6;

#[derive(Parser, Debug)]
#[command(name = "fnirs-skill", version, about = "Skill classification from raw fNIRS recordings")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long, env = "FNIRS_SKILL_CONFIG", global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Folds trained at the same time.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
}

#[derive(Args, Debug, Clone)]
struct DataArgs {
    /// Dataset manifest; defaults to `data.manifest` of the configuration.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Region to run (repeatable).
    #[arg(long = "region", conflicts_with = "all_regions")]
    regions: Vec<Region>,
    /// Run every region of the montage.
    #[arg(long)]
    all_regions: bool,
    /// `end_to_end` (optical density in) or `baseline` (chromophores in).
    #[arg(long)]
    mode: Option<Mode>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Write preprocessed model inputs and targets for inspection.
    Preprocess(DataArgs),
    /// Pretrain the encoder-decoder on every trial of each region.
    Pretrain(DataArgs),
    /// Train classifiers on every trial of each region.
    Train {
        #[command(flatten)]
        data: DataArgs,
        /// Reuse pretrained encoders from this directory instead of pretraining.
        #[arg(long)]
        pretrained: Option<PathBuf>,
    },
    /// Score trials with trained classifiers.
    Infer {
        #[command(flatten)]
        data: DataArgs,
        /// Directory written by `train`.
        #[arg(long)]
        model: PathBuf,
    },
    /// k-fold cross-validation.
    Cv {
        #[command(flatten)]
        data: DataArgs,
        #[arg(short, long)]
        k: Option<usize>,
        /// Unstratified folds.
        #[arg(long)]
        plain: bool,
        /// Retention dataset scored by every fold's classifier.
        #[arg(long)]
        retention: Option<PathBuf>,
        /// Pretrain inside every fold.
        #[arg(long)]
        pretrain_per_fold: bool,
    },
    /// Leave-one-subject-out cross-validation.
    Loso(DataArgs),
    /// Balanced accuracy per within-day trial index.
    TrialCurve {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        from_day: Option<u32>,
    },
    /// One-sided signed-rank tests that the second results beat the first.
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Row label when the directories hold a single task.
        #[arg(long, default_value = "task")]
        task: String,
        /// Output file; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rebuild metrics and curve files from stored predictions.
    Report {
        /// Directory holding `predictions.csv`.
        results: PathBuf,
        /// Output directory; the results directory when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth { .. } => "synth",
            Command::Preprocess(_) => "preprocess",
            Command::Pretrain(_) => "pretrain",
            Command::Train { .. } => "train",
            Command::Infer { .. } => "infer",
            Command::Cv { .. } => "cv",
            Command::Loso(_) => "loso",
            Command::TrialCurve { .. } => "trial-curve",
            Command::Compare { .. } => "compare",
            Command::Report { .. } => "report",
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::UnknownRegion(_) => EXIT_CONFIG,
        Error::Io { .. } => EXIT_IO,
        Error::Diverged { .. } => EXIT_TRAINING,
        _ => EXIT_DATA,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_ARGS) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.common.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli.common, cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn base_config(common: &Common) -> Result<RunConfig, Error> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
        cfg.synth.seed = s;
    }
    if let Some(w) = common.workers {
        cfg.eval.workers = w;
    }
    Ok(cfg)
}

fn apply_data_args(cfg: &mut RunConfig, d: &DataArgs) {
    if let Some(m) = &d.manifest {
        cfg.data.manifest = Some(m.clone());
    }
    if d.all_regions {
        cfg.data.regions.clear();
    } else if !d.regions.is_empty() {
        cfg.data.regions = d.regions.clone();
    }
    if let Some(m) = d.mode {
        cfg.model.mode = m;
    }
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset, Error> {
    let path = cfg
        .data
        .manifest
        .as_ref()
        .ok_or_else(|| Error::Config("no dataset: pass --manifest or set data.manifest".into()))?;
    Dataset::load(path, cfg.data.apply_exclusions)
}

/// Resolved configuration of the run, next to its outputs.
fn write_run_manifest(dir: &Path, command: &str, cfg: &RunConfig) -> Result<(), Error> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.into(), source: e })?;
    let mut doc = toml::Table::new();
    doc.insert("command".into(), command.into());
    doc.insert("version".into(), env!("CARGO_PKG_VERSION").into());
    let resolved: toml::Table = toml::from_str(&cfg.to_toml_string()).expect("config round-trips");
    doc.insert("config".into(), toml::Value::Table(resolved));
    let path = dir.join("run_manifest.toml");
    std::fs::write(&path, toml::to_string(&doc).expect("manifest serialises")).map_err(|e| Error::Io { path, source: e })
}

fn write_csv_file(path: &Path, text: &str) -> Result<(), Error> {
    std::fs::write(path, text).map_err(|e| Error::Io { path: path.into(), source: e })
}

fn run(common: &Common, command: Command) -> Result<(), Error> {
    let name = command.name();
    let mut cfg = base_config(common)?;
    match command {
        Command::Synth { out } => {
            write_run_manifest(&out, name, &cfg)?;
            let m = synth::generate_dataset(&cfg.synth, &out)?;
            let s = m.summary();
            println!("{} trials ({} unsuccessful, {} successful) in {}", s.n_records, s.n_positive, s.n_negative, out.display());
        }
        Command::Preprocess(d) => {
            apply_data_args(&mut cfg, &d);
            write_run_manifest(&d.out, name, &cfg)?;
            let ds = load_dataset(&cfg)?;
            let pp = Preprocessor::new(&cfg.preprocess, &ds.montage)?;
            let mut dropped = String::from("subject,day,trial,reason\n");
            for r in &ds.dropped {
                dropped += &format!("{},{},{},{}\n", r.record.subject, r.record.day, r.record.trial, r.reason);
            }
            write_csv_file(&d.out.join("dropped.csv"), &dropped)?;
            for region in pipeline::regions(&cfg, &ds.montage)? {
                let dir = d.out.join(region.as_str());
                std::fs::create_dir_all(&dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
                for t in &ds.trials {
                    let stem = format!("{}_d{:02}_t{:02}", t.subject_id, t.day, t.trial_index);
                    let raw = pp.raw(t, region)?;
                    let full = pp.full(t, region)?;
                    write_series(&dir.join(format!("{stem}_od.csv")), &raw.columns, &raw.data)?;
                    write_series(&dir.join(format!("{stem}_hb.csv")), &full.columns, &full.data)?;
                }
            }
            println!("{} trials preprocessed, {} dropped", ds.trials.len(), ds.dropped.len());
        }
        Command::Pretrain(d) => {
            apply_data_args(&mut cfg, &d);
            write_run_manifest(&d.out, name, &cfg)?;
            let ds = load_dataset(&cfg)?;
            for region in pipeline::regions(&cfg, &ds.montage)? {
                let data = pipeline::prepare_region(&cfg, &ds, region, cfg.model.mode)?;
                let all: Vec<usize> = (0..data.prepared.len()).collect();
                let pre = pipeline::pretrain_on(&cfg, &data, &all, pipeline::region_seed(cfg.seed, region))?;
                pipeline::write_pretrained(&d.out.join(region.as_str()), &pre)?;
                println!("{region}: best loss {:.4e} at epoch {} (initial {:.4e})", pre.report.best_loss, pre.report.best_epoch, pre.report.initial_loss);
            }
        }
        Command::Train { data: d, pretrained } => {
            apply_data_args(&mut cfg, &d);
            write_run_manifest(&d.out, name, &cfg)?;
            let ds = load_dataset(&cfg)?;
            for region in pipeline::regions(&cfg, &ds.montage)? {
                let seed = pipeline::region_seed(cfg.seed, region);
                let data = pipeline::prepare_region(&cfg, &ds, region, cfg.model.mode)?;
                let all: Vec<usize> = (0..data.prepared.len()).collect();
                let pre = match &pretrained {
                    Some(dir) => pipeline::read_pretrained(&dir.join(region.as_str()), &data.model_cfg)?,
                    None => pipeline::pretrain_on(&cfg, &data, &all, seed)?,
                };
                let (clf, report) = pipeline::classifier_on(&cfg, &pre, &data, &all, seed)?;
                let dir = d.out.join(region.as_str());
                pipeline::write_pretrained(&dir, &pre)?;
                pipeline::write_classifier(&dir, &clf, &report)?;
                println!("{region}: classifier objective {:.4} -> {:.4}", report.initial_loss, report.best_loss);
            }
        }
        Command::Infer { data: d, model } => {
            apply_data_args(&mut cfg, &d);
            write_run_manifest(&d.out, name, &cfg)?;
            let ds = load_dataset(&cfg)?;
            let mut preds = Vec::new();
            for region in pipeline::regions(&cfg, &ds.montage)? {
                let data = pipeline::prepare_region(&cfg, &ds, region, cfg.model.mode)?;
                let dir = model.join(region.as_str());
                let pre = pipeline::read_pretrained(&dir, &data.model_cfg)?;
                let clf = load_classifier(dir.join(pipeline::CLASSIFIER_FILE), &data.model_cfg)?;
                let all: Vec<usize> = (0..data.prepared.len()).collect();
                let scores = pipeline::score(&pre, &clf, &data, &all)?;
                for (p, s) in data.prepared.iter().zip(scores) {
                    preds.push(Prediction {
                        region,
                        split: "infer".into(),
                        fold: 0,
                        subject: p.key.subject.clone(),
                        day: p.key.day,
                        trial: p.key.trial,
                        label: p.label.as_index(),
                        score: s,
                    });
                }
            }
            write_csv_file(&d.out.join("predictions.csv"), &pipeline::predictions_csv(&preds))?;
            let correct = preds.iter().filter(|p| (p.score >= cfg.train.threshold) == (p.label == 1)).count();
            println!("{} predictions, {correct} agree with the stored labels", preds.len());
        }
        Command::Cv { data: d, k, plain, retention, pretrain_per_fold } => {
            apply_data_args(&mut cfg, &d);
            if let Some(k) = k {
                cfg.eval.k = k;
            }
            if plain {
                cfg.eval.stratified = false;
            }
            if pretrain_per_fold {
                cfg.eval.pretrain_per_fold = true;
            }
            if let Some(r) = retention {
                cfg.data.retention_manifest = Some(r);
            }
            cfg.validate()?;
            write_run_manifest(&d.out, name, &cfg)?;
            let ds = load_dataset(&cfg)?;
            let ret = match &cfg.data.retention_manifest {
                Some(p) => Some(Dataset::load(p, cfg.data.apply_exclusions)?),
                None => None,
            };
            let results = pipeline::run_cv(&cfg, &ds, ret.as_ref(), cfg.model.mode, &d.out)?;
            for r in &results {
                let s = eval::summarize(&r.folds.iter().map(|f| &f.eval).collect::<Vec<_>>());
                println!("{}: accuracy {:.4} (sd {:.4})", r.region, s.mean["accuracy"], s.sd["accuracy"]);
            }
        }
        Command::Loso(d) => {
            apply_data_args(&mut cfg, &d);
            write_run_manifest(&d.out, name, &cfg)?;
            let ds = load_dataset(&cfg)?;
            for (region, r) in pipeline::run_loso(&cfg, &ds, cfg.model.mode, &d.out)? {
                println!("{region}: mean MCE {:.4}", r.mean_mce);
            }
        }
        Command::TrialCurve { data: d, from_day } => {
            apply_data_args(&mut cfg, &d);
            if let Some(day) = from_day {
                cfg.eval.trial_curve_from_day = day;
            }
            write_run_manifest(&d.out, name, &cfg)?;
            let ds = load_dataset(&cfg)?;
            let c = pipeline::run_trial_curve(&cfg, &ds, cfg.model.mode, &d.out)?;
            println!("trend: slope {:.4}, intercept {:.4}", c.slope, c.intercept);
        }
        Command::Compare { a, b, task, out } => {
            let text = pipeline::compare_dirs(&a, &b, &task)?;
            match out {
                Some(path) => {
                    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                        write_run_manifest(dir, name, &cfg)?;
                    }
                    write_csv_file(&path, &text)?;
                }
                None => print!("{text}"),
            }
        }
        Command::Report { results, out } => {
            let out = out.unwrap_or_else(|| results.clone());
            write_run_manifest(&out, name, &cfg)?;
            let preds = pipeline::read_predictions(&results.join("predictions.csv"))?;
            let rebuilt = pipeline::folds_from_predictions(&preds, cfg.train.threshold)?;
            if rebuilt.is_empty() {
                return Err(Error::InvalidInput("predictions.csv holds no cross-validation rows".into()));
            }
            pipeline::write_cv_results(&out, &rebuilt, &preds)?;
            println!("metrics for {} regions written to {}", rebuilt.len(), out.display());
        }
    }
    Ok(())
}

fn write_series(path: &Path, columns: &[String], data: &fnirs_skill::ndarray::Array2<f64>) -> Result<(), Error> {
    let mut text = columns.join(",");
    text.push('\n');
    for row in data.rows() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        text += &cells.join(",");
        text.push('\n');
    }
    write_csv_file(path, &text)
}

//! `mns` command-line interface.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{ExperimentConfig, Method};
use crate::error::{Error, Result, Stage};
use crate::nn::MlpModel;
use crate::noise::{
    corrupt_labels, gaussian_blobs, make_similarity_pairs, symmetric_transition, LabeledDataset, PairStrategy,
    TransitionMatrix,
};
use crate::pipeline::{
    evaluate_classifier, generalization_bound, prepare_data, run_estimation, run_experiment, BoundInputs,
    SCHEMA_VERSION,
};
use crate::sweep::run_sweep;

pub const OUT_DIR_ENV: &str = "MNS_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "mns", version, about = "Learn classifiers from noisy pairwise similarity labels")]
pub struct Cli {
    /// Directory for all written artifacts (default: $MNS_OUT_DIR or ./mns-out).
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a Gaussian-blob dataset.
    GenData(GenDataArgs),
    /// Corrupt the labels of a dataset with a transition matrix.
    Corrupt(CorruptArgs),
    /// Turn a (noisy-)labeled dataset into similarity pairs.
    Pairs(PairsArgs),
    /// Train the classifier for a method and save the checkpoint.
    Train(RunArgs),
    /// Run stage one only and write the estimated transition matrix.
    EstimateT(RunArgs),
    /// Evaluate a checkpoint on a clean-labeled dataset.
    Eval(EvalArgs),
    /// Evaluate the generalization bound.
    Bound(BoundArgs),
    /// Run one full experiment and write its report.
    Experiment(RunArgs),
    /// Run a grid of experiments over noise rates, methods and seeds.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    #[arg(long, default_value_t = 1000)]
    pub per_class: usize,
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
    #[arg(long, default_value_t = 4.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 1.0)]
    pub spread: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file name inside the output directory.
    #[arg(long, default_value = "data.txt")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CorruptArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Symmetric noise rate.
    #[arg(long, conflicts_with = "transition")]
    pub rho: Option<f64>,
    /// Transition matrix file.
    #[arg(long)]
    pub transition: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "noisy.txt")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PairsArgs {
    /// Dataset whose labels (already noisy) define similarity.
    #[arg(long)]
    pub data: PathBuf,
    /// Sample this many distinct pairs instead of enumerating all of them.
    #[arg(long)]
    pub sample: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "pairs.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Default, Clone)]
pub struct Overrides {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Comma-separated hidden widths, e.g. `64,64`.
    #[arg(long)]
    pub hidden: Option<String>,
    /// Drop bias terms from every layer.
    #[arg(long)]
    pub no_bias: bool,
    /// Initialize the classifier from the stage-one model.
    #[arg(long)]
    pub warm_start: bool,
    #[arg(long)]
    pub anchors: Option<usize>,
    #[arg(long)]
    pub pos_weight: Option<f64>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(r) = self.rho {
            cfg.noise.rho = r;
            cfg.noise.transition = None;
        }
        if let Some(m) = &self.method {
            cfg.method = Method::parse(m)?;
        }
        if let Some(e) = self.epochs {
            cfg.training.epochs = e;
        }
        if let Some(b) = self.batch_size {
            cfg.training.batch_size = b;
        }
        if let Some(lr) = self.lr {
            cfg.optimizer.learning_rate = lr;
        }
        if let Some(h) = &self.hidden {
            cfg.model.hidden = parse_list(h)?;
        }
        if self.no_bias {
            cfg.model.bias = false;
        }
        if self.warm_start {
            cfg.training.warm_start = true;
        }
        if let Some(k) = self.anchors {
            cfg.estimation.anchors_per_class = k;
        }
        if let Some(w) = self.pos_weight {
            cfg.training.pos_weight = w;
        }
        cfg.validate()
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// TOML configuration; omitted sections take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Debug, Args)]
pub struct BoundArgs {
    /// Input norm bound.
    #[arg(long = "B")]
    pub input_bound: f64,
    /// Number of classes.
    #[arg(long = "C")]
    pub classes: usize,
    #[arg(long)]
    pub depth: usize,
    /// Frobenius bounds, comma-separated or repeated, one per layer.
    #[arg(long, value_delimiter = ',', required = true)]
    pub frob: Vec<f64>,
    /// Loss bound.
    #[arg(long = "M")]
    pub loss_bound: f64,
    #[arg(long)]
    pub delta: f64,
    /// Number of training pairs.
    #[arg(long)]
    pub n: u64,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "0.2,0.3,0.4,0.5,0.6")]
    pub rhos: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "mcl,mns_estimated_t,mns_true_t")]
    pub methods: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    pub seeds: Vec<u64>,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[command(flatten)]
    pub overrides: Overrides,
}

fn parse_list(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| Error::invalid(format!("bad width `{t}`")))
        })
        .collect()
}

fn out_dir(cli: &Cli) -> Result<PathBuf> {
    let dir = cli
        .out_dir
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("mns-out"));
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn write(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable")
}

fn load_config(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    args.overrides.apply(&mut cfg)?;
    Ok(cfg)
}

#[derive(Serialize)]
struct FailedRun<'a> {
    schema_version: u32,
    status: &'static str,
    stage: Option<Stage>,
    message: String,
    config: &'a ExperimentConfig,
}

/// Parse `argv` (including the program name), run the subcommand, and return
/// the process exit status.
pub fn parse_and_dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            match e.stage() {
                Some(stage) => eprintln!("error [{stage}]: {e}"),
                None => eprintln!("error: {e}"),
            }
            1
        }
    }
}

fn dispatch(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::GenData(a) => {
            let dir = out_dir(cli)?;
            let d = gaussian_blobs(a.classes, a.per_class, a.dim, a.separation, a.spread, a.seed)?;
            let path = dir.join(&a.out);
            d.save(&path)?;
            println!("wrote {} examples to {}", d.len(), path.display());
        }
        Command::Corrupt(a) => {
            let dir = out_dir(cli)?;
            let mut d = LabeledDataset::load(&a.data)?;
            let t = match (&a.transition, a.rho) {
                (Some(p), _) => TransitionMatrix::load(p)?,
                (None, Some(r)) => symmetric_transition(d.num_classes, r)?,
                (None, None) => return Err(Error::invalid("pass --rho or --transition")),
            };
            d.labels = corrupt_labels(&d.labels, &t, a.seed)?;
            let path = dir.join(&a.out);
            d.save(&path)?;
            t.save(&dir.join("transition.txt"))?;
            println!("wrote corrupted labels to {}", path.display());
        }
        Command::Pairs(a) => {
            let dir = out_dir(cli)?;
            let d = LabeledDataset::load(&a.data)?;
            let strategy = a.sample.map_or(PairStrategy::AllPairs, PairStrategy::Sampled);
            let pairs = make_similarity_pairs(&d.labels, strategy, a.seed)?.into_training_view();
            let path = dir.join(&a.out);
            write(&path, &pairs.to_csv())?;
            println!(
                "wrote {} pairs ({:.4} similar) to {}",
                pairs.len(),
                pairs.positive_fraction(),
                path.display()
            );
        }
        Command::Train(a) | Command::Experiment(a) => {
            let dir = out_dir(cli)?;
            let cfg = load_config(a)?;
            let run = match run_experiment(&cfg) {
                Ok(r) => r,
                Err(e) => {
                    let failed = FailedRun {
                        schema_version: SCHEMA_VERSION,
                        status: "failed",
                        stage: e.stage(),
                        message: e.to_string(),
                        config: &cfg,
                    };
                    write(&dir.join("report.json"), &to_json(&failed))?;
                    return Err(e);
                }
            };
            write(&dir.join("report.json"), &run.report.to_json())?;
            write(&dir.join("curves.csv"), &run.report.curves_csv())?;
            if matches!(cli.command, Command::Train(_)) {
                run.classifier.save(&dir.join("classifier.model"))?;
                if let Some(m) = &run.stage1_model {
                    m.save(&dir.join("stage1.model"))?;
                }
            }
            if let Some(e) = &run.report.estimation {
                e.transition.save(&dir.join("t_hat.txt"))?;
            }
            for w in &run.report.warnings {
                eprintln!("warning: {w}");
            }
            println!(
                "{} seed={} rho={} test_accuracy={:.4}{}",
                cfg.method.name(),
                cfg.seed,
                cfg.noise.rho,
                run.report.test.accuracy,
                run.report
                    .estimation
                    .as_ref()
                    .and_then(|e| e.error)
                    .map_or(String::new(), |e| format!(" estimation_error={e:.4}"))
            );
        }
        Command::EstimateT(a) => {
            let dir = out_dir(cli)?;
            let cfg = load_config(a)?;
            let data = prepare_data(&cfg)?;
            let (model, stage, est) = run_estimation(&cfg, &data)?;
            est.transition.save(&dir.join("t_hat.txt"))?;
            data.truth.save(&dir.join("t_true.txt"))?;
            write(&dir.join("t_hat_heatmap.csv"), &est.transition.to_heatmap_csv())?;
            model.save(&dir.join("stage1.model"))?;
            #[derive(Serialize)]
            struct Out<'a> {
                schema_version: u32,
                stage1: &'a crate::pipeline::StageReport,
                estimation: &'a crate::estimation::EstimationReport,
            }
            write(
                &dir.join("estimation.json"),
                &to_json(&Out {
                    schema_version: SCHEMA_VERSION,
                    stage1: &stage,
                    estimation: &est,
                }),
            )?;
            print!("{}", est.transition.to_text());
            if let Some(e) = est.error {
                println!("estimation_error={e}");
            }
        }
        Command::Eval(a) => {
            let dir = out_dir(cli)?;
            let model = MlpModel::load(&a.model)?;
            let data = LabeledDataset::load(&a.data)?;
            let ev = evaluate_classifier(&model, &data)?;
            write(&dir.join("eval.json"), &to_json(&ev))?;
            println!("accuracy={} raw_accuracy={}", ev.accuracy, ev.raw_accuracy);
        }
        Command::Bound(a) => {
            let v = generalization_bound(&BoundInputs {
                input_bound: a.input_bound,
                classes: a.classes,
                depth: a.depth,
                frobenius: a.frob.clone(),
                loss_bound: a.loss_bound,
                delta: a.delta,
                pairs: a.n,
            })?;
            println!("{v}");
        }
        Command::Sweep(a) => {
            let dir = out_dir(cli)?;
            let mut cfg = match &a.config {
                Some(p) => ExperimentConfig::load(p)?,
                None => ExperimentConfig::default(),
            };
            a.overrides.apply(&mut cfg)?;
            let methods = a.methods.iter().map(|m| Method::parse(m)).collect::<Result<Vec<_>>>()?;
            let res = run_sweep(&cfg, &a.rhos, &methods, &a.seeds, a.jobs)?;
            write(&dir.join("sweep_cells.csv"), &res.cells_csv())?;
            write(&dir.join("sweep_table.csv"), &res.table_csv())?;
            write(&dir.join("sweep.json"), &to_json(&res))?;
            print!("{}", res.table_csv());
            if res.any_failed() {
                eprintln!("error: at least one run failed");
                return Ok(1);
            }
        }
    }
    Ok(0)
}

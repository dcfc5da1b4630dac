//! Command-line front end.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use ilpc::balance::WeightPolicy;
use ilpc::cleaner::CleanerConfig;
use ilpc::engine::{transduce, Variant};
use ilpc::episodes::{sample_episode, EpisodeSpec, QueryCount};
use ilpc::eval::{
    ablation_grid, accuracy, grid_rows, loss_histogram_experiment, predict_episode, run_benchmark,
    task_pipeline, AblationRow, AblationTable, BenchmarkSpec, Grid, PriorMode,
};
use ilpc::features::{
    generate_blobs, load_features, preprocess, save_features, BlobSpec, FeatureFormat, FeatureSet,
    PreprocessSpec,
};

#[derive(Debug, Parser)]
#[command(name = "ilpc", version, about = "Iterative label propagation and cleaning for few-shot tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Mean accuracy of one method over many sampled tasks.
    Bench(BenchArgs),
    /// Run a predefined grid of methods.
    Ablate(AblateArgs),
    /// Run a single task and print its predictions.
    Episode(EpisodeArgs),
    /// Loss distributions of clean and label-flipped examples.
    Losshist(LossArgs),
    /// Write a synthetic Gaussian-blob feature file.
    GenBlobs(GenArgs),
}

fn positive(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be >= 1".into()),
        Ok(v) => Ok(v),
        Err(e) => Err(e.to_string()),
    }
}

#[derive(Debug, Args)]
struct Common {
    /// Key=value file with default flag values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    features: PathBuf,
    /// csv, npy or raw; inferred from the extension when omitted.
    #[arg(long)]
    format: Option<FeatureFormat>,
    /// Comma list of l2, l1, pt, center, pca=<m>, or none.
    #[arg(long, default_value = "l2")]
    preprocess: PreprocessSpec,
    #[arg(long, default_value_t = 5, value_parser = positive)]
    n_way: usize,
    #[arg(long, default_value_t = 1, value_parser = positive)]
    k_shot: usize,
    /// Queries per class: a count or lo:hi.
    #[arg(long, default_value = "15")]
    queries: QueryCount,
    /// Unlabeled examples per class; nonzero selects the semi-supervised mode.
    #[arg(long, default_value_t = 0)]
    unlabeled: usize,
    #[arg(long, default_value = "full")]
    variant: Variant,
    #[arg(long, default_value = "uniform")]
    prior: PriorMode,
    #[arg(long, default_value = "uniform", value_parser = ["uniform", "entropy"])]
    weights: String,
    #[arg(long, default_value_t = 15, value_parser = positive)]
    k_neighbors: usize,
    #[arg(long, default_value_t = 0.8)]
    alpha: f64,
    #[arg(long, default_value_t = 3.0)]
    gamma: f64,
    #[arg(long, default_value_t = 3.0)]
    tau: f64,
    #[arg(long, default_value_t = 0.1)]
    eta: f64,
    /// Cleaner training iterations.
    #[arg(long, default_value_t = 1000, value_parser = positive)]
    iterations: usize,
    #[arg(long, default_value_t = 3, value_parser = positive)]
    selects_per_class: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, env = "ILPC_THREADS", value_parser = positive)]
    threads: Option<usize>,
    /// Also write results as CSV here.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Print per-task or per-iteration details.
    #[arg(long)]
    trace: bool,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
struct BenchArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 1000, value_parser = positive)]
    tasks: usize,
    /// Logistic regression on the support set instead of the pipeline.
    #[arg(long)]
    inductive: bool,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
struct AblateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 1000, value_parser = positive)]
    tasks: usize,
    /// table1, table7 or table9.
    #[arg(long)]
    grid: Grid,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
struct EpisodeArgs {
    #[command(flatten)]
    common: Common,
    /// Write the episode's splits as RAW_F32 files into this directory.
    #[arg(long)]
    dump: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
struct LossArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    format: Option<FeatureFormat>,
    #[arg(long, default_value = "l2")]
    preprocess: PreprocessSpec,
    /// Fraction of labels flipped.
    #[arg(long, default_value_t = 0.2)]
    noise: f64,
    #[arg(long, default_value_t = 500, value_parser = positive)]
    examples: usize,
    #[arg(long, default_value_t = 0.1)]
    eta: f64,
    #[arg(long, default_value_t = 1000, value_parser = positive)]
    iterations: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write `loss,is_clean` rows here.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
struct GenArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    format: Option<FeatureFormat>,
    #[arg(long, default_value_t = 20, value_parser = positive)]
    classes: usize,
    #[arg(long, default_value_t = 64, value_parser = positive)]
    dim: usize,
    #[arg(long, default_value_t = 100, value_parser = positive)]
    per_class: usize,
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    #[arg(long, default_value_t = 0.5)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

/// Parses `argv`, runs the subcommand and returns the process exit code.
pub fn main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let argv = match expand_config(argv) {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("error: {msg}");
            return 2;
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

/// Inserts the flags of a `--config` file right after the subcommand so that
/// explicit flags, which come later, take precedence.
fn expand_config(argv: Vec<OsString>) -> Result<Vec<OsString>, String> {
    let mut path = None;
    for (i, a) in argv.iter().enumerate() {
        let s = a.to_string_lossy();
        if s == "--config" {
            path = argv.get(i + 1).map(PathBuf::from);
        } else if let Some(p) = s.strip_prefix("--config=") {
            path = Some(PathBuf::from(p));
        }
    }
    let Some(path) = path else { return Ok(argv) };
    let text = fs::read_to_string(&path).map_err(|e| format!("config {}: {e}", path.display()))?;
    let flags = config_flags(&text).map_err(|e| format!("config {}: {e}", path.display()))?;
    let at = argv
        .iter()
        .skip(1)
        .position(|a| !a.to_string_lossy().starts_with('-'))
        .map_or(argv.len(), |p| p + 2);
    let mut out = argv[..at].to_vec();
    out.extend(flags);
    out.extend_from_slice(&argv[at..]);
    Ok(out)
}

/// `key = value` lines to `--key value`; boolean `true` becomes a bare flag
/// and `false` is dropped.
fn config_flags(text: &str) -> Result<Vec<OsString>, String> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected key=value", n + 1))?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || key == "config" {
            return Err(format!("line {}: bad key {key:?}", n + 1));
        }
        match value {
            "true" => out.push(format!("--{key}").into()),
            "false" => {}
            v => {
                out.push(format!("--{key}").into());
                out.push(v.into());
            }
        }
    }
    Ok(out)
}

fn load(path: &Path, format: Option<FeatureFormat>, spec: &PreprocessSpec) -> anyhow::Result<FeatureSet> {
    let format = match format.or_else(|| FeatureFormat::from_path(path)) {
        Some(f) => f,
        None => bail!("cannot infer the format of {}, pass --format", path.display()),
    };
    let fs = load_features(path, format).with_context(|| format!("loading {}", path.display()))?;
    Ok(preprocess(&fs, spec)?)
}

fn benchmark_spec(c: &Common, tasks: usize, inductive: bool) -> Result<BenchmarkSpec, Failure> {
    let mut spec = BenchmarkSpec {
        episode: EpisodeSpec {
            n_way: c.n_way,
            k_shot: c.k_shot,
            queries: c.queries,
            unlabeled_per_class: c.unlabeled,
            seed: c.seed,
        },
        prior: c.prior,
        inductive,
        n_tasks: tasks,
        seed: c.seed,
        threads: c.threads,
        ..Default::default()
    };
    let p = &mut spec.pipeline;
    p.variant = c.variant;
    p.graph.k = c.k_neighbors;
    p.graph.gamma = c.gamma;
    p.propagation.alpha = c.alpha;
    p.balance.tau = c.tau;
    p.balance.weight_policy = if c.weights == "entropy" { WeightPolicy::Entropy } else { WeightPolicy::Uniform };
    p.cleaner.learning_rate = c.eta;
    p.cleaner.iterations = c.iterations;
    p.cleaner.selects_per_class = c.selects_per_class;
    // Features are preprocessed once after loading.
    p.preprocess = PreprocessSpec::identity();
    spec.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(spec)
}

fn write_csv(path: &Option<PathBuf>, text: &str) -> anyhow::Result<()> {
    if let Some(p) = path {
        fs::write(p, text).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Bench(a) => {
            let spec = benchmark_spec(&a.common, a.tasks, a.inductive)?;
            let fs = load(&a.common.features, a.common.format, &a.common.preprocess)?;
            let result = run_benchmark(&fs, &spec).map_err(anyhow::Error::from)?;
            if a.common.trace {
                for (t, acc) in result.per_task_accuracy.iter().enumerate() {
                    eprintln!("task {t}: {acc:.4}");
                }
            }
            let table = AblationTable {
                rows: vec![AblationRow { label: spec.label(), n_tasks: spec.n_tasks, outcome: Ok(result) }],
            };
            print!("{}", table.render_text());
            write_csv(&a.common.csv, &table.render_csv())?;
        }
        Command::Ablate(a) => {
            let base = benchmark_spec(&a.common, a.tasks, false)?;
            let fs = load(&a.common.features, a.common.format, &a.common.preprocess)?;
            let table = ablation_grid(&fs, grid_rows(a.grid, &base));
            print!("{}", table.render_text());
            write_csv(&a.common.csv, &table.render_csv())?;
        }
        Command::Episode(a) => {
            let spec = benchmark_spec(&a.common, 1, false)?;
            let fs = load(&a.common.features, a.common.format, &a.common.preprocess)?;
            let ep = sample_episode(&fs, &spec.episode).map_err(anyhow::Error::from)?;
            if let Some(dir) = &a.dump {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
                for p in ep.write_raw(dir, "episode").map_err(anyhow::Error::from)? {
                    eprintln!("wrote {}", p.display());
                }
            }
            let predicted = if a.common.trace && ep.unlabeled_len() == 0 {
                let mut cfg = task_pipeline(&ep, &spec, spec.seed);
                cfg.keep_trace = true;
                let out = transduce(&ep, &cfg).map_err(anyhow::Error::from)?;
                for (i, t) in out.trace.iter().enumerate() {
                    println!(
                        "iteration {}: support={} remaining={} selected={:?} violation={:?} residual={:?}",
                        i + 1,
                        t.support_size,
                        t.queries_remaining,
                        t.selected,
                        t.marginal_violation,
                        t.max_solver_residual
                    );
                }
                out.predicted
            } else {
                predict_episode(&ep, &spec, spec.seed).map_err(anyhow::Error::from)?
            };
            let acc = accuracy(&ep, &predicted).map_err(anyhow::Error::from)?;
            let labels: Vec<String> = predicted.iter().map(|p| p.to_string()).collect();
            println!("predictions: {}", labels.join(" "));
            println!("accuracy: {:.2}%", 100.0 * acc);
            if let Some(p) = &a.common.csv {
                let mut text = String::from("query,predicted\n");
                for (i, l) in predicted.iter().enumerate() {
                    text.push_str(&format!("{i},{l}\n"));
                }
                write_csv(&Some(p.clone()), &text)?;
            }
        }
        Command::Losshist(a) => {
            if !(a.noise > 0.0 && a.noise < 1.0) {
                return Err(Failure::Usage(format!("--noise {} must lie in (0, 1)", a.noise)));
            }
            let cfg = CleanerConfig { learning_rate: a.eta, iterations: a.iterations, ..Default::default() };
            cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
            let fs = load(&a.features, a.format, &a.preprocess)?;
            let h = loss_histogram_experiment(&fs, a.noise, a.examples, &cfg, a.seed)
                .map_err(anyhow::Error::from)?;
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
            println!("clean: n={} mean loss={:.6}", h.clean.len(), mean(&h.clean));
            println!("noisy: n={} mean loss={:.6}", h.noisy.len(), mean(&h.noisy));
            println!("minimum-loss example is clean: {}", h.minimum_is_clean());
            write_csv(&a.csv, &h.to_csv())?;
        }
        Command::GenBlobs(a) => {
            let spec = BlobSpec {
                class_count: a.classes,
                dim: a.dim,
                mean_scale: a.scale,
                noise_sigma: a.sigma,
                examples_per_class: a.per_class,
                seed: a.seed,
            };
            spec.validate().map_err(|e| Failure::Usage(e.to_string()))?;
            let format = a
                .format
                .or_else(|| FeatureFormat::from_path(&a.out))
                .ok_or_else(|| Failure::Usage(format!("cannot infer the format of {}", a.out.display())))?;
            let fs = generate_blobs(&spec).map_err(anyhow::Error::from)?;
            save_features(&fs, &a.out, format)
                .with_context(|| format!("writing {}", a.out.display()))?;
            println!("wrote {} rows of dimension {} to {}", fs.len(), fs.dim(), a.out.display());
        }
    }
    Ok(())
}

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use ordpool::data::load_mnist;
use ordpool::export::{self, weight_rows};
use ordpool::gradcheck::{check_layer_with, CheckOptions, LayerKind, DEFAULT_STEP, DEFAULT_TOLERANCE, DEFAULT_TRIALS};
use ordpool::training::{
    compare_schemes, train_network, ExperimentData, LayerWeights, Network, NetworkConfig, TrainConfig,
};
use ordpool::{Error, PoolingKind};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_DIVERGENCE: u8 = 3;
const EXIT_GRADCHECK: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "opn", version, about = "Ordinal pooling network experiments on MNIST")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one network and write its metrics and pooling weights.
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = PoolingKind::Opn)]
        pooling: PoolingKind,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Compare pooling schemes over several seeds.
    Compare {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', default_values_t = [1u64, 2, 3])]
        seeds: Vec<u64>,
        #[arg(long, value_delimiter = ',', default_values_t = [PoolingKind::Max, PoolingKind::Lbpn, PoolingKind::Opn])]
        schemes: Vec<PoolingKind>,
    },
    /// Check every backward pass against central differences.
    Gradcheck {
        /// Restrict the check to these layers.
        #[arg(long, value_delimiter = ',')]
        layers: Option<Vec<LayerKind>>,
        #[arg(long, default_value_t = DEFAULT_TRIALS, value_parser = positive)]
        trials: usize,
        #[arg(long, default_value_t = DEFAULT_STEP)]
        step: f64,
        #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
        tolerance: f64,
        #[arg(long, hide = true)]
        corrupt_backward: bool,
    },
    /// Write pooling weights, optionally after some training epochs.
    ExportWeights {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = PoolingKind::Opn)]
        pooling: PoolingKind,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Training epochs [default: 20, or 0 for export-weights].
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, default_value_t = TrainConfig::default().batch_size, value_parser = positive)]
    batch_size: usize,
    #[arg(long, default_value_t = TrainConfig::default().learning_rate)]
    lr: f64,
    #[arg(long, env = "OPN_DATA_DIR", default_value = "data")]
    data_dir: PathBuf,
    #[arg(long, default_value = "runs")]
    out_dir: PathBuf,
    /// Train on the first K examples after the validation split.
    #[arg(long, value_parser = positive)]
    subset: Option<usize>,
    #[arg(long, default_value_t = 10_000, value_parser = positive)]
    val_size: usize,
}

fn positive(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(v) => Ok(v),
        Err(e) => Err(e.to_string()),
    }
}

impl RunArgs {
    fn train_config(&self, default_epochs: usize) -> anyhow::Result<TrainConfig> {
        let cfg = TrainConfig {
            epochs: self.epochs.unwrap_or(default_epochs),
            batch_size: self.batch_size,
            learning_rate: self.lr,
            ..TrainConfig::default()
        };
        if cfg.learning_rate.is_nan() || cfg.learning_rate <= 0.0 {
            return Err(Error::Config(format!("--lr must be positive, got {}", cfg.learning_rate)).into());
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn load(&self) -> anyhow::Result<ExperimentData> {
        let mnist =
            load_mnist(&self.data_dir).with_context(|| format!("loading MNIST from {}", self.data_dir.display()))?;
        let data = ExperimentData::from_mnist(mnist, self.val_size, self.subset)?;
        log::info!("{} train / {} val / {} test examples", data.train.len(), data.val.len(), data.test.len());
        Ok(data)
    }

    fn out_dir(&self) -> anyhow::Result<&Path> {
        fs::create_dir_all(&self.out_dir).with_context(|| format!("creating {}", self.out_dir.display()))?;
        Ok(&self.out_dir)
    }
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn write_pool_weights(dir: &Path, weights: &[(&str, LayerWeights)], stage: &str) -> anyhow::Result<()> {
    for (layer, w) in weights {
        let path = dir.join(format!("pool_weights_{layer}_{stage}.csv"));
        export::write_weights(create(&path)?, &weight_rows(&[(layer, w.clone())]))?;
        log::info!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_train(run: &RunArgs, pooling: PoolingKind, seed: u64, export_only: bool) -> anyhow::Result<()> {
    let default_epochs = if export_only { 0 } else { TrainConfig::default().epochs };
    let cfg = run.train_config(default_epochs)?;
    let data = run.load()?;
    let out = run.out_dir()?;
    let mut net = Network::new(&NetworkConfig::default().with_pooling(pooling).with_seed(seed))?;
    write_pool_weights(out, &net.pool_weights(), "before")?;
    let metrics = train_network(&mut net, &cfg, &data)?;
    write_pool_weights(out, &net.pool_weights(), "after")?;
    if export_only {
        return Ok(());
    }
    let path = out.join(format!("metrics_{}_{seed}.csv", pooling.name()));
    export::write_metrics(create(&path)?, &metrics)?;
    println!("metrics: {}", path.display());
    println!("min validation error: {:.4}", metrics.min_val_error());
    println!("test error: {:.4}", metrics.final_test_error());
    Ok(())
}

fn cmd_compare(run: &RunArgs, seeds: &[u64], schemes: &[PoolingKind]) -> anyhow::Result<()> {
    let cfg = run.train_config(TrainConfig::default().epochs)?;
    let data = run.load()?;
    let out = run.out_dir()?;
    let cmp = compare_schemes(schemes, seeds, &NetworkConfig::default(), &cfg, &data)?;
    for r in &cmp.runs {
        let path = out.join(format!("metrics_{}_{}.csv", r.scheme.name(), r.seed));
        export::write_metrics(create(&path)?, &r.metrics)?;
    }
    export::write_compare(create(&out.join("compare.csv"))?, &export::compare_summary_rows(&cmp))?;
    export::write_compare(create(&out.join("compare_runs.csv"))?, &export::compare_run_rows(&cmp))?;

    println!(
        "{:<12} {:>5} {:>12} {:>12} {:>12} {:>12}",
        "scheme", "runs", "mean val", "min val", "mean test", "min test"
    );
    for s in &cmp.summaries {
        println!(
            "{:<12} {:>5} {:>12.4} {:>12.4} {:>12.4} {:>12.4}",
            s.scheme.name(),
            s.runs,
            s.mean_min_val_err,
            s.best_min_val_err,
            s.mean_test_err,
            s.best_test_err
        );
    }
    if let Some(delta) = cmp.opn_minus_max() {
        println!("opn - max test accuracy: {:+.4}%", delta * 100.0);
    }
    if let Some(frac) = cmp.monotone_fraction() {
        println!("opn channels with strictly decreasing rank weights: {:.3}", frac);
    }
    println!("wrote {}", out.join("compare.csv").display());
    Ok(())
}

fn cmd_gradcheck(layers: Option<Vec<LayerKind>>, opts: CheckOptions) -> anyhow::Result<()> {
    let layers = layers.unwrap_or_else(|| LayerKind::ALL.to_vec());
    let mut failed = Vec::new();
    for kind in layers {
        match check_layer_with(kind, &opts) {
            Ok(report) => println!("{report}"),
            Err(Error::GradCheck(report)) => {
                println!("{report}");
                failed.push(kind.name());
            }
            Err(e) => return Err(e.into()),
        }
    }
    if !failed.is_empty() {
        return Err(GradcheckFailed(failed.join(", ")).into());
    }
    Ok(())
}

#[derive(Debug)]
struct GradcheckFailed(String);

impl std::error::Error for GradcheckFailed {}

impl std::fmt::Display for GradcheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "gradient check failed for: {}", self.0)
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.is::<GradcheckFailed>() {
        return EXIT_GRADCHECK;
    }
    match err.downcast_ref::<Error>() {
        Some(Error::Divergence { .. }) => EXIT_DIVERGENCE,
        Some(Error::GradCheck(_)) => EXIT_GRADCHECK,
        Some(Error::Io(_) | Error::Format(_) | Error::Data(_)) => EXIT_DATA,
        _ => EXIT_USAGE,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Train { run, pooling, seed } => cmd_train(&run, pooling, seed, false),
        Command::ExportWeights { run, pooling, seed } => cmd_train(&run, pooling, seed, true),
        Command::Compare { run, seeds, schemes } => cmd_compare(&run, &seeds, &schemes),
        Command::Gradcheck { layers, trials, step, tolerance, corrupt_backward } => {
            cmd_gradcheck(layers, CheckOptions { trials, step, tolerance, corrupt_backward, ..CheckOptions::default() })
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

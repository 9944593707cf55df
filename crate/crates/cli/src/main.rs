use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use xbar_guard::campaign::{adc_histogram_from_dir, emit_results, run_campaign, CampaignConfig};
use xbar_guard::fault::{FaultModel, DEFAULT_SIGMA_REL};
use xbar_guard::io::mnist::{load_mnist, MnistPaths};
use xbar_guard::io::model::save_model;
use xbar_guard::nn::mapped::{median, CodeHistogram};
use xbar_guard::nn::train::{exact_accuracy, train_reference_mlp, TrainOptions};

/// Full MNIST test split, used by `run --full`.
const FULL_TEST_SET: usize = 10_000;

#[derive(Parser)]
#[command(
    name = "xbar-guard",
    version,
    about = "ReRAM crossbar fault-injection campaigns"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the reference 784-hidden-10 MLP and save it as a model directory.
    Train(TrainArgs),
    /// Run a fault sweep and write results.csv and summary.json.
    Run(Box<RunArgs>),
    /// ADC output-code histogram of fault-free crossbar inference.
    Hist(HistArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Directory holding the four MNIST IDX files.
    #[arg(long, default_value = "data/mnist")]
    mnist_dir: PathBuf,
    /// Output model directory.
    #[arg(long, default_value = "models/mlp")]
    out: PathBuf,
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.1)]
    learning_rate: f32,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Train on the first N training images only.
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FaultKind {
    Sa0,
    Sa1,
    SoftGaussian,
    SoftRedraw,
}

#[derive(Args)]
struct RunArgs {
    /// TOML campaign config; flags given on the command line override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Directory with the MNIST test files; sets both test paths.
    #[arg(long)]
    mnist_dir: Option<PathBuf>,
    #[arg(long)]
    test_images: Option<PathBuf>,
    #[arg(long)]
    test_labels: Option<PathBuf>,
    #[arg(long, conflicts_with = "full")]
    subset: Option<usize>,
    /// Evaluate the whole 10000-image test split.
    #[arg(long)]
    full: bool,
    #[arg(long)]
    xbar_size: Option<usize>,
    #[arg(long)]
    adc_bits: Option<u32>,
    #[arg(long)]
    v_max: Option<f64>,
    #[arg(long)]
    g_on: Option<f64>,
    #[arg(long)]
    g_off: Option<f64>,
    #[arg(long, value_enum)]
    fault_model: Option<FaultKind>,
    /// Relative sigma for soft-gaussian faults.
    #[arg(long)]
    sigma_rel: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    rates: Option<Vec<f64>>,
    #[arg(long = "k", value_delimiter = ',')]
    k_values: Option<Vec<u32>>,
    #[arg(long)]
    trials: Option<u64>,
    /// Run guarded inference even if the config file turns it off.
    #[arg(long, conflicts_with = "no_guard")]
    guard: bool,
    /// Run unguarded crossbar inference.
    #[arg(long)]
    no_guard: bool,
    /// Test every Nth MVM of each crossbar instead of every MVM.
    #[arg(long)]
    check_interval: Option<u32>,
    #[arg(long)]
    retry_budget: Option<u32>,
    #[arg(long)]
    workers: Option<usize>,
    /// Results directory.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Record per-trial wall clock in the CSV.
    #[arg(long)]
    timing: bool,
    /// Also write every injected fault to faults.csv.
    #[arg(long)]
    audit_faults: bool,
}

#[derive(Args)]
struct HistArgs {
    #[arg(long, default_value = "models/mlp")]
    model: PathBuf,
    #[arg(long, default_value = "data/mnist")]
    mnist_dir: PathBuf,
    #[arg(long, default_value_t = 100)]
    samples: usize,
    #[arg(long, default_value_t = 128)]
    xbar_size: usize,
    #[arg(long, default_value_t = 8)]
    adc_bits: u32,
    /// Write the histogram as JSON here instead of CSV on stdout.
    #[arg(long)]
    json: Option<PathBuf>,
}

impl RunArgs {
    fn resolve(self) -> Result<CampaignConfig> {
        let mut cfg = match &self.config {
            Some(path) => CampaignConfig::from_toml_file(path)
                .with_context(|| format!("reading config {}", path.display()))?,
            None => CampaignConfig::default(),
        };
        cfg.seed = self.seed;
        if let Some(dir) = &self.mnist_dir {
            let p = MnistPaths::in_dir(dir);
            cfg.test_images = p.test_images;
            cfg.test_labels = p.test_labels;
        }
        macro_rules! take {
            ($($field:ident),*) => { $( if let Some(v) = self.$field { cfg.$field = v; } )* };
        }
        take!(
            model,
            test_images,
            test_labels,
            subset,
            xbar_size,
            adc_bits,
            v_max,
            g_on,
            g_off
        );
        take!(
            rates,
            k_values,
            trials,
            check_interval,
            retry_budget,
            workers,
            output
        );
        if self.full {
            cfg.subset = FULL_TEST_SET;
        }
        match (self.fault_model, self.sigma_rel) {
            (Some(FaultKind::Sa0), _) => cfg.fault_model = FaultModel::Sa0,
            (Some(FaultKind::Sa1), _) => cfg.fault_model = FaultModel::Sa1,
            (Some(FaultKind::SoftRedraw), _) => cfg.fault_model = FaultModel::SoftRedraw,
            (Some(FaultKind::SoftGaussian), sigma) => {
                cfg.fault_model = FaultModel::SoftGaussian {
                    sigma_rel: sigma.unwrap_or(DEFAULT_SIGMA_REL),
                }
            }
            (None, Some(sigma)) => match &mut cfg.fault_model {
                FaultModel::SoftGaussian { sigma_rel } => *sigma_rel = sigma,
                _ => bail!("--sigma-rel only applies to the soft-gaussian fault model"),
            },
            (None, None) => {}
        }
        if self.guard {
            cfg.guard = true;
        }
        if self.no_guard {
            cfg.guard = false;
        }
        if self.timing {
            cfg.record_timing = true;
        }
        if self.audit_faults {
            cfg.audit_faults = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn train(args: TrainArgs) -> Result<()> {
    let paths = MnistPaths::in_dir(&args.mnist_dir);
    let train_set = load_mnist(&paths.train_images, &paths.train_labels)?;
    let opts = TrainOptions {
        hidden: args.hidden,
        epochs: args.epochs,
        batch_size: args.batch_size,
        learning_rate: args.learning_rate,
        seed: args.seed,
        limit: args.limit,
    };
    let graph = train_reference_mlp(&train_set, &opts)?;
    save_model(&graph, &args.out)?;
    let test_set = load_mnist(&paths.test_images, &paths.test_labels)?;
    let acc = exact_accuracy(&graph, &test_set)?;
    println!(
        "saved {} to {} (test accuracy {acc:.4})",
        graph.name,
        args.out.display()
    );
    Ok(())
}

fn run(args: RunArgs) -> Result<()> {
    let cfg = args.resolve()?;
    let result = run_campaign(&cfg)?;
    let written = emit_results(&result, &cfg.output)?;
    println!(
        "{} trials on {} images ({:?}); clean crossbar accuracy {:.4}; {:.1}s",
        result.records.len(),
        result.evaluated_images,
        result.inference_mode,
        result.clean_accuracy,
        result.wall_seconds
    );
    for p in &result.points {
        println!(
            "  rate {:.4} k {}: accuracy {:.4} +- {:.4}, detection {:.4}",
            p.rate, p.k, p.accuracy.mean, p.accuracy.std, p.detection_rate.mean
        );
    }
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn hist(args: HistArgs) -> Result<()> {
    let paths = MnistPaths::in_dir(&args.mnist_dir);
    let data = load_mnist(&paths.test_images, &paths.test_labels)?;
    let cfg = CampaignConfig {
        xbar_size: args.xbar_size,
        adc_bits: args.adc_bits,
        ..Default::default()
    };
    let mapping = cfg.mapping(1);
    mapping.validate()?;
    let hist = adc_histogram_from_dir(&args.model, &mapping, &data, args.samples)?;
    if let Some(path) = &args.json {
        write_json(path, &hist)?;
        println!("wrote {}", path.display());
        return Ok(());
    }
    let pooled = hist.pooled();
    let layers: Vec<usize> = hist.layers.keys().copied().collect();
    let mut header = String::from("code,pooled");
    for l in &layers {
        header.push_str(&format!(",layer{l}"));
    }
    println!("{header}");
    for (code, count) in pooled.iter().enumerate() {
        let mut line = format!("{code},{count}");
        for l in &layers {
            line.push_str(&format!(",{}", hist.layers[l].counts[code]));
        }
        println!("{line}");
    }
    eprintln!(
        "{} codes, pooled median {}",
        hist.total(),
        median(&pooled).map_or("-".into(), |m| m.to_string())
    );
    Ok(())
}

fn write_json(path: &Path, hist: &CodeHistogram) -> Result<()> {
    let text = serde_json::to_string_pretty(hist)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Train(a) => train(a),
        Command::Run(a) => run(*a),
        Command::Hist(a) => hist(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

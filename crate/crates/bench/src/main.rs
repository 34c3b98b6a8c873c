use std::f64::consts::PI;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use re_bench::{
    emit_results, format_summary, quartic_row, quartic_table, run_experiment, summarize,
    CloudSource, ExperimentConfig, Format, MatrixSource, ProblemConfig,
};
use residual_expansion::deconv::Regularization;
use residual_expansion::kmeans::Init;
use residual_expansion::quartic::QuarticInstance;
use residual_expansion::registration::TrialSpec;

#[derive(Parser)]
#[command(name = "re-bench", version, about = "Residual expansion experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum InitPolicy {
    Random,
    #[value(name = "kmeans++")]
    KmeansPlusPlus,
    Identity,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutFormat {
    Jsonl,
    Csv,
}

#[derive(Args)]
struct Common {
    /// Initial penalty in (0, 1]; defaults per problem.
    #[arg(long)]
    mu0: Option<f64>,
    /// Ramp length; defaults per problem.
    #[arg(long = "T")]
    steps: Option<usize>,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    /// Base seed; trial i uses seed + i.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Seed of the synthetic dataset shared by all trials.
    #[arg(long, default_value_t = 1)]
    data_seed: u64,
    #[arg(long, value_enum)]
    init: Option<InitPolicy>,
    /// Per-trial reports go here; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = OutFormat::Jsonl)]
    format: OutFormat,
    /// Refinement sweeps after the ramp (also the baseline iteration cap).
    #[arg(long, default_value_t = 100)]
    refine_iters: usize,
    /// Worker threads; all cores when absent.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// k-means: random, k-means++, Hartigan and RE arms.
    Kmeans {
        #[command(flatten)]
        common: Common,
        /// Points CSV, one point per row; synthetic blobs when absent.
        #[arg(long)]
        points: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(long, default_value_t = 6.0)]
        separation: f64,
        /// Blob size ratio; below 1 gives imbalanced blobs.
        #[arg(long, default_value_t = 0.8)]
        balance: f64,
    },
    /// Rigid registration: ICP and RE-ICP per rotation angle.
    Register {
        #[command(flatten)]
        common: Common,
        /// XYZ cloud; synthetic curved surface when absent.
        #[arg(long)]
        cloud: Option<PathBuf>,
        #[arg(long, default_value_t = 500)]
        points: usize,
        /// Rotation angles in degrees.
        #[arg(long, value_delimiter = ',', default_values_t = [60.0, 75.0, 90.0])]
        angles: Vec<f64>,
        #[arg(long, default_value_t = 0.03)]
        noise: f64,
        /// Keep about 60% of the target.
        #[arg(long)]
        partial: bool,
        #[arg(long, default_value_t = TrialSpec::DEFAULT_THRESHOLD)]
        threshold: f64,
    },
    /// Optimized product quantization: plain alternating and RE arms.
    Opq {
        #[command(flatten)]
        common: Common,
        /// SIFT-style .fvecs file; correlated Gaussians when absent.
        #[arg(long)]
        fvecs: Option<PathBuf>,
        /// Read at most this many vectors.
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        #[arg(long, default_value_t = 32)]
        dim: usize,
        #[arg(long, default_value_t = 0.9)]
        decay: f64,
        #[arg(long = "subspaces", short = 'M', default_value_t = 4)]
        subspaces: usize,
        #[arg(long, default_value_t = 16)]
        k: usize,
    },
    /// Toy blind deconvolution: plain (alg1) and ADMM-weighted (alg2) RE arms.
    Deconv {
        #[command(flatten)]
        common: Common,
        /// Observed signal, one value per row; toy instances when absent.
        #[arg(long)]
        signal: Option<PathBuf>,
        #[arg(long, default_value_t = 128)]
        n: usize,
        #[arg(long, default_value_t = 9)]
        kernel_len: usize,
        #[arg(long, default_value_t = 0.01)]
        noise: f64,
        #[arg(long, default_value_t = Regularization::default().gamma_signal)]
        gamma_signal: f64,
        #[arg(long, default_value_t = Regularization::default().gamma_kernel)]
        gamma_kernel: f64,
    },
    /// Per-instance table of quartic minima, RE constants and verdicts.
    Quartic {
        #[command(flatten)]
        common: Common,
        /// Analyse a single instance instead of sampling.
        #[arg(long, requires = "y2")]
        y1: Option<f64>,
        #[arg(long, requires = "y1")]
        y2: Option<f64>,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [0.2, 2.0])]
        y1_range: Vec<f64>,
        #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [-1.0, 1.0])]
        y2_range: Vec<f64>,
    },
}

fn format_of(common: &Common) -> Format {
    match common.format {
        OutFormat::Jsonl => Format::JsonLines,
        OutFormat::Csv => Format::Csv,
    }
}

fn open_out(common: &Common) -> anyhow::Result<Box<dyn Write>> {
    Ok(match &common.out {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot write {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn config(common: &Common, problem: ProblemConfig, mu0: f64, steps: usize) -> ExperimentConfig {
    ExperimentConfig {
        problem,
        mu0: common.mu0.unwrap_or(mu0),
        steps: common.steps.unwrap_or(steps),
        trials: common.trials,
        base_seed: common.seed,
        data_seed: common.data_seed,
        refine_iters: common.refine_iters,
    }
}

fn experiment(cmd: &Command) -> anyhow::Result<(ExperimentConfig, &Common)> {
    Ok(match cmd {
        Command::Kmeans {
            common,
            points,
            k,
            n,
            dim,
            separation,
            balance,
        } => {
            let init = match common.init {
                None | Some(InitPolicy::Random) => Init::Random,
                Some(InitPolicy::KmeansPlusPlus) => Init::KMeansPlusPlus,
                Some(InitPolicy::Identity) => bail!("kmeans accepts --init random or kmeans++"),
            };
            let data = match points {
                Some(p) => MatrixSource::PointsCsv(p.clone()),
                None => MatrixSource::Clusters {
                    n: *n,
                    d: *dim,
                    k_true: *k,
                    separation: *separation,
                    balance: *balance,
                },
            };
            (
                config(
                    common,
                    ProblemConfig::Kmeans { data, k: *k, init },
                    0.01,
                    300,
                ),
                common,
            )
        }
        Command::Register {
            common,
            cloud,
            points,
            angles,
            noise,
            partial,
            threshold,
        } => {
            if !matches!(common.init, None | Some(InitPolicy::Identity)) {
                bail!("register accepts --init identity");
            }
            let cloud = match cloud {
                Some(p) => CloudSource::Xyz(p.clone()),
                None => CloudSource::Surface { points: *points },
            };
            let problem = ProblemConfig::Register {
                cloud,
                angles: angles.iter().map(|deg| deg * PI / 180.0).collect(),
                noise: *noise,
                partial: *partial,
                threshold: *threshold,
            };
            (config(common, problem, 0.1, 30), common)
        }
        Command::Opq {
            common,
            fvecs,
            limit,
            n,
            dim,
            decay,
            subspaces,
            k,
        } => {
            let random_rotation = match common.init {
                None | Some(InitPolicy::Identity) => false,
                Some(InitPolicy::Random) => true,
                Some(InitPolicy::KmeansPlusPlus) => bail!("opq accepts --init identity or random"),
            };
            let data = match fvecs {
                Some(p) => MatrixSource::Fvecs {
                    path: p.clone(),
                    limit: *limit,
                },
                None => MatrixSource::Correlated {
                    n: *n,
                    d: *dim,
                    decay: *decay,
                },
            };
            let problem = ProblemConfig::Opq {
                data,
                subspaces: *subspaces,
                k: *k,
                random_rotation,
            };
            (config(common, problem, 0.5, 100), common)
        }
        Command::Deconv {
            common,
            signal,
            n,
            kernel_len,
            noise,
            gamma_signal,
            gamma_kernel,
        } => {
            if common.init.is_some() {
                bail!("deconv always starts from x = y and a uniform kernel; drop --init");
            }
            let problem = ProblemConfig::Deconv {
                signal: signal.clone(),
                n: *n,
                kernel_len: *kernel_len,
                noise: *noise,
                reg: Regularization::new(*gamma_signal, *gamma_kernel),
            };
            (config(common, problem, 0.2, 100), common)
        }
        Command::Quartic { .. } => unreachable!("handled separately"),
    })
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();

    if let Command::Quartic {
        common,
        y1,
        y2,
        samples,
        y1_range,
        y2_range,
    } = &cli.command
    {
        let rows = match (y1, y2) {
            (Some(a), Some(b)) => vec![quartic_row(&QuarticInstance::new(*a, *b))],
            _ => quartic_table(
                *samples,
                (y1_range[0], y1_range[1]),
                (y2_range[0], y2_range[1]),
                common.seed,
            )?,
        };
        let two = rows.iter().filter(|r| r.theta2.is_some()).count();
        let holds = rows
            .iter()
            .filter(|r| r.verdict.starts_with("holds"))
            .count();
        eprintln!("{} instances, {two} with two minima, deeper minimum has the larger constant in {holds}", rows.len());
        emit_results(&rows, format_of(common), open_out(common)?)?;
        return Ok(());
    }

    let (config, common) = experiment(&cli.command)?;
    if let Some(t) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()?;
    }
    let reports = run_experiment(&config)?;
    eprint!("{}", format_summary(&summarize(&reports)));
    emit_results(&reports, format_of(common), open_out(common)?)?;
    Ok(())
}

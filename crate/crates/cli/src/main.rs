use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use vodsim::adversary::{
    generate_stressless, validate_sequence, AdversaryKind, EventSequence, PopularityTrace,
};
use vodsim::allocation::allocate;
use vodsim::bounds::feasibility_report_with;
use vodsim::configfile::load_config;
use vodsim::engine::Mode;
use vodsim::experiment::{run_experiment, Experiment, ExperimentSpec, TraceRecipe};
use vodsim::model::{validate_config, SystemConfig};

#[derive(Parser)]
#[command(name = "vodsim", version, about = "Peer-assisted video-on-demand simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum AdversaryArg {
    Random,
    Zipf,
    Greedy,
    Trace,
    Stressless,
}

#[derive(Subcommand)]
enum Command {
    /// Run a sweep or a single simulation and write CSV files.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        /// k-sweep, s-sweep, hetero-sweep, failure-sweep or single.
        #[arg(long, default_value = "k-sweep")]
        experiment: String,
        /// Comma-separated adversaries.
        #[arg(long, value_delimiter = ',', default_value = "random")]
        adversary: Vec<AdversaryArg>,
        /// static, distributed or maxflow.
        #[arg(long, default_value = "static")]
        mode: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        runs: usize,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Comma-separated sweep values replacing the default grid.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
        /// Popularity trace, one `video_id,weight` per line.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// random-subset or top-m; cuts the trace to the catalog size.
        #[arg(long)]
        trace_recipe: Option<String>,
        #[arg(long, default_value_t = 2.0)]
        zipf_gamma: f64,
        #[arg(long, default_value_t = 0.01)]
        p_f: f64,
        #[arg(long, default_value_t = 2)]
        swarms_per_video: u32,
        /// Horizon of `single` runs, in ticks.
        #[arg(long, default_value_t = 200)]
        ticks: u64,
    },
    /// Print the closed-form replication and upload thresholds.
    Bounds {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Constant of the logarithmic replication estimate.
        #[arg(long, default_value_t = 1.0)]
        c: f64,
        /// key=value lines instead of text.
        #[arg(long)]
        raw: bool,
    },
    /// Check a config; exits nonzero on structural errors.
    Validate {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Print the stripe placement as `video,stripe,copy,box` lines.
    Allocate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a stress-less event sequence.
    Generate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Number of events; defaults to n.
        #[arg(long)]
        events: Option<usize>,
        #[arg(long, default_value_t = 0.01)]
        p_f: f64,
        #[arg(long, default_value_t = 2)]
        swarms_per_video: u32,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check an event sequence against the growth bound and activity floor.
    CheckSequence {
        #[arg(long)]
        config: Option<PathBuf>,
        sequence: PathBuf,
        #[arg(long)]
        swarms_per_video: Option<u32>,
    },
}

fn config(path: Option<&Path>) -> Result<SystemConfig> {
    let cfg = match path {
        Some(p) => load_config(p).with_context(|| format!("loading {}", p.display()))?,
        None => SystemConfig::simulation_setup(10),
    };
    let errors: Vec<String> = validate_config(&cfg)
        .into_iter()
        .filter(|v| v.is_error())
        .map(|v| v.to_string())
        .collect();
    if !errors.is_empty() {
        bail!("invalid config:\n{}", errors.join("\n"));
    }
    Ok(cfg)
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn run(
    config_path: Option<&Path>,
    experiment: &str,
    adversary: &[AdversaryArg],
    mode: &str,
    seed: u64,
    runs: usize,
    out: &Path,
    values: Option<Vec<f64>>,
    trace: Option<&Path>,
    trace_recipe: Option<&str>,
    zipf_gamma: f64,
    p_f: f64,
    swarms_per_video: u32,
    ticks: u64,
) -> Result<()> {
    let experiment: Experiment = experiment.parse()?;
    let mode: Mode = mode.parse().map_err(anyhow::Error::msg)?;
    let mut spec = ExperimentSpec::new(experiment);
    spec.base = config(config_path)?;
    spec.mode = mode;
    spec.seed = seed;
    spec.runs = runs;
    spec.values = values;
    spec.ticks = ticks;
    spec.trace_recipe = trace_recipe
        .map(str::parse::<TraceRecipe>)
        .transpose()
        .map_err(anyhow::Error::msg)?;
    let loaded = trace
        .map(|p| PopularityTrace::load(p).with_context(|| format!("loading {}", p.display())))
        .transpose()?;
    spec.adversaries = adversary
        .iter()
        .map(|a| {
            Ok(match a {
                AdversaryArg::Random => AdversaryKind::Random,
                AdversaryArg::Zipf => AdversaryKind::Zipf { gamma: zipf_gamma },
                AdversaryArg::Greedy => AdversaryKind::Greedy,
                AdversaryArg::Trace => match &loaded {
                    Some(t) => AdversaryKind::Trace(t.clone()),
                    None => bail!("the trace adversary needs --trace"),
                },
                AdversaryArg::Stressless => AdversaryKind::Stressless {
                    p_f,
                    swarms_per_video,
                },
            })
        })
        .collect::<Result<_>>()?;
    let result = run_experiment(&spec)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for (name, text) in result.files() {
        let path = out.join(name);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        println!("{}", path.display());
    }
    for s in &result.summaries {
        eprintln!(
            "{}={} {}: mean {:.2} sd {:.2} (min {}, max {}, ceiling {:.0})",
            experiment.parameter(),
            s.x,
            s.adversary,
            s.mean,
            s.sd,
            s.min,
            s.max,
            s.ceiling
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run {
            config,
            experiment,
            adversary,
            mode,
            seed,
            runs,
            out,
            values,
            trace,
            trace_recipe,
            zipf_gamma,
            p_f,
            swarms_per_video,
            ticks,
        } => run(
            config.as_deref(),
            &experiment,
            &adversary,
            &mode,
            seed,
            runs,
            &out,
            values,
            trace.as_deref(),
            trace_recipe.as_deref(),
            zipf_gamma,
            p_f,
            swarms_per_video,
            ticks,
        )?,
        Command::Bounds { config: path, c, raw } => {
            let report = feasibility_report_with(&config(path.as_deref())?, c);
            print!("{}", if raw { report.to_key_values() } else { report.to_text() });
        }
        Command::Validate { config: path } => {
            let cfg = match path.as_deref() {
                Some(p) => load_config(p).with_context(|| format!("loading {}", p.display()))?,
                None => SystemConfig::simulation_setup(10),
            };
            let found = validate_config(&cfg);
            for v in &found {
                println!("{v}");
            }
            if found.iter().any(|v| v.is_error()) {
                return Ok(ExitCode::FAILURE);
            }
            if found.is_empty() {
                println!("ok");
            }
        }
        Command::Allocate {
            config: path,
            seed,
            out,
        } => {
            let alloc = allocate(&config(path.as_deref())?, seed)?;
            emit(out.as_deref(), &alloc.to_table())?;
        }
        Command::Generate {
            config: path,
            events,
            p_f,
            swarms_per_video,
            seed,
            out,
        } => {
            let cfg = config(path.as_deref())?;
            let limit = 1.0 / cfg.v_s as f64;
            if !(0.0..limit).contains(&p_f) {
                bail!("p_f = {p_f} must lie in [0, {limit})");
            }
            if swarms_per_video == 0 {
                bail!("swarms-per-video must be positive");
            }
            let g = generate_stressless(&cfg, p_f, swarms_per_video, events.unwrap_or(cfg.n), seed);
            for w in &g.warnings {
                eprintln!("warning: {w}");
            }
            emit(out.as_deref(), &g.sequence.to_string())?;
        }
        Command::CheckSequence {
            config: path,
            sequence,
            swarms_per_video,
        } => {
            let cfg = config(path.as_deref())?;
            let text = fs::read_to_string(&sequence)
                .with_context(|| format!("reading {}", sequence.display()))?;
            let seq = EventSequence::parse(&text)?;
            let found = validate_sequence(&cfg, &seq, swarms_per_video);
            for v in &found {
                println!("{v}");
            }
            if !found.is_empty() {
                return Ok(ExitCode::FAILURE);
            }
            println!("ok: {} events", seq.len());
        }
    }
    Ok(ExitCode::SUCCESS)
}

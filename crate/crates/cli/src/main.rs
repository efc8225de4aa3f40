use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use impact_core::config::{PathsConfig, RunConfig};
use impact_core::pipeline::Pipeline;
use impact_core::synth::{synth_dataset, write_dataset, SynthConfig};

/// Label, predict and evaluate the impact of traffic incidents.
#[derive(Parser)]
#[command(name = "impact", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured random seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dataset directory written by `synth`; replaces the configured input paths.
    #[arg(long)]
    data: Option<PathBuf>,
}

/// Comma-separated list of `k_top` values.
#[derive(Clone, Debug)]
struct KList(Vec<usize>);

fn parse_ks(s: &str) -> Result<KList, String> {
    s.split(',')
        .map(|k| {
            k.trim()
                .parse::<usize>()
                .map_err(|e| format!("bad k `{k}`: {e}"))
        })
        .collect::<Result<_, _>>()
        .map(KList)
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with designed impact classes.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "data")]
        out: PathBuf,
        /// Overrides the configured number of incidents.
        #[arg(long)]
        incidents: Option<usize>,
    },
    /// Compute ground-truth labels and traffic features.
    Label(Common),
    /// Read incident features from the truncated logs.
    Extract(Common),
    /// Select in-context examples on the training set.
    SelectExamples(Common),
    /// Predict the test set with the selected examples and the baselines.
    Predict(Common),
    /// Compute metrics and write the report tables.
    Evaluate(Common),
    /// Test-set scores for several numbers of top candidates.
    SweepK {
        #[command(flatten)]
        common: Common,
        /// Comma-separated k values; the configured list when absent.
        #[arg(value_parser = parse_ks)]
        ks: Option<KList>,
    },
    /// Selected examples against uniformly random training examples.
    CompareRandom(Common),
    /// All stages in order.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_ks)]
        k_sweep: Option<KList>,
    },
    /// Print a default configuration file.
    DefaultConfig {
        /// `run` or `synth`.
        #[arg(default_value = "run")]
        kind: String,
    },
}

fn run_config(common: &Common) -> Result<RunConfig> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(data) = &common.data {
        let out = config.paths.output_dir.clone();
        config.paths = PathsConfig {
            scaffold: config.paths.scaffold.clone(),
            ..PathsConfig::for_dataset(data, &out)
        };
    }
    if let Some(out) = &common.out {
        config.paths.output_dir = out.clone();
    }
    if let Some(seed) = common.seed {
        config = config.with_seed(seed);
    }
    Ok(config)
}

fn pipeline(common: &Common) -> Result<Pipeline> {
    Ok(Pipeline::new(run_config(common)?)?)
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Synth {
            config,
            seed,
            out,
            incidents,
        } => {
            let mut c = match config {
                Some(path) => SynthConfig::load(&path)?,
                None => SynthConfig::default(),
            };
            if let Some(seed) = seed {
                c.rng_seed = seed;
            }
            if let Some(n) = incidents {
                c.incidents = n;
            }
            let dataset = synth_dataset(&c)?;
            let paths = write_dataset(&out, &dataset)?;
            println!(
                "wrote {} incidents and {} sensors to {}",
                dataset.incidents.len(),
                dataset.speed.series().len(),
                out.display()
            );
            log::debug!("{paths:?}");
        }
        Command::Label(common) => {
            let p = pipeline(&common)?;
            let inputs = p.load_inputs()?;
            let labels = p.label(&inputs)?;
            println!(
                "{} labels written to {}",
                labels.len(),
                p.layout.labels().display()
            );
        }
        Command::Extract(common) => {
            let p = pipeline(&common)?;
            let inputs = p.load_inputs()?;
            let features = p.extract(&inputs)?;
            println!(
                "{} feature records written to {}",
                features.len(),
                p.layout.features().display()
            );
        }
        Command::SelectExamples(common) => {
            let p = pipeline(&common)?;
            p.select()?;
            println!(
                "selections written to {}",
                p.layout.root.join("selections").display()
            );
        }
        Command::Predict(common) => {
            let p = pipeline(&common)?;
            p.predict()?;
            println!(
                "predictions written to {}",
                p.layout.root.join("predictions").display()
            );
        }
        Command::Evaluate(common) => {
            let p = pipeline(&common)?;
            let bundle = p.evaluate()?;
            print!("{}", impact_core::eval::render_table_iii(&bundle.averaged));
        }
        Command::SweepK { common, ks } => {
            let p = pipeline(&common)?;
            let ks = ks.map_or_else(|| p.config.k_sweep.clone(), |k| k.0);
            let points = p.sweep_k(&ks)?;
            print!("{}", impact_core::eval::render_table_iv(&points));
        }
        Command::CompareRandom(common) => {
            let p = pipeline(&common)?;
            let points = p.compare_random()?;
            print!("{}", impact_core::eval::render_comparison(&points));
        }
        Command::Run { common, k_sweep } => {
            let mut config = run_config(&common)?;
            if let Some(KList(ks)) = k_sweep {
                config.k_sweep = ks;
            }
            let p = Pipeline::new(config)?;
            let bundle = p.run()?;
            print!("{}", impact_core::eval::render_table_iii(&bundle.averaged));
        }
        Command::DefaultConfig { kind } => match kind.as_str() {
            "run" => print!("{}", RunConfig::default().to_toml()?),
            "synth" => print!("{}", toml_of_synth()?),
            other => anyhow::bail!("unknown config kind `{other}`; expected `run` or `synth`"),
        },
    }
    Ok(())
}

fn toml_of_synth() -> Result<String> {
    Ok(SynthConfig::default().to_toml()?)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

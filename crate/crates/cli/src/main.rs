use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use wzdesign_cli::{apply_overrides, load_config, run_experiment, ConfigError, Overrides, Verb};

/// Design and evaluate low-complexity distributed quantizers.
#[derive(Parser)]
#[command(name = "wzdesign", version)]
struct Cli {
    #[command(subcommand)]
    verb: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Design at a single λ and write the systems as JSON.
    Design {
        #[command(flatten)]
        common: Common,
        /// Use this λ instead of the first grid value.
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Trace complexity-distortion curves over the λ grid, with baselines.
    Sweep(Common),
    /// Routed-network experiment against conventional routing.
    Dir(Common),
    /// Write the configured source samples (and generated network) to files.
    Gen(Common),
    /// Correlation-grouping baselines only.
    Baselines(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Design seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Write zero wall times so reruns are byte-identical.
    #[arg(long)]
    no_timing: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (verb, common, lambda) = match cli.verb {
        Command::Design { common, lambda } => (Verb::Design, common, lambda),
        Command::Sweep(c) => (Verb::Sweep, c, None),
        Command::Dir(c) => (Verb::Dir, c, None),
        Command::Gen(c) => (Verb::Gen, c, None),
        Command::Baselines(c) => (Verb::Baselines, c, None),
    };
    match run(verb, common, lambda) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.chain().any(|c| c.is::<ConfigError>() || c.is::<toml::de::Error>()) {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn run(verb: Verb, common: Common, lambda: Option<f64>) -> anyhow::Result<()> {
    if let Some(n) = common.threads {
        if n == 0 {
            anyhow::bail!(ConfigError::new("--threads", "must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let mut cfg = load_config(&common.config)?;
    let overrides = Overrides {
        out: common.out,
        seed: common.seed,
        lambda,
        no_timing: common.no_timing,
    };
    apply_overrides(&mut cfg, &overrides)?;
    let out = run_experiment(&cfg, verb)?;
    print!("{}", out.summary);
    for f in &out.files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

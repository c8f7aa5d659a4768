//! `rwpot`: run one experiment from a TOML config and write its results.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use rwpot_core::harness::{self, Experiment, ExperimentConfig, OracleSpec, RunOptions};

#[derive(Parser, Debug)]
#[command(
    name = "rwpot",
    version,
    about = "Random walks in random potentials: exact costs and concentration experiments"
)]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads. Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Run even when the potential law fails a hypothesis the experiment needs.
    #[arg(long, global = true)]
    override_assumptions: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Travel weights on a box or site set.
    Solve,
    /// Lyapunov exponent estimate along a direction.
    Lyapunov,
    /// Upper or lower tail of the centred cost.
    Tails,
    /// Restricted costs on nested boxes.
    Compare,
    /// Cost gap under potential truncation.
    Truncate,
    /// Rank-one perturbation bounds and martingale diagnostics.
    Perturb,
    /// Per-site entropy inequality.
    Entropy,
    /// Log-moment generating function and the Herbst ratio.
    Psi,
    /// Lattice animal counts and occupied-animal rates.
    Animals,
    /// Crossing functional of an occupied cube.
    Chi,
    /// Solver against the path-sum and Monte Carlo oracles.
    OracleCheck,
}

impl Command {
    fn experiment(self) -> Experiment {
        match self {
            Command::Solve => Experiment::Solve,
            Command::Lyapunov => Experiment::Lyapunov,
            Command::Tails => Experiment::Tails,
            Command::Compare => Experiment::Compare,
            Command::Truncate => Experiment::Truncate,
            Command::Perturb => Experiment::Perturb,
            Command::Entropy => Experiment::Entropy,
            Command::Psi => Experiment::Psi,
            Command::Animals => Experiment::Animals,
            Command::Chi => Experiment::Chi,
            Command::OracleCheck => Experiment::OracleCheck,
        }
    }
}

fn load(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let want = cli.command.experiment();
    let Some(path) = &cli.config else {
        if want == Experiment::OracleCheck {
            return Ok(ExperimentConfig {
                experiment: want,
                seed: 0,
                spec: harness::battery_spec(),
                geometry: Default::default(),
                sampling: Default::default(),
                output: Default::default(),
                oracle: Some(OracleSpec { battery: None, fault_injection: false }),
            });
        }
        bail!("--config is required for {}", want.name());
    };
    let cfg = ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    if cfg.experiment != want {
        bail!("{} is a {} config, not {}", path.display(), cfg.experiment.name(), want.name());
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = load(&cli).and_then(|cfg| {
        let opts = RunOptions {
            out: cli.out.clone(),
            threads: cli.threads,
            seed: cli.seed,
            override_assumptions: cli.override_assumptions,
        };
        Ok(harness::run(&cfg, &opts)?)
    });
    let manifest = match result {
        Ok(m) => m,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    for w in &manifest.warnings {
        eprintln!("warning: {w}");
    }
    for c in &manifest.assertions {
        let status = match (c.passed, c.exact) {
            (true, _) => "PASS",
            (false, true) => "FAIL",
            (false, false) => "MISS",
        };
        let kind = if c.exact { "exact" } else { "statistical" };
        println!("[{status}] {} ({kind}) {}", c.name, c.detail);
    }
    for f in &manifest.files {
        println!("wrote {} ({} bytes)", f.path, f.bytes);
    }
    if manifest.exact_failures().is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;
    use rwpot_core::DistributionSpec;

    #[test]
    fn cli_is_well_formed() {
        Cli::command().debug_assert();
    }

    #[test]
    fn subcommand_names() {
        let names: Vec<String> = Cli::command().get_subcommands().map(|s| s.get_name().to_string()).collect();
        let want: Vec<&str> = Experiment::ALL.iter().map(|e| e.name()).collect();
        assert_eq!(names, want);
    }

    #[test]
    fn default_oracle_config_needs_no_file() {
        let cli = Cli::parse_from(["rwpot", "oracle-check"]);
        let cfg = load(&cli).unwrap();
        assert_eq!(cfg.spec, DistributionSpec::TwoPoint { v_lo: 0.2, v_hi: 1.0, p_hi: 0.5 });
    }
}

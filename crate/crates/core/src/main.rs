use std::path::PathBuf;
use std::process::ExitCode;

use canon_lattice::experiments::{self, EngineKind, Experiment, ExperimentPlan, Summary};
use canon_lattice::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "canon-lattice", version, about = "Equivalence-of-ensembles experiments for 1-d continuous-spin systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Gaussian closed-form identities, decay and plateau scaling.
    OracleCheck(Common),
    /// gce/ce gap of a local observable versus N.
    EquivalenceObservables(Common),
    /// Two-point gaps and covariance decay fits in both ensembles.
    CorrelationEquivalence(Common),
    /// Free-energy gaps, derivative identities and convexity.
    FreeEnergy(Common),
    /// Boundary sensitivity of the centre spin.
    Uniqueness(Common),
    /// Variance, moment and block fourth-moment bands.
    MomentVarianceSuite(Common),
    /// Rerun an experiment from its manifest and compare outputs byte for byte.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
        /// Defaults to `replay/` next to the manifest.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20_240_601)]
    seed: u64,
    #[arg(long, value_enum)]
    engine: Option<EngineArg>,
    /// Comma-separated window sizes.
    #[arg(long, value_delimiter = ',')]
    n_list: Option<Vec<usize>>,
}

#[derive(Clone, Copy, ValueEnum)]
enum EngineArg {
    Oracle,
    Transfer,
    Mcmc,
}

impl From<EngineArg> for EngineKind {
    fn from(e: EngineArg) -> Self {
        match e {
            EngineArg::Oracle => EngineKind::Oracle,
            EngineArg::Transfer => EngineKind::Transfer,
            EngineArg::Mcmc => EngineKind::Mcmc,
        }
    }
}

fn print_summary(s: &Summary) {
    for c in &s.checks {
        let status = if c.passed { "PASS" } else { "FAIL" };
        if c.value.is_nan() {
            println!("{status} {} {}", c.name, c.detail);
        } else {
            println!("{status} {} = {:.6e} ({}) {}", c.name, c.value, c.bound, c.detail);
        }
    }
    for n in &s.notes {
        println!("note: {n}");
    }
    if s.passed {
        println!("{}: all {} checks passed", s.experiment.name(), s.checks.len());
    } else {
        println!("{}: failing checks: {}", s.experiment.name(), s.failing().join("; "));
    }
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(if e.is_configuration() { 3 } else { 1 })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (experiment, common) = match cli.command {
        Command::Replay { manifest, out } => {
            let m = match experiments::read_manifest(&manifest) {
                Ok(m) => m,
                Err(e) => return fail(&e),
            };
            let out = out.unwrap_or_else(|| manifest.parent().map(|p| p.join("replay")).unwrap_or_else(|| "replay".into()));
            return match experiments::replay(&m, &out) {
                Ok(r) if r.identical() => {
                    println!("replay of {} reproduced {} files byte-identically", m.experiment.name(), m.outputs.len());
                    ExitCode::from(r.run.exit_code as u8)
                }
                Ok(r) => {
                    println!("replay mismatch: {}", r.mismatched.join(", "));
                    ExitCode::from(2)
                }
                Err(e) => fail(&e),
            };
        }
        Command::OracleCheck(c) => (Experiment::OracleCheck, c),
        Command::EquivalenceObservables(c) => (Experiment::EquivalenceObservables, c),
        Command::CorrelationEquivalence(c) => (Experiment::CorrelationEquivalence, c),
        Command::FreeEnergy(c) => (Experiment::FreeEnergy, c),
        Command::Uniqueness(c) => (Experiment::Uniqueness, c),
        Command::MomentVarianceSuite(c) => (Experiment::MomentVarianceSuite, c),
    };
    let plan = ExperimentPlan {
        experiment,
        config_path: common.config,
        n_list: common.n_list,
        engine: common.engine.map(Into::into),
        seed: common.seed,
        out: common.out,
    };
    match experiments::run(&plan) {
        Ok(report) => {
            print_summary(&report.summary);
            ExitCode::from(report.exit_code as u8)
        }
        Err(e) => fail(&e),
    }
}

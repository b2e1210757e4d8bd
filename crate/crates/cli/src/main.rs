use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use peer_cli::commands::{convergence_table, write_adapt_demo, write_solve};
use peer_cli::config::{GridSpec, RunConfig};
use peer_cli::output::{ArtifactWriter, Provenance};
use peer_cli::{run_convergence, run_solve, run_verify, CliError};
use peer_core::{build_triplet, PeerTriplet, KNOWN_TRIPLETS};

#[derive(Parser)]
#[command(name = "peer", version, about = "Peer triplets for ODE-constrained optimal control")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Args)]
struct Common {
    /// Directory for artifacts.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Seed of randomized checks.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Largest number of state components in trajectory dumps.
    #[arg(long, default_value_t = 16)]
    dump_limit: usize,
}

#[derive(Subcommand)]
enum Verb {
    /// Checks order conditions, structure, stability and boundary contraction.
    Verify {
        /// Triplet id; all known triplets when omitted.
        #[arg(long)]
        triplet: Option<String>,
        /// Coefficient file written by dump-coeffs, checked instead of a built-in triplet.
        #[arg(long)]
        coeffs: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Writes the coefficients of a triplet as JSON.
    DumpCoeffs {
        #[arg(long, default_value = "AP4o33vgi")]
        triplet: String,
        #[command(flatten)]
        common: Common,
    },
    /// Errors against the exact optimum for every configured N.
    Convergence {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        triplet: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Full optimization run.
    Solve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        triplet: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// One solve, estimate and equidistribute step with its density.
    AdaptDemo {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        triplet: Option<String>,
        #[command(flatten)]
        common: Common,
    },
}

fn load(config: &PathBuf, triplet: Option<String>) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(t) = triplet {
        cfg.triplet = t;
        cfg.validate()?;
    }
    Ok(cfg)
}

fn writer(common: &Common, cfg: &RunConfig, verb: &'static str) -> Result<ArtifactWriter, CliError> {
    ArtifactWriter::new(
        &common.out,
        Provenance {
            triplet: cfg.triplet.clone(),
            config_hash: cfg.hash(),
            verb,
        },
    )
}

fn progress(row: &peer_core::optimize::TraceRow) {
    eprintln!(
        "iter {:>4}  objective {:.12e}  stationarity {:.3e}  step {:.3e}",
        row.iter, row.objective, row.gradient_norm, row.step_length
    );
}

fn verify(triplet: Option<String>, coeffs: Option<PathBuf>, common: &Common) -> Result<(), CliError> {
    let triplets: Vec<PeerTriplet> = match (coeffs, triplet) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(&path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            vec![PeerTriplet::from_json(&text).map_err(|e| CliError::Verification(e.to_string()))?]
        }
        (None, Some(id)) => vec![build_triplet(&id).map_err(|e| CliError::Config(e.to_string()))?],
        (None, None) => KNOWN_TRIPLETS
            .iter()
            .map(|id| build_triplet(id).map_err(|e| CliError::Config(e.to_string())))
            .collect::<Result<_, _>>()?,
    };
    let mut failures = Vec::new();
    for t in &triplets {
        let report = run_verify(t, common.seed)?;
        let mut out = ArtifactWriter::new(
            &common.out,
            Provenance {
                triplet: t.name.clone(),
                config_hash: String::new(),
                verb: "verify",
            },
        )?;
        let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Io(e.to_string()))? + "\n";
        let path = out.raw(&format!("verify_{}.json", t.name), &text)?;
        eprintln!("{}: {} ({})", t.name, if report.passed { "pass" } else { "FAIL" }, path.display());
        if let Some(c) = report.first_failure() {
            failures.push(format!("{}: {} = {:e} violates {}", t.name, c.name, c.value, c.rule));
        }
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verification(failures.join("; ")))
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.verb {
        Verb::Verify { triplet, coeffs, common } => verify(triplet, coeffs, &common),
        Verb::DumpCoeffs { triplet, common } => {
            let t = build_triplet(&triplet).map_err(|e| CliError::Config(e.to_string()))?;
            let mut out = ArtifactWriter::new(
                &common.out,
                Provenance {
                    triplet: t.name.clone(),
                    config_hash: String::new(),
                    verb: "dump-coeffs",
                },
            )?;
            let path = out.raw(&format!("{}.json", t.name), &(t.to_json() + "\n"))?;
            eprintln!("wrote {}", path.display());
            Ok(())
        }
        Verb::Convergence { config, triplet, common } => {
            let cfg = load(&config, triplet)?;
            let result = run_convergence(&cfg)?;
            let mut out = writer(&common, &cfg, "convergence")?;
            out.table("convergence", &convergence_table(&result))?;
            out.json("convergence", &result)?;
            for f in &result.fitted {
                eprintln!(
                    "{}: fitted orders control {:.2} state {:.2} adjoint {:.2}",
                    f.grid, f.control, f.state, f.adjoint
                );
            }
            Ok(())
        }
        Verb::Solve { config, triplet, common } => {
            let cfg = load(&config, triplet)?;
            let bundle = run_solve(&cfg, &mut progress)?;
            let mut out = writer(&common, &cfg, "solve")?;
            write_solve(&cfg, &bundle, &mut out, common.dump_limit)?;
            eprintln!(
                "converged {} after {} iterations, objective {:.12e}",
                bundle.summary.converged, bundle.summary.iterations, bundle.summary.objective_final
            );
            Ok(())
        }
        Verb::AdaptDemo { config, triplet, common } => {
            let mut cfg = load(&config, triplet)?;
            cfg.grid = GridSpec::Adapt;
            let bundle = run_solve(&cfg, &mut progress)?;
            let mut out = writer(&common, &cfg, "adapt-demo")?;
            write_adapt_demo(&cfg, &bundle, &mut out)?;
            let m = &bundle.summary.grid;
            eprintln!(
                "adapted grid: sigma in [{:.3}, {:.3}], max |eta| {:.2}",
                m.min_sigma, m.max_sigma, m.max_abs_eta
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

use clap::{Parser, Subcommand};
use hencky_cli::*;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "hencky", about = "Finite-element experiments for Hencky perfect plasticity")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a structured simplicial mesh and write the plain-text format.
    MeshGen {
        #[arg(long, default_value_t = 2)]
        dim: usize,
        /// Per-axis widths, comma or space separated.
        #[arg(long, default_value = "1 1")]
        widths: String,
        #[arg(long, short)]
        m: usize,
        /// Dirichlet sides: `all` or a list like `bottom,left`.
        #[arg(long, default_value = "all")]
        gamma0: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve a scenario on the given refinement levels.
    Solve {
        #[arg(long)]
        scenario: PathBuf,
        /// Refinement levels, e.g. `4,8,16`.
        #[arg(long, default_value = "4,8,16")]
        levels: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Solve in relaxed mode and run the recovery schedule on the minimiser.
    Recover {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value = "16")]
        levels: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Relaxation-gap study: relaxed vs classical energies plus recovery.
    GammaCheck {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value = "8,16")]
        levels: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Relative tolerance for the final recovery gap.
        #[arg(long, default_value_t = 0.05)]
        tol: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a brute-force oracle table.
    Oracle {
        #[arg(long)]
        name: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Condensed assertion battery; exit code 0 only if everything passes.
    Selftest {},
}

fn parse_levels(s: &str) -> Vec<usize> {
    s.split([',', ' '])
        .filter(|t| !t.is_empty())
        .filter_map(|t| t.parse().ok())
        .collect()
}

fn run() -> hencky::Result<bool> {
    init_workers();
    let cli = Cli::parse();
    match cli.command {
        Command::MeshGen {
            dim,
            widths,
            m,
            gamma0,
            out,
        } => {
            let w: Vec<f64> = widths
                .split([',', ' '])
                .filter(|t| !t.is_empty())
                .filter_map(|t| t.parse().ok())
                .collect();
            cmd_mesh_gen(dim, &w, m, &gamma0, &out)?;
            println!("wrote {}", out.display());
            Ok(true)
        }
        Command::Solve {
            scenario,
            levels,
            out,
            tol,
            seed: _,
        } => {
            let spec = load_spec(&scenario)?;
            let outcomes = cmd_solve(&spec, &parse_levels(&levels), &out, tol)?;
            for o in &outcomes {
                println!(
                    "m={}: energy={:.12e} gap={:.3e} converged={}",
                    o.level, o.report.energy.total, o.report.final_gap, o.report.converged
                );
            }
            Ok(outcomes.iter().all(|o| o.report.converged))
        }
        Command::Recover {
            scenario,
            levels,
            out,
            seed: _,
        } => {
            let spec = load_spec(&scenario)?;
            let traces = cmd_recover(&spec, &parse_levels(&levels), &out)?;
            let mut ok = true;
            for (m, trace) in &traces {
                let last = trace.rows.last();
                println!(
                    "m={m}: final gap {:?}, violations: {}",
                    last.map(|r| r.gap),
                    trace.violations.len()
                );
                ok &= trace.violations.is_empty();
            }
            Ok(ok)
        }
        Command::GammaCheck {
            scenario,
            levels,
            out,
            tol,
            seed: _,
        } => {
            let spec = load_spec(&scenario)?;
            let outcome = cmd_gamma_check(&spec, &parse_levels(&levels), &out, tol)?;
            for r in &outcome.rows {
                println!(
                    "m={}: min_G={:.10e} hard_F={:.10e} best_F={:.10e} gap={:.3e} decreasing={} F>=G={}",
                    r.level, r.min_g, r.hard_f, r.best_f, r.final_gap_rel, r.decreasing, r.relaxation_direction
                );
            }
            Ok(outcome.pass)
        }
        Command::Oracle { name, out, seed } => {
            cmd_oracle(&name, &out, seed)?;
            println!("wrote oracle `{name}` to {}", out.display());
            Ok(true)
        }
        Command::Selftest {} => {
            let mut stdout = std::io::stdout();
            cmd_selftest(&mut stdout)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

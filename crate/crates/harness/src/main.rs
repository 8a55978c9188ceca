use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use sltvi::asymptotics::GridSpec;
use sltvi::triplets::TripletKind;
use sltvi_harness::config::{parse_flow_label, SweepConfig};
use sltvi_harness::report::{fit_and_report, read_summary, SUMMARY_FILE};
use sltvi_harness::sweep::{default_workers, read_results, run_sweep, RESULTS_FILE};
use sltvi_harness::{contour, lab, plot};

#[derive(Parser, Debug)]
#[command(name = "sltvi", version, about = "Variational inference sweeps for singular models")]
struct Cli {
    /// TOML sweep configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Seeds per cell (overrides the config).
    #[arg(long, global = true)]
    seeds: Option<u64>,
    /// Training epochs (overrides the config).
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    global_seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run every cell of the configured sweep, resuming from results.csv.
    Sweep,
    /// Fit the free-energy and generalization coefficients per group.
    Fit,
    /// Render figures from results.csv and summary.csv.
    Plot,
    /// Quadrature of the tanh toy's evidence and its coefficient regression.
    ToyQuad,
    /// Posterior contour grids of the tanh toy.
    Contour {
        #[arg(long, default_value_t = 200)]
        points: usize,
    },
    /// Check ELBO gradients against finite differences.
    Gradcheck {
        #[arg(long, default_value = "tanh_zero_mean")]
        triplet: String,
        #[arg(long, default_value_t = 1)]
        h: usize,
        #[arg(long, default_value = "2_4")]
        flow: String,
        #[arg(long, default_value_t = 3)]
        mc_samples: usize,
        #[arg(long, default_value_t = 100)]
        n: usize,
    },
    /// Print the exact RLCT table.
    Rlct,
}

fn sweep_config(cli: &Cli) -> Result<SweepConfig> {
    let mut cfg = match &cli.config {
        Some(p) => SweepConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => SweepConfig::default(),
    };
    if let Some(s) = cli.seeds {
        cfg.seeds = s;
    }
    if let Some(e) = cli.epochs {
        cfg.epochs = e;
    }
    if let Some(g) = cli.global_seed {
        cfg.global_seed = g;
    }
    if let Some(w) = cli.workers {
        cfg.workers = Some(w);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Sweep => {
            let cfg = sweep_config(cli)?;
            let workers = cfg.workers.unwrap_or_else(default_workers);
            let r = run_sweep(&cfg, &cli.out, workers)?;
            println!(
                "{}: {} cells run ({} not ok), {} already present",
                r.results_path.display(),
                r.executed,
                r.failed,
                r.skipped
            );
        }
        Command::Fit => {
            let summary = fit_and_report(cli.out.join(RESULTS_FILE), cli.out.join(SUMMARY_FILE))?;
            println!("group,status,lambda_vfe,r2_vfe,lambda_vge,r2_vge,true_lambda");
            for s in summary {
                let tl = s.true_lambda.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
                println!(
                    "{},{},{:.4},{:.4},{:.4},{:.4},{tl}",
                    s.key.label(),
                    s.status,
                    s.lambda_vfe,
                    s.r2_vfe,
                    s.lambda_vge,
                    s.r2_vge
                );
            }
        }
        Command::Plot => {
            let rows = read_results(cli.out.join(RESULTS_FILE))?;
            let summary_path = cli.out.join(SUMMARY_FILE);
            if !summary_path.exists() {
                bail!("{} not found; run `sltvi fit` first", summary_path.display());
            }
            let summary = read_summary(summary_path)?;
            for p in plot::emit_plots(&rows, &summary, &cli.out.join("plots"))? {
                println!("{}", p.display());
            }
        }
        Command::ToyQuad => {
            let rep = lab::toy_quad(&lab::toy_sample_sizes())?;
            println!("n,ln_n,log_evidence,psi_lower_bound");
            for (n, lz, psi) in &rep.rows {
                println!("{n},{},{lz},{psi}", n.ln());
            }
            println!(
                "fit: lambda={:.5} m-1={:.5} constant={:.5}",
                rep.fit.lambda, rep.fit.m_minus_one, rep.fit.constant
            );
        }
        Command::Contour { points } => {
            let grid = GridSpec {
                points: *points,
                ..GridSpec::default()
            };
            for p in contour::write_contours(&cli.out, grid, cli.global_seed.unwrap_or(0))? {
                println!("{}", p.display());
            }
        }
        Command::Gradcheck {
            triplet,
            h,
            flow,
            mc_samples,
            n,
        } => {
            let kind = TripletKind::parse(triplet)?;
            let (pairs, hidden) = parse_flow_label(flow)?;
            let g = lab::elbo_gradcheck(kind, *h, pairs, hidden, *mc_samples, *n, cli.global_seed.unwrap_or(0))?;
            println!(
                "{} parameters, max relative error {:.3e} at coordinate {}",
                g.analytic.len(),
                g.max_rel_error,
                g.worst_coordinate
            );
        }
        Command::Rlct => {
            println!("triplet,H,dim_w,lambda,lambda_exact,multiplicity");
            for r in lab::rlct_table()? {
                match r.rlct {
                    Some(l) => println!(
                        "{},{},{},{:.4},{},{}",
                        r.kind.name(),
                        r.h,
                        r.dim_w,
                        l.value(),
                        l.lambda,
                        l.multiplicity
                    ),
                    None => println!("{},{},{},,,", r.kind.name(), r.h, r.dim_w),
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

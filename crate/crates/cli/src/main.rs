use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use evonash_core::bundle::{cmd_crossmarket, cmd_run, cmd_stats, cmd_stress, cmd_synth, with_jobs};
use evonash_core::config::RunConfig;
use evonash_core::Error;

/// Used when neither `--out` nor the config names an output directory.
const OUT_ENV: &str = "EVONASH_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "evonash", version, about = "Walk-forward population training with a PSRO meta layer")]
struct Cli {
    /// Worker threads for window-level parallelism.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the full walk-forward and write an evidence bundle.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rerun a bundle's OOS signal under cost, impact and capacity multipliers.
    Stress {
        bundle: PathBuf,
        /// TOML file with `[[scenarios]]` tables; defaults to the bundle's own.
        #[arg(long)]
        scenarios: Option<PathBuf>,
    },
    /// Compare a bundle's OOS returns with alternative benchmarks.
    Crossmarket {
        bundle: PathBuf,
        /// Wide CSV: `date,<name>,...` of daily benchmark returns.
        #[arg(long)]
        benchmarks: PathBuf,
    },
    /// Pairwise and family-wide significance tests across bundles.
    Stats {
        #[arg(required = true)]
        bundles: Vec<PathBuf>,
        /// Reference bundle; defaults to the first bundle's benchmark returns.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long, default_value = "stats")]
        out: PathBuf,
    },
    /// Write a synthetic price panel CSV.
    Synth {
        spec: PathBuf,
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

fn output_dir(flag: Option<PathBuf>, config: &Path) -> Result<PathBuf, Error> {
    if let Some(p) = flag {
        return Ok(p);
    }
    if let Some(p) = RunConfig::load(config)?.config.output.dir {
        return Ok(p);
    }
    Ok(std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("evonash_bundle")))
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run { config, seed, out } => {
            let out = output_dir(out, &config)?;
            let s = with_jobs(cli.jobs, || cmd_run(&config, seed, &out))?;
            let a = s.aggregate;
            println!("windows            {}", s.n_windows);
            println!("mean excess sharpe {:.4}", a.mean_ex_sharpe);
            println!("robust score       {:.4}", a.robust_score);
            println!("excess cum return  {:.4}", a.excess_cum_return);
            println!("bundle             {}", s.out_dir.display());
            println!("bundle hash        {}", s.bundle_hash);
        }
        Command::Stress { bundle, scenarios } => {
            for r in cmd_stress(&bundle, scenarios.as_deref())? {
                println!(
                    "{:<14} exsharpe {:>8.4}  d {:>8.4}  excum {:>8.4}  d {:>8.4}",
                    r.scenario, r.excess_sharpe, r.delta_ex_sharpe, r.excess_cum_ret, r.delta_ex_cum_ret
                );
            }
        }
        Command::Crossmarket { bundle, benchmarks } => {
            for r in cmd_crossmarket(&bundle, &benchmarks)? {
                println!(
                    "{:<10} exsharpe {:>8.4}  excum {:>8.4}  mean1d {:>10.6}",
                    r.benchmark, r.excess_sharpe, r.excess_cum_return, r.mean_excess_1d
                );
            }
        }
        Command::Stats { bundles, reference, out } => {
            let rep = with_jobs(cli.jobs, || cmd_stats(&bundles, reference.as_deref(), &out))?;
            for r in &rep.pairwise {
                println!(
                    "{} vs {}: mean diff {:.6}, NW p {:.4} (q {:.4}), bootstrap p {:.4} (q {:.4})",
                    r.candidate, r.reference, r.mean_diff, r.nw_p, r.nw_q, r.bootstrap_p, r.bootstrap_q
                );
            }
            println!("WRC p {:.4}", rep.wrc.p_value);
            match rep.spa_lite {
                Some(t) => println!("SPA-lite p {:.4}", t.p_value),
                None => println!("SPA-lite skipped: no candidate has variance"),
            }
        }
        Command::Synth { spec, out, seed } => {
            let p = cmd_synth(&spec, &out, seed)?;
            println!("wrote {} dates x {} symbols to {}", p.n_dates(), p.symbols.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("evonash: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

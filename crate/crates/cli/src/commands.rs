//! Verb dispatch for the `cavg` binary.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use chaotic_averages::dynamics::Params;
use chaotic_averages::experiments;
use chaotic_averages::kernel::{self, KernelConfig};
use chaotic_averages::measures::{self, ReferenceMeasure};
use chaotic_averages::observables::{self, Observable};
use chaotic_averages::orbits::{self, SearchBudget};
use chaotic_averages::pot::{self, CycleData};
use chaotic_averages::weights::{self, Method};

use crate::config;
use crate::plot;

#[derive(Parser)]
#[command(
    name = "cavg",
    about = "Chaotic time-averages from weighted orbit and snippet libraries",
    version
)]
pub struct Cli {
    /// Worker threads for parallel stages (default: machine parallelism).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Clone)]
pub struct ParamArgs {
    #[arg(long, default_value_t = 10.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 28.0)]
    pub rho: f64,
    #[arg(long, default_value_t = 8.0 / 3.0)]
    pub beta: f64,
}

impl ParamArgs {
    fn params(&self) -> Result<Params> {
        Ok(Params::new(self.sigma, self.rho, self.beta)?)
    }
}

#[derive(Subcommand)]
pub enum Command {
    /// Build the complete periodic-orbit library up to a symbol length.
    FindOrbits {
        #[arg(long)]
        lmax: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Chaotic scan duration in time units (default scales with lmax).
        #[arg(long)]
        scan_duration: Option<f64>,
        #[command(flatten)]
        params: ParamArgs,
    },
    /// Cut a chaotic run into equal-duration snippets.
    Snippets {
        #[arg(long)]
        count: usize,
        /// Match the total duration of this orbit library.
        #[arg(long, conflicts_with = "total_duration")]
        match_library: Option<PathBuf>,
        #[arg(long)]
        total_duration: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[command(flatten)]
        params: ParamArgs,
    },
    /// Frobenius distances of A(θ) to the all-ones and identity matrices.
    ThetaScan {
        #[arg(long)]
        library: Option<PathBuf>,
        #[arg(long)]
        snippets: Option<PathBuf>,
        /// Grid spec `lo:hi:logN` or comma-separated values.
        #[arg(long, default_value = "1e-2:1e6:log25")]
        grid: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        params: ParamArgs,
    },
    /// Build the correlation system (A, b) for a measure library.
    BuildSystem {
        #[arg(long)]
        library: Option<PathBuf>,
        #[arg(long)]
        snippets: Option<PathBuf>,
        #[arg(long, default_value_t = 100.0)]
        theta: f64,
        #[arg(long, visible_alias = "N", default_value_t = 100_000)]
        n: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 2.0)]
        dt: f64,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        params: ParamArgs,
    },
    /// Compute a weight vector by any of the supported methods.
    Weights {
        #[arg(long)]
        method: String,
        /// Correlation system (lsw, nnls, constrained).
        #[arg(long)]
        system: Option<PathBuf>,
        /// Orbit library (pot, markov) .
        #[arg(long)]
        library: Option<PathBuf>,
        /// Snippet library (markov).
        #[arg(long)]
        snippets: Option<PathBuf>,
        /// Library size for the uniform method.
        #[arg(long, visible_alias = "P")]
        p: Option<usize>,
        #[arg(long, default_value_t = 1e-10)]
        alpha: f64,
        /// Chaotic samples for markov.
        #[arg(long, visible_alias = "N", default_value_t = 100_000)]
        n: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 2.0)]
        dt: f64,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        params: ParamArgs,
    },
    /// Weighted estimates of the standard observables.
    Estimate {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        library: Option<PathBuf>,
        #[arg(long)]
        snippets: Option<PathBuf>,
        /// Only `all` (the standard set) is supported.
        #[arg(long, default_value = "all")]
        observables: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        params: ParamArgs,
    },
    /// Weighted Lyapunov-exponent estimate from orbit Floquet exponents.
    Lyapunov {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        library: PathBuf,
        /// Reference value; prints the absolute error when given.
        #[arg(long)]
        reference: Option<f64>,
    },
    /// Run the full (method x kind x P x r x s x N) comparison sweep.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Publication-scale defaults (hours of compute).
        #[arg(long)]
        paper_scale: bool,
        /// Output directory; overrides the config file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render SVG figures from sweep results.
    Plot {
        /// results.csv from a sweep.
        #[arg(long)]
        from: PathBuf,
        #[arg(long, default_value = "figures")]
        out_dir: PathBuf,
        /// theta-scan CSV for the kernel-width figure.
        #[arg(long)]
        theta_scan: Option<PathBuf>,
        /// Weight file for the weight-vs-exponent scatter.
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Orbit library supplying the exponents for the scatter.
        #[arg(long)]
        library: Option<PathBuf>,
    },
}

fn load_measures(
    library: &Option<PathBuf>,
    snippets: &Option<PathBuf>,
    params: &Params,
) -> Result<Vec<ReferenceMeasure>> {
    match (library, snippets) {
        (Some(lib), None) => {
            let lib = orbits::load_library(lib)?;
            Ok(measures::orbit_measures(&lib, params)?)
        }
        (None, Some(snip)) => {
            let snips = measures::load_snippets(snip)?;
            Ok(measures::snippet_measures(&snips))
        }
        _ => bail!("exactly one of --library or --snippets is required"),
    }
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("configuring worker pool")?;
    }
    match cli.command {
        Command::FindOrbits {
            lmax,
            out,
            seed,
            scan_duration,
            params,
        } => {
            let p = params.params()?;
            let mut budget = SearchBudget::for_length(lmax);
            if let Some(d) = scan_duration {
                budget.scan_duration = d;
            }
            eprintln!("searching for all orbits up to symbol length {lmax}...");
            let lib = orbits::build_complete_library(lmax, &p, &budget, seed)?;
            orbits::save_library(&lib, &out)?;
            eprintln!("wrote {} orbits to {}", lib.len(), out.display());
        }
        Command::Snippets {
            count,
            match_library,
            total_duration,
            out,
            seed,
            params,
        } => {
            let p = params.params()?;
            let duration = match (match_library, total_duration) {
                (Some(lib), None) => orbits::load_library(&lib)?.total_period(),
                (None, Some(d)) => d,
                _ => bail!("exactly one of --match-library or --total-duration is required"),
            };
            let snips = measures::sample_snippets(&p, duration, count, seed)?;
            measures::save_snippets(&snips, &out)?;
            eprintln!(
                "wrote {count} snippets of total duration {duration:.3} to {}",
                out.display()
            );
        }
        Command::ThetaScan {
            library,
            snippets,
            grid,
            out,
            params,
        } => {
            let p = params.params()?;
            let ms = load_measures(&library, &snippets, &p)?;
            let grid = config::parse_grid(&grid)?;
            let scan = kernel::theta_scan(&ms, &grid)?;
            let mut csv = String::from("theta,dist_ones,dist_identity\n");
            for row in &scan.rows {
                csv.push_str(&format!(
                    "{},{},{}\n",
                    fmt(row.theta),
                    fmt(row.dist_ones),
                    fmt(row.dist_identity)
                ));
            }
            std::fs::write(&out, csv)?;
            eprintln!("theta* = {:.6e}; wrote {}", scan.theta_star, out.display());
        }
        Command::BuildSystem {
            library,
            snippets,
            theta,
            n,
            seed,
            dt,
            out,
            params,
        } => {
            let p = params.params()?;
            let ms = load_measures(&library, &snippets, &p)?;
            let cfg = KernelConfig::new(theta)?;
            let mut rng = chaotic_averages::substream(seed, &format!("truth-{seed}"));
            let traj = measures::chaotic_samples(&p, n, dt, &mut rng)?;
            let sys = kernel::build_system(&ms, &traj, &cfg, n, seed)?;
            kernel::save_system(&sys, &out)?;
            eprintln!("wrote {}x{} system to {}", sys.p(), sys.p(), out.display());
        }
        Command::Weights {
            method,
            system,
            library,
            snippets,
            p,
            alpha,
            n,
            seed,
            dt,
            out,
            params,
        } => {
            let method = Method::from_tag(&method)?;
            let wv = match method {
                Method::Uniform => {
                    let p = p.context("--method uniform requires --p")?;
                    weights::uniform_weights(p)?
                }
                Method::Lsw | Method::Nnls | Method::Constrained => {
                    let sys_path = system.context("this method requires --system")?;
                    let sys = kernel::load_system(&sys_path)?;
                    match method {
                        Method::Lsw => weights::solve_tikhonov(&sys, alpha)?,
                        Method::Nnls => weights::solve_nnls_normalized(&sys)?,
                        _ => {
                            let w0 = weights::uniform_weights(sys.p())?.w;
                            weights::solve_constrained(&sys, &w0)?
                        }
                    }
                }
                Method::Markov => {
                    let prm = params.params()?;
                    let ms = load_measures(&library, &snippets, &prm)?;
                    let mut rng = chaotic_averages::substream(seed, &format!("truth-{seed}"));
                    let traj = measures::chaotic_samples(&prm, n, dt, &mut rng)?;
                    weights::markov_weights(&ms, &traj, n)?
                }
                Method::Pot => {
                    let lib_path = library.context("--method pot requires --library")?;
                    let lib = orbits::load_library(&lib_path)?;
                    let cycles = CycleData::from_library(&lib);
                    let l = lib
                        .complete_prefix_length(lib.len())
                        .ok_or_else(|| chaotic_averages::Error::Precondition(format!(
                            "P={} is not a complete library size",
                            lib.len()
                        )))?;
                    pot::pot_weights(&cycles, l)?
                }
            };
            if let Some(support) = wv.support {
                eprintln!("support size {support} before normalization");
            }
            weights::save_weights(&wv, &out)?;
            eprintln!(
                "wrote {} {} weights (sum {:.6}) to {}",
                wv.w.len(),
                wv.method.tag(),
                wv.sum(),
                out.display()
            );
        }
        Command::Estimate {
            weights: wpath,
            library,
            snippets,
            observables,
            out,
            params,
        } => {
            if observables != "all" {
                bail!("only --observables all is supported");
            }
            let p = params.params()?;
            let wv = weights::load_weights(&wpath)?;
            let ms = load_measures(&library, &snippets, &p)?;
            if ms.len() != wv.w.len() {
                bail!(
                    "weight vector has {} entries but the library has {} measures",
                    wv.w.len(),
                    ms.len()
                );
            }
            let mut csv = String::from("observable,E_hat\n");
            for obs in Observable::standard_set() {
                let per: Vec<f64> = ms.iter().map(|m| m.average(&obs)).collect();
                let est = observables::estimate_average(&wv, &per)?;
                csv.push_str(&format!("{},{}\n", obs.tag(), fmt(est)));
            }
            std::fs::write(&out, csv)?;
            eprintln!("wrote estimates to {}", out.display());
        }
        Command::Lyapunov {
            weights: wpath,
            library,
            reference,
        } => {
            let wv = weights::load_weights(&wpath)?;
            let lib = orbits::load_library(&library)?;
            if lib.len() != wv.w.len() {
                bail!(
                    "weight vector has {} entries but the library has {} orbits",
                    wv.w.len(),
                    lib.len()
                );
            }
            let exps: Vec<f64> = lib.orbits.iter().map(|o| o.floquet_exponent).collect();
            let est = observables::lyapunov_estimate(&wv, &exps)?;
            println!("lyapunov_estimate {}", fmt(est));
            if let Some(r) = reference {
                println!("absolute_error {}", fmt((est - r).abs()));
            }
        }
        Command::Sweep {
            config: cfg_path,
            paper_scale,
            out,
        } => {
            let mut file = config::parse_sweep_file(&cfg_path, paper_scale)?;
            file.config.verbose = true;
            let lib_path = file
                .library
                .clone()
                .context("config must set library=<orbit library path>")?;
            let lib = orbits::load_library(Path::new(&lib_path))?;
            let snips = match &file.snippets {
                Some(s) => Some(measures::load_snippets(Path::new(s))?),
                None => None,
            };
            let out_dir = out
                .or(file.out.clone().map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("sweep-out"));
            let prm = Params::default();
            let result = experiments::run_sweep(&file.config, &prm, &lib, snips, &out_dir)?;
            eprintln!(
                "sweep complete: {} rows, {} skipped cells; results in {}",
                result.rows.len(),
                result.skipped.len(),
                out_dir.display()
            );
        }
        Command::Plot {
            from,
            out_dir,
            theta_scan,
            weights: wpath,
            library,
        } => {
            std::fs::create_dir_all(&out_dir)?;
            let rows = experiments::read_results_csv(&from)?;
            let summary = experiments::summarize(&rows);
            let written = plot::render_all(
                &summary,
                theta_scan.as_deref(),
                wpath.as_deref(),
                library.as_deref(),
                &out_dir,
            )?;
            for f in written {
                eprintln!("wrote {}", f.display());
            }
        }
    }
    Ok(())
}

fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dualfast_core::SolverConfig;

use crate::cache::ReferenceCache;
use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::output::{self, emit_plot, report_series, write_file, RunManifest, Series};
use crate::run::{self, Axis};

#[derive(Debug, Parser)]
#[command(name = "dualfast", version, about = "Diffusion ODE sampler experiments on Gaussian mixtures")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML experiment config; every field is optional.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub batch: Option<usize>,
    /// Comma-separated step counts.
    #[arg(long, global = true, value_delimiter = ',')]
    pub nfe: Option<Vec<usize>>,
    /// ddim, dpm-solver-2m, dpm-solver++-2m or unipc.
    #[arg(long, global = true)]
    pub solver: Option<String>,
    #[arg(long, global = true)]
    pub dualfast: Option<OnOff>,
    /// linear, linear:<start>:<end>, constant:<c> or derived.
    #[arg(long, global = true)]
    pub c_schedule: Option<String>,
    /// T, current, or an anchor time in (0, 1].
    #[arg(long, global = true)]
    pub tau: Option<String>,
    /// Worker threads; 0 or absent uses all cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OnOff {
    On,
    Off,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw samples with the configured solver.
    Sample,
    /// Paired MSE against the pseudo-GT for base and DualFast solvers.
    Compare,
    /// Per-period approximation and discretization error.
    Disentangle,
    /// Vary one DualFast setting.
    Ablate {
        /// c-schedule, tau or coefficient-mode.
        #[arg(long)]
        axis: String,
        /// Comma-separated values; defaults depend on the axis.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<String>>,
    },
    /// Empirical convergence order against the exact flow.
    Convergence,
    /// Build or load the pseudo-GT reference.
    Reference,
}

/// Parse arguments, run, and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Config file plus command-line overrides.
pub fn resolve_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(v) = common.seed {
        cfg.seed = v;
    }
    if let Some(v) = &common.out {
        cfg.out = v.clone();
    }
    if let Some(v) = common.batch {
        cfg.batch = v;
    }
    if let Some(v) = &common.nfe {
        cfg.grid.nfe = v.clone();
    }
    if let Some(v) = &common.solver {
        cfg.solver.family = v.clone();
        cfg.solver.order = None;
        cfg.solver.corrector = None;
    }
    if let Some(v) = common.dualfast {
        cfg.dualfast.enabled = v == OnOff::On;
    }
    if let Some(v) = &common.c_schedule {
        cfg.dualfast.c_schedule = v.clone();
    }
    if let Some(v) = &common.tau {
        cfg.dualfast.tau = v.clone();
        cfg.dualfast.anchor = None;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn execute(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(&cli.common)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.common.threads.unwrap_or(0))
        .build()
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    pool.install(|| dispatch(cli, &cfg))
}

fn compare_methods(cli: &Cli, cfg: &ExperimentConfig) -> Result<Vec<SolverConfig>> {
    Ok(match cli.common.dualfast {
        Some(OnOff::On) => vec![cfg.method(true)?],
        Some(OnOff::Off) => vec![cfg.method(false)?],
        None => vec![cfg.method(false)?, cfg.method(true)?],
    })
}

fn dispatch(cli: &Cli, cfg: &ExperimentConfig) -> Result<()> {
    let out = &cfg.out;
    let mut outputs = Vec::new();
    let mut put = |name: &str, text: &str| -> Result<()> {
        write_file(&out.join(name), text)?;
        outputs.push(name.to_string());
        Ok(())
    };
    let name = match &cli.command {
        Command::Sample => {
            let method = cfg.method(cfg.dualfast.enabled)?;
            for &n in &cfg.grid.nfe {
                let (ends, nfe) = run::sample(cfg, &method, n)?;
                put(&format!("samples_{}_n{n}.csv", method.label()), &output::samples_csv(&ends))?;
                println!("{} N={n}: {} samples, {nfe} evaluations", method.label(), ends.len());
            }
            "sample"
        }
        Command::Reference => {
            let r = ReferenceCache::for_config(cfg).get_or_build(cfg)?;
            let status = if r.nfe == 0 { "cached" } else { "built" };
            println!("reference {} ({status}, {} samples, {} evaluations)", r.key, r.batch(), r.nfe);
            "reference"
        }
        Command::Compare => {
            let reference = ReferenceCache::for_config(cfg).get_or_build(cfg)?;
            let reports = run::compare(cfg, &compare_methods(cli, cfg)?, &cfg.grid.nfe, &reference)?;
            let csv = output::compare_csv(&reports);
            put("compare.csv", &csv)?;
            emit_plot(&out.join("compare_plot.svg"), "Paired MSE to pseudo-GT", "NFE", "MSE", &report_series(&reports))?;
            outputs.extend(["compare_plot.svg".to_string(), "compare_plot.csv".to_string()]);
            print!("{csv}");
            "compare"
        }
        Command::Ablate { axis, values } => {
            let axis = Axis::parse(axis)?;
            let values = values.clone().unwrap_or_else(|| axis.default_values());
            let reference = ReferenceCache::for_config(cfg).get_or_build(cfg)?;
            let results = run::ablate(cfg, axis, &values, &cfg.grid.nfe, &reference)?;
            let csv = output::ablation_csv(axis.name(), &results);
            put(&format!("ablation_{}.csv", axis.name()), &csv)?;
            let series: Vec<Series> = results
                .iter()
                .map(|(v, r)| Series { name: format!("{}={v}", axis.name()), points: report_series(std::slice::from_ref(r)).remove(0).points })
                .collect();
            let plot = format!("ablation_{}_plot.svg", axis.name());
            emit_plot(&out.join(&plot), &format!("Ablation over {}", axis.name()), "NFE", "MSE", &series)?;
            outputs.extend([plot.clone(), plot.replace(".svg", ".csv")]);
            print!("{csv}");
            "ablate"
        }
        Command::Convergence => {
            let methods = match &cli.common.solver {
                Some(_) => vec![cfg.method(cfg.dualfast.enabled)?],
                None => run::convergence_methods(),
            };
            let ns = cli.common.nfe.clone().unwrap_or_else(|| cfg.convergence.nfe.clone());
            let results = run::convergence_study(cfg, &methods, &ns)?;
            let (errors, fits) = output::convergence_csv(&results);
            put("convergence.csv", &errors)?;
            put("convergence_fit.csv", &fits)?;
            let series: Vec<Series> = results
                .iter()
                .map(|r| Series { name: r.method.clone(), points: r.errors.iter().map(|&(n, e)| (n as f64, e)).collect() })
                .collect();
            emit_plot(&out.join("convergence_plot.svg"), "Endpoint error vs steps", "N", "mean error", &series)?;
            outputs.extend(["convergence_plot.svg".to_string(), "convergence_plot.csv".to_string()]);
            print!("{fits}");
            "convergence"
        }
        Command::Disentangle => {
            let curve = run::disentangle(cfg)?;
            let csv = output::disentangle_csv(&curve);
            put("disentangle.csv", &csv)?;
            let pick = |f: fn(&dualfast_core::disentangle::PeriodRecord) -> f64| curve.records.iter().map(|r| (r.t, f(r))).collect();
            let series = vec![
                Series { name: "approximation".into(), points: pick(|r| r.approx_mse) },
                Series { name: "discretization".into(), points: pick(|r| r.disc_mse) },
            ];
            emit_plot(&out.join("disentangle_plot.svg"), "Error per period", "t", "MSE", &series)?;
            outputs.extend(["disentangle_plot.svg".to_string(), "disentangle_plot.csv".to_string()]);
            print!("{csv}");
            "disentangle"
        }
    };
    RunManifest::new(name, cfg.hash(), cfg.seed, outputs).write(out)
}

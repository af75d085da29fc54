mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use gaugeflow::flow::{integrate_field, likelihood};
use gaugeflow::gauge::gauge_check;
use gaugeflow::idest::run_manifold_experiment;
use gaugeflow::io::{gauge_table, points_table, read_points, trajectories_table, write_json, Table};
use gaugeflow::rng::{derive_seed, stream_rng};
use gaugeflow::scenarios::{run_scenario, scenario_names, ScenarioResult};
use gaugeflow::{Augment, Diffusion, Direction, ManifoldSpec};
use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "gaugeflow",
    version,
    about = "Probability-flow sampling, likelihoods, gauge checks and intrinsic dimension"
)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overriding the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw samples by integrating the probability flow backwards.
    Sample {
        /// Number of samples (overrides sample.n).
        #[arg(long)]
        n: Option<usize>,
        /// Also write checkpointed trajectories.
        #[arg(long)]
        trajectories: bool,
    },
    /// Model log-likelihoods of the points in a CSV file.
    Likelihood {
        #[arg(long)]
        points: PathBuf,
    },
    /// Monte Carlo gauge residuals of the configured remainder.
    GaugeCheck,
    /// Intrinsic-dimension experiment on the configured manifold.
    Id,
    /// Run a canned scenario, or "all".
    Scenario { name: String },
}

/// Exit status 2 for usage or configuration problems, 1 for computation failures.
enum Failure {
    Usage(anyhow::Error),
    Compute(anyhow::Error),
}

trait OrFail<T> {
    fn usage(self) -> Result<T, Failure>;
    fn compute(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> OrFail<T> for Result<T, E> {
    fn usage(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Usage(e.into()))
    }
    fn compute(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Compute(e.into()))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Compute(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, Failure> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Usage(anyhow!("--threads must be positive")));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .compute()?;
    }
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path).usage()?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));

    match cli.command {
        Command::Sample { n, trajectories } => cmd_sample(&cfg, &out, n, trajectories),
        Command::Likelihood { points } => cmd_likelihood(&cfg, &out, &points),
        Command::GaugeCheck => cmd_gauge_check(&cfg, &out),
        Command::Id => cmd_id(&cfg, &out),
        Command::Scenario { name } => cmd_scenario(&name, cfg.seed, &out),
    }
}

fn create_out(out: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(out)
        .with_context(|| format!("creating {}", out.display()))
        .compute()
}

fn cmd_sample(cfg: &RunConfig, out: &Path, n: Option<usize>, with_trajectories: bool) -> Result<ExitCode, Failure> {
    let schedule = cfg.schedule().usage()?;
    let icfg = cfg.integrator().usage()?.with_direction(Direction::Backward);
    let fs = cfg.field(schedule).usage()?;
    let n = n.or(cfg.sample.n).unwrap_or(1000);
    create_out(out)?;

    let init_seed = derive_seed(cfg.seed, "sample");
    let terminal = Diffusion::at(&schedule, 1.0);
    let icfg = if with_trajectories {
        icfg
    } else {
        icfg.with_checkpoints(2)
    };
    let records = (0..n)
        .into_par_iter()
        .map(|i| {
            let x1 = fs.density.sample_one(terminal, &mut stream_rng(init_seed, i as u64));
            integrate_field(&fs, &icfg, x1.as_slice(), &Augment::none())
        })
        .collect::<Result<Vec<_>, _>>()
        .compute()?;
    let ends: Vec<DVector<f64>> = records.iter().map(|r| r.end_state().clone()).collect();
    points_table(&ends, fs.dim())
        .write_csv(&out.join("samples.csv"))
        .compute()?;
    if with_trajectories {
        trajectories_table(&records)
            .write_csv(&out.join("trajectories.csv"))
            .compute()?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_likelihood(cfg: &RunConfig, out: &Path, points: &Path) -> Result<ExitCode, Failure> {
    let schedule = cfg.schedule().usage()?;
    let icfg = cfg.integrator().usage()?;
    let fs = cfg.field(schedule).usage()?;
    let xs = read_points(points).usage()?;
    let dim = fs.dim();
    if let Some(bad) = xs.iter().position(|x| x.len() != dim) {
        return Err(Failure::Usage(anyhow!(
            "{}: row {} has {} columns, the density has dimension {dim}",
            points.display(),
            bad + 1,
            xs[bad].len()
        )));
    }
    create_out(out)?;

    let analytic = fs.density_at(schedule.t_min).compute()?;
    let rows = xs
        .par_iter()
        .map(|x| -> anyhow::Result<Vec<f64>> {
            let model = likelihood(&fs, &icfg, x)?.log_p;
            let exact = analytic.log_density(x)?;
            let mut row = x.clone();
            row.extend([model, exact, (model - exact).abs()]);
            Ok(row)
        })
        .collect::<anyhow::Result<Vec<_>>>()
        .compute()?;
    let mut header = gaugeflow::io::coordinate_header("x", dim);
    header.extend(["logp_model", "logp_analytic", "abs_err"].map(String::from));
    Table { header, rows }.write_csv(&out.join("logp.csv")).compute()?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_gauge_check(cfg: &RunConfig, out: &Path) -> Result<ExitCode, Failure> {
    let schedule = cfg.schedule().usage()?;
    let fs = cfg.field(schedule).usage()?;
    let times = cfg
        .gauge
        .times
        .clone()
        .unwrap_or_else(|| vec![schedule.t_min, 0.01, 0.1, 0.5, 1.0]);
    if let Some(t) = times.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Failure::Usage(anyhow!("gauge.times: {t} is outside [0, 1]")));
    }
    let n_mc = cfg.gauge.n_mc.unwrap_or(1000);
    if n_mc == 0 {
        return Err(Failure::Usage(anyhow!("gauge.n_mc must be positive")));
    }
    create_out(out)?;
    let reports = gauge_check(&fs.remainder, &fs.density, &schedule, &times, n_mc, cfg.seed).compute()?;
    gauge_table(&reports).write_csv(&out.join("gauge.csv")).compute()?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct IdAggregate<'a> {
    spec: &'a ManifoldSpec,
    modal_d: usize,
    agreement: f64,
    n_samples: usize,
    flag: Option<&'a str>,
    conservative: bool,
    max_commutator: f64,
}

fn cmd_id(cfg: &RunConfig, out: &Path) -> Result<ExitCode, Failure> {
    let spec = cfg
        .manifold
        .as_ref()
        .ok_or_else(|| Failure::Usage(anyhow!("the id command needs a [manifold] table")))?;
    spec.validate().usage()?;
    let id_cfg = cfg.id_config().usage()?;
    let density = cfg.density().usage()?;
    let remainder = cfg.remainder(&density).usage()?;
    create_out(out)?;

    let res = run_manifold_experiment(spec, &remainder, &id_cfg, cfg.seed).compute()?;
    let mut header = vec!["sample_id".to_string(), "d_hat".to_string()];
    header.extend((0..spec.ambient_dim).map(|i| format!("slope_{i}")));
    let mut table = Table::new(header);
    for (k, e) in res.estimates.iter().enumerate() {
        let mut row = vec![k as f64, e.d_hat as f64];
        row.extend(&e.slopes);
        table.push(row);
    }
    table.write_csv(&out.join("id.csv")).compute()?;
    let aggregate = IdAggregate {
        spec: &res.spec,
        modal_d: res.modal_d,
        agreement: res.agreement,
        n_samples: res.n_samples,
        flag: res.flag.as_deref(),
        conservative: res.conservative,
        max_commutator: res.max_commutator,
    };
    write_json(&out.join("id_aggregate.json"), &aggregate).compute()?;
    if let Some(flag) = &res.flag {
        eprintln!("warning: {flag}");
    }
    println!("modal d_hat = {} (agreement {:.2})", res.modal_d, res.agreement);
    Ok(ExitCode::SUCCESS)
}

/// gnuplot template for any of the emitted CSV files.
const PLOT_TEMPLATE: &str = "\
# gnuplot -e \"file='curl_trajectory.csv'; xcol=1; ycol=2\" plot_template.gp
set datafile separator ','
set key autotitle columnhead
plot file using xcol:ycol with lines
";

fn cmd_scenario(name: &str, seed: u64, out: &Path) -> Result<ExitCode, Failure> {
    let names: Vec<&str> = if name == "all" {
        scenario_names()
    } else if scenario_names().contains(&name) {
        vec![name]
    } else {
        return Err(Failure::Usage(anyhow!(
            "unknown scenario '{name}'; valid names: all, {}",
            scenario_names().join(", ")
        )));
    };
    create_out(out)?;
    let results: Vec<ScenarioResult> = names
        .par_iter()
        .map(|n| run_scenario(n, seed))
        .collect::<Result<_, _>>()
        .compute()?;

    for r in &results {
        for (stem, table) in &r.tables {
            table.write_csv(&out.join(format!("{stem}.csv"))).compute()?;
        }
        for (stem, doc) in &r.documents {
            write_json(&out.join(format!("{stem}.json")), doc).compute()?;
        }
        let status = match (r.as_expected(), r.expected_fail) {
            (true, false) => "pass",
            (true, true) => "fail (expected)",
            (false, true) => "pass (expected to fail)",
            (false, false) => "FAIL",
        };
        println!("{:<32} {status}", r.name);
        if let Some(e) = &r.error {
            eprintln!("  {}: {e}", r.name);
        }
    }
    write_json(&out.join("report.json"), &results).compute()?;
    std::fs::write(out.join("plot_template.gp"), PLOT_TEMPLATE)
        .context("writing plot template")
        .compute()?;

    let ok = results.iter().filter(|r| !r.expected_fail).all(|r| r.as_expected());
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use rdcontrol::adjoint::Pairing;
use rdcontrol::cg::optimize;
use rdcontrol::checks::{gradcheck, paired_difference};
use rdcontrol::config::RunConfig;
use rdcontrol::dynamics::ControlField;
use rdcontrol::io::{write_control, write_json_lines, write_trajectory};
use rdcontrol::noise::{Purpose, StreamId};
use rdcontrol::objective::estimate_cost;
use rdcontrol::Error;

#[derive(Parser)]
#[command(
    name = "rdcontrol",
    version,
    about = "Optimal control of stochastic reaction-diffusion equations"
)]
struct Cli {
    /// Worker threads for path parallelism (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate uncontrolled paths and write one CSV per path.
    Simulate {
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        paths: usize,
        /// Overrides the seed in the configuration.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare the adjoint gradient with finite differences.
    Gradcheck {
        config: PathBuf,
        #[arg(long, default_value_t = 5)]
        directions: usize,
        #[arg(long, default_value_t = 1e-4)]
        fd_step: f64,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, hide = true)]
        mismatched_quadrature: bool,
    },
    /// Run conjugate gradient descent from g = 0.
    Optimize {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Error(Error),
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Error(e.into())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Error(e.into())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: cannot set thread count: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Simulate {
            config,
            paths,
            seed,
            out,
        } => simulate(&config, paths, seed, &out),
        Command::Gradcheck {
            config,
            directions,
            fd_step,
            out,
            mismatched_quadrature,
        } => {
            let pairing = if mismatched_quadrature {
                Pairing::Mismatched
            } else {
                Pairing::Matched
            };
            gradcheck_cmd(&config, directions, fd_step, out.as_deref(), pairing)
        }
        Command::Optimize { config, out } => optimize_cmd(&config, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(4)
        }
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) => 2,
                Error::Blowup { .. } => 3,
                _ => 1,
            })
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn simulate(config: &Path, n_paths: usize, seed: Option<u64>, out: &Path) -> Result<(), Failure> {
    let start = Instant::now();
    let mut cfg = RunConfig::load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if n_paths == 0 {
        return Err(Error::Config("--paths must be positive".into()).into());
    }
    let r = cfg.resolve()?;
    fs::create_dir_all(out)?;
    let g = ControlField::zeros(&r.model);
    let batch = r.seeds.batch(0, Purpose::Forward, n_paths);
    let width = n_paths.to_string().len().max(4);
    let results: Vec<Result<(), Error>> = batch
        .streams
        .par_iter()
        .map(|s| {
            let path = r.model.simulate_path(&g, &r.seeds, *s)?;
            let file = out.join(format!("path_{:0width$}.csv", s.path));
            write_trajectory(BufWriter::new(File::create(file)?), &r.model, &path)
        })
        .collect();
    let mut blowups: Vec<serde_json::Value> = Vec::new();
    for res in results {
        match res {
            Ok(()) => {}
            Err(Error::Blowup { step, stream, .. }) => {
                blowups.push(json!({ "step": step, "stream": stream }))
            }
            Err(e) => return Err(e.into()),
        }
    }
    let summary = json!({
        "config": cfg,
        "scenario": r.scenario,
        "n_paths": n_paths,
        "streams": batch.streams,
        "blowup_count": blowups.len(),
        "blowups": blowups,
    });
    write_json(&out.join("summary.json"), &summary)?;
    write_json(
        &out.join("timing.json"),
        &json!({ "wall_seconds": start.elapsed().as_secs_f64() }),
    )?;
    if let Some(first) = summary["blowups"].get(0) {
        let step = first["step"].as_u64().unwrap_or(0) as usize;
        let stream: Option<StreamId> = serde_json::from_value(first["stream"].clone()).ok();
        return Err(Error::Blowup {
            step,
            stream,
            iteration: None,
        }
        .into());
    }
    Ok(())
}

fn gradcheck_cmd(
    config: &Path,
    dirs: usize,
    h: f64,
    out: Option<&Path>,
    pairing: Pairing,
) -> Result<(), Failure> {
    let cfg = RunConfig::load(config)?;
    if dirs == 0 || !(h > 0.0) {
        return Err(Error::Config("--directions and --fd-step must be positive".into()).into());
    }
    let r = cfg.resolve()?;
    let report = gradcheck(
        &r.model,
        &r.cost,
        r.cg.n_paths_grad,
        r.seeds,
        dirs,
        h,
        pairing,
    )?;
    let doc = json!({ "config": cfg, "report": report });
    match out {
        Some(p) => write_json(p, &doc)?,
        None => println!("{}", serde_json::to_string_pretty(&doc)?),
    }
    if !report.passed {
        return Err(Failure::Check(format!(
            "max FD error {:e}, max duality gap {:e}",
            report.max_fd_error, report.max_duality_gap
        )));
    }
    Ok(())
}

fn optimize_cmd(config: &Path, out: &Path) -> Result<(), Failure> {
    let start = Instant::now();
    let cfg = RunConfig::load(config)?;
    let r = cfg.resolve()?;
    fs::create_dir_all(out)?;
    let g0 = ControlField::zeros(&r.model);
    let outcome = optimize(&r.model, &r.cost, g0.clone(), &r.cg, r.seeds)?;
    write_json_lines(
        BufWriter::new(File::create(out.join("history.jsonl"))?),
        &outcome.state.history,
    )?;
    write_control(
        BufWriter::new(File::create(out.join("control.csv"))?),
        &r.model,
        &outcome.best_control,
    )?;

    let holdout = r.seeds.batch(0, Purpose::Holdout, r.cg.n_paths_eval);
    let initial = estimate_cost(&r.model, &g0, &r.cost, &holdout)?;
    let last = estimate_cost(&r.model, &outcome.best_control, &r.cost, &holdout)?;
    let diff = paired_difference(&r.model, &r.cost, &outcome.best_control, &g0, &holdout)?;
    let summary = json!({
        "config": cfg,
        "scenario": r.scenario,
        "iterations": outcome.state.iteration,
        "converged": outcome.converged(),
        "best_training_cost": outcome.best_cost,
        "holdout": {
            "n_paths": holdout.len(),
            "initial": initial,
            "final": last,
            "difference": diff,
        },
    });
    write_json(&out.join("summary.json"), &summary)?;
    write_json(
        &out.join("timing.json"),
        &json!({ "wall_seconds": start.elapsed().as_secs_f64() }),
    )?;
    Ok(())
}

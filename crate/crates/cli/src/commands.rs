use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use peridyn::{
    integrate_with, integrator_comparison, io, spatial_convergence_study,
    temporal_convergence_study, Axis, PeridynError, State, TimeConfig,
};
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::CliError;

/// Options shared by every subcommand.
pub struct Common {
    pub out: Option<PathBuf>,
    pub smoke: bool,
    pub threads: usize,
}

impl Common {
    fn out_dir(&self, cfg: &RunConfig) -> Result<PathBuf, CliError> {
        let dir = self
            .out
            .clone()
            .or_else(|| cfg.output.dir.clone())
            .unwrap_or_else(|| PathBuf::from("peridyn-out"));
        fs::create_dir_all(&dir)?;
        // with metadata.json, enough to re-run
        fs::write(dir.join("config.toml"), cfg.to_toml())?;
        Ok(dir)
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("metadata serializes");
    fs::write(path, text + "\n")?;
    Ok(())
}

fn snapshot_name(index: usize, t: f64) -> String {
    format!("u_{index:03}_t{t:.4}.pdfld")
}

pub fn run(cfg: &RunConfig, common: &Common) -> Result<(), CliError> {
    let problem = cfg.problem()?;
    let mut time = cfg.time_config()?;
    let mut snapshot_times = cfg.output.snapshot_times.clone();
    if common.smoke {
        time.t_final = time.t_final.min(cfg.study.smoke_t_eval);
        snapshot_times.retain(|&t| t <= time.t_final + 0.5 * time.dt);
    }
    let spec = cfg.benchmark();
    let ic = spec.initial_state(*problem.grid())?;
    let dir = common.out_dir(cfg)?;
    info!(
        "run: N = {}, dt = {}, T = {}, {} steps",
        problem.grid().n_points(),
        time.dt,
        time.t_final,
        time.n_steps()
    );

    let clock = Instant::now();
    let n_steps = time.n_steps();
    let report_every = (n_steps / 10).max(1);
    let traj = integrate_with(
        &ic,
        &problem,
        &time,
        cfg.time.scheme,
        &snapshot_times,
        |s: &State| {
            if s.step_index > 0 && s.step_index % report_every == 0 {
                info!("step {}/{} t = {:.4}", s.step_index, n_steps, s.t);
            }
        },
    )?;
    let elapsed = clock.elapsed().as_secs_f64();

    let mut written = Vec::new();
    for (k, s) in traj.snapshots.iter().enumerate() {
        let u = match problem.penalization() {
            Some(p) => p.restrict_to_physical(&s.u)?,
            None => s.u.clone(),
        };
        let name = snapshot_name(k, s.t);
        io::save_field(dir.join(&name), &u, s.t)?;
        if cfg.output.csv {
            io::save_field_csv(dir.join(name.replace(".pdfld", ".csv")), &u)?;
        }
        written.push(json!({ "time": s.t, "step": s.step_index, "file": name }));
    }

    let iters = &traj.newton_iterations;
    let kernel = problem.operator().kernel();
    let meta = json!({
        "command": "run",
        "version": env!("CARGO_PKG_VERSION"),
        "smoke": common.smoke,
        "threads": common.threads,
        "config": cfg,
        "effective_t_final": time.t_final,
        "n_steps": n_steps,
        "final_time": traj.final_state.t,
        "grid_points": problem.grid().n_points(),
        "gamma_discrete": kernel.gamma_discrete(),
        "gamma_continuum": kernel.gamma_continuum(),
        "snapshots": written,
        "newton": {
            "median": traj.median_newton_iterations(),
            "max": iters.iter().max().copied().unwrap_or(0),
            "total": iters.iter().sum::<usize>(),
            "per_step": iters,
        },
        "wall_clock": {
            "total_seconds": elapsed,
            "per_step_seconds": traj.step_seconds,
        },
    });
    write_json(&dir.join("metadata.json"), &meta)?;
    println!(
        "{} steps to t = {:.6}, {} snapshots in {}",
        n_steps,
        traj.final_state.t,
        traj.snapshots.len(),
        dir.display()
    );
    Ok(())
}

pub fn convergence(cfg: &RunConfig, axis: Axis, common: &Common) -> Result<(), CliError> {
    cfg.require_unforced()?;
    let spec = cfg.benchmark();
    let t_eval = if common.smoke {
        cfg.study.smoke_t_eval
    } else {
        cfg.study.t_eval
    };
    let dir = common.out_dir(cfg)?;
    let clock = Instant::now();
    let (table, dt) = match axis {
        Axis::Space => {
            let dt = if common.smoke {
                cfg.study.smoke_dt
            } else {
                cfg.time.dt
            };
            let table = spatial_convergence_study(
                &spec,
                &cfg.study.spacings,
                dt,
                t_eval,
                cfg.penalization.as_ref(),
                cfg.reference_policy(),
            )?;
            (table, Some(dt))
        }
        Axis::Time => {
            if cfg.penalization.is_some() {
                return Err(PeridynError::InvalidParameter(
                    "time-axis studies run unpenalized".into(),
                )
                .into());
            }
            let table = temporal_convergence_study(&spec, &cfg.study.time_steps, cfg.grid()?, t_eval)?;
            (table, None)
        }
    };
    let elapsed = clock.elapsed().as_secs_f64();
    let stem = match axis {
        Axis::Space => "convergence_space",
        Axis::Time => "convergence_time",
    };
    let text = table.to_text();
    print!("{text}");
    fs::write(dir.join(format!("{stem}.csv")), table.to_csv())?;
    fs::write(dir.join(format!("{stem}.txt")), &text)?;
    let meta = json!({
        "command": "convergence",
        "version": env!("CARGO_PKG_VERSION"),
        "axis": axis,
        "smoke": common.smoke,
        "threads": common.threads,
        "t_eval": t_eval,
        "dt": dt,
        "reference": cfg.reference_policy(),
        "config": cfg,
        "table": table,
        "wall_clock_seconds": elapsed,
    });
    write_json(&dir.join("metadata.json"), &meta)?;
    Ok(())
}

pub fn compare(cfg: &RunConfig, common: &Common) -> Result<(), CliError> {
    cfg.require_unforced()?;
    if cfg.penalization.is_some() {
        return Err(PeridynError::InvalidParameter("comparisons run unpenalized".into()).into());
    }
    let spec = cfg.benchmark();
    let t_eval = if common.smoke {
        cfg.study.smoke_t_eval
    } else {
        cfg.study.t_eval
    };
    // validate before the expensive part
    TimeConfig::new(cfg.time.dt, t_eval, spec.beta)?;
    let dir = common.out_dir(cfg)?;
    let clock = Instant::now();
    let cmp = integrator_comparison(&spec, &cfg.study.time_steps, cfg.grid()?, t_eval)?;
    let elapsed = clock.elapsed().as_secs_f64();
    let text = cmp.to_text();
    print!("{text}");
    fs::write(dir.join("compare.csv"), cmp.to_csv())?;
    fs::write(dir.join("compare.txt"), &text)?;
    let ordered = cmp.newmark_not_worse();
    let meta = json!({
        "command": "compare",
        "version": env!("CARGO_PKG_VERSION"),
        "smoke": common.smoke,
        "threads": common.threads,
        "t_eval": t_eval,
        "config": cfg,
        "comparison": cmp,
        "newmark_not_worse": ordered,
        "wall_clock_seconds": elapsed,
    });
    write_json(&dir.join("metadata.json"), &meta)?;
    if ordered {
        Ok(())
    } else {
        Err(CliError::Ordering)
    }
}

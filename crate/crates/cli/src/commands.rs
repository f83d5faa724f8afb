//! Command execution: each command produces CSV artifacts in memory; the
//! caller writes them.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use pidcp::experiments::{convergence_order, extract_eer, measure_point, value_table_on, SweepPoint};
use pidcp::problem::Problem;
use pidcp::steppers::{MethodConfig, Stepper};
use pidcp::{Error, Result};
use rayon::prelude::*;

use crate::config::{Command, RunConfig};

/// Rows of one CSV file.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub artifacts: Vec<Artifact>,
    /// Jump operator applications over all runs.
    pub matvecs: usize,
    /// Human-readable diagnostic lines.
    pub notes: Vec<String>,
}

/// Nine significant digits.
pub fn fmt9(x: f64) -> String {
    format!("{x:.8e}")
}

pub fn run_command(cfg: &RunConfig, jobs: usize) -> Result<Outcome> {
    match cfg.command {
        Command::Price => price(cfg),
        Command::Converge => converge(cfg, jobs),
        Command::Table => table(cfg),
        Command::Eer => eer(cfg),
        Command::Diagnose => diagnose(cfg),
    }
}

fn build(cfg: &RunConfig) -> Result<Problem> {
    Problem::build(&cfg.params, &cfg.option, &cfg.grid_spec())
}

fn price(cfg: &RunConfig) -> Result<Outcome> {
    let problem = build(cfg)?;
    let mcfg = cfg.method_config();
    let out = Stepper::new(&problem, mcfg)?.run()?;
    let m = problem.grid.axes[0].cells();
    let mut rows = Vec::new();
    for &[s1, s2] in &cfg.spots {
        let value = problem.grid.interpolate(&out.values, s1, s2)?;
        rows.push(vec![
            cfg.set_label().to_string(),
            cfg.option.payoff.name().to_string(),
            mcfg.method.name().to_string(),
            mcfg.kappa.to_string(),
            m.to_string(),
            mcfg.steps.to_string(),
            fmt9(s1),
            fmt9(s2),
            fmt9(value),
        ]);
    }
    Ok(Outcome {
        artifacts: vec![Artifact {
            name: "price.csv".into(),
            header: vec!["set", "payoff", "method", "kappa", "m", "Nprime", "s1", "s2", "value"],
            rows,
        }],
        matvecs: out.diagnostics.matvecs,
        notes: vec![format!("{} on m = {m} with {} steps", mcfg.method, mcfg.steps)],
    })
}

fn converge(cfg: &RunConfig, jobs: usize) -> Result<Outcome> {
    // distinct grids only, in increasing size
    let mut specs = BTreeMap::new();
    for &target in &cfg.m_values {
        let spec = cfg.grid_spec_for_cells(target);
        specs.entry(spec.nu[0]).or_insert(spec);
    }
    let specs: Vec<_> = specs.into_values().collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Invalid(format!("thread pool: {e}")))?;
    let points: Vec<SweepPoint> = pool.install(|| {
        specs
            .par_iter()
            .map(|spec| {
                let problem = Problem::build(&cfg.params, &cfg.option, spec)?;
                let n = problem.grid.axes[0].cells();
                let configs: Vec<MethodConfig> = cfg
                    .methods
                    .iter()
                    .map(|&method| cfg.settings.config(method, method.matched_steps(cfg.settings.kappa, n)))
                    .collect();
                info!("sweep point m = {n}");
                measure_point(problem, &configs, cfg.reference)
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let rois = cfg.roi.kinds();
    let mut errors = Vec::new();
    let mut orders = Vec::new();
    let mut matvecs = 0;
    for point in &points {
        matvecs += point.runs.iter().map(|r| r.4.matvecs).sum::<usize>();
        for rec in point.records.iter().filter(|r| rois.contains(&r.roi)) {
            errors.push(vec![
                rec.method.name().to_string(),
                rec.kappa.to_string(),
                rec.m.to_string(),
                rec.n.to_string(),
                rec.n_prime.to_string(),
                rec.roi.name().to_string(),
                fmt9(rec.error),
            ]);
        }
    }
    let ms: Vec<usize> = points.iter().map(|p| p.m).collect();
    let mut notes = Vec::new();
    for &method in &cfg.methods {
        for &roi in &rois {
            let errs: Vec<f64> = points
                .iter()
                .map(|p| {
                    p.records
                        .iter()
                        .find(|r| r.method == method && r.roi == roi)
                        .map_or(f64::NAN, |r| r.error)
                })
                .collect();
            let order = convergence_order(&ms, &errs).map_or(f64::NAN, |o| o);
            notes.push(format!("{method}({}) {roi} region order {order:.3}", cfg.settings.kappa));
            orders.push(vec![
                method.name().to_string(),
                cfg.settings.kappa.to_string(),
                cfg.set_label().to_string(),
                cfg.option.payoff.name().to_string(),
                roi.name().to_string(),
                fmt9(order),
            ]);
        }
    }
    Ok(Outcome {
        artifacts: vec![
            Artifact {
                name: "errors.csv".into(),
                header: vec!["method", "kappa", "m", "N", "Nprime", "roi", "error"],
                rows: errors,
            },
            Artifact {
                name: "orders.csv".into(),
                header: vec!["method", "kappa", "set", "payoff", "roi", "order"],
                rows: orders,
            },
        ],
        matvecs,
        notes,
    })
}

fn table(cfg: &RunConfig) -> Result<Outcome> {
    let set = cfg
        .preset
        .ok_or_else(|| Error::Invalid("the table command needs a preset".into()))?;
    let t = value_table_on(set, cfg.option.payoff, &cfg.grid_spec(), cfg.dt)?;
    let mut rows = Vec::new();
    for (r, &s2) in t.spots.iter().enumerate() {
        for (c, &s1) in t.spots.iter().enumerate() {
            rows.push(vec![
                set.name().to_string(),
                cfg.option.payoff.name().to_string(),
                fmt9(s1),
                fmt9(s2),
                format!("{:.3}", t.values[r][c]),
            ]);
        }
    }
    Ok(Outcome {
        artifacts: vec![Artifact {
            name: "tables.csv".into(),
            header: vec!["set", "payoff", "s1", "s2", "value"],
            rows,
        }],
        matvecs: t.matvecs,
        notes: vec![format!("MCS2-IT(2) on m = {} with {} steps", t.m, t.steps)],
    })
}

fn eer(cfg: &RunConfig) -> Result<Outcome> {
    let problem = build(cfg)?;
    let out = Stepper::new(&problem, cfg.method_config())?.run()?;
    let mask = extract_eer(&out.values, &problem.initial, cfg.eer_tol, cfg.option.strike)?;
    let grid = &problem.grid;
    let (n1, n2) = grid.shape();
    let mut rows = Vec::with_capacity(n1 * n2);
    for j in 0..n2 {
        for i in 0..n1 {
            rows.push(vec![
                cfg.set_label().to_string(),
                cfg.option.payoff.name().to_string(),
                i.to_string(),
                j.to_string(),
                fmt9(grid.axes[0].nodes[i]),
                fmt9(grid.axes[1].nodes[j]),
                u8::from(mask[grid.index(i, j)]).to_string(),
            ]);
        }
    }
    let exercised = mask.iter().filter(|&&b| b).count();
    Ok(Outcome {
        artifacts: vec![Artifact {
            name: "eer.csv".into(),
            header: vec!["set", "payoff", "i", "j", "s1", "s2", "exercised"],
            rows,
        }],
        matvecs: out.diagnostics.matvecs,
        notes: vec![format!("{exercised} of {} nodes in the exercise region", mask.len())],
    })
}

fn diagnose(cfg: &RunConfig) -> Result<Outcome> {
    let problem = build(cfg)?;
    let k = problem.jump.diagnostics()?;
    let mcfg = cfg.method_config();
    let out = Stepper::new(&problem, mcfg)?.run()?;
    let d = &out.diagnostics;
    let g = &problem.grid;
    let mut rows: Vec<(&str, String)> = vec![
        ("m1", g.axes[0].cells().to_string()),
        ("m2", g.axes[1].cells().to_string()),
        ("nodes", g.size().to_string()),
        ("min_width", fmt9(g.min_width())),
        ("s_max", fmt9(g.axes[0].s_max())),
        ("log_m1", k.m1.to_string()),
        ("log_m2", k.m2.to_string()),
        ("dx1", fmt9(k.dx1)),
        ("dx2", fmt9(k.dx2)),
        ("lambda", fmt9(k.lambda)),
        ("kernel_sum", fmt9(k.kernel_sum)),
        ("tail_mass", fmt9(k.tail_mass)),
        ("norm_bound", fmt9(k.norm_bound)),
        ("method", mcfg.method.name().to_string()),
        ("kappa", mcfg.kappa.to_string()),
        ("steps", mcfg.steps.to_string()),
        ("matvecs", d.matvecs.to_string()),
        ("damping_matvecs", d.damping_matvecs.to_string()),
    ];
    if let Some(mean) = d.mean_penalty_iterations() {
        rows.push(("mean_penalty_iterations", fmt9(mean)));
    }
    Ok(Outcome {
        notes: rows.iter().map(|(k, v)| format!("{k} = {v}")).collect(),
        artifacts: vec![Artifact {
            name: "diagnose.csv".into(),
            header: vec!["key", "value"],
            rows: rows.into_iter().map(|(k, v)| vec![k.to_string(), v]).collect(),
        }],
        matvecs: d.matvecs,
    })
}

/// Writes every artifact into `dir`, creating it if needed.
pub fn write_artifacts(outcome: &Outcome, dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    for a in &outcome.artifacts {
        let path = dir.join(&a.name);
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(&a.header)?;
        for row in &a.rows {
            w.write_record(row)?;
        }
        w.flush()?;
        paths.push(path);
    }
    Ok(paths)
}

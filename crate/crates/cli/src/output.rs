//! CSV and manifest writers.

use std::fs;
use std::path::{Path, PathBuf};

use electrolyte::analysis::{CapacitanceCurve, ConvergenceTable};
use electrolyte::scenario::{node_coordinates, LabeledProfile, RunKind, RunOutput, Scenario};
use electrolyte::solver::SolveReport;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> OutputError + '_ {
    move |source| OutputError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> OutputError + '_ {
    move |source| OutputError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>, OutputError> {
    csv::Writer::from_path(path).map_err(csv_err(path))
}

fn fmt(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v:e}")
    }
}

/// Writes profiles to one file, with a leading `label_column` when given.
pub fn write_profiles(
    path: &Path,
    profiles: &[&LabeledProfile],
    label_column: Option<&str>,
) -> Result<(), OutputError> {
    let mut w = writer(path)?;
    let first = profiles.first().expect("at least one profile");
    let dim = first.profile.mesh().dim();
    let mut header: Vec<String> = label_column.into_iter().map(String::from).collect();
    header.extend(["x", "y"].iter().take(dim).map(|s| s.to_string()));
    header.extend(first.columns.iter().cloned());
    w.write_record(&header).map_err(csv_err(path))?;
    for lp in profiles {
        let p = &lp.profile;
        for node in 0..p.mesh().n_nodes() {
            let mut rec: Vec<String> = label_column.map(|_| lp.label.clone()).into_iter().collect();
            let x = node_coordinates(p.mesh(), node);
            rec.extend(x[..dim].iter().map(|&v| fmt(v)));
            rec.extend((0..p.n_components()).map(|c| fmt(p.value(node, c))));
            w.write_record(&rec).map_err(csv_err(path))?;
        }
    }
    w.flush().map_err(io(path))
}

pub fn write_capacitance(path: &Path, curve: &CapacitanceCurve) -> Result<(), OutputError> {
    let mut w = writer(path)?;
    w.write_record(["phi_L", "Q", "C_dl"]).map_err(csv_err(path))?;
    for pt in &curve.points {
        w.write_record([fmt(pt.phi_l), fmt(pt.q), fmt(pt.c_dl)])
            .map_err(csv_err(path))?;
    }
    w.flush().map_err(io(path))
}

/// Rows per mesh and field, followed by `# slope` comment lines.
pub fn write_convergence(path: &Path, table: &ConvergenceTable) -> Result<(), OutputError> {
    let mut w = writer(path)?;
    w.write_record(["n_cells", "h", "field", "e_L2", "e_Linf"])
        .map_err(csv_err(path))?;
    for r in &table.rows {
        w.write_record([r.n_cells.to_string(), fmt(r.h), r.field.clone(), fmt(r.e2), fmt(r.einf)])
            .map_err(csv_err(path))?;
    }
    w.flush().map_err(io(path))?;
    drop(w);
    let mut footer = String::new();
    for s in &table.slopes {
        footer.push_str(&format!("# slope {} L2={:.4} Linf={:.4}\n", s.field, s.e2, s.einf));
    }
    let mut text = fs::read_to_string(path).map_err(io(path))?;
    text.push_str(&footer);
    fs::write(path, text).map_err(io(path))
}

/// Newton iteration log of every solve.
pub fn write_report(path: &Path, reports: &[(String, SolveReport)]) -> Result<(), OutputError> {
    let mut w = writer(path)?;
    w.write_record(["run", "iteration", "residual_inf", "step_inf"])
        .map_err(csv_err(path))?;
    for (label, r) in reports {
        for (i, res) in r.residual_history.iter().enumerate() {
            let step = r.step_history.get(i).copied().unwrap_or(f64::NAN);
            w.write_record([label.clone(), i.to_string(), fmt(*res), fmt(step)])
                .map_err(csv_err(path))?;
        }
    }
    w.flush().map_err(io(path))
}

#[derive(Serialize)]
struct RunSummary {
    label: String,
    converged: bool,
    iterations: usize,
    final_residual: f64,
    damping_events: usize,
    continuation_steps: usize,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    bias_thermal: f64,
    wall_seconds: f64,
    files: Vec<String>,
    runs: Vec<RunSummary>,
    scenario: &'a Scenario,
}

/// Writes every output of a run into `dir` and returns the file names.
pub fn write_all(
    dir: &Path,
    scenario: &Scenario,
    out: &RunOutput,
    wall_seconds: f64,
) -> Result<Vec<String>, OutputError> {
    fs::create_dir_all(dir).map_err(io(dir))?;
    let mut files = Vec::new();
    let mut emit = |name: String, f: &dyn Fn(&Path) -> Result<(), OutputError>| -> Result<(), OutputError> {
        f(&dir.join(&name))?;
        files.push(name);
        Ok(())
    };
    match scenario.kind {
        RunKind::CompareNp => {
            let all: Vec<&LabeledProfile> = out.profiles.iter().collect();
            emit("profile.csv".into(), &|p| write_profiles(p, &all, Some("model")))?;
        }
        RunKind::Profile => {
            if let Some(lp) = out.profiles.first() {
                emit("profile.csv".into(), &|p| write_profiles(p, &[lp], None))?;
            }
        }
        _ => {
            for lp in &out.profiles {
                emit(format!("profile_{}.csv", lp.label), &|p| write_profiles(p, &[lp], None))?;
            }
        }
    }
    if let Some(curve) = &out.capacitance {
        emit("capacitance.csv".into(), &|p| write_capacitance(p, curve))?;
    }
    if let Some(table) = &out.convergence {
        emit("convergence.csv".into(), &|p| write_convergence(p, table))?;
    }
    if !out.reports.is_empty() {
        emit("report.csv".into(), &|p| write_report(p, &out.reports))?;
    }
    files.push("manifest.toml".into());
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        bias_thermal: scenario.bias_thermal(),
        wall_seconds,
        files: files.clone(),
        runs: out
            .reports
            .iter()
            .map(|(label, r)| RunSummary {
                label: label.clone(),
                converged: r.converged,
                iterations: r.iterations,
                final_residual: r.final_residual(),
                damping_events: r.damping_events,
                continuation_steps: r.continuation_steps.len(),
            })
            .collect(),
        scenario,
    };
    let path = dir.join("manifest.toml");
    let text = toml::to_string(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(io(&path))?;
    Ok(files)
}

//! Error metrics against the fine reference, result tables and field exports.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::coefficient::{kappa_field, BetaField, DisplacementField, DEFAULT_CLAMP_EPS};
use crate::error::{Error, Result};
use crate::experiment::ExperimentConfig;
use crate::fem::{energy_form, l2_inner};
use crate::fine_solver::PicardTrace;
use crate::gmsfem::{IterationRecord, StageTimes};
use crate::grid::FineMesh;

/// Relative errors of a multiscale solution against the fine one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorPair {
    pub e_l2: f64,
    /// Relative error in the energy norm weighted by the converged fine coefficient.
    pub e_h1: f64,
}

fn diff(u: &DisplacementField, v: &DisplacementField) -> Result<DisplacementField> {
    if u.num_nodes() != v.num_nodes() {
        return Err(Error::Dimension(format!(
            "{} vs {} nodes",
            u.num_nodes(),
            v.num_nodes()
        )));
    }
    Ok(DisplacementField(
        u.0.iter().zip(&v.0).map(|(a, b)| [a[0] - b[0], a[1] - b[1]]).collect(),
    ))
}

pub fn error_l2(mesh: &FineMesh, u_ms: &DisplacementField, u_h: &DisplacementField) -> Result<f64> {
    let den = l2_inner(mesh, u_h, u_h);
    if den == 0.0 {
        return Err(Error::ZeroReference("error_l2"));
    }
    let e = diff(u_ms, u_h)?;
    Ok((l2_inner(mesh, &e, &e) / den).sqrt())
}

/// Energy error with `kappa` evaluated at `u_ref` (normally the converged fine solution).
pub fn error_energy(
    mesh: &FineMesh,
    beta: &BetaField,
    u_ref: &DisplacementField,
    u_ms: &DisplacementField,
    u_h: &DisplacementField,
) -> Result<f64> {
    let kappa = kappa_field(mesh, beta, u_ref, DEFAULT_CLAMP_EPS);
    error_energy_weighted(mesh, &kappa.values, u_ms, u_h)
}

/// Energy error for an already evaluated per-triangle coefficient.
pub fn error_energy_weighted(
    mesh: &FineMesh,
    kappa: &[f64],
    u_ms: &DisplacementField,
    u_h: &DisplacementField,
) -> Result<f64> {
    let den = energy_form(mesh, kappa, u_h, u_h);
    if den == 0.0 {
        return Err(Error::ZeroReference("error_energy"));
    }
    let e = diff(u_ms, u_h)?;
    Ok((energy_form(mesh, kappa, &e, &e) / den).sqrt())
}

pub fn error_pair(
    mesh: &FineMesh,
    kappa_h: &[f64],
    u_ms: &DisplacementField,
    u_h: &DisplacementField,
) -> Result<ErrorPair> {
    Ok(ErrorPair {
        e_l2: error_l2(mesh, u_ms, u_h)?,
        e_h1: error_energy_weighted(mesh, kappa_h, u_ms, u_h)?,
    })
}

/// Everything recorded about one multiscale run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub nb: String,
    #[serde(with = "crate::experiment::real")]
    pub delta: f64,
    pub iterations: Vec<IterationRecord>,
    pub converged: bool,
    pub errors: Option<ErrorPair>,
    pub times: StageTimes,
}

/// One line of a results table.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub nb: String,
    pub delta: f64,
    pub errors: ErrorPair,
    pub picard_iters: usize,
    pub basis_updates: usize,
    pub online_bases: usize,
    pub clamps: usize,
    pub wall_ms: f64,
}

pub const TABLE_HEADER: [&str; 9] = [
    "nb",
    "delta",
    "e_l2",
    "e_h1",
    "picard_iters",
    "basis_updates",
    "online_bases",
    "clamps",
    "wall_ms",
];

/// `inf` for an infinite value, shortest round-trip decimal otherwise.
pub fn format_real(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else {
        format!("{v:e}")
    }
}

pub fn parse_real(s: &str) -> Option<f64> {
    match s {
        "inf" => Some(f64::INFINITY),
        _ => s.parse().ok(),
    }
}

pub fn write_table_to<W: Write>(rows: &[TableRow], out: W) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::Config("results table has no rows".into()));
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TABLE_HEADER)?;
    for r in rows {
        w.write_record([
            r.nb.clone(),
            format_real(r.delta),
            format_real(r.errors.e_l2),
            format_real(r.errors.e_h1),
            r.picard_iters.to_string(),
            r.basis_updates.to_string(),
            r.online_bases.to_string(),
            r.clamps.to_string(),
            format_real(r.wall_ms),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_table(rows: &[TableRow], path: &Path) -> Result<()> {
    write_table_to(rows, BufWriter::new(File::create(path)?))
}

pub fn parse_table(text: &str) -> Result<Vec<TableRow>> {
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    if rd.headers()?.iter().ne(TABLE_HEADER) {
        return Err(Error::Config("unexpected table header".into()));
    }
    let bad = |what: &str, line: usize| Error::Config(format!("line {line}: bad {what}"));
    let mut rows = Vec::new();
    for (k, rec) in rd.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        let real = |i: usize| parse_real(&rec[i]).ok_or_else(|| bad(TABLE_HEADER[i], line));
        let count = |i: usize| rec[i].parse::<usize>().map_err(|_| bad(TABLE_HEADER[i], line));
        rows.push(TableRow {
            nb: rec[0].to_string(),
            delta: real(1)?,
            errors: ErrorPair {
                e_l2: real(2)?,
                e_h1: real(3)?,
            },
            picard_iters: count(4)?,
            basis_updates: count(5)?,
            online_bases: count(6)?,
            clamps: count(7)?,
            wall_ms: real(8)?,
        });
    }
    Ok(rows)
}

fn write_csv(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<f64>>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| format_real(*v)).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Nodal displacement as `x,y,ux,uy`.
pub fn write_displacement(mesh: &FineMesh, u: &DisplacementField, path: &Path) -> Result<()> {
    write_csv(
        path,
        &["x", "y", "ux", "uy"],
        mesh.nodes.iter().zip(&u.0).map(|(p, v)| vec![p[0], p[1], v[0], v[1]]),
    )
}

/// Per-triangle `kappa` and `beta` at centroids as `cx,cy,kappa,beta`.
pub fn write_coefficients(mesh: &FineMesh, kappa: &[f64], beta: &BetaField, path: &Path) -> Result<()> {
    write_csv(
        path,
        &["cx", "cy", "kappa", "beta"],
        (0..mesh.num_triangles()).map(|t| {
            let c = mesh.centroid(t);
            vec![c[0], c[1], kappa[t], beta.values[t]]
        }),
    )
}

/// A nodal scalar as `x,y,value`.
pub fn write_nodal_scalar(mesh: &FineMesh, values: &[f64], path: &Path) -> Result<()> {
    write_csv(
        path,
        &["x", "y", "value"],
        mesh.nodes.iter().zip(values).map(|(p, v)| vec![p[0], p[1], *v]),
    )
}

/// Run reports as a pretty-printed JSON array.
pub fn write_reports(reports: &[RunReport], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, reports).map_err(std::io::Error::from)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Fine Picard history as `iteration,change,clamps,cg_iterations`; the first change is empty.
pub fn write_picard_trace(trace: &PicardTrace, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "iteration,change,clamps,cg_iterations")?;
    for r in &trace.records {
        let change = r.change.map(format_real).unwrap_or_default();
        writeln!(w, "{},{},{},{}", r.iteration, change, r.clamps, r.cg_iterations)?;
    }
    w.flush()?;
    Ok(())
}

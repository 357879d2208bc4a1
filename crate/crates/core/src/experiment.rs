//! Experiment configuration and the runners behind the command line.
//!
//! A config is a TOML file with flat sections:
//!
//! ```toml
//! name = "model1"
//! [mesh]
//! nx = 200
//! coarse_nx = 20
//! [beta]
//! kind = "preset"
//! name = "model1-like"
//! channel_value = 1e-4
//! [source]
//! kind = "paper"
//! scale = 1.0
//! [sweep]
//! delta = [inf, 0.5, 0.25, 0.1, 0]
//! nb_off = [1, 3, 5, 7]
//! ```

use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficient::{build_beta_field, kappa_field, BetaField, BetaSpec, DisplacementField, DEFAULT_CLAMP_EPS};
use crate::error::{Error, Result};
use crate::fem::SourceSpec;
use crate::fine_solver::{picard_solve_fine, FineSystem, PicardOptions, PicardTrace};
use crate::gmsfem::{build_pou, gmsfem_picard, GmsfemOptions, PouMode, StageTimes, UpdatePolicy};
use crate::grid::{build_coarse_grid, build_fine_mesh, CoarseGrid, FineMesh};
use crate::reporting::{error_pair, RunReport, TableRow};

/// Reals that may be written as `inf` (TOML literal or string).
pub(crate) mod real {
    use serde::{Deserialize, Deserializer, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Int(i64),
        Text(String),
    }

    fn decode<E: serde::de::Error>(r: Repr) -> Result<f64, E> {
        match r {
            Repr::Num(v) => Ok(v),
            Repr::Int(v) => Ok(v as f64),
            Repr::Text(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Text(s) => Err(E::custom(format!("expected a number or `inf`, got `{s}`"))),
        }
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        decode(Repr::deserialize(d)?)
    }

    pub mod list {
        use serde::ser::SerializeSeq;
        use serde::{Deserialize, Deserializer, Serializer};

        struct One(f64);

        impl serde::Serialize for One {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                super::serialize(&self.0, s)
            }
        }

        pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
            let mut seq = s.serialize_seq(Some(v.len()))?;
            for x in v {
                seq.serialize_element(&One(*x))?;
            }
            seq.end()
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            Vec::<super::Repr>::deserialize(d)?
                .into_iter()
                .map(super::decode)
                .collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshConfig {
    pub nx: usize,
    pub ny: usize,
    pub coarse_nx: usize,
    pub coarse_ny: usize,
}

impl Default for MeshConfig {
    fn default() -> Self {
        Self {
            nx: 200,
            ny: 200,
            coarse_nx: 20,
            coarse_ny: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub delta0: f64,
    pub max_picard: usize,
    pub clamp_eps: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            delta0: 1e-7,
            max_picard: 200,
            clamp_eps: DEFAULT_CLAMP_EPS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(with = "real::list")]
    pub delta: Vec<f64>,
    pub nb_off: Vec<usize>,
    pub nb_on: Vec<usize>,
    pub theta: f64,
    pub online_tol: f64,
    pub pou: PouMode,
    pub max_dim_fraction: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        let p = UpdatePolicy::default();
        Self {
            delta: vec![f64::INFINITY, 0.5, 0.25, 0.1, 0.0],
            nb_off: vec![1, 3, 5, 7],
            nb_on: vec![0],
            theta: p.theta,
            online_tol: p.online_tol,
            pou: p.pou_mode,
            max_dim_fraction: p.max_dim_fraction,
        }
    }
}

fn default_name() -> String {
    "experiment".into()
}

fn default_beta() -> BetaSpec {
    BetaSpec::Constant { value: 1.0 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Prefix of every output file.
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub mesh: MeshConfig,
    #[serde(default = "default_beta")]
    pub beta: BetaSpec,
    #[serde(default)]
    pub source: SourceSpec,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: default_name(),
            mesh: MeshConfig::default(),
            beta: default_beta(),
            source: SourceSpec::default(),
            solver: SolverConfig::default(),
            sweep: SweepConfig::default(),
            output_dir: None,
        }
    }
}

fn invalid(field: &str, why: impl std::fmt::Display) -> Error {
    Error::Config(format!("{field}: {why}"))
}

impl ExperimentConfig {
    /// Parses and validates.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(invalid("name", "must be a nonempty file stem"));
        }
        let m = &self.mesh;
        for (field, v) in [
            ("mesh.nx", m.nx),
            ("mesh.ny", m.ny),
            ("mesh.coarse_nx", m.coarse_nx),
            ("mesh.coarse_ny", m.coarse_ny),
        ] {
            if v == 0 {
                return Err(invalid(field, "must be at least 1"));
            }
        }
        if !m.nx.is_multiple_of(m.coarse_nx) {
            return Err(invalid(
                "mesh.coarse_nx",
                format!("{} does not divide mesh.nx = {}", m.coarse_nx, m.nx),
            ));
        }
        if !m.ny.is_multiple_of(m.coarse_ny) {
            return Err(invalid(
                "mesh.coarse_ny",
                format!("{} does not divide mesh.ny = {}", m.coarse_ny, m.ny),
            ));
        }
        if m.coarse_nx < 2 || m.coarse_ny < 2 {
            return Err(invalid(
                "mesh.coarse_nx",
                "the coarse grid needs an interior node (at least 2x2 cells)",
            ));
        }
        let s = &self.solver;
        if !(s.delta0 > 0.0 && s.delta0.is_finite()) {
            return Err(invalid("solver.delta0", format!("must be positive, got {}", s.delta0)));
        }
        if s.max_picard == 0 {
            return Err(invalid("solver.max_picard", "must be at least 1"));
        }
        if !(s.clamp_eps > 0.0 && s.clamp_eps < 1.0) {
            return Err(invalid(
                "solver.clamp_eps",
                format!("must lie in (0, 1), got {}", s.clamp_eps),
            ));
        }
        match &self.source {
            SourceSpec::Paper { scale } if !scale.is_finite() => {
                return Err(invalid("source.scale", "must be finite"));
            }
            SourceSpec::Constant { value } if !value.iter().all(|v| v.is_finite()) => {
                return Err(invalid("source.value", "must be finite"));
            }
            _ => {}
        }
        let w = &self.sweep;
        for (field, empty) in [
            ("sweep.delta", w.delta.is_empty()),
            ("sweep.nb_off", w.nb_off.is_empty()),
            ("sweep.nb_on", w.nb_on.is_empty()),
        ] {
            if empty {
                return Err(invalid(field, "must not be empty"));
            }
        }
        for (k, d) in w.delta.iter().enumerate() {
            if d.is_nan() || *d < 0.0 {
                return Err(invalid(
                    &format!("sweep.delta[{k}]"),
                    format!("must be >= 0 or inf, got {d}"),
                ));
            }
        }
        if let Some(k) = w.nb_off.iter().position(|&n| n == 0) {
            return Err(invalid(&format!("sweep.nb_off[{k}]"), "must be at least 1"));
        }
        if !(w.theta > 0.0 && w.theta <= 1.0) {
            return Err(invalid("sweep.theta", format!("must lie in (0, 1], got {}", w.theta)));
        }
        if w.online_tol.is_nan() || w.online_tol < 0.0 {
            return Err(invalid(
                "sweep.online_tol",
                format!("must be >= 0, got {}", w.online_tol),
            ));
        }
        if !(w.max_dim_fraction > 0.0 && w.max_dim_fraction <= 1.0) {
            return Err(invalid(
                "sweep.max_dim_fraction",
                format!("must lie in (0, 1], got {}", w.max_dim_fraction),
            ));
        }
        Ok(())
    }

    pub fn picard_options(&self) -> PicardOptions {
        PicardOptions {
            delta0: self.solver.delta0,
            max_iter: self.solver.max_picard,
            ..PicardOptions::default()
        }
    }

    /// Sweep cells ordered by `nb_off`, then `nb_on`, then `delta`.
    pub fn cells(&self) -> Vec<UpdatePolicy> {
        let w = &self.sweep;
        let mut out = Vec::new();
        for &nb_off in &w.nb_off {
            for &nb_on in &w.nb_on {
                for &delta in &w.delta {
                    out.push(UpdatePolicy {
                        delta,
                        theta: w.theta,
                        online_tol: w.online_tol,
                        nb_off,
                        nb_on,
                        pou_mode: w.pou,
                        max_dim_fraction: w.max_dim_fraction,
                    });
                }
            }
        }
        out
    }
}

/// Mesh, coarse grid and `beta` of a validated config.
pub struct Problem {
    pub mesh: FineMesh,
    pub grid: CoarseGrid,
    pub beta: BetaField,
}

impl Problem {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let mesh = build_fine_mesh(cfg.mesh.nx, cfg.mesh.ny)?;
        let grid = build_coarse_grid(&mesh, cfg.mesh.coarse_nx, cfg.mesh.coarse_ny)?;
        let beta = build_beta_field(&mesh, &cfg.beta)?;
        Ok(Self { mesh, grid, beta })
    }

    pub fn system(&self, cfg: &ExperimentConfig) -> Result<FineSystem<'_>> {
        FineSystem::new(&self.mesh, &self.beta, &cfg.source, cfg.solver.clamp_eps)
    }
}

/// Converged (or last) fine iterate with its history and coefficient.
pub struct FineReference {
    pub u: DisplacementField,
    pub trace: PicardTrace,
    pub kappa: Vec<f64>,
}

pub fn solve_fine(cfg: &ExperimentConfig, problem: &Problem) -> Result<FineReference> {
    let system = problem.system(cfg)?;
    let (u, trace) = picard_solve_fine(&system, &cfg.picard_options())?;
    let kappa = kappa_field(&problem.mesh, &problem.beta, &u, cfg.solver.clamp_eps).values;
    Ok(FineReference { u, trace, kappa })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunSettings {
    /// Concurrent cells; `0` uses every core.
    pub workers: usize,
    /// Zero all wall-clock fields so reruns are byte-identical.
    pub deterministic: bool,
}

pub struct SweepOutcome {
    pub fine_trace: PicardTrace,
    pub rows: Vec<TableRow>,
    pub reports: Vec<RunReport>,
}

impl SweepOutcome {
    pub fn all_converged(&self) -> bool {
        self.fine_trace.converged && self.reports.iter().all(|r| r.converged)
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("workers: {e}")))
}

/// Fine reference once, then one multiscale run per cell. Rows keep cell order.
pub fn run_sweep(cfg: &ExperimentConfig, settings: RunSettings) -> Result<SweepOutcome> {
    let problem = Problem::new(cfg)?;
    let pool = pool(settings.workers)?;
    pool.install(|| {
        let fine = solve_fine(cfg, &problem)?;
        let system = problem.system(cfg)?;
        let opts = GmsfemOptions {
            picard: cfg.picard_options(),
            ..GmsfemOptions::default()
        };
        let cells = cfg.cells();
        let runs: Vec<Result<(TableRow, RunReport)>> = cells
            .par_iter()
            .map(|policy| {
                let start = Instant::now();
                let (u, trace) = gmsfem_picard(&system, &problem.grid, policy, &opts)?;
                let errors = error_pair(&problem.mesh, &fine.kappa, &u, &fine.u)?;
                let wall_ms = if settings.deterministic {
                    0.0
                } else {
                    start.elapsed().as_secs_f64() * 1e3
                };
                let row = TableRow {
                    nb: policy.nb_label(),
                    delta: policy.delta,
                    errors,
                    picard_iters: trace.picard_iterations(),
                    basis_updates: trace.basis_builds,
                    online_bases: trace.online_bases,
                    clamps: trace.final_clamps,
                    wall_ms,
                };
                let report = RunReport {
                    config: cfg.clone(),
                    nb: policy.nb_label(),
                    delta: policy.delta,
                    iterations: trace.iterations,
                    converged: trace.converged,
                    errors: Some(errors),
                    times: if settings.deterministic {
                        StageTimes::default()
                    } else {
                        trace.times
                    },
                };
                Ok((row, report))
            })
            .collect();
        let mut rows = Vec::with_capacity(runs.len());
        let mut reports = Vec::with_capacity(runs.len());
        for run in runs {
            let (row, report) = run?;
            rows.push(row);
            reports.push(report);
        }
        Ok(SweepOutcome {
            fine_trace: fine.trace,
            rows,
            reports,
        })
    })
}

/// Field selector of `export-field`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    /// Fine displacement.
    Displacement,
    /// `kappa` at the fine solution, with `beta`.
    Kappa,
    /// `chi_i` of coarse node `i`.
    Pou(usize),
    /// `sum_i chi_i`.
    PouSum,
}

impl std::str::FromStr for FieldKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "u" => Ok(Self::Displacement),
            "kappa" => Ok(Self::Kappa),
            "pou-sum" => Ok(Self::PouSum),
            _ => match s.strip_prefix("pou:").map(str::parse) {
                Some(Ok(i)) => Ok(Self::Pou(i)),
                _ => Err(Error::UnknownField(s.into())),
            },
        }
    }
}

impl FieldKind {
    pub fn file_stem(&self) -> String {
        match self {
            Self::Displacement => "u".into(),
            Self::Kappa => "kappa".into(),
            Self::Pou(i) => format!("pou{i}"),
            Self::PouSum => "pou_sum".into(),
        }
    }
}

/// Values of an exported field.
pub enum FieldData {
    Displacement(DisplacementField),
    Coefficients { kappa: Vec<f64> },
    Nodal(Vec<f64>),
}

/// Computes the requested field. Partitions of unity are built for the
/// coefficient of the converged fine solution, the same one the last rebuild of
/// a `delta = 0` run would see.
pub fn field_data(cfg: &ExperimentConfig, problem: &Problem, which: FieldKind) -> Result<(FieldData, PicardTrace)> {
    if let FieldKind::Pou(i) = which {
        let n = problem.grid.num_coarse_nodes();
        if i >= n {
            return Err(Error::Config(format!(
                "pou index {i} out of range (coarse nodes 0..{n})"
            )));
        }
    }
    let fine = solve_fine(cfg, problem)?;
    let data = match which {
        FieldKind::Displacement => FieldData::Displacement(fine.u),
        FieldKind::Kappa => FieldData::Coefficients { kappa: fine.kappa },
        FieldKind::Pou(i) => {
            let pou = build_pou(&problem.mesh, &problem.grid, &fine.kappa, cfg.sweep.pou)?;
            FieldData::Nodal(pou.field(&problem.mesh, i))
        }
        FieldKind::PouSum => {
            let pou = build_pou(&problem.mesh, &problem.grid, &fine.kappa, cfg.sweep.pou)?;
            FieldData::Nodal(pou.sum_field(&problem.mesh))
        }
    };
    Ok((data, fine.trace))
}

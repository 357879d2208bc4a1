//! The GMsFEM-Picard loop with the coefficient-change update rule.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficient::DisplacementField;
use crate::error::{Error, Result};
use crate::fem::{local_load, SparseSpd};
use crate::fine_solver::{relative_change, FineSystem, PicardOptions};
use crate::grid::{all_neighborhoods, CoarseGrid, Neighborhood};

use super::offline::{offline_basis, EigenMethod};
use super::online::{online_adaptive_solve, LocalSolvers, OnlineSettings};
use super::pou::{build_pou, PouMode};
use super::space::{assemble_space, coarse_solve, MultiscaleSpace};

/// Basis construction and update settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdatePolicy {
    /// Relative coefficient change that triggers a rebuild; `inf` never rebuilds.
    pub delta: f64,
    pub theta: f64,
    pub online_tol: f64,
    pub nb_off: usize,
    pub nb_on: usize,
    pub pou_mode: PouMode,
    /// Space dimension cap as a fraction of the fine free dofs.
    pub max_dim_fraction: f64,
}

impl Default for UpdatePolicy {
    fn default() -> Self {
        Self {
            delta: 0.0,
            theta: 1.0,
            online_tol: 0.0,
            nb_off: 3,
            nb_on: 0,
            pou_mode: PouMode::Msfem,
            max_dim_fraction: 0.2,
        }
    }
}

impl UpdatePolicy {
    pub fn validate(&self) -> Result<()> {
        if self.delta.is_nan() || self.delta < 0.0 {
            return Err(Error::Config(format!("delta must be >= 0 or inf, got {}", self.delta)));
        }
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return Err(Error::Config(format!("theta must lie in (0, 1], got {}", self.theta)));
        }
        if self.online_tol.is_nan() || self.online_tol < 0.0 {
            return Err(Error::Config(format!(
                "online_tol must be >= 0, got {}",
                self.online_tol
            )));
        }
        if self.nb_off == 0 {
            return Err(Error::Config("nb_off must be at least 1".into()));
        }
        if !(self.max_dim_fraction > 0.0 && self.max_dim_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "max_dim_fraction must lie in (0, 1], got {}",
                self.max_dim_fraction
            )));
        }
        Ok(())
    }

    /// `3` or `3+2`.
    pub fn nb_label(&self) -> String {
        if self.nb_on == 0 {
            self.nb_off.to_string()
        } else {
            format!("{}+{}", self.nb_off, self.nb_on)
        }
    }
}

/// Which space the coarse problem is posed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SpaceKind {
    #[default]
    Multiscale,
    /// All fine free dofs; reproduces the fine Picard iteration.
    FullFine,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GmsfemOptions {
    pub picard: PicardOptions,
    pub eigen: EigenMethod,
    pub space: SpaceKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub change: Option<f64>,
    /// Coefficient change against the last rebuild, once the step is accepted.
    pub indicator: Option<f64>,
    pub rebuilt: bool,
    /// Dimension of the space this step was solved in.
    pub dimension: usize,
    /// Online rounds of the build that followed this step.
    pub online_rounds: usize,
    pub sum_r2: Option<f64>,
    pub clamps: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimes {
    pub offline_ms: f64,
    pub online_ms: f64,
    pub coarse_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmsfemTrace {
    pub iterations: Vec<IterationRecord>,
    pub converged: bool,
    pub basis_builds: usize,
    /// Online functions created over the whole run.
    pub online_bases: usize,
    pub final_dimension: usize,
    /// Clamped triangles in the coefficient of the returned solution.
    pub final_clamps: usize,
    /// Smallest `lambda_{l_i + 1}` over the neighborhoods of the last build.
    pub min_next_eigenvalue: Option<f64>,
    pub times: StageTimes,
}

impl GmsfemTrace {
    pub fn picard_iterations(&self) -> usize {
        self.iterations.len()
    }
}

/// Relative `L2` change of a piecewise constant coefficient on a uniform mesh.
pub fn kappa_change_indicator(kappa_old: &[f64], kappa_new: &[f64]) -> f64 {
    assert_eq!(kappa_old.len(), kappa_new.len(), "coefficient fields differ in length");
    let num: f64 = kappa_old.iter().zip(kappa_new).map(|(a, b)| (a - b) * (a - b)).sum();
    let den: f64 = kappa_old.iter().map(|a| a * a).sum();
    (num / den).sqrt()
}

struct BuildOutcome {
    space: MultiscaleSpace,
    online_rounds: usize,
    online_added: usize,
    sum_r2: Option<f64>,
    min_next_eigenvalue: Option<f64>,
}

/// Shared inputs for building spaces.
struct SpaceBuilder<'s, 'a> {
    system: &'s FineSystem<'a>,
    grid: &'s CoarseGrid,
    nbs: Vec<Neighborhood>,
    snapshots: Vec<Neighborhood>,
    probes: Vec<Vec<f64>>,
    policy: UpdatePolicy,
    eigen: EigenMethod,
    kind: SpaceKind,
    warm: Vec<Vec<Vec<f64>>>,
    times: StageTimes,
}

impl<'s, 'a> SpaceBuilder<'s, 'a> {
    fn new(system: &'s FineSystem<'a>, grid: &'s CoarseGrid, policy: UpdatePolicy, opts: &GmsfemOptions) -> Self {
        let nbs = all_neighborhoods(grid, system.mesh, &system.dofs);
        let snapshots: Vec<_> = nbs.iter().map(|nb| nb.snapshot(system.mesh)).collect();
        let probes = snapshots
            .iter()
            .map(|nb| local_load(system.mesh, nb, &system.f))
            .collect();
        Self {
            system,
            grid,
            nbs,
            snapshots,
            probes,
            policy,
            eigen: opts.eigen,
            kind: opts.space,
            warm: Vec::new(),
            times: StageTimes::default(),
        }
    }

    fn build(&mut self, kappa: &[f64], a: &SparseSpd, generation: usize) -> Result<BuildOutcome> {
        if self.kind == SpaceKind::FullFine {
            return Ok(BuildOutcome {
                space: MultiscaleSpace::full(a, generation)?,
                online_rounds: 0,
                online_added: 0,
                sum_r2: None,
                min_next_eigenvalue: None,
            });
        }
        let mesh = self.system.mesh;
        let start = Instant::now();
        let pou = build_pou(mesh, self.grid, kappa, self.policy.pou_mode)?;
        let weight = pou.weight(mesh, self.grid);
        let nb_off = self.policy.nb_off;
        let eigen = self.eigen;
        let warm = &self.warm;
        let mut locals = self
            .snapshots
            .par_iter()
            .zip(self.probes.par_iter())
            .enumerate()
            .map(|(i, (nb, probe))| {
                let start = warm.get(i).map(|b| b.as_slice());
                offline_basis(mesh, nb, kappa, &pou, &weight, probe, nb_off, eigen, start)
            })
            .collect::<Result<Vec<_>>>()?;
        self.warm = locals.iter_mut().map(|o| std::mem::take(&mut o.block)).collect();
        let min_next = locals
            .iter()
            .filter_map(|o| o.eigenvalues.last().copied())
            .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.min(v))));
        let counts = locals.iter().map(|o| o.bases.len()).collect();
        let bases = locals.into_iter().flat_map(|o| o.bases).collect();
        let space = assemble_space(bases, a, counts, generation)?;
        self.times.offline_ms += start.elapsed().as_secs_f64() * 1e3;

        if self.policy.nb_on == 0 {
            return Ok(BuildOutcome {
                space,
                online_rounds: 0,
                online_added: 0,
                sum_r2: None,
                min_next_eigenvalue: min_next,
            });
        }
        let start = Instant::now();
        let solvers = LocalSolvers::new(mesh, &self.nbs, kappa)?;
        let settings = OnlineSettings {
            theta: self.policy.theta,
            tol: self.policy.online_tol,
            max_rounds: self.policy.nb_on,
            max_dim: ((self.policy.max_dim_fraction * self.system.num_free() as f64).floor() as usize).max(1),
        };
        let (_, space, log) = online_adaptive_solve(space, a, &self.system.load, &self.nbs, &solvers, &settings)?;
        self.times.online_ms += start.elapsed().as_secs_f64() * 1e3;
        Ok(BuildOutcome {
            space,
            online_rounds: log.rounds.len(),
            online_added: log.bases_added(),
            sum_r2: log.final_sum_r2,
            min_next_eigenvalue: min_next,
        })
    }
}

/// GMsFEM-Picard iteration from `u = 0`.
///
/// Each step solves the problem linearized at the current iterate in the
/// current space. After an accepted step the coefficient change against the
/// last rebuild is measured and, when it exceeds `policy.delta` (always for
/// `delta = 0`), offline and online functions are rebuilt for the new
/// coefficient.
pub fn gmsfem_picard(
    system: &FineSystem<'_>,
    grid: &CoarseGrid,
    policy: &UpdatePolicy,
    opts: &GmsfemOptions,
) -> Result<(DisplacementField, GmsfemTrace)> {
    gmsfem_picard_observed(system, grid, policy, opts, &mut |_, _| {})
}

/// As [`gmsfem_picard`], calling `observe(iteration, u_free)` after every solve.
pub fn gmsfem_picard_observed(
    system: &FineSystem<'_>,
    grid: &CoarseGrid,
    policy: &UpdatePolicy,
    opts: &GmsfemOptions,
    observe: &mut dyn FnMut(usize, &[f64]),
) -> Result<(DisplacementField, GmsfemTrace)> {
    policy.validate()?;
    opts.picard.validate()?;
    let total = Instant::now();
    let mut builder = SpaceBuilder::new(system, grid, *policy, opts);

    let mut field = DisplacementField::zeros(system.mesh.num_nodes());
    let mut u_old = vec![0.0; system.num_free()];
    let (a0, kappa0) = system.linearize(&field);
    let first = builder.build(&kappa0.values, &a0, 0)?;
    let mut space = first.space;
    let mut online_bases = first.online_added;
    let mut min_next = first.min_next_eigenvalue;
    let mut kappa_ref = kappa0.values;
    let mut builds = 1;
    let mut records: Vec<IterationRecord> = Vec::new();
    let mut converged = false;
    let mut coarse_ms = 0.0;

    for it in 1..=opts.picard.max_iter {
        let (a, kappa) = system.linearize(&field);
        let start = Instant::now();
        let u_new = coarse_solve(&space, &a, &system.load)?.u;
        coarse_ms += start.elapsed().as_secs_f64() * 1e3;
        observe(it, &u_new);
        let change = (it > 1).then(|| relative_change(opts.picard.norm, &a, system.mesh, &system.dofs, &u_new, &u_old));
        let zero = u_new.iter().all(|&v| v == 0.0);
        let mut record = IterationRecord {
            iteration: it,
            change,
            indicator: None,
            rebuilt: false,
            dimension: space.dim(),
            online_rounds: 0,
            sum_r2: None,
            clamps: kappa.clamps,
        };
        u_old = u_new;
        field = system.to_field(&u_old);
        if change.is_some_and(|c| c <= opts.picard.delta0) || (it == 1 && zero) {
            records.push(record);
            converged = true;
            break;
        }
        let kappa_new = system.kappa(&field);
        let indicator = kappa_change_indicator(&kappa_ref, &kappa_new.values);
        record.indicator = Some(indicator);
        if policy.delta == 0.0 || indicator > policy.delta {
            let a_new = system.assembler.assemble(&kappa_new.values);
            let built = builder.build(&kappa_new.values, &a_new, space.generation + 1)?;
            space = built.space;
            online_bases += built.online_added;
            min_next = built.min_next_eigenvalue.or(min_next);
            record.rebuilt = true;
            record.online_rounds = built.online_rounds;
            record.sum_r2 = built.sum_r2;
            kappa_ref = kappa_new.values;
            builds += 1;
        }
        records.push(record);
    }
    let final_clamps = system.kappa(&field).clamps;
    let mut times = builder.times;
    times.coarse_ms = coarse_ms;
    times.total_ms = total.elapsed().as_secs_f64() * 1e3;
    Ok((
        field,
        GmsfemTrace {
            iterations: records,
            converged,
            basis_builds: builds,
            online_bases,
            final_dimension: space.dim(),
            final_clamps,
            min_next_eigenvalue: min_next,
            times,
        },
    ))
}

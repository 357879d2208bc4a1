//! Fine-scale reference solve by Picard iteration.

use serde::{Deserialize, Serialize};

use crate::coefficient::{kappa_field, BetaField, DisplacementField, KappaField, DEFAULT_CLAMP_EPS};
use crate::error::{Error, Result};
use crate::fem::{assemble_load, SourceSpec, SparseSpd, StiffnessAssembler};
use crate::grid::{DofMap, FineMesh};
use crate::linalg::{self, spd_solve, Cholesky, DEFAULT_CG_MAX_ITER, DEFAULT_CG_TOL};

/// Norm used by the Picard stopping rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChangeNorm {
    /// Energy norm with the coefficient of the current iterate.
    #[default]
    Energy,
    L2,
}

/// Fine discretization data shared by every linearization.
#[derive(Debug, Clone)]
pub struct FineSystem<'a> {
    pub mesh: &'a FineMesh,
    pub beta: &'a BetaField,
    pub f: SourceSpec,
    pub dofs: DofMap,
    pub assembler: StiffnessAssembler,
    pub load: Vec<f64>,
    pub clamp_eps: f64,
}

impl<'a> FineSystem<'a> {
    pub fn new(mesh: &'a FineMesh, beta: &'a BetaField, f: &SourceSpec, clamp_eps: f64) -> Result<Self> {
        if beta.values.len() != mesh.num_triangles() {
            return Err(Error::Dimension(format!(
                "beta has {} values for {} triangles",
                beta.values.len(),
                mesh.num_triangles()
            )));
        }
        if !(clamp_eps > 0.0 && clamp_eps < 1.0) {
            return Err(Error::Config(format!("clamp_eps must lie in (0, 1), got {clamp_eps}")));
        }
        let dofs = DofMap::new(mesh);
        let assembler = StiffnessAssembler::new(mesh, &dofs);
        let load = assemble_load(mesh, &dofs, f);
        Ok(Self {
            mesh,
            beta,
            f: f.clone(),
            dofs,
            assembler,
            load,
            clamp_eps,
        })
    }

    pub fn num_free(&self) -> usize {
        self.dofs.num_free()
    }

    pub fn kappa(&self, u: &DisplacementField) -> KappaField {
        kappa_field(self.mesh, self.beta, u, self.clamp_eps)
    }

    /// Stiffness frozen at `u`, with its coefficient.
    pub fn linearize(&self, u: &DisplacementField) -> (SparseSpd, KappaField) {
        let kappa = self.kappa(u);
        (self.assembler.assemble(&kappa.values), kappa)
    }

    pub fn to_field(&self, free: &[f64]) -> DisplacementField {
        DisplacementField::from_node_dofs(&self.dofs.expand(free))
    }

    pub fn to_free(&self, u: &DisplacementField) -> Vec<f64> {
        self.dofs.restrict(&u.to_node_dofs())
    }
}

/// Inner linear solver choice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LinearSolve {
    Cg {
        tol: f64,
        max_iter: usize,
    },
    /// Dense Cholesky; only sensible for small meshes.
    Dense,
}

impl Default for LinearSolve {
    fn default() -> Self {
        LinearSolve::Cg {
            tol: DEFAULT_CG_TOL,
            max_iter: DEFAULT_CG_MAX_ITER,
        }
    }
}

impl LinearSolve {
    /// Returns the solution and the iteration count (0 for dense).
    pub fn solve(&self, a: &SparseSpd, b: &[f64], x0: &[f64]) -> Result<(Vec<f64>, usize)> {
        match *self {
            LinearSolve::Cg { tol, max_iter } => {
                let out = spd_solve(a, b, Some(x0), tol, max_iter)?;
                Ok((out.x, out.iterations))
            }
            LinearSolve::Dense => {
                if a.nrows > linalg::DENSE_FALLBACK_LIMIT {
                    return Err(Error::Dimension(format!(
                        "dense solve requested for {} unknowns (limit {})",
                        a.nrows,
                        linalg::DENSE_FALLBACK_LIMIT
                    )));
                }
                Ok((Cholesky::factor(&a.to_dense())?.solve(b), 0))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PicardOptions {
    pub delta0: f64,
    pub max_iter: usize,
    pub norm: ChangeNorm,
    pub linear: LinearSolve,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self {
            delta0: 1e-7,
            max_iter: 200,
            norm: ChangeNorm::Energy,
            linear: LinearSolve::default(),
        }
    }
}

impl PicardOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta0 > 0.0 && self.delta0.is_finite()) {
            return Err(Error::Config(format!("delta0 must be positive, got {}", self.delta0)));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PicardRecord {
    pub iteration: usize,
    /// Relative change against the previous iterate; `None` for the first step.
    pub change: Option<f64>,
    /// Clamped triangles in the coefficient used for this step.
    pub clamps: usize,
    pub cg_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PicardTrace {
    pub records: Vec<PicardRecord>,
    pub converged: bool,
    /// Clamped triangles in the coefficient of the returned iterate.
    pub final_clamps: usize,
    pub norm: ChangeNorm,
}

impl PicardTrace {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }
}

/// Relative change `|u_new - u_old| / |u_old|` in the requested norm. A zero
/// pair counts as no change.
pub fn relative_change(
    norm: ChangeNorm,
    a: &SparseSpd,
    mesh: &FineMesh,
    dofs: &DofMap,
    u_new: &[f64],
    u_old: &[f64],
) -> f64 {
    let diff: Vec<f64> = u_new.iter().zip(u_old).map(|(x, y)| x - y).collect();
    let (num, den) = match norm {
        ChangeNorm::Energy => (a.bilinear(&diff, &diff), a.bilinear(u_old, u_old)),
        ChangeNorm::L2 => {
            let d = DisplacementField::from_node_dofs(&dofs.expand(&diff));
            let o = DisplacementField::from_node_dofs(&dofs.expand(u_old));
            (crate::fem::l2_inner(mesh, &d, &d), crate::fem::l2_inner(mesh, &o, &o))
        }
    };
    if num == 0.0 {
        0.0
    } else if den == 0.0 {
        f64::INFINITY
    } else {
        (num / den).sqrt()
    }
}

/// Picard iteration from `u = 0`: solve `A(u^n) u^{n+1} = b` until the relative
/// change drops to `delta0`. Running out of iterations is reported in the trace,
/// not as an error.
pub fn picard_solve_fine(system: &FineSystem<'_>, opts: &PicardOptions) -> Result<(DisplacementField, PicardTrace)> {
    opts.validate()?;
    let n = system.num_free();
    let mut u_old = vec![0.0; n];
    let mut field = DisplacementField::zeros(system.mesh.num_nodes());
    let mut records = Vec::new();
    let mut converged = false;
    for it in 1..=opts.max_iter {
        let (a, kappa) = system.linearize(&field);
        let (u_new, cg_iterations) = opts.linear.solve(&a, &system.load, &u_old)?;
        let change = if it == 1 {
            None
        } else {
            Some(relative_change(
                opts.norm,
                &a,
                system.mesh,
                &system.dofs,
                &u_new,
                &u_old,
            ))
        };
        records.push(PicardRecord {
            iteration: it,
            change,
            clamps: kappa.clamps,
            cg_iterations,
        });
        let zero = u_new.iter().all(|&v| v == 0.0);
        u_old = u_new;
        field = system.to_field(&u_old);
        if change.is_some_and(|c| c <= opts.delta0) || (it == 1 && zero) {
            converged = true;
            break;
        }
    }
    let final_clamps = system.kappa(&field).clamps;
    Ok((
        field,
        PicardTrace {
            records,
            converged,
            final_clamps,
            norm: opts.norm,
        },
    ))
}

/// `|b - A(u) u|` over the free dofs, with `A(u)` frozen at `u` itself.
pub fn nonlinear_residual(system: &FineSystem<'_>, u: &DisplacementField) -> f64 {
    let (a, _) = system.linearize(u);
    let x = system.to_free(u);
    let ax = a.matvec(&x);
    linalg::norm2(&system.load.iter().zip(&ax).map(|(b, v)| b - v).collect::<Vec<_>>())
}

/// Default fine solve used when only the mesh, `beta` and `f` are at hand.
pub fn solve_reference(
    mesh: &FineMesh,
    beta: &BetaField,
    f: &SourceSpec,
    delta0: f64,
) -> Result<(DisplacementField, PicardTrace)> {
    let system = FineSystem::new(mesh, beta, f, DEFAULT_CLAMP_EPS)?;
    picard_solve_fine(
        &system,
        &PicardOptions {
            delta0,
            ..PicardOptions::default()
        },
    )
}

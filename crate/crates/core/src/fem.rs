//! Vector P1 assembly on the fine grid.
//!
//! All stiffness-type integrands are piecewise constant, so element integrals are
//! exact. Dirichlet dofs are eliminated: global operators live on the free dofs of
//! a [`DofMap`], local ones on the free dofs of a [`Neighborhood`].

use serde::{Deserialize, Serialize};

use crate::coefficient::{element_strain, kappa_field, BetaField, DisplacementField, KappaField};
use crate::grid::{DofMap, FineMesh, Neighborhood, NONE};
use crate::linalg::CsrMatrix;

/// Symmetric positive definite operator over free dofs.
pub type SparseSpd = CsrMatrix;
/// Load functional evaluated on the free dofs.
pub type LoadVector = Vec<f64>;

/// Body force `f`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SourceSpec {
    /// `scale * (sqrt(x^2 + y^2 + 1), sqrt(x^2 + y^2 + 1))`.
    Paper {
        #[serde(default = "unit_scale")]
        scale: f64,
    },
    Constant {
        value: [f64; 2],
    },
}

fn unit_scale() -> f64 {
    1.0
}

impl Default for SourceSpec {
    fn default() -> Self {
        SourceSpec::Paper { scale: 1.0 }
    }
}

impl SourceSpec {
    #[inline]
    pub fn eval(&self, x: f64, y: f64) -> [f64; 2] {
        match self {
            SourceSpec::Paper { scale } => {
                let v = scale * (x * x + y * y + 1.0).sqrt();
                [v, v]
            }
            SourceSpec::Constant { value } => *value,
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            SourceSpec::Paper { scale } => *scale == 0.0,
            SourceSpec::Constant { value } => value == &[0.0, 0.0],
        }
    }
}

/// Element matrix of `int D(w) : D(v)` for unit coefficient, local dof `2a + c`.
#[inline]
pub fn symgrad_element_matrix(grads: &[[f64; 2]; 3], area: f64) -> [[f64; 6]; 6] {
    let mut k = [[0.0; 6]; 6];
    for a in 0..3 {
        for b in 0..3 {
            let gg = grads[a][0] * grads[b][0] + grads[a][1] * grads[b][1];
            for c in 0..2 {
                for d in 0..2 {
                    let delta = if c == d { gg } else { 0.0 };
                    k[2 * a + c][2 * b + d] = 0.5 * area * (delta + grads[a][d] * grads[b][c]);
                }
            }
        }
    }
    k
}

/// P1 mass element matrix for one scalar component.
#[inline]
pub fn scalar_mass_element(area: f64) -> [[f64; 3]; 3] {
    let d = area / 6.0;
    let o = area / 12.0;
    [[d, o, o], [o, d, o], [o, o, d]]
}

/// Reusable sparsity pattern and scatter map for the global stiffness.
#[derive(Debug, Clone)]
pub struct StiffnessAssembler {
    pattern: CsrMatrix,
    scatter: Vec<[usize; 36]>,
    reference: [[[f64; 6]; 6]; 2],
}

impl StiffnessAssembler {
    pub fn new(mesh: &FineMesh, dofs: &DofMap) -> Self {
        let n = dofs.num_free();
        let mut triplets = Vec::with_capacity(36 * mesh.num_triangles());
        for tri in &mesh.triangles {
            let free = element_free_dofs(tri, dofs);
            for &p in &free {
                for &q in &free {
                    if p != NONE && q != NONE {
                        triplets.push((p, q, 0.0));
                    }
                }
            }
        }
        let pattern = CsrMatrix::from_triplets(n, n, triplets);
        let scatter = mesh
            .triangles
            .iter()
            .map(|tri| {
                let free = element_free_dofs(tri, dofs);
                let mut pos = [NONE; 36];
                for (i, &p) in free.iter().enumerate() {
                    for (j, &q) in free.iter().enumerate() {
                        if p != NONE && q != NONE {
                            let (cols, _) = pattern.row(p);
                            pos[6 * i + j] = pattern.indptr[p] + cols.binary_search(&q).expect("in pattern");
                        }
                    }
                }
                pos
            })
            .collect();
        let area = mesh.triangle_area();
        let reference = [
            symgrad_element_matrix(&mesh.triangle_gradients(0), area),
            symgrad_element_matrix(&mesh.triangle_gradients(1), area),
        ];
        Self {
            pattern,
            scatter,
            reference,
        }
    }

    pub fn num_free(&self) -> usize {
        self.pattern.nrows
    }

    /// `A[p, q] = sum_t kappa_t int_t D(phi_p) : D(phi_q)`.
    pub fn assemble(&self, kappa: &[f64]) -> SparseSpd {
        let mut a = self.pattern.clone();
        for (t, pos) in self.scatter.iter().enumerate() {
            let k = kappa[t];
            let re = &self.reference[t % 2];
            for i in 0..6 {
                for j in 0..6 {
                    let p = pos[6 * i + j];
                    if p != NONE {
                        a.values[p] += k * re[i][j];
                    }
                }
            }
        }
        a
    }
}

#[inline]
fn element_free_dofs(tri: &[usize; 3], dofs: &DofMap) -> [usize; 6] {
    let mut out = [NONE; 6];
    for (a, &n) in tri.iter().enumerate() {
        for c in 0..2 {
            out[2 * a + c] = dofs.free_index(2 * n + c);
        }
    }
    out
}

/// Stiffness linearized at `u_prev`, with the kappa field it used.
pub fn assemble_stiffness(
    mesh: &FineMesh,
    dofs: &DofMap,
    beta: &BetaField,
    u_prev: &DisplacementField,
    clamp_eps: f64,
) -> (SparseSpd, KappaField) {
    let kappa = kappa_field(mesh, beta, u_prev, clamp_eps);
    let a = StiffnessAssembler::new(mesh, dofs).assemble(&kappa.values);
    (a, kappa)
}

/// Edge-midpoint quadrature of `int f . phi_p` for every node dof (boundary
/// rows included).
pub fn assemble_load_full(mesh: &FineMesh, f: &SourceSpec) -> Vec<f64> {
    let mut b = vec![0.0; 2 * mesh.num_nodes()];
    let w = mesh.triangle_area() / 6.0;
    for tri in &mesh.triangles {
        let p = tri.map(|n| mesh.nodes[n]);
        let mid = |i: usize, j: usize| f.eval(0.5 * (p[i][0] + p[j][0]), 0.5 * (p[i][1] + p[j][1]));
        let (m01, m12, m20) = (mid(0, 1), mid(1, 2), mid(2, 0));
        let share = [[m01, m20], [m01, m12], [m12, m20]];
        for (a, &n) in tri.iter().enumerate() {
            for c in 0..2 {
                b[2 * n + c] += w * (share[a][0][c] + share[a][1][c]);
            }
        }
    }
    b
}

pub fn assemble_load(mesh: &FineMesh, dofs: &DofMap, f: &SourceSpec) -> LoadVector {
    dofs.restrict(&assemble_load_full(mesh, f))
}

/// Local node-dof indices (or [`NONE`]) of a triangle inside a neighborhood.
#[inline]
fn element_local_dofs(mesh: &FineMesh, nb: &Neighborhood, tri: &[usize; 3]) -> [usize; 6] {
    let mut out = [NONE; 6];
    for (a, &n) in tri.iter().enumerate() {
        let (i, j) = mesh.node_ij(n);
        let k = nb.node_box.local(i, j);
        for c in 0..2 {
            out[2 * a + c] = nb.box_dof_to_local[2 * k + c];
        }
    }
    out
}

/// `int_{omega_i} kappa D(w) : D(v)` over the local free dofs.
pub fn local_stiffness(mesh: &FineMesh, nb: &Neighborhood, kappa: &[f64]) -> CsrMatrix {
    let area = mesh.triangle_area();
    let reference = [
        symgrad_element_matrix(&mesh.triangle_gradients(0), area),
        symgrad_element_matrix(&mesh.triangle_gradients(1), area),
    ];
    let mut triplets = Vec::with_capacity(36 * nb.triangles.len());
    for &t in &nb.triangles {
        let loc = element_local_dofs(mesh, nb, &mesh.triangles[t]);
        let re = &reference[t % 2];
        for i in 0..6 {
            for j in 0..6 {
                if loc[i] != NONE && loc[j] != NONE {
                    triplets.push((loc[i], loc[j], kappa[t] * re[i][j]));
                }
            }
        }
    }
    CsrMatrix::from_triplets(nb.num_free(), nb.num_free(), triplets)
}

/// Local vector P1 mass weighted by `kappa_t * pou_weight_t`, where
/// `pou_weight_t = sum_i H^2 |grad chi_i|^2` on triangle `t`.
pub fn assemble_weighted_mass(mesh: &FineMesh, nb: &Neighborhood, kappa: &[f64], pou_weight: &[f64]) -> CsrMatrix {
    let me = scalar_mass_element(mesh.triangle_area());
    let mut triplets = Vec::with_capacity(18 * nb.triangles.len());
    for &t in &nb.triangles {
        let loc = element_local_dofs(mesh, nb, &mesh.triangles[t]);
        let w = kappa[t] * pou_weight[t];
        for a in 0..3 {
            for b in 0..3 {
                for c in 0..2 {
                    let (p, q) = (loc[2 * a + c], loc[2 * b + c]);
                    if p != NONE && q != NONE {
                        triplets.push((p, q, w * me[a][b]));
                    }
                }
            }
        }
    }
    CsrMatrix::from_triplets(nb.num_free(), nb.num_free(), triplets)
}

/// `J(phi_p)` with the integral restricted to `omega_i`, for local free dofs.
pub fn local_load(mesh: &FineMesh, nb: &Neighborhood, f: &SourceSpec) -> Vec<f64> {
    let mut out = vec![0.0; nb.num_free()];
    let w = mesh.triangle_area() / 6.0;
    for &t in &nb.triangles {
        let tri = mesh.triangles[t];
        let loc = element_local_dofs(mesh, nb, &tri);
        let p = tri.map(|n| mesh.nodes[n]);
        let mid = |i: usize, j: usize| f.eval(0.5 * (p[i][0] + p[j][0]), 0.5 * (p[i][1] + p[j][1]));
        let (m01, m12, m20) = (mid(0, 1), mid(1, 2), mid(2, 0));
        let share = [[m01, m20], [m01, m12], [m12, m20]];
        for a in 0..3 {
            for c in 0..2 {
                if loc[2 * a + c] != NONE {
                    out[loc[2 * a + c]] += w * (share[a][0][c] + share[a][1][c]);
                }
            }
        }
    }
    out
}

/// `R_i(phi_p) = J(phi_p) - a_n(u_ms, phi_p)`, both integrals restricted to
/// `omega_i`, for every local free dof.
pub fn local_residual(
    mesh: &FineMesh,
    nb: &Neighborhood,
    kappa: &[f64],
    u_ms: &DisplacementField,
    f: &SourceSpec,
) -> Vec<f64> {
    let mut r = local_load(mesh, nb, f);
    let area = mesh.triangle_area();
    for &t in &nb.triangles {
        let tri = mesh.triangles[t];
        let loc = element_local_dofs(mesh, nb, &tri);
        let e = element_strain(mesh, u_ms, t);
        let rows = [[e.e11, e.e12], [e.e12, e.e22]];
        let grads = mesh.triangle_gradients(t);
        for a in 0..3 {
            for c in 0..2 {
                let p = loc[2 * a + c];
                if p != NONE {
                    let s = rows[c][0] * grads[a][0] + rows[c][1] * grads[a][1];
                    r[p] -= area * kappa[t] * s;
                }
            }
        }
    }
    r
}

/// Direct elementwise evaluation of `int kappa D(w) : D(v)`.
pub fn energy_form(mesh: &FineMesh, kappa: &[f64], w: &DisplacementField, v: &DisplacementField) -> f64 {
    let area = mesh.triangle_area();
    (0..mesh.num_triangles())
        .map(|t| kappa[t] * area * element_strain(mesh, w, t).dot(&element_strain(mesh, v, t)))
        .sum()
}

/// `int u . v` for P1 fields, exact.
pub fn l2_inner(mesh: &FineMesh, u: &DisplacementField, v: &DisplacementField) -> f64 {
    let me = scalar_mass_element(mesh.triangle_area());
    let mut total = 0.0;
    for tri in &mesh.triangles {
        for a in 0..3 {
            for b in 0..3 {
                let (ua, vb) = (u.0[tri[a]], v.0[tri[b]]);
                total += me[a][b] * (ua[0] * vb[0] + ua[1] * vb[1]);
            }
        }
    }
    total
}

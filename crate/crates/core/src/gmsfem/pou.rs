//! Scalar partitions of unity subordinate to the coarse neighborhoods.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::grid::{CoarseGrid, FineMesh, NodeBox, NONE};
use crate::linalg::{BandedCholesky, CsrMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PouMode {
    /// Bilinear coarse hats.
    Hat,
    /// Per coarse cell, the `kappa`-harmonic extension of the hat boundary values.
    #[default]
    Msfem,
}

/// One nodal field `chi_i` per coarse node (boundary nodes included), stored on
/// the node box of its neighborhood.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionOfUnity {
    pub mode: PouMode,
    pub boxes: Vec<NodeBox>,
    pub values: Vec<Vec<f64>>,
}

#[inline]
fn hat(grid: &CoarseGrid, node: usize, i: usize, j: usize) -> f64 {
    let (ci, cj) = grid.coarse_node_ij(node);
    let dx = (i as f64 - (ci * grid.ratio_x) as f64).abs() / grid.ratio_x as f64;
    let dy = (j as f64 - (cj * grid.ratio_y) as f64).abs() / grid.ratio_y as f64;
    (1.0 - dx).max(0.0) * (1.0 - dy).max(0.0)
}

/// Builds `chi_i` for every coarse node. `kappa` is only read in msfem mode.
pub fn build_pou(mesh: &FineMesh, grid: &CoarseGrid, kappa: &[f64], mode: PouMode) -> Result<PartitionOfUnity> {
    let boxes: Vec<NodeBox> = (0..grid.num_coarse_nodes()).map(|n| grid.node_box(n)).collect();
    let mut values: Vec<Vec<f64>> = boxes
        .iter()
        .enumerate()
        .map(|(n, b)| {
            let mut v = Vec::with_capacity(b.len());
            for j in b.j0..=b.j1 {
                for i in b.i0..=b.i1 {
                    v.push(hat(grid, n, i, j));
                }
            }
            v
        })
        .collect();
    if mode == PouMode::Msfem {
        for cell in 0..grid.num_coarse_cells() {
            harmonic_cell(mesh, grid, kappa, cell, &boxes, &mut values)?;
        }
    }
    Ok(PartitionOfUnity { mode, boxes, values })
}

/// Replaces the hat values inside one coarse cell by the discrete harmonic
/// extension of their boundary values, for the four corner nodes.
fn harmonic_cell(
    mesh: &FineMesh,
    grid: &CoarseGrid,
    kappa: &[f64],
    cell: usize,
    boxes: &[NodeBox],
    values: &mut [Vec<f64>],
) -> Result<()> {
    let (ci, cj) = grid.coarse_cell_ij(cell);
    let (rx, ry) = (grid.ratio_x, grid.ratio_y);
    if rx < 2 || ry < 2 {
        return Ok(());
    }
    let cb = NodeBox {
        i0: ci * rx,
        i1: (ci + 1) * rx,
        j0: cj * ry,
        j1: (cj + 1) * ry,
    };
    // unknowns: nodes strictly inside the cell, row-major
    let inner_w = rx - 1;
    let unknown = |i: usize, j: usize| -> usize {
        if cb.on_edge(i, j) {
            NONE
        } else {
            (j - cb.j0 - 1) * inner_w + (i - cb.i0 - 1)
        }
    };
    let n = (rx - 1) * (ry - 1);
    let nx1 = grid.coarse_nx + 1;
    let corners = [
        cj * nx1 + ci,
        cj * nx1 + ci + 1,
        (cj + 1) * nx1 + ci,
        (cj + 1) * nx1 + ci + 1,
    ];
    let area = mesh.triangle_area();
    let mut triplets = Vec::new();
    let mut rhs = vec![vec![0.0; n]; 4];
    for &t in &grid.coarse_cell_to_fine_triangles[cell] {
        let tri = mesh.triangles[t];
        let g = mesh.triangle_gradients(t);
        let ij = tri.map(|v| mesh.node_ij(v));
        for a in 0..3 {
            let p = unknown(ij[a].0, ij[a].1);
            if p == NONE {
                continue;
            }
            for b in 0..3 {
                let k = area * kappa[t] * (g[a][0] * g[b][0] + g[a][1] * g[b][1]);
                let q = unknown(ij[b].0, ij[b].1);
                if q != NONE {
                    triplets.push((p, q, k));
                } else {
                    for (r, &c) in corners.iter().enumerate() {
                        rhs[r][p] -= k * hat(grid, c, ij[b].0, ij[b].1);
                    }
                }
            }
        }
    }
    let factor = BandedCholesky::factor(&CsrMatrix::from_triplets(n, n, triplets))?;
    for (r, &c) in corners.iter().enumerate() {
        let x = factor.solve(&rhs[r]);
        let b = &boxes[c];
        for j in cb.j0 + 1..cb.j1 {
            for i in cb.i0 + 1..cb.i1 {
                values[c][b.local(i, j)] = x[unknown(i, j)];
            }
        }
    }
    Ok(())
}

impl PartitionOfUnity {
    pub fn num_nodes(&self) -> usize {
        self.values.len()
    }

    /// `chi_node` at fine grid node `(i, j)`.
    #[inline]
    pub fn value(&self, node: usize, i: usize, j: usize) -> f64 {
        let b = &self.boxes[node];
        if b.contains(i, j) {
            self.values[node][b.local(i, j)]
        } else {
            0.0
        }
    }

    /// `chi_node` on every fine node.
    pub fn field(&self, mesh: &FineMesh, node: usize) -> Vec<f64> {
        let mut out = vec![0.0; mesh.num_nodes()];
        let b = &self.boxes[node];
        for j in b.j0..=b.j1 {
            for i in b.i0..=b.i1 {
                out[mesh.node_index(i, j)] = self.values[node][b.local(i, j)];
            }
        }
        out
    }

    /// Sum over all coarse nodes, on every fine node.
    pub fn sum_field(&self, mesh: &FineMesh) -> Vec<f64> {
        let mut out = vec![0.0; mesh.num_nodes()];
        for (b, v) in self.boxes.iter().zip(&self.values) {
            for j in b.j0..=b.j1 {
                for i in b.i0..=b.i1 {
                    out[mesh.node_index(i, j)] += v[b.local(i, j)];
                }
            }
        }
        out
    }

    /// Per-triangle `sum_i H^2 |grad chi_i|^2` over the interior coarse nodes.
    pub fn weight(&self, mesh: &FineMesh, grid: &CoarseGrid) -> Vec<f64> {
        let h2 = grid.big_h * grid.big_h;
        let mut w = vec![0.0; mesh.num_triangles()];
        for &node in &grid.interior_coarse_nodes {
            let b = &self.boxes[node];
            for t in b.triangles(mesh) {
                let g = mesh.triangle_gradients(t);
                let mut grad = [0.0; 2];
                for (a, &v) in mesh.triangles[t].iter().enumerate() {
                    let (i, j) = mesh.node_ij(v);
                    let chi = self.values[node][b.local(i, j)];
                    grad[0] += chi * g[a][0];
                    grad[1] += chi * g[a][1];
                }
                w[t] += h2 * (grad[0] * grad[0] + grad[1] * grad[1]);
            }
        }
        w
    }
}

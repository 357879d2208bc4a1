//! Nested uniform triangulations of the unit square.
//!
//! The fine mesh splits every square cell along its lower-left to upper-right
//! diagonal. The coarse grid is a uniform quadrilateral grid whose vertices are
//! fine nodes, and the neighborhood of a coarse node is the 2x2 patch of coarse
//! cells sharing it.

use crate::error::{Error, Result};

/// Marker for "no free dof" in index maps.
pub const NONE: usize = usize::MAX;

const BOUNDARY_TOL: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq)]
pub struct FineMesh {
    pub nx: usize,
    pub ny: usize,
    /// Fine mesh size `1/nx`.
    pub h: f64,
    pub hx: f64,
    pub hy: f64,
    pub nodes: Vec<[f64; 2]>,
    /// Counterclockwise node triples; cell `(i, j)` owns triangles `2c` (lower-left)
    /// and `2c + 1` (upper-right) with `c = j * nx + i`.
    pub triangles: Vec<[usize; 3]>,
    pub dirichlet_nodes: Vec<bool>,
}

/// Builds the fine triangulation with `nx * ny` cells.
pub fn build_fine_mesh(nx: usize, ny: usize) -> Result<FineMesh> {
    if nx < 2 || ny < 2 {
        return Err(Error::InvalidMesh(format!(
            "need at least 2 cells per axis, got {nx}x{ny}"
        )));
    }
    let hx = 1.0 / nx as f64;
    let hy = 1.0 / ny as f64;
    let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
    let mut dirichlet_nodes = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            let p = [i as f64 * hx, j as f64 * hy];
            let on_boundary = p
                .iter()
                .any(|&c| c.abs() <= BOUNDARY_TOL || (c - 1.0).abs() <= BOUNDARY_TOL);
            nodes.push(p);
            dirichlet_nodes.push(on_boundary);
        }
    }
    let stride = nx + 1;
    let mut triangles = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let n00 = j * stride + i;
            let n10 = n00 + 1;
            let n01 = n00 + stride;
            let n11 = n01 + 1;
            triangles.push([n00, n10, n11]);
            triangles.push([n00, n11, n01]);
        }
    }
    Ok(FineMesh {
        nx,
        ny,
        h: hx,
        hx,
        hy,
        nodes,
        triangles,
        dirichlet_nodes,
    })
}

impl FineMesh {
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    #[inline]
    pub fn node_index(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }

    /// Grid coordinates `(i, j)` of a node.
    #[inline]
    pub fn node_ij(&self, node: usize) -> (usize, usize) {
        (node % (self.nx + 1), node / (self.nx + 1))
    }

    /// Every triangle has the same area.
    #[inline]
    pub fn triangle_area(&self) -> f64 {
        0.5 * self.hx * self.hy
    }

    /// Cell `(i, j)` containing triangle `t`.
    #[inline]
    pub fn triangle_cell(&self, t: usize) -> (usize, usize) {
        let c = t / 2;
        (c % self.nx, c / self.nx)
    }

    #[inline]
    pub fn cell_triangles(&self, i: usize, j: usize) -> [usize; 2] {
        let c = j * self.nx + i;
        [2 * c, 2 * c + 1]
    }

    /// Gradients of the three barycentric functions of triangle `t`, in local
    /// vertex order.
    #[inline]
    pub fn triangle_gradients(&self, t: usize) -> [[f64; 2]; 3] {
        let (ix, iy) = (1.0 / self.hx, 1.0 / self.hy);
        if t.is_multiple_of(2) {
            [[-ix, 0.0], [ix, -iy], [0.0, iy]]
        } else {
            [[0.0, -iy], [ix, 0.0], [-ix, iy]]
        }
    }

    pub fn centroid(&self, t: usize) -> [f64; 2] {
        let [a, b, c] = self.triangles[t];
        let (pa, pb, pc) = (self.nodes[a], self.nodes[b], self.nodes[c]);
        [(pa[0] + pb[0] + pc[0]) / 3.0, (pa[1] + pb[1] + pc[1]) / 3.0]
    }
}

/// Numbering of the free (non-Dirichlet) displacement dofs. Node dof `2 * node + c`
/// carries component `c` of node `node`.
#[derive(Debug, Clone, PartialEq)]
pub struct DofMap {
    node_dof_to_free: Vec<usize>,
    free_to_node_dof: Vec<usize>,
}

impl DofMap {
    pub fn new(mesh: &FineMesh) -> Self {
        let mut node_dof_to_free = vec![NONE; 2 * mesh.num_nodes()];
        let mut free_to_node_dof = Vec::new();
        for (node, &fixed) in mesh.dirichlet_nodes.iter().enumerate() {
            if fixed {
                continue;
            }
            for c in 0..2 {
                node_dof_to_free[2 * node + c] = free_to_node_dof.len();
                free_to_node_dof.push(2 * node + c);
            }
        }
        Self {
            node_dof_to_free,
            free_to_node_dof,
        }
    }

    pub fn num_free(&self) -> usize {
        self.free_to_node_dof.len()
    }

    pub fn num_node_dofs(&self) -> usize {
        self.node_dof_to_free.len()
    }

    /// Free index of a node dof, or [`NONE`] for Dirichlet dofs.
    #[inline]
    pub fn free_index(&self, node_dof: usize) -> usize {
        self.node_dof_to_free[node_dof]
    }

    #[inline]
    pub fn node_dof(&self, free: usize) -> usize {
        self.free_to_node_dof[free]
    }

    /// Scatters a free-dof vector onto all node dofs, zero on the boundary.
    pub fn expand(&self, free: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.num_node_dofs()];
        for (k, &d) in self.free_to_node_dof.iter().enumerate() {
            full[d] = free[k];
        }
        full
    }

    /// Gathers the free-dof entries of a node-dof vector.
    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.free_to_node_dof.iter().map(|&d| full[d]).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoarseGrid {
    pub coarse_nx: usize,
    pub coarse_ny: usize,
    /// Coarse mesh size `1/coarse_nx`.
    pub big_h: f64,
    /// Fine cells per coarse cell along x and y.
    pub ratio_x: usize,
    pub ratio_y: usize,
    pub coarse_node_to_fine_node: Vec<usize>,
    pub coarse_cell_to_fine_triangles: Vec<Vec<usize>>,
    pub interior_coarse_nodes: Vec<usize>,
}

pub fn build_coarse_grid(mesh: &FineMesh, coarse_nx: usize, coarse_ny: usize) -> Result<CoarseGrid> {
    if coarse_nx == 0 || coarse_ny == 0 || !mesh.nx.is_multiple_of(coarse_nx) || !mesh.ny.is_multiple_of(coarse_ny) {
        return Err(Error::NonNesting {
            nx: mesh.nx,
            ny: mesh.ny,
            coarse_nx,
            coarse_ny,
        });
    }
    let ratio_x = mesh.nx / coarse_nx;
    let ratio_y = mesh.ny / coarse_ny;
    let mut coarse_node_to_fine_node = Vec::with_capacity((coarse_nx + 1) * (coarse_ny + 1));
    let mut interior_coarse_nodes = Vec::new();
    for cj in 0..=coarse_ny {
        for ci in 0..=coarse_nx {
            coarse_node_to_fine_node.push(mesh.node_index(ci * ratio_x, cj * ratio_y));
            if ci > 0 && ci < coarse_nx && cj > 0 && cj < coarse_ny {
                interior_coarse_nodes.push(cj * (coarse_nx + 1) + ci);
            }
        }
    }
    let mut coarse_cell_to_fine_triangles = Vec::with_capacity(coarse_nx * coarse_ny);
    for cj in 0..coarse_ny {
        for ci in 0..coarse_nx {
            let mut tris = Vec::with_capacity(2 * ratio_x * ratio_y);
            for j in cj * ratio_y..(cj + 1) * ratio_y {
                for i in ci * ratio_x..(ci + 1) * ratio_x {
                    tris.extend(mesh.cell_triangles(i, j));
                }
            }
            tris.sort_unstable();
            coarse_cell_to_fine_triangles.push(tris);
        }
    }
    Ok(CoarseGrid {
        coarse_nx,
        coarse_ny,
        big_h: 1.0 / coarse_nx as f64,
        ratio_x,
        ratio_y,
        coarse_node_to_fine_node,
        coarse_cell_to_fine_triangles,
        interior_coarse_nodes,
    })
}

impl CoarseGrid {
    pub fn num_coarse_nodes(&self) -> usize {
        self.coarse_node_to_fine_node.len()
    }

    pub fn num_coarse_cells(&self) -> usize {
        self.coarse_nx * self.coarse_ny
    }

    #[inline]
    pub fn coarse_node_ij(&self, node: usize) -> (usize, usize) {
        (node % (self.coarse_nx + 1), node / (self.coarse_nx + 1))
    }

    #[inline]
    pub fn coarse_cell_ij(&self, cell: usize) -> (usize, usize) {
        (cell % self.coarse_nx, cell / self.coarse_nx)
    }

    pub fn is_interior(&self, node: usize) -> bool {
        let (ci, cj) = self.coarse_node_ij(node);
        ci > 0 && ci < self.coarse_nx && cj > 0 && cj < self.coarse_ny
    }

    /// Coarse cells whose closure contains coarse node `node` (clipped at the
    /// domain boundary).
    pub fn cells_around(&self, node: usize) -> Vec<usize> {
        let (ci, cj) = self.coarse_node_ij(node);
        let mut cells = Vec::with_capacity(4);
        for dj in [1usize, 0] {
            for di in [1usize, 0] {
                if ci >= di && cj >= dj && ci - di < self.coarse_nx && cj - dj < self.coarse_ny {
                    cells.push((cj - dj) * self.coarse_nx + (ci - di));
                }
            }
        }
        cells.sort_unstable();
        cells
    }

    /// Inclusive fine-node index box `[i0, i1] x [j0, j1]` of the closure of the
    /// neighborhood of `node`.
    pub fn node_box(&self, node: usize) -> NodeBox {
        let (ci, cj) = self.coarse_node_ij(node);
        NodeBox {
            i0: ci.saturating_sub(1) * self.ratio_x,
            i1: (ci + 1).min(self.coarse_nx) * self.ratio_x,
            j0: cj.saturating_sub(1) * self.ratio_y,
            j1: (cj + 1).min(self.coarse_ny) * self.ratio_y,
        }
    }
}

/// Inclusive rectangular block of fine-node grid indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeBox {
    pub i0: usize,
    pub i1: usize,
    pub j0: usize,
    pub j1: usize,
}

impl NodeBox {
    pub fn width(&self) -> usize {
        self.i1 - self.i0 + 1
    }

    pub fn height(&self) -> usize {
        self.j1 - self.j0 + 1
    }

    pub fn len(&self) -> usize {
        self.width() * self.height()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        i >= self.i0 && i <= self.i1 && j >= self.j0 && j <= self.j1
    }

    /// Row-major position of grid node `(i, j)` inside the box.
    #[inline]
    pub fn local(&self, i: usize, j: usize) -> usize {
        (j - self.j0) * self.width() + (i - self.i0)
    }

    pub fn on_edge(&self, i: usize, j: usize) -> bool {
        i == self.i0 || i == self.i1 || j == self.j0 || j == self.j1
    }

    /// Fine nodes of the box in ascending order.
    pub fn nodes(&self, mesh: &FineMesh) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.len());
        for j in self.j0..=self.j1 {
            for i in self.i0..=self.i1 {
                out.push(mesh.node_index(i, j));
            }
        }
        out
    }

    /// Fine triangles inside the box, ascending.
    pub fn triangles(&self, mesh: &FineMesh) -> Vec<usize> {
        let mut out = Vec::with_capacity(2 * (self.width() - 1) * (self.height() - 1));
        for j in self.j0..self.j1 {
            for i in self.i0..self.i1 {
                out.extend(mesh.cell_triangles(i, j));
            }
        }
        out
    }
}

/// The patch `omega_i` of an interior coarse node with its local dof numbering.
///
/// Local free dofs follow the ascending fine-node order with both components
/// interleaved, so `local_to_global` is strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighborhood {
    pub coarse_node: usize,
    pub coarse_cells: Vec<usize>,
    pub node_box: NodeBox,
    pub fine_nodes: Vec<usize>,
    pub triangles: Vec<usize>,
    /// Global node dofs (`2 * node + c`) of the local free dofs.
    pub free_dofs: Vec<usize>,
    /// Global free indices of the local free dofs.
    pub local_to_global: Vec<usize>,
    /// Local free index of box-local node dof `2 * k + c`, or [`NONE`].
    pub box_dof_to_local: Vec<usize>,
    /// Local free dofs strictly inside `omega_i` (zero trace space).
    pub interior_dofs: Vec<usize>,
}

pub fn neighborhood(grid: &CoarseGrid, mesh: &FineMesh, dofs: &DofMap, node: usize) -> Result<Neighborhood> {
    if node >= grid.num_coarse_nodes() || !grid.is_interior(node) {
        return Err(Error::BoundaryCoarseNode(node));
    }
    let node_box = grid.node_box(node);
    let fine_nodes = node_box.nodes(mesh);
    let triangles = node_box.triangles(mesh);
    let mut free_dofs = Vec::new();
    let mut local_to_global = Vec::new();
    let mut box_dof_to_local = vec![NONE; 2 * fine_nodes.len()];
    let mut interior_dofs = Vec::new();
    for (k, &n) in fine_nodes.iter().enumerate() {
        if mesh.dirichlet_nodes[n] {
            continue;
        }
        let (i, j) = mesh.node_ij(n);
        let inside = !node_box.on_edge(i, j);
        for c in 0..2 {
            let local = free_dofs.len();
            box_dof_to_local[2 * k + c] = local;
            free_dofs.push(2 * n + c);
            local_to_global.push(dofs.free_index(2 * n + c));
            if inside {
                interior_dofs.push(local);
            }
        }
    }
    Ok(Neighborhood {
        coarse_node: node,
        coarse_cells: grid.cells_around(node),
        node_box,
        fine_nodes,
        triangles,
        free_dofs,
        local_to_global,
        box_dof_to_local,
        interior_dofs,
    })
}

/// Neighborhoods of all interior coarse nodes, in ascending coarse-node order.
pub fn all_neighborhoods(grid: &CoarseGrid, mesh: &FineMesh, dofs: &DofMap) -> Vec<Neighborhood> {
    grid.interior_coarse_nodes
        .iter()
        .map(|&i| neighborhood(grid, mesh, dofs, i).expect("interior node"))
        .collect()
}

impl Neighborhood {
    /// Same neighborhood with every box dof local, including dofs on the
    /// Dirichlet boundary (their `local_to_global` is [`NONE`]). The spectral
    /// problem lives here; `chi_i` vanishes on the boundary anyway.
    pub fn snapshot(&self, mesh: &FineMesh) -> Neighborhood {
        let mut free_dofs = Vec::with_capacity(2 * self.fine_nodes.len());
        let mut local_to_global = Vec::with_capacity(2 * self.fine_nodes.len());
        let mut interior_dofs = Vec::new();
        for (k, &n) in self.fine_nodes.iter().enumerate() {
            let (i, j) = mesh.node_ij(n);
            let inside = !self.node_box.on_edge(i, j) && !mesh.dirichlet_nodes[n];
            for c in 0..2 {
                let old = self.box_dof_to_local[2 * k + c];
                if inside {
                    interior_dofs.push(free_dofs.len());
                }
                free_dofs.push(2 * n + c);
                local_to_global.push(if old == NONE { NONE } else { self.local_to_global[old] });
            }
        }
        Neighborhood {
            coarse_node: self.coarse_node,
            coarse_cells: self.coarse_cells.clone(),
            node_box: self.node_box,
            fine_nodes: self.fine_nodes.clone(),
            triangles: self.triangles.clone(),
            box_dof_to_local: (0..free_dofs.len()).collect(),
            free_dofs,
            local_to_global,
            interior_dofs,
        }
    }

    pub fn num_free(&self) -> usize {
        self.free_dofs.len()
    }

    /// Local free index of node-dof `(node, c)`, or [`NONE`].
    #[inline]
    pub fn local_dof(&self, mesh: &FineMesh, node: usize, c: usize) -> usize {
        let (i, j) = mesh.node_ij(node);
        if !self.node_box.contains(i, j) {
            return NONE;
        }
        self.box_dof_to_local[2 * self.node_box.local(i, j) + c]
    }
}

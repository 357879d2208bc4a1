//! Small linear configuration shared by the unit tests.

use crate::fem::{assemble_load, local_load, SourceSpec, SparseSpd, StiffnessAssembler};
use crate::grid::{all_neighborhoods, build_coarse_grid, build_fine_mesh, CoarseGrid, DofMap, FineMesh, Neighborhood};
use crate::linalg::Cholesky;

use super::offline::{offline_basis, EigenMethod};
use super::pou::{build_pou, PouMode};
use super::space::{assemble_space, LocalBasis, MultiscaleSpace};

pub struct Setup {
    pub mesh: FineMesh,
    pub grid: CoarseGrid,
    pub dofs: DofMap,
    pub nbs: Vec<Neighborhood>,
    pub kappa: Vec<f64>,
    pub a: SparseSpd,
    pub b: Vec<f64>,
}

/// 20x20 fine, 4x4 coarse, a channel of contrast 30 and a smooth background.
pub fn setup() -> Setup {
    let mesh = build_fine_mesh(20, 20).unwrap();
    let grid = build_coarse_grid(&mesh, 4, 4).unwrap();
    let dofs = DofMap::new(&mesh);
    let nbs = all_neighborhoods(&grid, &mesh, &dofs);
    let kappa: Vec<f64> = (0..mesh.num_triangles())
        .map(|t| {
            let c = mesh.centroid(t);
            if (c[0] - 0.62).abs() < 0.04 {
                30.0
            } else {
                1.0 + 0.5 * c[1]
            }
        })
        .collect();
    let a = StiffnessAssembler::new(&mesh, &dofs).assemble(&kappa);
    let b = assemble_load(&mesh, &dofs, &SourceSpec::default());
    Setup {
        mesh,
        grid,
        dofs,
        nbs,
        kappa,
        a,
        b,
    }
}

impl Setup {
    pub fn offline_space(&self, count: usize) -> MultiscaleSpace {
        let (bases, counts) = self.offline_bases(count);
        assemble_space(bases, &self.a, counts, 0).unwrap()
    }

    /// Offline functions of every neighborhood and the count per neighborhood.
    pub fn offline_bases(&self, count: usize) -> (Vec<LocalBasis>, Vec<usize>) {
        let pou = build_pou(&self.mesh, &self.grid, &self.kappa, PouMode::Msfem).unwrap();
        let weight = pou.weight(&self.mesh, &self.grid);
        let mut bases = Vec::new();
        let mut counts = Vec::new();
        for nb in &self.nbs {
            let snap = nb.snapshot(&self.mesh);
            let probe = local_load(&self.mesh, &snap, &SourceSpec::default());
            let o = offline_basis(
                &self.mesh,
                &snap,
                &self.kappa,
                &pou,
                &weight,
                &probe,
                count,
                EigenMethod::default(),
                None,
            )
            .unwrap();
            counts.push(o.bases.len());
            bases.extend(o.bases);
        }
        (bases, counts)
    }

    /// Fine solution by dense Cholesky.
    pub fn fine_solution(&self) -> Vec<f64> {
        Cholesky::factor(&self.a.to_dense()).unwrap().solve(&self.b)
    }

    pub fn energy_sq(&self, v: &[f64]) -> f64 {
        self.a.bilinear(v, v)
    }
}

pub fn sub(x: &[f64], y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(p, q)| p - q).collect()
}

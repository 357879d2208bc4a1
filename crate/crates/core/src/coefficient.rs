//! Strain-limiting constitutive law and the linearized coefficient `kappa`.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::FineMesh;

/// Default floor for `1 - beta |D(u)|`.
pub const DEFAULT_CLAMP_EPS: f64 = 1e-6;

/// Symmetric 2x2 tensor stored by its three independent entries.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SymTensor {
    pub e11: f64,
    pub e22: f64,
    pub e12: f64,
}

pub type StrainTensor = SymTensor;

impl SymTensor {
    pub const ZERO: SymTensor = SymTensor {
        e11: 0.0,
        e22: 0.0,
        e12: 0.0,
    };

    pub fn new(e11: f64, e22: f64, e12: f64) -> Self {
        Self { e11, e22, e12 }
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Frobenius inner product `A : B`.
    pub fn dot(&self, other: &SymTensor) -> f64 {
        self.e11 * other.e11 + self.e22 * other.e22 + 2.0 * self.e12 * other.e12
    }

    pub fn scale(&self, s: f64) -> SymTensor {
        SymTensor::new(self.e11 * s, self.e22 * s, self.e12 * s)
    }

    pub fn sub(&self, other: &SymTensor) -> SymTensor {
        SymTensor::new(self.e11 - other.e11, self.e22 - other.e22, self.e12 - other.e12)
    }
}

/// Nodal displacement of the vector P1 field, one 2-vector per fine node.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField(pub Vec<[f64; 2]>);

impl DisplacementField {
    pub fn zeros(num_nodes: usize) -> Self {
        Self(vec![[0.0; 2]; num_nodes])
    }

    /// Interprets a node-dof vector (`2 * node + c`).
    pub fn from_node_dofs(values: &[f64]) -> Self {
        Self(values.chunks_exact(2).map(|c| [c[0], c[1]]).collect())
    }

    pub fn to_node_dofs(&self) -> Vec<f64> {
        self.0.iter().flat_map(|v| *v).collect()
    }

    pub fn num_nodes(&self) -> usize {
        self.0.len()
    }
}

/// Per-triangle strain-limiting parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaField {
    pub values: Vec<f64>,
    pub min: f64,
    pub max: f64,
}

impl BetaField {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidCoefficient("empty beta field".into()));
        }
        if let Some(bad) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::InvalidCoefficient(format!("beta must be positive, got {bad}")));
        }
        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Ok(Self { values, min, max })
    }

    pub fn constant(num_triangles: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; num_triangles])
    }
}

/// Counts how often the kappa denominator had to be floored. Shared by
/// concurrent assembly loops; read once a pass has finished.
#[derive(Debug, Default)]
pub struct ClampCounter(AtomicUsize);

impl ClampCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self) {
        self.0.fetch_add(1, Ordering::Relaxed);
    }

    pub fn get(&self) -> usize {
        self.0.load(Ordering::Relaxed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KappaValue {
    pub value: f64,
    pub clamped: bool,
}

/// `1 / max(1 - beta * s, clamp_eps)`.
#[inline]
pub fn eval_kappa(beta: f64, s: f64, clamp_eps: f64) -> KappaValue {
    let denom = 1.0 - beta * s;
    if denom < clamp_eps {
        KappaValue {
            value: 1.0 / clamp_eps,
            clamped: true,
        }
    } else {
        KappaValue {
            value: 1.0 / denom,
            clamped: false,
        }
    }
}

/// Like [`eval_kappa`], recording clamps in `counter`.
#[inline]
pub fn eval_kappa_counted(beta: f64, s: f64, clamp_eps: f64, counter: &ClampCounter) -> f64 {
    let k = eval_kappa(beta, s, clamp_eps);
    if k.clamped {
        counter.record();
    }
    k.value
}

/// Stress of a strain, `xi / (1 - beta |xi|)`.
pub fn constitutive_stress(xi: &StrainTensor, beta: f64) -> Result<SymTensor> {
    let n = xi.norm();
    let product = beta * n;
    if product >= 1.0 {
        return Err(Error::InadmissibleStrain { strain: n, product });
    }
    Ok(xi.scale(1.0 / (1.0 - product)))
}

/// Strain of a stress, `T / (1 + beta |T|)`; always satisfies `beta |E| < 1`.
pub fn inverse_strain(stress: &SymTensor, beta: f64) -> StrainTensor {
    stress.scale(1.0 / (1.0 + beta * stress.norm()))
}

/// Symmetric gradient of the P1 interpolant of `u` on triangle `t`.
pub fn element_strain(mesh: &FineMesh, u: &DisplacementField, t: usize) -> StrainTensor {
    let grads = mesh.triangle_gradients(t);
    let tri = mesh.triangles[t];
    let mut g = [[0.0; 2]; 2]; // g[i][j] = d u_i / d x_j
    for (a, &n) in tri.iter().enumerate() {
        let v = u.0[n];
        for i in 0..2 {
            for j in 0..2 {
                g[i][j] += v[i] * grads[a][j];
            }
        }
    }
    SymTensor::new(g[0][0], g[1][1], 0.5 * (g[0][1] + g[1][0]))
}

/// Per-triangle linearized coefficient together with its clamp count.
#[derive(Debug, Clone, PartialEq)]
pub struct KappaField {
    pub values: Vec<f64>,
    pub clamps: usize,
}

impl KappaField {
    pub fn ones(num_triangles: usize) -> Self {
        Self {
            values: vec![1.0; num_triangles],
            clamps: 0,
        }
    }
}

/// Evaluates `kappa(x, |D(u)|)` on every triangle.
pub fn kappa_field(mesh: &FineMesh, beta: &BetaField, u: &DisplacementField, clamp_eps: f64) -> KappaField {
    let counter = ClampCounter::new();
    let values = (0..mesh.num_triangles())
        .map(|t| eval_kappa_counted(beta.values[t], element_strain(mesh, u, t).norm(), clamp_eps, &counter))
        .collect();
    KappaField {
        values,
        clamps: counter.get(),
    }
}

/// Axis-aligned rectangle `[x0, y0, x1, y1]` in unit-square coordinates.
pub type Rect = [f64; 4];

/// How to fill the per-triangle beta field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BetaSpec {
    Constant {
        value: f64,
    },
    Channels {
        background: f64,
        channel_value: f64,
        rects: Vec<Rect>,
    },
    Raster {
        path: PathBuf,
    },
    /// Builtin channel layout (`model1-like` or `model2-like`).
    Preset {
        name: String,
        #[serde(default = "default_background")]
        background: f64,
        channel_value: f64,
    },
}

fn default_background() -> f64 {
    1.0
}

/// Channel rectangles of the builtin layouts. The geometry is this crate's own
/// choice: long thin channels at 3% width with a few short inclusions, all kept
/// 0.05 away from the boundary.
pub fn preset_rects(name: &str) -> Option<Vec<Rect>> {
    match name {
        "model1-like" => Some(vec![
            [0.05, 0.12, 0.95, 0.15],
            [0.05, 0.32, 0.70, 0.35],
            [0.30, 0.52, 0.95, 0.55],
            [0.10, 0.72, 0.90, 0.75],
            [0.15, 0.88, 0.45, 0.91],
            [0.60, 0.88, 0.85, 0.91],
        ]),
        "model2-like" => Some(vec![
            [0.05, 0.22, 0.95, 0.25],
            [0.05, 0.62, 0.95, 0.65],
            [0.22, 0.05, 0.25, 0.95],
            [0.72, 0.05, 0.75, 0.95],
            [0.40, 0.40, 0.55, 0.45],
            [0.45, 0.80, 0.60, 0.85],
        ]),
        _ => None,
    }
}

fn inside(rect: &Rect, p: [f64; 2]) -> bool {
    p[0] >= rect[0] && p[0] <= rect[2] && p[1] >= rect[1] && p[1] <= rect[3]
}

/// Samples `spec` at triangle centroids.
pub fn build_beta_field(mesh: &FineMesh, spec: &BetaSpec) -> Result<BetaField> {
    let nt = mesh.num_triangles();
    match spec {
        BetaSpec::Constant { value } => BetaField::constant(nt, *value),
        BetaSpec::Channels {
            background,
            channel_value,
            rects,
        } => channels(mesh, *background, *channel_value, rects),
        BetaSpec::Preset {
            name,
            background,
            channel_value,
        } => {
            let rects =
                preset_rects(name).ok_or_else(|| Error::InvalidCoefficient(format!("unknown preset `{name}`")))?;
            channels(mesh, *background, *channel_value, &rects)
        }
        BetaSpec::Raster { path } => {
            let cells = read_raster(path, mesh.nx, mesh.ny)?;
            BetaField::new((0..nt).map(|t| cells[t / 2]).collect())
        }
    }
}

fn channels(mesh: &FineMesh, background: f64, channel_value: f64, rects: &[Rect]) -> Result<BetaField> {
    let values = (0..mesh.num_triangles())
        .map(|t| {
            let c = mesh.centroid(t);
            if rects.iter().any(|r| inside(r, c)) {
                channel_value
            } else {
                background
            }
        })
        .collect();
    BetaField::new(values)
}

/// Reads a cell raster: header `rows cols`, then `rows * cols` positive values,
/// row-major starting from the bottom row.
pub fn read_raster(path: &Path, nx: usize, ny: usize) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    parse_raster(&text, nx, ny).map_err(|message| Error::Raster {
        path: path.to_path_buf(),
        message,
    })
}

pub fn parse_raster(text: &str, nx: usize, ny: usize) -> std::result::Result<Vec<f64>, String> {
    let mut tokens = text.split_whitespace();
    let mut header = |what: &str| -> std::result::Result<usize, String> {
        tokens
            .next()
            .ok_or_else(|| format!("missing {what} in header"))?
            .parse()
            .map_err(|e| format!("bad {what}: {e}"))
    };
    let rows = header("rows")?;
    let cols = header("cols")?;
    if rows != ny || cols != nx {
        return Err(format!("raster is {rows}x{cols} but the mesh has {ny}x{nx} cells"));
    }
    let values = tokens
        .map(|t| t.parse::<f64>().map_err(|e| format!("bad value `{t}`: {e}")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if values.len() != rows * cols {
        return Err(format!("expected {} values, found {}", rows * cols, values.len()));
    }
    if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(format!("nonpositive value {v}"));
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_fine_mesh;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, max_norm: f64) -> SymTensor {
        loop {
            let t = SymTensor::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let n = t.norm();
            if n > 0.0 {
                return t.scale(max_norm * rng.random_range(0.0..1.0) / n);
            }
        }
    }

    #[test]
    fn kappa_examples() {
        assert_eq!(eval_kappa(1.0, 0.5, 1e-6).value, 2.0);
        assert_eq!(eval_kappa(3.7, 0.0, 1e-6).value, 1.0);
        let k = eval_kappa(1.0, 1.2, 1e-6);
        assert!(k.clamped);
        assert!((k.value - 1e6).abs() < 1e-6);
        let counter = ClampCounter::new();
        eval_kappa_counted(1.0, 1.2, 1e-6, &counter);
        eval_kappa_counted(1.0, 0.2, 1e-6, &counter);
        assert_eq!(counter.get(), 1);
    }

    #[test]
    fn stress_examples() {
        assert_eq!(constitutive_stress(&SymTensor::ZERO, 1.0).unwrap(), SymTensor::ZERO);
        let xi = SymTensor::new(0.3, 0.4, 0.0);
        let t = constitutive_stress(&xi, 1.0).unwrap();
        assert!((t.e11 - 0.6).abs() < 1e-15 && (t.e22 - 0.8).abs() < 1e-15);
        assert!(constitutive_stress(&SymTensor::new(1.0, 0.0, 0.0), 1.0).is_err());
        assert_eq!(inverse_strain(&SymTensor::ZERO, 2.0), SymTensor::ZERO);
    }

    #[test]
    fn strain_bound_for_huge_stress() {
        let e = inverse_strain(&SymTensor::new(1e6, 0.0, 0.0), 1.0);
        assert!(e.norm() < 1.0);
        assert!(1.0 - e.norm() < 1e-5);
    }

    #[test]
    fn monotonicity_and_continuity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let beta = rng.random_range(1e-4..10.0);
            let a = random_tensor(&mut rng, 0.999 / beta);
            let b = random_tensor(&mut rng, 0.999 / beta);
            let fa = constitutive_stress(&a, beta).unwrap();
            let fb = constitutive_stress(&b, beta).unwrap();
            let d = a.sub(&b);
            assert!(fa.sub(&fb).dot(&d) >= d.dot(&d) - 1e-12);
            if beta * (a.norm() + b.norm()) < 1.0 {
                let bound = d.norm() / (1.0 - beta * (a.norm() + b.norm())).powi(2);
                assert!(fa.sub(&fb).norm() <= bound + 1e-12);
            }
        }
    }

    #[test]
    fn roundtrip_and_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let beta = rng.random_range(1e-3..10.0);
            let xi = random_tensor(&mut rng, 0.999 / beta);
            let back = inverse_strain(&constitutive_stress(&xi, beta).unwrap(), beta);
            assert!(back.sub(&xi).norm() <= 1e-12 * (1.0 + xi.norm()));
            let t = random_tensor(&mut rng, 1e8);
            assert!(beta * inverse_strain(&t, beta).norm() < 1.0);
        }
    }

    fn interpolate(mesh: &FineMesh, f: impl Fn(f64, f64) -> [f64; 2]) -> DisplacementField {
        DisplacementField(mesh.nodes.iter().map(|p| f(p[0], p[1])).collect())
    }

    #[test]
    fn strain_of_linear_fields() {
        let m = build_fine_mesh(4, 4).unwrap();
        let stretch = interpolate(&m, |x, _| [x, 0.0]);
        let rot = interpolate(&m, |x, y| [-y, x]);
        for t in 0..m.num_triangles() {
            let e = element_strain(&m, &stretch, t);
            assert!((e.e11 - 1.0).abs() < 1e-12 && e.e22.abs() < 1e-12 && e.e12.abs() < 1e-12);
            assert!((e.norm() - 1.0).abs() < 1e-12);
            assert!(element_strain(&m, &rot, t).norm() < 1e-12);
        }
    }

    #[test]
    fn strain_matches_finite_differences() {
        let m = build_fine_mesh(6, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = DisplacementField((0..m.num_nodes()).map(|_| [rng.random(), rng.random()]).collect());
        // P1 interpolant evaluated through barycentric coordinates
        let eval = |t: usize, x: f64, y: f64| -> [f64; 2] {
            let [a, b, c] = m.triangles[t].map(|n| m.nodes[n]);
            let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
            let lb = ((x - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (y - a[1])) / det;
            let lc = ((b[0] - a[0]) * (y - a[1]) - (x - a[0]) * (b[1] - a[1])) / det;
            let la = 1.0 - lb - lc;
            let [na, nb, nc] = m.triangles[t];
            [0, 1].map(|k| la * u.0[na][k] + lb * u.0[nb][k] + lc * u.0[nc][k])
        };
        let step = 1e-6 * m.h;
        for t in 0..m.num_triangles() {
            let [cx, cy] = m.centroid(t);
            let dx = [0, 1].map(|k| (eval(t, cx + step, cy)[k] - eval(t, cx - step, cy)[k]) / (2.0 * step));
            let dy = [0, 1].map(|k| (eval(t, cx, cy + step)[k] - eval(t, cx, cy - step)[k]) / (2.0 * step));
            let fd = SymTensor::new(dx[0], dy[1], 0.5 * (dy[0] + dx[1]));
            let e = element_strain(&m, &u, t);
            assert!(e.sub(&fd).norm() < 1e-8 * m.nx as f64, "t={t}: {e:?} vs {fd:?}");
        }
    }

    #[test]
    fn beta_field_specs() {
        let m = build_fine_mesh(10, 10).unwrap();
        let c = build_beta_field(&m, &BetaSpec::Constant { value: 1.0 }).unwrap();
        assert!(c.values.iter().all(|&v| v == 1.0));
        assert_eq!((c.min, c.max), (1.0, 1.0));

        let rect = [0.2, 0.2, 0.5, 0.4];
        let ch = build_beta_field(
            &m,
            &BetaSpec::Channels {
                background: 1.0,
                channel_value: 1e-4,
                rects: vec![rect],
            },
        )
        .unwrap();
        for t in 0..m.num_triangles() {
            let expect = if inside(&rect, m.centroid(t)) { 1e-4 } else { 1.0 };
            assert_eq!(ch.values[t], expect);
        }
        assert_eq!(ch.min, 1e-4);

        let hi = build_beta_field(
            &m,
            &BetaSpec::Preset {
                name: "model2-like".into(),
                background: 1.0,
                channel_value: 1e4,
            },
        )
        .unwrap();
        assert_eq!(hi.max, 1e4);
        assert!(BetaField::new(vec![1.0, 0.0]).is_err());
    }

    #[test]
    fn raster_parsing() {
        let ok = parse_raster("2 3\n1 2 3\n4 5 6\n", 3, 2).unwrap();
        assert_eq!(ok, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert!(parse_raster("2 3\n1 2 3\n4 5 6\n", 2, 3).is_err());
        assert!(parse_raster("2 3\n1 2 3\n4 5\n", 3, 2).is_err());
        assert!(parse_raster("2 3\n1 2 3\n4 5 -6\n", 3, 2).is_err());
    }

    #[test]
    fn raster_cells_map_to_both_triangles() {
        let m = build_fine_mesh(2, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("beta.txt");
        std::fs::write(&path, "2 2\n1 2\n3 4\n").unwrap();
        let b = build_beta_field(&m, &BetaSpec::Raster { path }).unwrap();
        assert_eq!(b.values, vec![1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0]);
    }
}

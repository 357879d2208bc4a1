//! Acceptance gate. Each criterion prints one `PASS`/`FAIL` line on stderr
//! (uncaptured) and then asserts. Criteria run one at a time so wall-clock
//! budgets are not shared with other tests.

use std::collections::HashMap;
use std::io::Write;
use std::sync::{Mutex, MutexGuard};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use strain_gmsfem::coefficient::{
    constitutive_stress, inverse_strain, BetaSpec, DisplacementField, SymTensor, DEFAULT_CLAMP_EPS,
};
use strain_gmsfem::experiment::{solve_fine, ExperimentConfig, MeshConfig, Problem};
use strain_gmsfem::fem::{assemble_load, local_load, symgrad_element_matrix, SourceSpec, StiffnessAssembler};
use strain_gmsfem::fine_solver::{picard_solve_fine, FineSystem, LinearSolve, PicardOptions};
use strain_gmsfem::gmsfem::{
    assemble_space, build_pou, coarse_solve, gmsfem_picard, local_pencil, offline_basis, online_candidates,
    online_enrich_step, select_kp, EigenMethod, GmsfemOptions, LocalSolvers, PouMode, SpaceKind, UpdatePolicy,
};
use strain_gmsfem::grid::{all_neighborhoods, build_coarse_grid, build_fine_mesh};
use strain_gmsfem::reporting::{error_pair, ErrorPair};

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(n: usize, ok: bool, detail: &str) {
    let verdict = if ok { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {n}: {verdict}: {detail}");
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

fn sub(x: &[f64], y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(a, b)| a - b).collect()
}

type Check = Result<(), String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Check {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, radius: f64) -> SymTensor {
    loop {
        let t = SymTensor::new(
            rng.random_range(-radius..radius),
            rng.random_range(-radius..radius),
            rng.random_range(-radius..radius),
        );
        if t.norm() < radius {
            return t;
        }
    }
}

fn constitutive_properties() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for _ in 0..10_000 {
        let beta = rng.random_range(1e-4..10.0);
        let a = random_tensor(&mut rng, 0.999 / beta);
        let b = random_tensor(&mut rng, 0.999 / beta);
        let fa = constitutive_stress(&a, beta).map_err(|e| e.to_string())?;
        let fb = constitutive_stress(&b, beta).map_err(|e| e.to_string())?;
        let d = a.sub(&b);
        let df = fa.sub(&fb);
        ensure(df.dot(&d) >= d.dot(&d) - 1e-12, || {
            format!("monotonicity fails at beta {beta}")
        })?;
        if beta * (a.norm() + b.norm()) < 1.0 {
            let bound = d.norm() / (1.0 - beta * (a.norm() + b.norm())).powi(2);
            ensure(df.norm() <= bound + 1e-12, || {
                format!("continuity fails at beta {beta}")
            })?;
        }
        let back = inverse_strain(&fa, beta);
        ensure(back.sub(&a).norm() <= 1e-12 * (1.0 + a.norm()), || {
            "constitutive roundtrip".into()
        })?;
    }
    Ok(())
}

fn rigid_nullspace() -> Check {
    let m = build_fine_mesh(3, 3).map_err(|e| e.to_string())?;
    for t in 0..m.num_triangles() {
        let k = symgrad_element_matrix(&m.triangle_gradients(t), m.triangle_area());
        let verts = m.triangles[t].map(|n| m.nodes[n]);
        let modes: [fn([f64; 2]) -> [f64; 2]; 3] = [|_| [1.0, 0.0], |_| [0.0, 1.0], |p| [-p[1], p[0]]];
        for mode in modes {
            let v: Vec<f64> = verts.iter().flat_map(|&p| mode(p)).collect();
            for row in &k {
                ensure(dot(row, &v).abs() < 1e-12, || {
                    format!("rigid mode not in kernel of triangle {t}")
                })?;
            }
        }
    }
    Ok(())
}

/// 20x20 fine, 4x4 coarse, with `kappa` frozen at a channelized profile.
struct Small {
    mesh: strain_gmsfem::grid::FineMesh,
    grid: strain_gmsfem::grid::CoarseGrid,
    dofs: strain_gmsfem::grid::DofMap,
    kappa: Vec<f64>,
}

fn small() -> Small {
    let mesh = build_fine_mesh(20, 20).unwrap();
    let grid = build_coarse_grid(&mesh, 4, 4).unwrap();
    let dofs = strain_gmsfem::grid::DofMap::new(&mesh);
    let kappa = (0..mesh.num_triangles())
        .map(|t| {
            let c = mesh.centroid(t);
            if (c[1] - 0.37).abs() < 0.04 {
                50.0
            } else {
                1.0 + c[0] * c[1]
            }
        })
        .collect();
    Small {
        mesh,
        grid,
        dofs,
        kappa,
    }
}

fn pou_sums(s: &Small) -> Check {
    for mode in [PouMode::Hat, PouMode::Msfem] {
        let pou = build_pou(&s.mesh, &s.grid, &s.kappa, mode).map_err(|e| e.to_string())?;
        let worst = pou
            .sum_field(&s.mesh)
            .iter()
            .map(|v| (v - 1.0).abs())
            .fold(0.0, f64::max);
        ensure(worst <= 1e-10, || {
            format!("{mode:?} partition of unity sum off by {worst:e}")
        })?;
    }
    Ok(())
}

fn linear_properties(s: &Small) -> Check {
    let f = SourceSpec::default();
    let pou = build_pou(&s.mesh, &s.grid, &s.kappa, PouMode::Msfem).map_err(|e| e.to_string())?;
    let weight = pou.weight(&s.mesh, &s.grid);
    let nbs = all_neighborhoods(&s.grid, &s.mesh, &s.dofs);
    let a = StiffnessAssembler::new(&s.mesh, &s.dofs).assemble(&s.kappa);
    let b = assemble_load(&s.mesh, &s.dofs, &f);

    // offline eigenpairs
    let mut bases = Vec::new();
    let mut counts = Vec::new();
    for nb in &nbs {
        let snap = nb.snapshot(&s.mesh);
        let probe = local_load(&s.mesh, &snap, &f);
        let o = offline_basis(
            &s.mesh,
            &snap,
            &s.kappa,
            &pou,
            &weight,
            &probe,
            3,
            EigenMethod::default(),
            None,
        )
        .map_err(|e| e.to_string())?;
        let (ka, km) = local_pencil(&s.mesh, &snap, &s.kappa, &weight);
        let scale = ka.norm_inf();
        for (k, v) in o.eigenvectors.iter().enumerate() {
            let av = ka.matvec(v);
            let mv = km.matvec(v);
            let r = av
                .iter()
                .zip(&mv)
                .map(|(x, y)| (x - o.eigenvalues[k] * y).powi(2))
                .sum::<f64>()
                .sqrt();
            ensure(r <= 1e-8 * scale * dot(v, v).sqrt(), || {
                format!("eigen residual {r:e} at node {}", nb.coarse_node)
            })?;
            for (l, w) in o.eigenvectors.iter().enumerate() {
                let g = dot(w, &mv) - if k == l { 1.0 } else { 0.0 };
                ensure(g.abs() <= 1e-8, || format!("M-orthonormality off by {g:e}"))?;
            }
        }
        counts.push(o.bases.len());
        bases.extend(o.bases);
    }

    // Galerkin orthogonality and Pythagoras
    let space = assemble_space(bases, &a, counts, 0).map_err(|e| e.to_string())?;
    let fine = LinearSolve::Dense
        .solve(&a, &b, &vec![0.0; b.len()])
        .map_err(|e| e.to_string())?
        .0;
    let ums = coarse_solve(&space, &a, &b).map_err(|e| e.to_string())?.u;
    let e = sub(&fine, &ums);
    let ae = a.matvec(&e);
    let fine_sq = a.bilinear(&fine, &fine);
    for j in 0..space.dim() {
        let phi = space.column(j);
        let g = dot(&phi, &ae).abs() / (a.bilinear(&phi, &phi) * fine_sq).sqrt();
        ensure(g <= 1e-8, || format!("Galerkin orthogonality {g:e} for column {j}"))?;
    }
    let pyth = (fine_sq - a.bilinear(&ums, &ums) - a.bilinear(&e, &e)).abs() / fine_sq;
    ensure(pyth <= 1e-8, || format!("Pythagoras off by {pyth:e}"))?;

    // online decrement per candidate
    let residual = sub(&b, &a.matvec(&ums));
    let solvers = LocalSolvers::new(&s.mesh, &nbs, &s.kappa).map_err(|e| e.to_string())?;
    let candidates = online_candidates(&solvers, &nbs, &residual);
    let old_sq = a.bilinear(&e, &e);
    for c in &candidates {
        let r = c.energy_norm.unwrap_or(0.0);
        let grown = space.extend(vec![c.clone()], &a).map_err(|e| e.to_string())?;
        let u = coarse_solve(&grown, &a, &b).map_err(|e| e.to_string())?.u;
        let en = sub(&fine, &u);
        let new_sq = a.bilinear(&en, &en);
        ensure(new_sq <= old_sq - r * r + 1e-10, || {
            format!(
                "online decrement fails at node {}: {new_sq:e} > {old_sq:e} - {:e}",
                c.coarse_node,
                r * r
            )
        })?;
    }

    // theta = 1 selects every interior neighborhood
    let nv = s.grid.interior_coarse_nodes.len();
    let r: Vec<f64> = candidates.iter().map(|c| c.energy_norm.unwrap_or(0.0)).collect();
    let nodes: Vec<usize> = candidates.iter().map(|c| c.coarse_node).collect();
    ensure(select_kp(&r, &nodes, 1.0).1 == nv, || {
        "theta = 1 does not pick every neighborhood".into()
    })?;
    let (_, added, _) = online_enrich_step(&space, &a, candidates, 1.0, usize::MAX).map_err(|e| e.to_string())?;
    ensure(added == nv, || format!("theta = 1 added {added} of {nv}"))?;
    Ok(())
}

fn driver_properties() -> Check {
    let mesh = build_fine_mesh(16, 16).unwrap();
    let grid = build_coarse_grid(&mesh, 4, 4).unwrap();
    let beta = strain_gmsfem::coefficient::build_beta_field(
        &mesh,
        &BetaSpec::Preset {
            name: "model1-like".into(),
            background: 1.0,
            channel_value: 1e-4,
        },
    )
    .unwrap();
    let sys = FineSystem::new(&mesh, &beta, &SourceSpec::default(), DEFAULT_CLAMP_EPS).map_err(|e| e.to_string())?;
    let picard = PicardOptions {
        linear: LinearSolve::Dense,
        ..PicardOptions::default()
    };
    let full = GmsfemOptions {
        picard,
        space: SpaceKind::FullFine,
        ..GmsfemOptions::default()
    };
    let (u, t) = gmsfem_picard(&sys, &grid, &UpdatePolicy::default(), &full).map_err(|e| e.to_string())?;
    let (uf, tf) = picard_solve_fine(&sys, &picard).map_err(|e| e.to_string())?;
    ensure(t.picard_iterations() == tf.iterations(), || {
        "full-space iteration count differs".into()
    })?;
    let tol = 10.0 * 1e-10;
    let scale = uf.0.iter().fold(0.0f64, |m, v| m.max(v[0].abs()).max(v[1].abs()));
    let worst =
        u.0.iter()
            .zip(&uf.0)
            .map(|(p, q)| (p[0] - q[0]).abs().max((p[1] - q[1]).abs()))
            .fold(0.0, f64::max);
    ensure(worst <= tol * scale, || {
        format!("full-space iterate differs by {worst:e}")
    })?;

    let opts = GmsfemOptions {
        picard,
        ..GmsfemOptions::default()
    };
    let never = UpdatePolicy {
        delta: f64::INFINITY,
        ..UpdatePolicy::default()
    };
    let (_, t) = gmsfem_picard(&sys, &grid, &never, &opts).map_err(|e| e.to_string())?;
    ensure(t.basis_builds == 1, || {
        format!("delta = inf built {} times", t.basis_builds)
    })?;
    let (_, t) = gmsfem_picard(&sys, &grid, &UpdatePolicy::default(), &opts).map_err(|e| e.to_string())?;
    ensure(t.basis_builds == t.picard_iterations(), || {
        format!(
            "delta = 0 built {} times in {} iterations",
            t.basis_builds,
            t.picard_iterations()
        )
    })?;
    Ok(())
}

#[test]
fn criterion_1_property_suite() {
    let _guard = serial();
    let start = Instant::now();
    let s = small();
    let checks: [(&str, Check); 5] = [
        ("constitutive", constitutive_properties()),
        ("rigid nullspace", rigid_nullspace()),
        ("partition of unity", pou_sums(&s)),
        ("offline/Galerkin/online", linear_properties(&s)),
        ("driver", driver_properties()),
    ];
    let secs = start.elapsed().as_secs_f64();
    let failures: Vec<String> = checks
        .iter()
        .filter_map(|(name, c)| c.as_ref().err().map(|e| format!("{name}: {e}")))
        .collect();
    let ok = failures.is_empty() && secs < 60.0;
    let detail = if failures.is_empty() {
        format!("all property groups hold in {secs:.1} s (budget 60 s)")
    } else {
        failures.join("; ")
    };
    report(1, ok, &detail);
    assert!(ok, "{detail}");
}

// desk-scale runs, shared between criteria

#[derive(Clone, Copy)]
struct Cell {
    errors: ErrorPair,
    secs: f64,
    converged: bool,
    clamps: usize,
}

struct Desk {
    cfg: ExperimentConfig,
    problem: Problem,
    u_h: DisplacementField,
    kappa_h: Vec<f64>,
    fine_secs: f64,
    fine_converged: bool,
    fine_clamps: usize,
    cells: HashMap<(usize, usize, u64), Cell>,
}

impl Desk {
    fn new(channel_value: f64, scale: f64) -> Self {
        let cfg = ExperimentConfig {
            mesh: MeshConfig {
                nx: 100,
                ny: 100,
                coarse_nx: 10,
                coarse_ny: 10,
            },
            beta: BetaSpec::Preset {
                name: "model1-like".into(),
                background: 1.0,
                channel_value,
            },
            source: SourceSpec::Paper { scale },
            ..ExperimentConfig::default()
        };
        let problem = Problem::new(&cfg).unwrap();
        let start = Instant::now();
        let fine = solve_fine(&cfg, &problem).unwrap();
        Self {
            fine_secs: start.elapsed().as_secs_f64(),
            fine_converged: fine.trace.converged,
            fine_clamps: fine.trace.final_clamps,
            u_h: fine.u,
            kappa_h: fine.kappa,
            cfg,
            problem,
            cells: HashMap::new(),
        }
    }

    fn cell(&mut self, nb_off: usize, nb_on: usize, delta: f64) -> Cell {
        let key = (nb_off, nb_on, delta.to_bits());
        if let Some(c) = self.cells.get(&key) {
            return *c;
        }
        let sys = self.problem.system(&self.cfg).unwrap();
        let policy = UpdatePolicy {
            delta,
            nb_off,
            nb_on,
            ..UpdatePolicy::default()
        };
        let opts = GmsfemOptions {
            picard: self.cfg.picard_options(),
            ..GmsfemOptions::default()
        };
        let start = Instant::now();
        let (u, trace) = gmsfem_picard(&sys, &self.problem.grid, &policy, &opts).unwrap();
        let secs = start.elapsed().as_secs_f64();
        let errors = error_pair(&self.problem.mesh, &self.kappa_h, &u, &self.u_h).unwrap();
        let c = Cell {
            errors,
            secs,
            converged: trace.converged,
            clamps: trace.final_clamps,
        };
        self.cells.insert(key, c);
        c
    }
}

static BASE: Mutex<Option<Desk>> = Mutex::new(None);
static CONTRAST: Mutex<Option<Desk>> = Mutex::new(None);

fn with_desk<T>(slot: &Mutex<Option<Desk>>, channel_value: f64, scale: f64, f: impl FnOnce(&mut Desk) -> T) -> T {
    let mut guard = slot.lock().unwrap_or_else(|e| e.into_inner());
    let desk = guard.get_or_insert_with(|| Desk::new(channel_value, scale));
    f(desk)
}

struct Outcome {
    ok: bool,
    detail: String,
}

fn offline_trend(d: &mut Desk) -> Outcome {
    let cells: Vec<Cell> = [1, 3, 5, 7].iter().map(|&nb| d.cell(nb, 0, 0.0)).collect();
    let eh: Vec<f64> = cells.iter().map(|c| c.errors.e_h1).collect();
    let secs = d.fine_secs + cells.iter().map(|c| c.secs).sum::<f64>();
    let decreasing = eh.windows(2).all(|w| w[1] < w[0]);
    let e1 = cells[0].errors.e_l2;
    let in_range = (5e-3..=2e-1).contains(&e1);
    Outcome {
        ok: decreasing && in_range && secs <= 180.0,
        detail: format!(
            "e_H1 over Nb 1,3,5,7 = {:.3e}, {:.3e}, {:.3e}, {:.3e} (strictly decreasing: {decreasing}); \
             e_L2(Nb=1) = {e1:.3e} (in [5e-3, 2e-1]: {in_range}); {secs:.0} s (budget 180 s)",
            eh[0], eh[1], eh[2], eh[3]
        ),
    }
}

fn online_superiority(d: &mut Desk) -> Outcome {
    let off = d.cell(3, 0, 0.0);
    let on = d.cell(3, 2, 0.0);
    let ratio = off.errors.e_l2 / on.errors.e_l2;
    let secs = d.fine_secs + off.secs + on.secs;
    Outcome {
        ok: ratio >= 1e3 && secs <= 300.0,
        detail: format!(
            "e_L2 Nb=3 {:.3e} vs Nb=3+2 {:.3e}, reduction {ratio:.1}x (required 1000x); {secs:.0} s (budget 300 s)",
            off.errors.e_l2, on.errors.e_l2
        ),
    }
}

fn update_trend(d: &mut Desk) -> Outcome {
    let e: Vec<f64> = [0.0, 0.1, f64::INFINITY]
        .iter()
        .map(|&delta| d.cell(3, 2, delta).errors.e_l2)
        .collect();
    Outcome {
        ok: e[0] <= e[1] && e[1] <= e[2],
        detail: format!(
            "Nb=3+2 e_L2 at delta 0, 0.1, inf = {:.3e}, {:.3e}, {:.3e}",
            e[0], e[1], e[2]
        ),
    }
}

#[test]
fn criterion_2_offline_convergence_trend() {
    let _guard = serial();
    let o = with_desk(&BASE, 1e-4, 1.0, offline_trend);
    report(2, o.ok, &o.detail);
    assert!(o.ok, "{}", o.detail);
}

#[test]
fn criterion_3_online_superiority() {
    let _guard = serial();
    let o = with_desk(&BASE, 1e-4, 1.0, online_superiority);
    report(3, o.ok, &o.detail);
    assert!(o.ok, "{}", o.detail);
}

#[test]
fn criterion_4_update_frequency_trend() {
    let _guard = serial();
    let o = with_desk(&BASE, 1e-4, 1.0, update_trend);
    report(4, o.ok, &o.detail);
    assert!(o.ok, "{}", o.detail);
}

#[test]
fn criterion_5_contrast_robustness() {
    let _guard = serial();
    let (parts, converged) = with_desk(&CONTRAST, 1e4, 1e-4, |d| {
        let parts = [offline_trend(d), online_superiority(d), update_trend(d)];
        let cells_ok = d.cells.values().all(|c| c.converged && c.clamps == 0);
        let converged = d.fine_converged && d.fine_clamps == 0 && cells_ok;
        (parts, converged)
    });
    let ok = converged && parts.iter().all(|p| p.ok);
    let detail = format!(
        "Picard converged with zero final clamps in every run: {converged}; trend [{}] {}; online [{}] {}; update [{}] {}",
        if parts[0].ok { "ok" } else { "fails" },
        parts[0].detail,
        if parts[1].ok { "ok" } else { "fails" },
        parts[1].detail,
        if parts[2].ok { "ok" } else { "fails" },
        parts[2].detail
    );
    report(5, ok, &detail);
    assert!(ok, "{detail}");
}

#[test]
fn criterion_6_full_scale_smoke() {
    let _guard = serial();
    let start = Instant::now();
    let cfg = ExperimentConfig {
        beta: BetaSpec::Preset {
            name: "model1-like".into(),
            background: 1.0,
            channel_value: 1e-4,
        },
        ..ExperimentConfig::default()
    };
    let problem = Problem::new(&cfg).unwrap();
    let fine = solve_fine(&cfg, &problem).unwrap();
    let sys = problem.system(&cfg).unwrap();
    let policy = UpdatePolicy {
        delta: 0.0,
        nb_off: 3,
        ..UpdatePolicy::default()
    };
    let opts = GmsfemOptions {
        picard: cfg.picard_options(),
        ..GmsfemOptions::default()
    };
    let (u, trace) = gmsfem_picard(&sys, &problem.grid, &policy, &opts).unwrap();
    let errors = error_pair(&problem.mesh, &fine.kappa, &u, &fine.u).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let ok = fine.trace.converged && trace.converged && secs <= 900.0;
    let detail = format!(
        "200x200 / 20x20, Nb=3, delta=0: fine {} and multiscale {} Picard iterations (converged {}, {}), \
         e_L2 {:.3e}, e_H1 {:.3e}, {secs:.0} s (budget 900 s)",
        fine.trace.iterations(),
        trace.picard_iterations(),
        fine.trace.converged,
        trace.converged,
        errors.e_l2,
        errors.e_h1
    );
    report(6, ok, &detail);
    assert!(ok, "{detail}");
}

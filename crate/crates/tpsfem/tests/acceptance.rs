//! Acceptance suite: one test per criterion, each printing a PASS line with
//! the measured numbers (run with `-- --nocapture` to see them).
//!
//! The heavyweight fixtures (the 62,500-point synthetic benchmark runs) are
//! shared through lazy statics so criteria that look at the same run do not
//! recompute it.

use std::collections::BTreeSet;
use std::sync::OnceLock;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tpsfem::assembly::{assemble_data, assemble_fem, TpsfemSystem};
use tpsfem::data::{gen_peaks, gen_surface, locate, NoiseSpec, ScatteredData};
use tpsfem::driver::{run, BoundarySpec, IterationRecord, RefineConfig, RefineMode};
use tpsfem::gcv::{alpha_initial, rademacher_probes, GcvConfig, GcvContext};
use tpsfem::geometry::{Point, Rect};
use tpsfem::indicators::{
    compute_field, IndicatorConfig, IndicatorField, IndicatorInputs, IndicatorKind,
};
use tpsfem::mesh::{BoundaryKind, DomainSpec, EdgeId, NodeId, TriMesh};
use tpsfem::solver::{factorize, max_err, solve};

fn pass(criterion: usize, detail: &str) {
    println!("acceptance criterion {criterion}: PASS: {detail}");
}

// ---- shared fixtures ----

const PEAKS_DOMAIN: Rect = Rect {
    x_lo: -3.0,
    x_hi: 3.0,
    y_lo: -3.0,
    y_hi: 3.0,
};
const PEAKS_REGION: Rect = Rect {
    x_lo: -2.4,
    x_hi: 2.4,
    y_lo: -2.4,
    y_hi: 2.4,
};

fn peaks_data(seed: u64) -> ScatteredData {
    gen_peaks(62_500, PEAKS_REGION, &NoiseSpec { sigma: 0.02, seed })
}

fn peaks_run(
    mode: RefineMode,
    indicator: IndicatorKind,
    seed: u64,
) -> (usize, Vec<IterationRecord>) {
    let data = peaks_data(seed);
    let mut mesh =
        TriMesh::build_initial_grid(DomainSpec::square(PEAKS_DOMAIN), 5, BoundaryKind::Dirichlet)
            .unwrap();
    let mut cfg = RefineConfig::default_for(mode, indicator);
    if mode == RefineMode::Uniform {
        cfg.max_outer_iters = 10;
        cfg.stall_count = usize::MAX; // run the full ladder
    }
    let gcv = GcvConfig {
        seed,
        ..Default::default()
    };
    let out = run(
        &mut mesh,
        &data,
        &BoundarySpec::dirichlet_const(0.0, 0.0, 0.0),
        &gcv,
        &cfg,
    )
    .unwrap();
    (mesh.node_count(), out.records)
}

/// The criterion-5 uniform benchmark, shared with criterion 10.
fn uniform_benchmark() -> &'static (usize, Vec<IterationRecord>) {
    static RUN: OnceLock<(usize, Vec<IterationRecord>)> = OnceLock::new();
    RUN.get_or_init(|| peaks_run(RefineMode::Uniform, IndicatorKind::Recovery, 1))
}

/// Indicator fields for the noise-robustness criteria: the localized bump
/// surface on a 400-node uniform grid, with and without response noise.
struct OverlapFixture {
    regression: f64,
    recovery: f64,
}

fn bump(x: f64, y: f64) -> f64 {
    (-50.0 * (x - 0.5) * (x - 0.5)).exp() * (-50.0 * (y - 0.5) * (y - 0.5)).exp()
}

fn top_decile(field: &IndicatorField) -> BTreeSet<EdgeId> {
    let mut vals: Vec<(EdgeId, f64)> = field.iter().collect();
    vals.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    let k = (vals.len() + 9) / 10;
    vals.into_iter().take(k).map(|(e, _)| e).collect()
}

fn overlap_fixture() -> &'static OverlapFixture {
    static FIX: OnceLock<OverlapFixture> = OnceLock::new();
    FIX.get_or_init(|| {
        let mesh =
            TriMesh::build_initial_grid(DomainSpec::unit_square(), 20, BoundaryKind::Dirichlet)
                .unwrap();
        assert_eq!(mesh.node_count(), 400);
        let edges: Vec<EdgeId> = mesh.refinable_edges().collect();
        let field = |kind: IndicatorKind, sigma: f64| -> IndicatorField {
            let data = gen_surface(10_000, Rect::unit(), &NoiseSpec { sigma, seed: 1 }, bump);
            let buckets = locate(&mesh, &data);
            let mut sys = TpsfemSystem::assemble(&mesh, &data, &buckets).unwrap();
            sys.apply_dirichlet_constants(&mesh, 0.0, 0.0, 0.0);
            let gcv = GcvConfig {
                seed: 1,
                ..Default::default()
            };
            let ctx = GcvContext::new(&sys, &mesh, &data, &buckets, &gcv);
            let (alpha, _) = alpha_initial(&ctx, &gcv).unwrap();
            let sm = solve(&sys, alpha).unwrap();
            let inputs = IndicatorInputs {
                mesh: &mesh,
                smoother: &sm,
                data: &data,
                buckets: &buckets,
                config: IndicatorConfig::default(),
            };
            compute_field(kind, &inputs, &edges).unwrap().0
        };
        let jaccardish = |a: &BTreeSet<EdgeId>, b: &BTreeSet<EdgeId>| -> f64 {
            a.intersection(b).count() as f64 / a.len().max(1) as f64
        };
        let rec0 = top_decile(&field(IndicatorKind::Recovery, 0.0));
        let rec1 = top_decile(&field(IndicatorKind::Recovery, 0.01));
        let reg0 = top_decile(&field(IndicatorKind::Regression, 0.0));
        let reg1 = top_decile(&field(IndicatorKind::Regression, 0.01));
        OverlapFixture {
            regression: jaccardish(&reg0, &reg1),
            recovery: jaccardish(&rec0, &rec1),
        }
    })
}

/// Random small mesh with bucketed data for the assembly oracles.
fn random_small_mesh(rng: &mut ChaCha8Rng) -> (TriMesh, ScatteredData) {
    let domain = if rng.random::<bool>() {
        DomainSpec::unit_square()
    } else {
        DomainSpec::unit_lshape()
    };
    let n = if matches!(domain.shape, tpsfem::mesh::DomainShape::LShape) {
        3
    } else {
        2 + rng.random_range(0..2)
    };
    let mut mesh = TriMesh::build_initial_grid(domain, n, BoundaryKind::Dirichlet).unwrap();
    while mesh.alive_tri_count() < 50 - 8 && rng.random::<f64>() < 0.85 {
        let refinable: Vec<EdgeId> = mesh.refinable_edges().collect();
        let e = refinable[rng.random_range(0..refinable.len())];
        mesh.bisect_edge(e).unwrap();
    }
    assert!(mesh.alive_tri_count() <= 50);
    let mut data = ScatteredData::default();
    while data.n() < 40 {
        let p = Point::new(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
        if mesh.domain().contains(p) {
            data.push(p, rng.random_range(-2.0..2.0));
        }
    }
    (mesh, data)
}

/// Affine interpolation coefficients `(a, b, c)` of basis `which` on the
/// triangle, from a direct 3x3 solve: the independent route to values and
/// gradients used by the assembly oracles.
fn basis_coeffs(coords: [Point; 3], which: usize) -> [f64; 3] {
    let m = nalgebra::Matrix3::new(
        1.0,
        coords[0].x,
        coords[0].y, //
        1.0,
        coords[1].x,
        coords[1].y, //
        1.0,
        coords[2].x,
        coords[2].y,
    );
    let mut rhs = nalgebra::Vector3::zeros();
    rhs[which] = 1.0;
    let c = m.lu().solve(&rhs).expect("non-degenerate triangle");
    [c[0], c[1], c[2]]
}

/// Degree-5 quadrature over a triangle, for the `∫ b_p` moments.
fn quad_tri(coords: [Point; 3], f: &dyn Fn(Point) -> f64) -> f64 {
    let w = [
        0.225,
        0.132394152788506,
        0.132394152788506,
        0.132394152788506,
        0.125939180544827,
        0.125939180544827,
        0.125939180544827,
    ];
    let (a1, b1) = (0.059715871789770, 0.470142064105115);
    let (a2, b2) = (0.797426985353087, 0.101286507323456);
    let bary = [
        [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
        [a1, b1, b1],
        [b1, a1, b1],
        [b1, b1, a1],
        [a2, b2, b2],
        [b2, a2, b2],
        [b2, b2, a2],
    ];
    let area = 0.5 * tpsfem::geometry::signed_area2(coords[0], coords[1], coords[2]);
    let mut acc = 0.0;
    for (wi, l) in w.iter().zip(bary.iter()) {
        let p = Point::new(
            l[0] * coords[0].x + l[1] * coords[1].x + l[2] * coords[2].x,
            l[0] * coords[0].y + l[1] * coords[1].y + l[2] * coords[2].y,
        );
        acc += wi * f(p);
    }
    acc * area
}

#[test]
fn criterion_01_assembly_matches_independent_oracles() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let (mesh, data) = random_small_mesh(&mut rng);
        let buckets = locate(&mesh, &data);
        let blocks = assemble_fem(&mesh).unwrap();
        let (a, d) = assemble_data(&mesh, &data, &buckets).unwrap();

        let m = mesh.node_count();
        let mut l_o = nalgebra::DMatrix::<f64>::zeros(m, m);
        let mut g1_o = nalgebra::DMatrix::<f64>::zeros(m, m);
        let mut g2_o = nalgebra::DMatrix::<f64>::zeros(m, m);
        for t in mesh.alive_tris() {
            let coords = mesh.tri_coords(t);
            let nodes = mesh.tri_nodes(t);
            let area = 0.5 * tpsfem::geometry::signed_area2(coords[0], coords[1], coords[2]);
            let coeffs = [
                basis_coeffs(coords, 0),
                basis_coeffs(coords, 1),
                basis_coeffs(coords, 2),
            ];
            for p in 0..3 {
                for q in 0..3 {
                    let (gp, gq) = (&coeffs[p], &coeffs[q]);
                    l_o[(nodes[p].0, nodes[q].0)] += area * (gp[1] * gq[1] + gp[2] * gq[2]);
                    let moment = quad_tri(coords, &|pt| gp[0] + gp[1] * pt.x + gp[2] * pt.y);
                    g1_o[(nodes[p].0, nodes[q].0)] += moment * gq[1];
                    g2_o[(nodes[p].0, nodes[q].0)] += moment * gq[2];
                }
            }
        }
        let mut a_o = nalgebra::DMatrix::<f64>::zeros(m, m);
        let mut d_o = vec![0.0; m];
        for (i, &p) in data.points.iter().enumerate() {
            let t = mesh
                .alive_tris()
                .find(|&t| mesh.tri_contains(t, p))
                .unwrap();
            let coords = mesh.tri_coords(t);
            let nodes = mesh.tri_nodes(t);
            let mut b = vec![0.0; m];
            for k in 0..3 {
                let c = basis_coeffs(coords, k);
                b[nodes[k].0] = c[0] + c[1] * p.x + c[2] * p.y;
            }
            for r in 0..m {
                d_o[r] += b[r] * data.responses[i] / data.n() as f64;
                for cidx in 0..m {
                    a_o[(r, cidx)] += b[r] * b[cidx] / data.n() as f64;
                }
            }
        }
        worst = worst
            .max((blocks.l.to_dense() - &l_o).abs().max())
            .max((blocks.g1.to_dense() - &g1_o).abs().max())
            .max((blocks.g2.to_dense() - &g2_o).abs().max())
            .max((a.to_dense() - &a_o).abs().max());
        for r in 0..m {
            worst = worst.max((d[r] - d_o[r]).abs());
        }
        assert!(worst < 1e-12, "criterion 1: entry mismatch {worst}");
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(
        elapsed < 10.0,
        "criterion 1: oracle sweep took {elapsed:.1}s"
    );
    pass(
        1,
        &format!("20 random grids, worst entry deviation {worst:.2e}, {elapsed:.2}s"),
    );
}

#[test]
fn criterion_02_structural_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(1002);
    let mut mesh =
        TriMesh::build_initial_grid(DomainSpec::unit_square(), 4, BoundaryKind::Dirichlet).unwrap();
    mesh.uniform_refine();
    for _ in 0..10 {
        let refinable: Vec<EdgeId> = mesh.refinable_edges().collect();
        let e = refinable[rng.random_range(0..refinable.len())];
        mesh.bisect_edge(e).unwrap();
    }
    let blocks = assemble_fem(&mesh).unwrap();
    let mut worst_l: f64 = 0.0;
    let mut worst_g: f64 = 0.0;
    for v in 0..mesh.node_count() {
        if !mesh.is_boundary_node(NodeId(v)) {
            worst_l = worst_l.max(blocks.l.row_sum(v).abs());
        }
        worst_g = worst_g
            .max(blocks.g1.row_sum(v).abs())
            .max(blocks.g2.row_sum(v).abs());
    }
    assert!(
        worst_l < 1e-12,
        "criterion 2: interior stiffness row sum {worst_l}"
    );
    assert!(worst_g < 1e-12, "criterion 2: gradient row sum {worst_g}");

    let data = gen_surface(
        400,
        Rect::unit(),
        &NoiseSpec {
            sigma: 0.2,
            seed: 7,
        },
        |x, y| x + y * y,
    );
    let buckets = locate(&mesh, &data);
    let (a, _) = assemble_data(&mesh, &data, &buckets).unwrap();
    let dense = a.to_dense();
    let eig = nalgebra::SymmetricEigen::new(dense.clone());
    let min_eig = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    assert!(
        min_eig >= -1e-12,
        "criterion 2: data matrix not PSD, min eigenvalue {min_eig}"
    );

    let mut worst_q: f64 = 0.0;
    for _ in 0..20 {
        let c: Vec<f64> = (0..mesh.node_count())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let ac = a.matvec(&c);
        let lhs: f64 = c.iter().zip(&ac).map(|(x, y)| x * y).sum();
        let mut rhs = 0.0;
        for t in mesh.alive_tris() {
            let nodes = mesh.tri_nodes(t);
            for &i in buckets.points_in(t) {
                let lam = mesh.tri_barycentric(t, data.points[i]);
                let s: f64 = (0..3).map(|k| lam[k] * c[nodes[k].0]).sum();
                rhs += s * s / data.n() as f64;
            }
        }
        worst_q = worst_q.max((lhs - rhs).abs() / rhs.abs().max(1e-300));
        assert!(
            worst_q <= 1e-12,
            "criterion 2: quadratic-form identity off by {worst_q}"
        );
    }
    pass(
        2,
        &format!("row sums {worst_l:.1e}/{worst_g:.1e}, min eigenvalue {min_eig:.1e}, quad-form dev {worst_q:.1e}"),
    );
}

#[test]
fn criterion_03_saddle_point_contract() {
    let mut mesh =
        TriMesh::build_initial_grid(DomainSpec::unit_square(), 5, BoundaryKind::Dirichlet).unwrap();
    mesh.uniform_refine();
    let data = gen_surface(
        800,
        Rect::new(0.05, 0.95, 0.05, 0.95),
        &NoiseSpec {
            sigma: 0.05,
            seed: 11,
        },
        |x, y| (4.0 * x).sin() + (3.0 * y).cos(),
    );
    let buckets = locate(&mesh, &data);
    let mut worst_constraint: f64 = 0.0;
    let mut worst_residual: f64 = 0.0;
    for dirichlet in [true, false] {
        let mut sys = TpsfemSystem::assemble(&mesh, &data, &buckets).unwrap();
        if dirichlet {
            sys.apply_dirichlet_constants(&mesh, 0.5, 0.0, 0.0);
        }
        for alpha in [1e-9, 1e-6, 1e-3] {
            let f = factorize(&sys, alpha).unwrap();
            let sm = f.solve();
            let (res, scale) = f.constraint_residual(&sm);
            assert!(
                res <= 1e-8 * scale + 1e-12,
                "criterion 3: constraint residual {res} vs scale {scale} (dirichlet={dirichlet}, alpha={alpha})"
            );
            worst_constraint = worst_constraint.max(res / (scale + 1e-300));
            let sys_res = f.system_residual(&sm);
            assert!(sys_res <= 1e-8, "criterion 3: system residual {sys_res}");
            worst_residual = worst_residual.max(sys_res);
        }
    }
    pass(
        3,
        &format!("worst relative constraint {worst_constraint:.1e}, worst system residual {worst_residual:.1e}"),
    );
}

#[test]
fn criterion_04_plane_exactness() {
    let plane = |x: f64, y: f64| 2.0 + 3.0 * x - y;
    let mut mesh =
        TriMesh::build_initial_grid(DomainSpec::unit_square(), 4, BoundaryKind::Dirichlet).unwrap();
    mesh.uniform_refine();
    let data = gen_surface(
        200,
        Rect::unit(),
        &NoiseSpec {
            sigma: 0.0,
            seed: 21,
        },
        plane,
    );
    let buckets = locate(&mesh, &data);
    let mut sys = TpsfemSystem::assemble(&mesh, &data, &buckets).unwrap();
    sys.apply_dirichlet(&mesh, &|p| plane(p.x, p.y), &|_| 3.0, &|_| -1.0);
    let mut worst: f64 = 0.0;
    for alpha in [1e-10, 1e-6, 1e-2] {
        let sm = solve(&sys, alpha).unwrap();
        let err = max_err(&mesh, &sm, &data, &buckets);
        assert!(
            err <= 1e-8,
            "criterion 4: plane error {err} at alpha {alpha}"
        );
        worst = worst.max(err);
    }
    pass(
        4,
        &format!("max plane reproduction error {worst:.2e} over alpha in {{1e-10, 1e-6, 1e-2}}"),
    );
}

#[test]
fn criterion_05_peaks_uniform_reproduction() {
    let (nodes, records) = uniform_benchmark();
    let last = records.last().unwrap();
    assert_eq!(
        *nodes, 16_641,
        "criterion 5: expected the full uniform ladder"
    );
    assert_eq!(last.nodes, 16_641);
    assert!(
        (0.016..=0.026).contains(&last.rmse),
        "criterion 5: RMSE {} outside [0.016, 0.026]",
        last.rmse
    );
    assert!(last.max <= 0.15, "criterion 5: MAX {} above 0.15", last.max);
    pass(
        5,
        &format!(
            "62,500 points -> 16,641 nodes, RMSE {:.4}, MAX {:.4}",
            last.rmse, last.max
        ),
    );
}

#[test]
fn criterion_06_adaptive_efficiency() {
    let uniform_nodes = 16_641.0;
    let mut details = Vec::new();
    for kind in [
        IndicatorKind::Auxiliary,
        IndicatorKind::Residual,
        IndicatorKind::Recovery,
        IndicatorKind::Norm,
    ] {
        let (nodes, records) = peaks_run(RefineMode::Adaptive, kind, 1);
        let last = records.last().unwrap();
        assert!(
            last.rmse <= 0.026,
            "criterion 6: {kind:?} RMSE {} above 0.026 at {} nodes",
            last.rmse,
            nodes
        );
        assert!(nodes <= 7_500, "criterion 6: {kind:?} used {} nodes", nodes);
        assert!(
            (nodes as f64) <= 0.451 * uniform_nodes,
            "criterion 6: {kind:?} node fraction {}",
            nodes as f64 / uniform_nodes
        );
        details.push(format!("{:?} {} nodes RMSE {:.4}", kind, nodes, last.rmse));
    }
    pass(6, &details.join("; "));
}

#[test]
fn criterion_07_regression_indicator_pathology() {
    // same seeded noisy benchmark, regression vs recovery steering
    let (reg_nodes, reg_records) = peaks_run(RefineMode::Adaptive, IndicatorKind::Regression, 3);
    let (rec_nodes, rec_records) = peaks_run(RefineMode::Adaptive, IndicatorKind::Recovery, 3);
    let reg_rmse = reg_records.last().unwrap().rmse;
    let rec_rmse = rec_records.last().unwrap().rmse;
    assert!(
        reg_rmse > rec_rmse,
        "criterion 7: regression RMSE {reg_rmse} should exceed recovery RMSE {rec_rmse}"
    );
    // and its marked set is less stable under noise
    let fix = overlap_fixture();
    assert!(
        fix.regression < fix.recovery,
        "criterion 7: regression overlap {} not below recovery overlap {}",
        fix.regression,
        fix.recovery
    );
    pass(
        7,
        &format!(
            "RMSE {:.4} ({} nodes) vs {:.4} ({} nodes); top-decile overlap {:.2} vs {:.2}",
            reg_rmse, reg_nodes, rec_rmse, rec_nodes, fix.regression, fix.recovery
        ),
    );
}

#[test]
fn criterion_08_recovery_noise_robustness() {
    let fix = overlap_fixture();
    assert!(
        fix.recovery >= 0.60,
        "criterion 8: recovery top-decile overlap {} below 0.60",
        fix.recovery
    );
    pass(
        8,
        &format!("noiseless vs noisy top-decile overlap {:.2}", fix.recovery),
    );
}

#[test]
fn criterion_09_mesh_invariants_randomized() {
    let mut rng = ChaCha8Rng::seed_from_u64(1009);
    let mut max_depth = 0usize;
    for case in 0..1000 {
        let (domain, n) = if case % 2 == 0 {
            (DomainSpec::unit_square(), 3 + case % 3)
        } else {
            (DomainSpec::unit_lshape(), 3 + 2 * (case % 2))
        };
        let mut mesh = TriMesh::build_initial_grid(domain, n, BoundaryKind::Dirichlet).unwrap();
        let angle_bound = {
            let mut r = TriMesh::build_initial_grid(domain, n, BoundaryKind::Dirichlet).unwrap();
            r.uniform_refine();
            r.uniform_refine();
            r.min_angle()
        };
        let steps = rng.random_range(5..20);
        for _ in 0..steps {
            let refinable: Vec<EdgeId> = mesh.refinable_edges().collect();
            let e = refinable[rng.random_range(0..refinable.len())];
            let tri_count = mesh.alive_tri_count();
            let delta = mesh.bisect_edge(e).unwrap();
            assert!(
                delta.max_recursion_depth <= tri_count,
                "criterion 9: recursion depth {} beyond triangle count {}",
                delta.max_recursion_depth,
                tri_count
            );
            max_depth = max_depth.max(delta.max_recursion_depth);
        }
        mesh.check_conforming()
            .unwrap_or_else(|e| panic!("criterion 9: case {case}: {e}"));
        for t in mesh.alive_tris() {
            assert!(mesh.tri_area(t) > 0.0);
        }
        assert!(
            mesh.min_angle() >= angle_bound - 1e-12,
            "criterion 9: angle degraded below the two-sweep bound"
        );
    }
    pass(
        9,
        &format!("1000 random sequences conforming; max recursion depth seen {max_depth}"),
    );
}

#[test]
fn criterion_10_alpha_machinery() {
    // bracket containment of the initial parameter across data sets
    for seed in [2u64, 12, 22] {
        let mesh =
            TriMesh::build_initial_grid(DomainSpec::unit_square(), 5, BoundaryKind::Dirichlet)
                .unwrap();
        let data = gen_surface(
            500,
            Rect::new(0.05, 0.95, 0.05, 0.95),
            &NoiseSpec { sigma: 0.03, seed },
            |x, y| (5.0 * x * y).sin(),
        );
        let buckets = locate(&mesh, &data);
        let mut sys = TpsfemSystem::assemble(&mesh, &data, &buckets).unwrap();
        sys.apply_dirichlet_constants(&mesh, 0.0, 0.0, 0.0);
        let cfg = GcvConfig {
            seed,
            ..Default::default()
        };
        let ctx = GcvContext::new(&sys, &mesh, &data, &buckets, &cfg);
        let (alpha0, trace) = alpha_initial(&ctx, &cfg).unwrap();
        assert!(
            (1e-10..=1e-4).contains(&alpha0),
            "criterion 10: initial alpha {alpha0} outside the bracket"
        );
        assert!(trace.len() <= cfg.max_evals);
    }

    // the update never increases the parameter along a real run
    let (_, records) = uniform_benchmark();
    for pair in records.windows(2) {
        assert!(
            pair[1].alpha <= pair[0].alpha * (1.0 + 1e-12),
            "criterion 10: alpha rose from {} to {}",
            pair[0].alpha,
            pair[1].alpha
        );
    }

    // stochastic trace estimate against a dense oracle
    let n = 20;
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let mut m = nalgebra::DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = rng.random_range(-1.0..1.0);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    let exact: f64 = (0..n).map(|i| m[(i, i)]).sum();
    let probes = rademacher_probes(n, 10_000, 777);
    let samples: Vec<f64> = probes
        .iter()
        .map(|z| {
            let zv = nalgebra::DVector::from_column_slice(z);
            (zv.transpose() * &m * &zv)[(0, 0)]
        })
        .collect();
    let mean: f64 = samples.iter().sum::<f64>() / samples.len() as f64;
    let var: f64 =
        samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (samples.len() - 1) as f64;
    let se = (var / samples.len() as f64).sqrt();
    assert!(
        (mean - exact).abs() <= 3.0 * se,
        "criterion 10: trace estimate {mean} vs {exact} (se {se})"
    );
    pass(
        10,
        &format!(
            "alpha in bracket, non-increasing; trace estimate within {:.2} se",
            (mean - exact).abs() / se
        ),
    );
}

#[test]
fn criterion_11_rbf_baselines() {
    use tpsfem::rbf::*;
    // kernel unit values
    let b = Kernel::compact(KernelKind::Buhmann, 1.0);
    assert!(b.eval(1.0).abs() < 1e-15, "criterion 11: Buhmann(1) != 0");
    assert!((b.eval(1e-12) - 1.0 / 3.0).abs() < 1e-9);
    let w0 = Kernel::compact(KernelKind::WendlandC0, 1.0);
    let w2 = Kernel::compact(KernelKind::WendlandC2, 1.0);
    assert_eq!((w0.eval(0.0), w0.eval(1.0)), (1.0, 0.0));
    assert_eq!((w2.eval(0.0), w2.eval(1.0)), (1.0, 0.0));
    assert_eq!(Kernel::tps().eval(1.0), 0.0);
    assert_eq!(Kernel::tps().eval(0.0), 0.0);

    // 50k-point synthetic cloud at the coverage-target radius policies
    let data = gen_surface(
        50_000,
        Rect::unit(),
        &NoiseSpec {
            sigma: 0.02,
            seed: 5,
        },
        |x, y| tpsfem::data::peaks(6.0 * x - 3.0, 6.0 * y - 3.0),
    );
    let cps = select_control_points(&data, Rect::unit(), 1.0 / 32.0).unwrap();
    let sample = ScatteredData {
        points: cps.points.clone(),
        responses: vec![0.0; cps.len()],
    };
    let tps = fit_rbf(&data, &cps, Kernel::tps()).unwrap();
    assert!(
        (tps.fill_ratio - 1.0).abs() < 1e-15,
        "criterion 11: dense kernel matrix must be full"
    );
    let mut details = vec![format!("n_basis {}, tps RMSE {:.4}", cps.len(), tps.rmse)];
    for target in [100usize, 200] {
        let rho = radius_for_coverage(&sample, &cps, target);
        for kind in [
            KernelKind::WendlandC0,
            KernelKind::WendlandC2,
            KernelKind::Buhmann,
        ] {
            let fit = fit_rbf(&data, &cps, Kernel::compact(kind, rho)).unwrap();
            assert!(
                fit.fill_ratio < 0.25,
                "criterion 11: {kind:?} fill ratio {} at target {target}",
                fit.fill_ratio
            );
            assert!(
                fit.rmse <= 1.25 * tps.rmse,
                "criterion 11: {kind:?} RMSE {} not within 25% of dense-kernel RMSE {}",
                fit.rmse,
                tps.rmse
            );
        }
        let probe = fit_rbf(&data, &cps, Kernel::compact(KernelKind::WendlandC0, rho)).unwrap();
        details.push(format!(
            "target {target}: rho {:.3}, ratio {:.3}, RMSE {:.4}",
            rho, probe.fill_ratio, probe.rmse
        ));
    }
    println!("acceptance criterion 11: note: public survey data not fetched; desk-scale synthetic cloud only");
    pass(11, &details.join("; "));
}

#[test]
fn criterion_12_lshape_adaptive_beats_uniform() {
    // synthetic coastal analogue: a steep shelf below the uniform grid's
    // resolution, two reefs and a mild ripple, zero-Neumann boundaries
    let seafloor = |x: f64, y: f64| {
        let shelf = -4.0 / (1.0 + (-(x - 0.42) / 0.005).exp());
        let reef1 = 1.5 * (-((x - 0.3).powi(2) + (y - 0.6).powi(2)) / 0.0004).exp();
        let reef2 = 1.0 * (-((x - 0.6).powi(2) + (y - 0.3).powi(2)) / 0.00025).exp();
        let ripple = 0.1 * (20.0 * x).sin() * (15.0 * y).cos();
        shelf + reef1 + reef2 + ripple
    };
    let raw = gen_surface(
        80_000,
        Rect::new(0.2, 0.8, 0.2, 0.8),
        &NoiseSpec {
            sigma: 0.005,
            seed: 11,
        },
        seafloor,
    );
    let mut data = ScatteredData::default();
    for (p, y) in raw.points.into_iter().zip(raw.responses) {
        if !(p.x > 0.5 && p.y > 0.5) {
            data.push(p, y);
            if data.n() == 40_000 {
                break;
            }
        }
    }
    assert_eq!(data.n(), 40_000);
    let gcv = GcvConfig {
        seed: 11,
        ..Default::default()
    };

    let mut uni_mesh =
        TriMesh::build_initial_grid(DomainSpec::unit_lshape(), 5, BoundaryKind::Neumann).unwrap();
    assert_eq!(uni_mesh.node_count(), 21);
    let mut uni_cfg = RefineConfig::default_for(RefineMode::Uniform, IndicatorKind::Recovery);
    uni_cfg.max_outer_iters = 10;
    uni_cfg.stall_count = usize::MAX;
    let uni = run(&mut uni_mesh, &data, &BoundarySpec::Neumann, &gcv, &uni_cfg).unwrap();
    let ur = uni.records.last().unwrap();
    assert_eq!(
        ur.nodes, 12_545,
        "criterion 12: full uniform ladder on the L-shape"
    );

    let mut ada_mesh =
        TriMesh::build_initial_grid(DomainSpec::unit_lshape(), 5, BoundaryKind::Neumann).unwrap();
    let ada_cfg = RefineConfig::default_for(RefineMode::Adaptive, IndicatorKind::Recovery);
    let ada = run(&mut ada_mesh, &data, &BoundarySpec::Neumann, &gcv, &ada_cfg).unwrap();
    let ar = ada.records.last().unwrap();

    let rmse_ratio = ar.rmse / ur.rmse;
    let node_ratio = ar.nodes as f64 / ur.nodes as f64;
    // targets 0.75 and 0.50 with the stated ±20% tolerance on the ratios
    assert!(
        rmse_ratio <= 0.75 * 1.2,
        "criterion 12: adaptive/uniform RMSE ratio {rmse_ratio:.3} above 0.9"
    );
    assert!(
        node_ratio <= 0.50 * 1.2,
        "criterion 12: adaptive/uniform node ratio {node_ratio:.3} above 0.6"
    );
    pass(
        12,
        &format!(
            "uniform {} nodes RMSE {:.4}; adaptive {} nodes RMSE {:.4}; ratios {:.2} (RMSE) {:.2} (nodes)",
            ur.nodes, ur.rmse, ar.nodes, ar.rmse, rmse_ratio, node_ratio
        ),
    );
}

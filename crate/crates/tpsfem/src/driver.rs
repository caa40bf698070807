//! The iterative refinement loop.
//!
//! One outer iteration: compute indicator values on the current grid, then
//! repeatedly mark the edges whose value reaches a fraction of the current
//! maximum and bisect them, without re-solving, until the node count has
//! doubled. New nodes take averaged values, and indicator values are only
//! computed for edges that do not have one yet. After the inner loop the
//! smoothing parameter is updated from its previous value, the system is
//! rebuilt and solved, and the misfit metrics decide whether to continue:
//! the run stops on the error tolerance, on the iteration cap, or when the
//! error improves by less than the stall threshold twice in a row (the
//! misfit need not converge to zero on noisy data).
//!
//! Uniform mode replaces the inner loop with one full sweep of bisections.

use std::collections::BTreeSet;
use std::time::Instant;

use thiserror::Error;

use crate::assembly::{AssemblyError, TpsfemSystem};
use crate::data::{locate, DataBuckets, ScatteredData};
use crate::gcv::{alpha_initial, alpha_update, GcvConfig, GcvContext, GcvError};
use crate::geometry::Point;
use crate::indicators::{
    compute_field, IndicatorConfig, IndicatorField, IndicatorInputs, IndicatorKind,
};
use crate::mesh::{EdgeId, EdgeKind, MeshError, TriMesh};
use crate::solver::{factorize, max_err, rmse, rmspe, Smoother, SolveError};

#[derive(Debug, Error)]
pub enum DriverError {
    #[error("no data points inside the domain")]
    NoData,
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error("solver failed at iteration {iter}: {source}")]
    Solve {
        iter: usize,
        #[source]
        source: SolveError,
    },
    #[error("smoothing-parameter selection failed at iteration {iter}: {source}")]
    Gcv {
        iter: usize,
        #[source]
        source: GcvError,
    },
    #[error("indicator computation failed at iteration {iter}: {source}")]
    Indicator {
        iter: usize,
        #[source]
        source: crate::indicators::IndicatorError,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RefineMode {
    Uniform,
    Adaptive,
}

impl std::str::FromStr for RefineMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "adaptive" => Ok(Self::Adaptive),
            other => Err(format!("unknown refinement mode {other:?}")),
        }
    }
}

/// Boundary condition for a run. Dirichlet carries value functions for the
/// surface and its two gradient components.
pub enum BoundarySpec {
    Neumann,
    Dirichlet {
        s: Box<dyn Fn(Point) -> f64>,
        u1: Box<dyn Fn(Point) -> f64>,
        u2: Box<dyn Fn(Point) -> f64>,
    },
}

impl BoundarySpec {
    pub fn dirichlet_const(s: f64, u1: f64, u2: f64) -> Self {
        BoundarySpec::Dirichlet {
            s: Box::new(move |_| s),
            u1: Box::new(move |_| u1),
            u2: Box::new(move |_| u2),
        }
    }

    fn apply(&self, sys: &mut TpsfemSystem, mesh: &TriMesh) {
        if let BoundarySpec::Dirichlet { s, u1, u2 } = self {
            sys.apply_dirichlet(mesh, s, u1, u2);
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct RefineConfig {
    pub mode: RefineMode,
    pub indicator: IndicatorKind,
    pub rmse_tol: f64,
    pub max_outer_iters: usize,
    /// node-count growth target of the inner loop
    pub doubling_factor: f64,
    /// marking threshold as a fraction of the current maximum
    pub gamma: f64,
    /// relative improvement below which an iteration counts as stalled
    pub stall_threshold: f64,
    /// consecutive stalled iterations that stop the run
    pub stall_count: usize,
    pub indicator_config: IndicatorConfig,
}

impl RefineConfig {
    pub fn default_for(mode: RefineMode, indicator: IndicatorKind) -> Self {
        RefineConfig {
            mode,
            indicator,
            rmse_tol: 0.0,
            max_outer_iters: match mode {
                RefineMode::Uniform => 10,
                RefineMode::Adaptive => 8,
            },
            doubling_factor: 2.0,
            gamma: 0.5,
            stall_threshold: 0.10,
            stall_count: 2,
            indicator_config: IndicatorConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub nodes: usize,
    pub alpha: f64,
    pub rmse: f64,
    pub rmspe: f64,
    pub max: f64,
    pub solve_s: f64,
    pub build_s: f64,
    pub indicator_s: f64,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Tolerance,
    Stalled,
    MaxIterations,
}

pub struct RunResult {
    pub smoother: Smoother,
    pub records: Vec<IterationRecord>,
    pub stop: StopReason,
    pub buckets: DataBuckets,
    /// `(iter, alpha, score)` for every score evaluation
    pub alpha_trace: Vec<(usize, f64, f64)>,
    /// edges skipped because their indicator failed
    pub skipped_edges: usize,
}

/// Marking rule: eligible edges whose value reaches `gamma` times the
/// current eligible maximum. Nonempty whenever `eligible` is.
pub fn mark(field: &IndicatorField, gamma: f64, eligible: &BTreeSet<EdgeId>) -> Vec<EdgeId> {
    let max = eligible
        .iter()
        .filter_map(|&e| field.get(e))
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Vec::new();
    }
    eligible
        .iter()
        .copied()
        .filter(|&e| field.get(e).is_some_and(|eta| eta >= gamma * max))
        .collect()
}

/// Run the refinement loop on `mesh` for the given data and configuration.
pub fn run(
    mesh: &mut TriMesh,
    data: &ScatteredData,
    boundary: &BoundarySpec,
    gcv_cfg: &GcvConfig,
    cfg: &RefineConfig,
) -> Result<RunResult, DriverError> {
    debug_assert!(0.0 < cfg.gamma && cfg.gamma <= 1.0);
    debug_assert!(cfg.rmse_tol >= 0.0);
    let mut buckets = locate(mesh, data);
    if buckets.located() == 0 {
        return Err(DriverError::NoData);
    }
    let mut records = Vec::new();
    let mut alpha_trace = Vec::new();
    let mut skipped_edges = 0usize;

    // initial system, parameter and solve
    let build_t = Instant::now();
    let mut sys = TpsfemSystem::assemble(mesh, data, &buckets)?;
    boundary.apply(&mut sys, mesh);
    let build_s = build_t.elapsed().as_secs_f64();

    let ctx = GcvContext::new(&sys, mesh, data, &buckets, gcv_cfg);
    let (mut alpha, trace) =
        alpha_initial(&ctx, gcv_cfg).map_err(|source| DriverError::Gcv { iter: 0, source })?;
    alpha_trace.extend(trace.into_iter().map(|(a, v)| (0usize, a, v)));

    let solve_t = Instant::now();
    let f = factorize(&sys, alpha).map_err(|source| DriverError::Solve { iter: 0, source })?;
    let mut smoother = f.solve();
    drop(f);
    let solve_s = solve_t.elapsed().as_secs_f64();

    let mut current_rmse = rmse(mesh, &smoother, data, &buckets);
    records.push(IterationRecord {
        iter: 0,
        nodes: mesh.node_count(),
        alpha,
        rmse: current_rmse,
        rmspe: rmspe(mesh, &smoother, data, &buckets).unwrap_or(f64::NAN),
        max: max_err(mesh, &smoother, data, &buckets),
        solve_s,
        build_s,
        indicator_s: 0.0,
    });

    let mut stalled = 0usize;
    let mut stop = StopReason::MaxIterations;
    for iter in 1..=cfg.max_outer_iters {
        if current_rmse <= cfg.rmse_tol {
            stop = StopReason::Tolerance;
            break;
        }

        // refine: one sweep (uniform) or the doubling inner loop (adaptive)
        let indicator_t = Instant::now();
        let mut indicator_s = 0.0;
        match cfg.mode {
            RefineMode::Uniform => {
                let delta = mesh.uniform_refine();
                smoother.extend_by_averaging(&delta);
                buckets.rebucket(mesh, data, &delta);
            }
            RefineMode::Adaptive => {
                let edges: Vec<EdgeId> = mesh.refinable_edges().collect();
                let inputs = IndicatorInputs {
                    mesh,
                    smoother: &smoother,
                    data,
                    buckets: &buckets,
                    config: cfg.indicator_config,
                };
                let (mut field, failures) = compute_field(cfg.indicator, &inputs, &edges)
                    .map_err(|source| DriverError::Indicator { iter, source })?;
                skipped_edges += failures.len();

                let target = (cfg.doubling_factor * mesh.node_count() as f64).ceil() as usize;
                while mesh.node_count() < target {
                    let eligible: BTreeSet<EdgeId> = field
                        .iter()
                        .map(|(e, _)| e)
                        .filter(|&e| mesh.edge_alive(e) && mesh.edge_kind(e) != EdgeKind::Plain)
                        .collect();
                    let marked = mark(&field, cfg.gamma, &eligible);
                    if marked.is_empty() {
                        break;
                    }
                    // refine the marked subset, stopping as soon as the
                    // doubling target is met
                    let mut progressed = false;
                    let mut pass_delta = crate::mesh::RefinementDelta::default();
                    for e in marked {
                        if mesh.node_count() >= target {
                            break;
                        }
                        if !mesh.edge_alive(e) || mesh.edge_kind(e) == EdgeKind::Plain {
                            continue;
                        }
                        let delta = mesh.bisect_edge(e)?;
                        smoother.extend_by_averaging(&delta);
                        buckets.rebucket(mesh, data, &delta);
                        pass_delta.merge(delta);
                        progressed = true;
                    }
                    if !progressed {
                        break;
                    }
                    for &e in &pass_delta.split_edges {
                        field.remove(e);
                    }
                    // value every refinable edge that lacks one, using the
                    // averaged working smoother
                    let fresh: Vec<EdgeId> = mesh
                        .refinable_edges()
                        .filter(|&e| !field.contains(e))
                        .collect();
                    let inputs = IndicatorInputs {
                        mesh,
                        smoother: &smoother,
                        data,
                        buckets: &buckets,
                        config: cfg.indicator_config,
                    };
                    let (fresh_field, failures) = compute_field(cfg.indicator, &inputs, &fresh)
                        .map_err(|source| DriverError::Indicator { iter, source })?;
                    skipped_edges += failures.len();
                    for (e, eta) in fresh_field.iter() {
                        field.insert(e, eta);
                    }
                }
                indicator_s = indicator_t.elapsed().as_secs_f64();
            }
        }

        // rebuild, update the parameter from its previous value, solve
        let build_t = Instant::now();
        sys = TpsfemSystem::assemble(mesh, data, &buckets)?;
        boundary.apply(&mut sys, mesh);
        let build_s = build_t.elapsed().as_secs_f64();

        let ctx = GcvContext::new(&sys, mesh, data, &buckets, gcv_cfg);
        let (next_alpha, trace) = alpha_update(alpha, &ctx, gcv_cfg)
            .map_err(|source| DriverError::Gcv { iter, source })?;
        alpha = next_alpha;
        alpha_trace.extend(trace.into_iter().map(|(a, v)| (iter, a, v)));

        let solve_t = Instant::now();
        let f = factorize(&sys, alpha).map_err(|source| DriverError::Solve { iter, source })?;
        smoother = f.solve();
        drop(f);
        let solve_s = solve_t.elapsed().as_secs_f64();

        let new_rmse = rmse(mesh, &smoother, data, &buckets);
        records.push(IterationRecord {
            iter,
            nodes: mesh.node_count(),
            alpha,
            rmse: new_rmse,
            rmspe: rmspe(mesh, &smoother, data, &buckets).unwrap_or(f64::NAN),
            max: max_err(mesh, &smoother, data, &buckets),
            solve_s,
            build_s,
            indicator_s,
        });

        // stall rule: two consecutive improvements under the threshold
        let improvement = (current_rmse - new_rmse) / current_rmse.max(1e-300);
        if improvement < cfg.stall_threshold {
            stalled += 1;
        } else {
            stalled = 0;
        }
        current_rmse = new_rmse;
        if current_rmse <= cfg.rmse_tol {
            stop = StopReason::Tolerance;
            break;
        }
        if stalled >= cfg.stall_count {
            stop = StopReason::Stalled;
            break;
        }
    }
    if current_rmse <= cfg.rmse_tol && stop == StopReason::MaxIterations {
        stop = StopReason::Tolerance;
    }

    Ok(RunResult {
        smoother,
        records,
        stop,
        buckets,
        alpha_trace,
        skipped_edges,
    })
}

/// Metrics CSV, one row per outer iteration.
pub fn metrics_csv(records: &[IterationRecord]) -> String {
    let mut out = String::from("iter,nodes,alpha,rmse,rmspe,max,solve_s,build_s,indicator_s\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{:.3},{:.3},{:.3}\n",
            r.iter, r.nodes, r.alpha, r.rmse, r.rmspe, r.max, r.solve_s, r.build_s, r.indicator_s
        ));
    }
    out
}

/// Score-evaluation trace CSV: `iter,alpha,v`.
pub fn alpha_trace_csv(trace: &[(usize, f64, f64)]) -> String {
    let mut out = String::from("iter,alpha,v\n");
    for &(iter, alpha, v) in trace {
        out.push_str(&format!("{},{},{}\n", iter, alpha, v));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_surface, NoiseSpec};
    use crate::geometry::Rect;
    use crate::mesh::{BoundaryKind, DomainSpec};

    fn bump(x: f64, y: f64) -> f64 {
        (-50.0 * (x - 0.5) * (x - 0.5)).exp() * (-50.0 * (y - 0.5) * (y - 0.5)).exp()
    }

    fn bump_data(n: usize, sigma: f64, seed: u64) -> ScatteredData {
        gen_surface(
            n,
            Rect::new(0.02, 0.98, 0.02, 0.98),
            &NoiseSpec { sigma, seed },
            bump,
        )
    }

    #[test]
    fn mark_rules() {
        let mut field = IndicatorField::new(IndicatorKind::Regression);
        field.insert(EdgeId(0), 1.0);
        field.insert(EdgeId(1), 2.0);
        field.insert(EdgeId(2), 10.0);
        let eligible: BTreeSet<EdgeId> = [EdgeId(0), EdgeId(1), EdgeId(2)].into();
        assert_eq!(mark(&field, 0.75, &eligible), vec![EdgeId(2)]);
        assert_eq!(mark(&field, 1.0, &eligible), vec![EdgeId(2)]);
        // all equal: everything is marked
        let mut flat = IndicatorField::new(IndicatorKind::Regression);
        for e in 0..3 {
            flat.insert(EdgeId(e), 4.0);
        }
        assert_eq!(mark(&flat, 0.75, &eligible).len(), 3);
        // ineligible edges are ignored
        let partial: BTreeSet<EdgeId> = [EdgeId(0), EdgeId(1)].into();
        assert_eq!(mark(&field, 0.75, &partial), vec![EdgeId(1)]);
        assert!(mark(&field, 0.75, &BTreeSet::new()).is_empty());
    }

    #[test]
    fn infinite_tolerance_returns_after_initial_solve() {
        let mut mesh =
            TriMesh::build_initial_grid(DomainSpec::unit_square(), 5, BoundaryKind::Dirichlet)
                .unwrap();
        let data = bump_data(400, 0.0, 3);
        let mut cfg = RefineConfig::default_for(RefineMode::Adaptive, IndicatorKind::Recovery);
        cfg.rmse_tol = f64::INFINITY;
        let out = run(
            &mut mesh,
            &data,
            &BoundarySpec::dirichlet_const(0.0, 0.0, 0.0),
            &GcvConfig::default(),
            &cfg,
        )
        .unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.stop, StopReason::Tolerance);
    }

    #[test]
    fn uniform_mode_doubles_triangles_each_iteration() {
        let mut mesh =
            TriMesh::build_initial_grid(DomainSpec::unit_square(), 5, BoundaryKind::Dirichlet)
                .unwrap();
        let data = bump_data(500, 0.0, 5);
        let mut cfg = RefineConfig::default_for(RefineMode::Uniform, IndicatorKind::Recovery);
        cfg.max_outer_iters = 4;
        cfg.stall_count = usize::MAX;
        let out = run(
            &mut mesh,
            &data,
            &BoundarySpec::dirichlet_const(0.0, 0.0, 0.0),
            &GcvConfig::default(),
            &cfg,
        )
        .unwrap();
        assert_eq!(out.records.len(), 5);
        let nodes: Vec<usize> = out.records.iter().map(|r| r.nodes).collect();
        assert_eq!(nodes, vec![25, 41, 81, 145, 289]);
        assert_eq!(mesh.alive_tri_count(), 32 * 16);
    }

    #[test]
    fn adaptive_doubles_nodes_and_improves() {
        let mut mesh =
            TriMesh::build_initial_grid(DomainSpec::unit_square(), 5, BoundaryKind::Dirichlet)
                .unwrap();
        let data = bump_data(2000, 0.0, 11);
        let mut cfg = RefineConfig::default_for(RefineMode::Adaptive, IndicatorKind::Recovery);
        cfg.max_outer_iters = 4;
        cfg.stall_count = usize::MAX;
        let out = run(
            &mut mesh,
            &data,
            &BoundarySpec::dirichlet_const(0.0, 0.0, 0.0),
            &GcvConfig::default(),
            &cfg,
        )
        .unwrap();
        assert_eq!(out.records.len(), 5);
        for pair in out.records.windows(2) {
            assert!(
                pair[1].nodes >= 2 * pair[0].nodes,
                "inner loop must at least double the node count: {} -> {}",
                pair[0].nodes,
                pair[1].nodes
            );
            // the last bisection's conformity closure is the only overshoot
            assert!(pair[1].nodes <= 2 * pair[0].nodes + 16);
        }
        assert!(out.records.last().unwrap().rmse < out.records[0].rmse);
        mesh.check_conforming().unwrap();
        // alpha never increases across iterations
        let alphas: Vec<f64> = out.records.iter().map(|r| r.alpha).collect();
        for pair in alphas.windows(2) {
            assert!(pair[1] <= pair[0] * (1.0 + 1e-12));
        }
    }

    #[test]
    fn stall_rule_stops_the_run() {
        let mut mesh =
            TriMesh::build_initial_grid(DomainSpec::unit_square(), 5, BoundaryKind::Dirichlet)
                .unwrap();
        // pure noise: refinement cannot reduce the misfit below the noise
        let data = gen_surface(
            800,
            Rect::new(0.05, 0.95, 0.05, 0.95),
            &NoiseSpec {
                sigma: 0.5,
                seed: 17,
            },
            |_, _| 0.0,
        );
        let cfg = RefineConfig::default_for(RefineMode::Adaptive, IndicatorKind::Recovery);
        let out = run(
            &mut mesh,
            &data,
            &BoundarySpec::dirichlet_const(0.0, 0.0, 0.0),
            &GcvConfig::default(),
            &cfg,
        )
        .unwrap();
        assert_eq!(out.stop, StopReason::Stalled);
        assert!(out.records.len() <= cfg.max_outer_iters);
        // the last two improvements were both below the threshold
        let k = out.records.len();
        let r = &out.records;
        for i in [k - 2, k - 1] {
            let improvement = (r[i - 1].rmse - r[i].rmse) / r[i - 1].rmse;
            assert!(improvement < cfg.stall_threshold);
        }
    }

    #[test]
    fn metrics_csv_schema() {
        let records = vec![IterationRecord {
            iter: 0,
            nodes: 25,
            alpha: 1e-7,
            rmse: 0.5,
            rmspe: 0.1,
            max: 1.0,
            solve_s: 0.0,
            build_s: 0.0,
            indicator_s: 0.0,
        }];
        let csv = metrics_csv(&records);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "iter,nodes,alpha,rmse,rmspe,max,solve_s,build_s,indicator_s"
        );
        assert!(lines
            .next()
            .unwrap()
            .starts_with("0,25,0.0000001,0.5,0.1,1,"));
    }

    #[test]
    fn neumann_run_works() {
        let mut mesh =
            TriMesh::build_initial_grid(DomainSpec::unit_square(), 5, BoundaryKind::Neumann)
                .unwrap();
        let data = gen_surface(
            600,
            Rect::new(0.25, 0.75, 0.25, 0.75),
            &NoiseSpec {
                sigma: 0.01,
                seed: 29,
            },
            bump,
        );
        let mut cfg = RefineConfig::default_for(RefineMode::Adaptive, IndicatorKind::Norm);
        cfg.max_outer_iters = 3;
        let out = run(
            &mut mesh,
            &data,
            &BoundarySpec::Neumann,
            &GcvConfig::default(),
            &cfg,
        )
        .unwrap();
        assert!(out.records.last().unwrap().rmse.is_finite());
        mesh.check_conforming().unwrap();
    }
}

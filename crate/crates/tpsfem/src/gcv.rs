//! Smoothing-parameter selection by generalised cross-validation.
//!
//! The score is the classic ratio `V(α) = n · RSS(α) / tr(I - A_α)²`, where
//! `A_α` is the influence operator mapping responses to fitted values at the
//! data points. One extra solve per probe vector realises `A_α z` through
//! the data load (the probe responses replace `y`), and the trace term is
//! the Rademacher-probe stochastic estimate of `tr(I - A_α)`. The same
//! probe vectors are reused for every `α`, so the score is smooth along the
//! bounded minimisation path.
//!
//! The initial parameter comes from a bounded derivative-free minimisation
//! over a fixed bracket (on the log axis); later grids reuse the previous
//! value through the cheap three-candidate update
//! `α_k = argmin{V(α_{k-1}), V(r1·α_{k-1}), V(r2·α_{k-1})}`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::assembly::TpsfemSystem;
use crate::data::{DataBuckets, ScatteredData};
use crate::mesh::{TriId, TriMesh};
use crate::solver::{factorize, SolveError};

#[derive(Debug, Error)]
pub enum GcvError {
    #[error("trace estimate {0:.3e} is not positive; widen the bracket or add probes")]
    DegenerateTrace(f64),
    #[error("score is not finite at alpha = {0:.3e}")]
    NonFiniteScore(f64),
    #[error(transparent)]
    Solve(#[from] SolveError),
}

#[derive(Clone, Copy, Debug)]
pub struct GcvConfig {
    /// Bracket for the initial bounded minimisation.
    pub bracket: (f64, f64),
    /// Number of Rademacher probe vectors for the trace estimate.
    pub probes: usize,
    pub seed: u64,
    /// Shrink factors tried by the per-iteration update.
    pub r1: f64,
    pub r2: f64,
    /// Evaluation budget of the bounded minimisation.
    pub max_evals: usize,
}

impl Default for GcvConfig {
    fn default() -> Self {
        GcvConfig {
            bracket: (1e-10, 1e-4),
            probes: 16,
            seed: 0,
            r1: 0.1,
            r2: 0.3,
            max_evals: 25,
        }
    }
}

/// Rademacher ±1 probe vectors, deterministic in `(seed, count, n)`.
pub fn rademacher_probes(n: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            (0..n)
                .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
                .collect()
        })
        .collect()
}

/// Everything the score needs per grid: the assembled system, the data with
/// its buckets, a per-point interpolation table and the frozen probes.
pub struct GcvContext<'a> {
    pub system: &'a TpsfemSystem,
    mesh: &'a TriMesh,
    data: &'a ScatteredData,
    /// (nodes, barycentric weights, response) per in-domain point
    table: Vec<([usize; 3], [f64; 3], f64)>,
    probes: Vec<Vec<f64>>,
}

impl<'a> GcvContext<'a> {
    pub fn new(
        system: &'a TpsfemSystem,
        mesh: &'a TriMesh,
        data: &'a ScatteredData,
        buckets: &DataBuckets,
        cfg: &GcvConfig,
    ) -> Self {
        debug_assert!(0.0 < cfg.bracket.0 && cfg.bracket.0 < cfg.bracket.1);
        debug_assert!(cfg.probes >= 1);
        debug_assert!(0.0 < cfg.r1 && cfg.r1 < 1.0 && 0.0 < cfg.r2 && cfg.r2 < 1.0);
        let mut table = Vec::with_capacity(buckets.located());
        for t in (0..mesh.tri_count()).map(TriId) {
            let idxs = buckets.points_in(t);
            if idxs.is_empty() {
                continue;
            }
            let nodes = mesh.tri_nodes(t);
            for &i in idxs {
                let lambda = mesh.tri_barycentric(t, data.points[i]);
                table.push((
                    [nodes[0].0, nodes[1].0, nodes[2].0],
                    lambda,
                    data.responses[i],
                ));
            }
        }
        let probes = rademacher_probes(table.len(), cfg.probes, cfg.seed);
        GcvContext {
            system,
            mesh,
            data,
            table,
            probes,
        }
    }

    fn n(&self) -> usize {
        self.table.len()
    }

    /// Fitted values at the data points for a coefficient vector.
    fn fitted(&self, c: &[f64]) -> Vec<f64> {
        self.table
            .iter()
            .map(|(nodes, lambda, _)| (0..3).map(|k| lambda[k] * c[nodes[k]]).sum())
            .collect()
    }

    /// Data load `(1/n) Σ b(x_i) z_i` for replacement responses `z`.
    fn data_load(&self, z: &[f64]) -> Vec<f64> {
        let mut d = vec![0.0; self.system.m];
        let inv_n = 1.0 / self.n() as f64;
        for ((nodes, lambda, _), &zi) in self.table.iter().zip(z) {
            for k in 0..3 {
                d[nodes[k]] += inv_n * lambda[k] * zi;
            }
        }
        d
    }

    /// The cross-validation score at `alpha`, with its pieces.
    pub fn score(&self, alpha: f64) -> Result<GcvScore, GcvError> {
        let n = self.n();
        let f = factorize(self.system, alpha)?;
        let fit = f.solve();
        let fitted = self.fitted(&fit.c);
        let rss: f64 = self
            .table
            .iter()
            .zip(&fitted)
            .map(|((_, _, y), s)| (s - y) * (s - y))
            .sum();
        // Hutchinson estimate of tr(I - A_α): mean of zᵀz - zᵀ(A_α z)
        let mut trace_sum = 0.0;
        for z in &self.probes {
            let dz = self.data_load(z);
            let probe_fit = f.solve_probe(&dz);
            let az = self.fitted(&probe_fit.c);
            let zaz: f64 = z.iter().zip(&az).map(|(a, b)| a * b).sum();
            trace_sum += n as f64 - zaz;
        }
        let trace = trace_sum / self.probes.len() as f64;
        if !(trace > 0.0) {
            return Err(GcvError::DegenerateTrace(trace));
        }
        let v = n as f64 * rss / (trace * trace);
        if !v.is_finite() {
            return Err(GcvError::NonFiniteScore(alpha));
        }
        Ok(GcvScore {
            alpha,
            v,
            rss,
            trace,
        })
    }

    pub fn mesh(&self) -> &TriMesh {
        self.mesh
    }

    pub fn data(&self) -> &ScatteredData {
        self.data
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GcvScore {
    pub alpha: f64,
    pub v: f64,
    pub rss: f64,
    pub trace: f64,
}

/// Bounded scalar minimisation in the Brent style: golden-section steps
/// with parabolic acceleration, capped at `max_evals` objective calls.
/// Returns the best abscissa and the full evaluation trace.
pub fn minimize_bounded<E>(
    mut f: impl FnMut(f64) -> Result<f64, E>,
    lo: f64,
    hi: f64,
    max_evals: usize,
) -> Result<(f64, Vec<(f64, f64)>), E> {
    const GOLDEN: f64 = 0.381_966_011_250_105; // (3 - sqrt(5)) / 2
    let mut trace = Vec::new();
    let mut evals = 0usize;
    let tol = 1e-4 * (hi - lo).abs();

    let (mut a, mut b) = (lo, hi);
    let mut x = a + GOLDEN * (b - a);
    let mut fx = f(x)?;
    evals += 1;
    trace.push((x, fx));
    let (mut w, mut v) = (x, x);
    let (mut fw, mut fv) = (fx, fx);
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;

    while evals < max_evals {
        let mid = 0.5 * (a + b);
        let tol1 = tol * x.abs().max(1.0) + 1e-12;
        if (x - mid).abs() <= 2.0 * tol1 - 0.5 * (b - a) {
            break;
        }
        let mut use_golden = true;
        if e.abs() > tol1 {
            // parabola through (v, fv), (w, fw), (x, fx)
            let r = (x - w) * (fx - fv);
            let q0 = (x - v) * (fx - fw);
            let p0 = (x - v) * q0 - (x - w) * r;
            let mut q = 2.0 * (q0 - r);
            let p = if q > 0.0 { -p0 } else { p0 };
            q = q.abs();
            let e_old = e;
            e = d;
            if p.abs() < (0.5 * q * e_old).abs() && p > q * (a - x) && p < q * (b - x) {
                d = p / q;
                let u = x + d;
                if (u - a) < 2.0 * tol1 || (b - u) < 2.0 * tol1 {
                    d = if mid > x { tol1 } else { -tol1 };
                }
                use_golden = false;
            }
        }
        if use_golden {
            e = if x < mid { b - x } else { a - x };
            d = GOLDEN * e;
        }
        let u = if d.abs() >= tol1 {
            x + d
        } else {
            x + if d > 0.0 { tol1 } else { -tol1 }
        };
        let fu = f(u)?;
        evals += 1;
        trace.push((u, fu));
        if fu <= fx {
            if u < x {
                b = x;
            } else {
                a = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    Ok((x, trace))
}

/// Initial smoothing parameter: bounded minimisation of the score over the
/// configured bracket, on the log axis. Returns the minimiser and the
/// `(alpha, V)` evaluation trace.
pub fn alpha_initial(
    ctx: &GcvContext,
    cfg: &GcvConfig,
) -> Result<(f64, Vec<(f64, f64)>), GcvError> {
    let (lo, hi) = (cfg.bracket.0.log10(), cfg.bracket.1.log10());
    let (t, trace) = minimize_bounded(
        |t: f64| ctx.score(10f64.powf(t)).map(|s| s.v),
        lo,
        hi,
        cfg.max_evals,
    )?;
    let alpha = 10f64.powf(t).clamp(cfg.bracket.0, cfg.bracket.1);
    let trace = trace.into_iter().map(|(t, v)| (10f64.powf(t), v)).collect();
    Ok((alpha, trace))
}

/// Per-iteration update: keep the previous value or shrink it by `r1` or
/// `r2`, whichever scores best; ties go to the largest candidate.
pub fn alpha_update(
    alpha_prev: f64,
    ctx: &GcvContext,
    cfg: &GcvConfig,
) -> Result<(f64, Vec<(f64, f64)>), GcvError> {
    let mut candidates = [alpha_prev, cfg.r1 * alpha_prev, cfg.r2 * alpha_prev];
    candidates.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut best: Option<(f64, f64)> = None;
    let mut trace = Vec::new();
    for &alpha in &candidates {
        let s = ctx.score(alpha)?;
        trace.push((alpha, s.v));
        if best.map_or(true, |(_, bv)| s.v < bv) {
            best = Some((alpha, s.v));
        }
    }
    Ok((best.expect("three candidates evaluated").0, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_surface, locate, NoiseSpec};
    use crate::geometry::Rect;
    use crate::mesh::{BoundaryKind, DomainSpec};

    fn small_context() -> (TriMesh, ScatteredData, DataBuckets) {
        let mesh =
            TriMesh::build_initial_grid(DomainSpec::unit_square(), 5, BoundaryKind::Dirichlet)
                .unwrap();
        let data = gen_surface(
            400,
            Rect::new(0.05, 0.95, 0.05, 0.95),
            &NoiseSpec {
                sigma: 0.05,
                seed: 42,
            },
            |x, y| (3.0 * x).sin() * (2.0 * y).cos(),
        );
        let buckets = locate(&mesh, &data);
        (mesh, data, buckets)
    }

    #[test]
    fn identity_operator_trace_is_exact() {
        // zᵀIz = n for every Rademacher probe
        let n = 57;
        for z in rademacher_probes(n, 8, 3) {
            let zz: f64 = z.iter().map(|a| a * a).sum();
            assert_eq!(zz, n as f64);
        }
    }

    #[test]
    fn hutchinson_is_unbiased_on_dense_matrix() {
        use rand::Rng;
        use rand::SeedableRng;
        // dense trace oracle on a random symmetric 20x20 matrix
        let n = 20;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let mut m = nalgebra::DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = rng.random_range(-1.0..1.0);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        let exact: f64 = (0..n).map(|i| m[(i, i)]).sum();
        let probes = rademacher_probes(n, 10_000, 99);
        let mut samples = Vec::with_capacity(probes.len());
        for z in &probes {
            let zv = nalgebra::DVector::from_column_slice(z);
            samples.push((zv.transpose() * &m * &zv)[(0, 0)]);
        }
        let mean: f64 = samples.iter().sum::<f64>() / samples.len() as f64;
        let var: f64 = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>()
            / (samples.len() - 1) as f64;
        let se = (var / samples.len() as f64).sqrt();
        assert!(
            (mean - exact).abs() <= 3.0 * se,
            "mean {mean}, exact {exact}, se {se}"
        );
    }

    #[test]
    fn score_is_deterministic() {
        let (mesh, data, buckets) = small_context();
        let mut sys = TpsfemSystem::assemble(&mesh, &data, &buckets).unwrap();
        sys.apply_dirichlet_constants(&mesh, 0.0, 0.0, 0.0);
        let cfg = GcvConfig {
            seed: 5,
            ..Default::default()
        };
        let ctx1 = GcvContext::new(&sys, &mesh, &data, &buckets, &cfg);
        let ctx2 = GcvContext::new(&sys, &mesh, &data, &buckets, &cfg);
        let a = ctx1.score(1e-6).unwrap();
        let b = ctx2.score(1e-6).unwrap();
        assert_eq!(a.v, b.v);
        assert_eq!(a.trace, b.trace);
    }

    #[test]
    fn bounded_minimiser_on_stub_objectives() {
        // flat objective: any point in the bracket is acceptable
        let (x, trace) = minimize_bounded::<()>(|_| Ok(1.0), -10.0, -4.0, 25).unwrap();
        assert!((-10.0..=-4.0).contains(&x));
        assert!(trace.len() <= 25);

        // unimodal with known minimiser at -7 (alpha = 1e-7): within one
        // part in 1e3 of the log range, checked against a golden-section
        // oracle run to convergence
        let objective = |t: f64| (t + 7.0) * (t + 7.0) + 0.5;
        let (x, trace) = minimize_bounded::<()>(|t| Ok(objective(t)), -10.0, -4.0, 25).unwrap();
        assert!(trace.len() <= 25);
        let golden = {
            let (mut a, mut b) = (-10.0f64, -4.0f64);
            let phi = (5.0f64.sqrt() - 1.0) / 2.0;
            for _ in 0..80 {
                let c = b - phi * (b - a);
                let d = a + phi * (b - a);
                if objective(c) < objective(d) {
                    b = d;
                } else {
                    a = c;
                }
            }
            0.5 * (a + b)
        };
        assert!((golden + 7.0).abs() < 1e-6, "oracle sanity");
        assert!((x - golden).abs() <= 6.0 / 1000.0, "x = {x}");
    }

    #[test]
    fn alpha_initial_stays_in_bracket_and_finds_interior_minimum() {
        let (mesh, data, buckets) = small_context();
        let mut sys = TpsfemSystem::assemble(&mesh, &data, &buckets).unwrap();
        sys.apply_dirichlet_constants(&mesh, 0.0, 0.0, 0.0);
        let cfg = GcvConfig::default();
        let ctx = GcvContext::new(&sys, &mesh, &data, &buckets, &cfg);
        let (alpha, trace) = alpha_initial(&ctx, &cfg).unwrap();
        assert!((1e-10..=1e-4).contains(&alpha));
        assert!(trace.len() <= cfg.max_evals);
    }

    #[test]
    fn alpha_update_never_increases() {
        let (mesh, data, buckets) = small_context();
        let mut sys = TpsfemSystem::assemble(&mesh, &data, &buckets).unwrap();
        sys.apply_dirichlet_constants(&mesh, 0.0, 0.0, 0.0);
        let cfg = GcvConfig::default();
        let ctx = GcvContext::new(&sys, &mesh, &data, &buckets, &cfg);
        let prev = 1e-5;
        let (next, trace) = alpha_update(prev, &ctx, &cfg).unwrap();
        assert!(next <= prev);
        assert_eq!(trace.len(), 3);
        assert!([prev, 0.1 * prev, 0.3 * prev]
            .iter()
            .any(|&c| (c - next).abs() < 1e-300 + c * 1e-12));
    }

    #[test]
    fn alpha_update_tie_breaks_to_largest() {
        // a context is not needed to test the tie rule; emulate via a stub
        // by reusing the candidate ordering logic: equal scores must keep
        // the previous (largest) alpha. Exercised through a constant-V
        // system: zero responses give RSS = 0 for every alpha.
        let mesh =
            TriMesh::build_initial_grid(DomainSpec::unit_square(), 3, BoundaryKind::Dirichlet)
                .unwrap();
        let data = gen_surface(
            50,
            Rect::unit(),
            &NoiseSpec {
                sigma: 0.0,
                seed: 1,
            },
            |_, _| 0.0,
        );
        let buckets = locate(&mesh, &data);
        let mut sys = TpsfemSystem::assemble(&mesh, &data, &buckets).unwrap();
        sys.apply_dirichlet_constants(&mesh, 0.0, 0.0, 0.0);
        let cfg = GcvConfig::default();
        let ctx = GcvContext::new(&sys, &mesh, &data, &buckets, &cfg);
        let (next, _) = alpha_update(1e-5, &ctx, &cfg).unwrap();
        assert_eq!(next, 1e-5, "ties go to the largest candidate");
    }
}

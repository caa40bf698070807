//! Sparse direct solve of the block saddle-point system and evaluation of
//! the resulting smoother.
//!
//! The coefficient blocks `[c, g1, g2, w]` are coupled as
//!
//! ```text
//! | A    0    0    L   | | c  |   | d |   | h1 |
//! | 0    αL   0   -G1ᵀ | | g1 | = | 0 | - | h2 |
//! | 0    0    αL  -G2ᵀ | | g2 |   | 0 |   | h3 |
//! | L   -G1  -G2   0   | | w  |   | 0 |   | h4 |
//! ```
//!
//! with `w` the Lagrange multiplier of the weak gradient constraint.
//! Eliminated unknowns (Dirichlet values, the Neumann gradient pins) are
//! dropped from the system and their column contributions moved to the
//! right-hand side; the factorisation is reused across right-hand sides,
//! which is what makes the cross-validation probes affordable.

use serde::Serialize;
use thiserror::Error;

use faer::prelude::*;
use faer::sparse::{SparseColMat, Triplet};

use crate::assembly::TpsfemSystem;
use crate::data::{DataBuckets, ScatteredData};
use crate::geometry::Point;
use crate::mesh::{TriId, TriMesh};

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("smoothing parameter must be positive, got {0}")]
    NonPositiveAlpha(f64),
    #[error("sparse factorisation failed (alpha = {alpha:.3e}, m = {m})")]
    Factorization { alpha: f64, m: usize },
    #[error("point ({0}, {1}) is outside the domain")]
    OutsideDomain(f64, f64),
    #[error("relative error metric undefined: largest response is zero")]
    UndefinedMetric,
}

/// Solved coefficient vectors on one grid, plus the smoothing parameter
/// they were solved with. `s(x) = b(x)ᵀ c` is continuous piecewise linear
/// with a piecewise constant gradient.
#[derive(Clone, Debug, Serialize)]
pub struct Smoother {
    pub alpha: f64,
    pub c: Vec<f64>,
    pub g1: Vec<f64>,
    pub g2: Vec<f64>,
    pub w: Vec<f64>,
}

impl Smoother {
    pub fn zeros(alpha: f64, m: usize) -> Self {
        Smoother {
            alpha,
            c: vec![0.0; m],
            g1: vec![0.0; m],
            g2: vec![0.0; m],
            w: vec![0.0; m],
        }
    }

    /// Value of `s` at a point known to lie in triangle `t`.
    pub fn value_in_tri(&self, mesh: &TriMesh, t: TriId, p: Point) -> f64 {
        let nodes = mesh.tri_nodes(t);
        let lambda = mesh.tri_barycentric(t, p);
        (0..3).map(|k| lambda[k] * self.c[nodes[k].0]).sum()
    }

    /// Constant gradient of `s` on triangle `t`.
    pub fn grad_in_tri(&self, mesh: &TriMesh, t: TriId) -> [f64; 2] {
        let (grads, _) = crate::assembly::p1_gradients(mesh.tri_coords(t));
        let nodes = mesh.tri_nodes(t);
        let mut g = [0.0, 0.0];
        for k in 0..3 {
            g[0] += grads[k][0] * self.c[nodes[k].0];
            g[1] += grads[k][1] * self.c[nodes[k].0];
        }
        g
    }

    /// Grow the vectors after refinement: each new node takes the average
    /// of the values at the endpoints of its split edge.
    pub fn extend_by_averaging(&mut self, delta: &crate::mesh::RefinementDelta) {
        for &(mid, a, b) in &delta.new_nodes {
            debug_assert_eq!(mid.0, self.c.len());
            for field in [&mut self.c, &mut self.g1, &mut self.g2, &mut self.w] {
                let v = 0.5 * (field[a.0] + field[b.0]);
                field.push(v);
            }
            let _ = mid;
        }
    }

    /// JSON export: `{alpha, c, g1, g2, w}` aligned to the grid node order.
    pub fn export_json(&self) -> String {
        serde_json::to_string(self).expect("smoother export cannot fail")
    }
}

/// Index maps from `(field, node)` to the reduced unknown vector.
#[derive(Debug)]
struct ReducedLayout {
    map: [Vec<Option<usize>>; 4],
    offsets: [usize; 4],
    size: usize,
}

impl ReducedLayout {
    fn build(mask: &[Vec<bool>; 4]) -> Self {
        let m = mask[0].len();
        let mut map: [Vec<Option<usize>>; 4] =
            [vec![None; m], vec![None; m], vec![None; m], vec![None; m]];
        let mut offsets = [0usize; 4];
        let mut total = 0usize;
        for f in 0..4 {
            offsets[f] = total;
            let mut k = 0usize;
            for v in 0..m {
                if !mask[f][v] {
                    map[f][v] = Some(k);
                    k += 1;
                }
            }
            total += k;
        }
        ReducedLayout {
            map,
            offsets,
            size: total,
        }
    }

    fn index(&self, field: usize, node: usize) -> Option<usize> {
        self.map[field][node].map(|k| self.offsets[field] + k)
    }
}

/// A factorised system for one value of the smoothing parameter.
pub struct FactorizedSystem<'a> {
    system: &'a TpsfemSystem,
    pub alpha: f64,
    layout: ReducedLayout,
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
    /// prescribed `[s, u1, u2, w]` per node
    values: Vec<[f64; 4]>,
    h: [Vec<f64>; 4],
}

/// Factorise the reduced saddle-point matrix at `alpha`.
pub fn factorize(system: &TpsfemSystem, alpha: f64) -> Result<FactorizedSystem<'_>, SolveError> {
    if !(alpha > 0.0) {
        return Err(SolveError::NonPositiveAlpha(alpha));
    }
    let (values, mask) = system.elimination();
    let layout = ReducedLayout::build(&mask);
    let mut triplets: Vec<Triplet<usize, usize, f64>> = Vec::new();
    let blocks: [(&crate::SparseMatrix, f64, usize, usize, bool); 9] = [
        (&system.a, 1.0, 0, 0, false),
        (&system.l, 1.0, 0, 3, false),
        (&system.l, alpha, 1, 1, false),
        (&system.g1, -1.0, 1, 3, true),
        (&system.l, alpha, 2, 2, false),
        (&system.g2, -1.0, 2, 3, true),
        (&system.l, 1.0, 3, 0, false),
        (&system.g1, -1.0, 3, 1, false),
        (&system.g2, -1.0, 3, 2, false),
    ];
    for (block, factor, rf, cf, transpose) in blocks {
        for (i, j, v) in block.iter() {
            let (r, c) = if transpose { (j, i) } else { (i, j) };
            if let (Some(ri), Some(ci)) = (layout.index(rf, r), layout.index(cf, c)) {
                triplets.push(Triplet::new(ri, ci, factor * v));
            }
        }
    }
    let mat = SparseColMat::try_new_from_triplets(layout.size, layout.size, &triplets)
        .map_err(|_| SolveError::Factorization { alpha, m: system.m })?;
    let lu = mat
        .sp_lu()
        .map_err(|_| SolveError::Factorization { alpha, m: system.m })?;
    let h = system.h_vectors(alpha);
    Ok(FactorizedSystem {
        system,
        alpha,
        layout,
        lu,
        values,
        h,
    })
}

/// Factorise and solve in one step.
pub fn solve(system: &TpsfemSystem, alpha: f64) -> Result<Smoother, SolveError> {
    Ok(factorize(system, alpha)?.solve())
}

/// Size and nonzero count of the reduced saddle-point matrix, without
/// factorising it; used by the cost-comparison report.
pub fn reduced_matrix_stats(
    system: &TpsfemSystem,
    alpha: f64,
) -> Result<(usize, usize), SolveError> {
    if !(alpha > 0.0) {
        return Err(SolveError::NonPositiveAlpha(alpha));
    }
    let (_, mask) = system.elimination();
    let layout = ReducedLayout::build(&mask);
    let mut triplets: Vec<Triplet<usize, usize, f64>> = Vec::new();
    let blocks: [(&crate::SparseMatrix, f64, usize, usize, bool); 9] = [
        (&system.a, 1.0, 0, 0, false),
        (&system.l, 1.0, 0, 3, false),
        (&system.l, alpha, 1, 1, false),
        (&system.g1, -1.0, 1, 3, true),
        (&system.l, alpha, 2, 2, false),
        (&system.g2, -1.0, 2, 3, true),
        (&system.l, 1.0, 3, 0, false),
        (&system.g1, -1.0, 3, 1, false),
        (&system.g2, -1.0, 3, 2, false),
    ];
    for (block, factor, rf, cf, transpose) in blocks {
        for (i, j, v) in block.iter() {
            let (r, c) = if transpose { (j, i) } else { (i, j) };
            if let (Some(ri), Some(ci)) = (layout.index(rf, r), layout.index(cf, c)) {
                triplets.push(Triplet::new(ri, ci, factor * v));
            }
        }
    }
    let mat = SparseColMat::try_new_from_triplets(layout.size, layout.size, &triplets)
        .map_err(|_| SolveError::Factorization { alpha, m: system.m })?;
    Ok((layout.size, mat.compute_nnz()))
}

impl FactorizedSystem<'_> {
    fn solve_reduced(&self, rhs: &mut [f64]) {
        let mut col = Mat::from_fn(rhs.len(), 1, |i, _| rhs[i]);
        self.lu.solve_in_place(col.as_mut());
        for (i, r) in rhs.iter_mut().enumerate() {
            *r = col[(i, 0)];
        }
    }

    fn expand(&self, reduced: &[f64], with_boundary_values: bool) -> Smoother {
        let m = self.system.m;
        let mut sm = Smoother::zeros(self.alpha, m);
        for (f, field) in [&mut sm.c, &mut sm.g1, &mut sm.g2, &mut sm.w]
            .into_iter()
            .enumerate()
        {
            for v in 0..m {
                field[v] = match self.layout.index(f, v) {
                    Some(k) => reduced[k],
                    None => {
                        if with_boundary_values {
                            self.values[v][f]
                        } else {
                            0.0
                        }
                    }
                };
            }
        }
        sm
    }

    fn reduced_rhs(&self, d: &[f64], with_boundary_values: bool) -> Vec<f64> {
        let mut rhs = vec![0.0; self.layout.size];
        for v in 0..self.system.m {
            if let Some(k) = self.layout.index(0, v) {
                rhs[k] = d[v];
            }
        }
        if with_boundary_values {
            for f in 0..4 {
                for v in 0..self.system.m {
                    if let Some(k) = self.layout.index(f, v) {
                        rhs[k] -= self.h[f][v];
                    }
                }
            }
        }
        rhs
    }

    /// Solve with the assembled data load and the configured boundary values.
    pub fn solve(&self) -> Smoother {
        let mut rhs = self.reduced_rhs(&self.system.d, true);
        self.solve_reduced(&mut rhs);
        self.expand(&rhs, true)
    }

    /// Solve with a replacement data load and homogeneous boundary data;
    /// this realises the linear part of the data-to-fit map, which is what
    /// cross-validation probes need.
    pub fn solve_probe(&self, d: &[f64]) -> Smoother {
        let mut rhs = self.reduced_rhs(d, false);
        self.solve_reduced(&mut rhs);
        self.expand(&rhs, false)
    }

    /// Euclidean norm of the enforced rows of `L c - G1 g1 - G2 g2`,
    /// alongside the norm of `L c` on the same rows for the relative test.
    pub fn constraint_residual(&self, sm: &Smoother) -> (f64, f64) {
        let lc = self.system.l.matvec(&sm.c);
        let g1g = self.system.g1.matvec(&sm.g1);
        let g2g = self.system.g2.matvec(&sm.g2);
        let mut res = 0.0;
        let mut scale = 0.0;
        for v in 0..self.system.m {
            if self.layout.index(3, v).is_some() {
                let r = lc[v] - g1g[v] - g2g[v];
                res += r * r;
                scale += lc[v] * lc[v];
            }
        }
        (res.sqrt(), scale.sqrt())
    }

    /// Relative residual of the reduced system at the returned solution.
    pub fn system_residual(&self, sm: &Smoother) -> f64 {
        let m = self.system.m;
        let ac = self.system.a.matvec(&sm.c);
        let lc = self.system.l.matvec(&sm.c);
        let lw = self.system.l.matvec(&sm.w);
        let lg1 = self.system.l.matvec(&sm.g1);
        let lg2 = self.system.l.matvec(&sm.g2);
        let g1w = self.system.g1.tr_matvec(&sm.w);
        let g2w = self.system.g2.tr_matvec(&sm.w);
        let g1g = self.system.g1.matvec(&sm.g1);
        let g2g = self.system.g2.matvec(&sm.g2);
        let mut res = 0.0;
        let mut rhs_norm = 0.0;
        for v in 0..m {
            if self.layout.index(0, v).is_some() {
                let r = ac[v] + lw[v] - self.system.d[v];
                res += r * r;
                rhs_norm += (self.system.d[v] - self.h[0][v]).powi(2);
            }
            if self.layout.index(1, v).is_some() {
                let r = self.alpha * lg1[v] - g1w[v];
                res += r * r;
                rhs_norm += self.h[1][v] * self.h[1][v];
            }
            if self.layout.index(2, v).is_some() {
                let r = self.alpha * lg2[v] - g2w[v];
                res += r * r;
                rhs_norm += self.h[2][v] * self.h[2][v];
            }
            if self.layout.index(3, v).is_some() {
                let r = lc[v] - g1g[v] - g2g[v];
                res += r * r;
                rhs_norm += self.h[3][v] * self.h[3][v];
            }
        }
        res.sqrt() / rhs_norm.sqrt().max(1e-300)
    }
}

/// Point evaluation of a smoother anywhere in the domain, with a cached
/// walk start so batch evaluation stays cheap.
pub struct SurfaceEvaluator<'a> {
    mesh: &'a TriMesh,
    smoother: &'a Smoother,
    last: std::cell::Cell<Option<TriId>>,
}

impl<'a> SurfaceEvaluator<'a> {
    pub fn new(mesh: &'a TriMesh, smoother: &'a Smoother) -> Self {
        SurfaceEvaluator {
            mesh,
            smoother,
            last: std::cell::Cell::new(None),
        }
    }

    fn locate(&self, p: Point) -> Result<TriId, SolveError> {
        if !self.mesh.domain().contains(p) {
            return Err(SolveError::OutsideDomain(p.x, p.y));
        }
        let t = self
            .mesh
            .find_triangle(p, self.last.get())
            .ok_or(SolveError::OutsideDomain(p.x, p.y))?;
        self.last.set(Some(t));
        Ok(t)
    }

    pub fn value(&self, p: Point) -> Result<f64, SolveError> {
        let t = self.locate(p)?;
        Ok(self.smoother.value_in_tri(self.mesh, t, p))
    }

    pub fn gradient(&self, p: Point) -> Result<[f64; 2], SolveError> {
        let t = self.locate(p)?;
        Ok(self.smoother.grad_in_tri(self.mesh, t))
    }
}

/// Root-mean-square error of the fit over the bucketed (in-domain) data.
pub fn rmse(mesh: &TriMesh, sm: &Smoother, data: &ScatteredData, buckets: &DataBuckets) -> f64 {
    let mut acc = 0.0;
    let mut n = 0usize;
    for t in mesh.alive_tris() {
        for &i in buckets.points_in(t) {
            let r = sm.value_in_tri(mesh, t, data.points[i]) - data.responses[i];
            acc += r * r;
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        (acc / n as f64).sqrt()
    }
}

/// RMSE with residuals normalised by the largest response.
pub fn rmspe(
    mesh: &TriMesh,
    sm: &Smoother,
    data: &ScatteredData,
    buckets: &DataBuckets,
) -> Result<f64, SolveError> {
    let y_max = data.y_max();
    if y_max == 0.0 || !y_max.is_finite() {
        return Err(SolveError::UndefinedMetric);
    }
    Ok(rmse(mesh, sm, data, buckets) / y_max.abs())
}

/// Largest absolute residual over the bucketed data.
pub fn max_err(mesh: &TriMesh, sm: &Smoother, data: &ScatteredData, buckets: &DataBuckets) -> f64 {
    let mut worst: f64 = 0.0;
    for t in mesh.alive_tris() {
        for &i in buckets.points_in(t) {
            worst = worst.max((sm.value_in_tri(mesh, t, data.points[i]) - data.responses[i]).abs());
        }
    }
    worst
}

/// Sample `s` on a uniform raster for contour plotting; rows outside the
/// domain are skipped. Format: `x,y,s` per line.
pub fn sample_surface_csv(mesh: &TriMesh, sm: &Smoother, steps: usize) -> String {
    let bbox = mesh.domain().bbox;
    let eval = SurfaceEvaluator::new(mesh, sm);
    let mut out = String::from("x,y,s\n");
    for j in 0..=steps {
        for i in 0..=steps {
            let p = Point::new(
                bbox.x_lo + bbox.width() * i as f64 / steps as f64,
                bbox.y_lo + bbox.height() * j as f64 / steps as f64,
            );
            if let Ok(v) = eval.value(p) {
                out.push_str(&format!("{},{},{}\n", p.x, p.y, v));
            }
        }
    }
    out
}

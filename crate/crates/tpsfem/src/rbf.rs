//! Radial basis function baselines: the classic thin plate spline kernel
//! and three compactly supported kernels, fitted by least squares over the
//! full data set on a reduced set of control points.
//!
//! Control points are data points closest to the nodes of a uniform
//! rectangular overlay grid; grid nodes whose nearest data point is farther
//! than a third of the grid spacing are dropped, which bounds both the
//! maximum and the minimum spacing of the selected set. The radius of
//! support of the compact kernels is calibrated so each kernel covers a
//! target number of data points.
//!
//! The comparison report mirrors the cost attributes of the sparse system:
//! nonzero count and fill ratio of the control-point collocation matrix,
//! solve time and misfit.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::data::{PointBins, ScatteredData};
use crate::geometry::{Point, Rect};

#[derive(Debug, Error)]
pub enum RbfError {
    #[error("no control points selected; grid spacing {0} is too small for the data density")]
    EmptySelection(f64),
    #[error("control-point count {0} is too large for a dense normal solve")]
    TooManyCenters(usize),
    #[error("normal equations are singular even after ridge regularisation")]
    SingularFit,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Tps,
    WendlandC0,
    WendlandC2,
    Buhmann,
}

impl KernelKind {
    pub fn label(&self) -> &'static str {
        match self {
            KernelKind::Tps => "tps",
            KernelKind::WendlandC0 => "wendland_c0",
            KernelKind::WendlandC2 => "wendland_c2",
            KernelKind::Buhmann => "buhmann",
        }
    }
}

/// A kernel with its radius of support; the thin plate spline kernel is
/// global and carries no radius.
#[derive(Clone, Copy, Debug)]
pub struct Kernel {
    pub kind: KernelKind,
    pub rho: Option<f64>,
}

impl Kernel {
    pub fn tps() -> Self {
        Kernel {
            kind: KernelKind::Tps,
            rho: None,
        }
    }

    pub fn compact(kind: KernelKind, rho: f64) -> Self {
        debug_assert!(kind != KernelKind::Tps && rho > 0.0);
        Kernel {
            kind,
            rho: Some(rho),
        }
    }

    /// Kernel value at distance `r` (the compact kernels evaluate the
    /// canonical profile at `r / rho`). Removable singularities of the
    /// log-bearing profiles are patched with their limits.
    pub fn eval(&self, r: f64) -> f64 {
        match self.kind {
            KernelKind::Tps => {
                if r == 0.0 {
                    0.0
                } else {
                    r * r * r.ln()
                }
            }
            KernelKind::WendlandC0 => {
                let t = r / self.rho.expect("compact kernel has a radius");
                let s = (1.0 - t).max(0.0);
                s * s
            }
            KernelKind::WendlandC2 => {
                let t = r / self.rho.expect("compact kernel has a radius");
                let s = (1.0 - t).max(0.0);
                s * s * s * s * (4.0 * t + 1.0)
            }
            KernelKind::Buhmann => {
                let t = r / self.rho.expect("compact kernel has a radius");
                if t > 1.0 {
                    0.0
                } else if t == 0.0 {
                    1.0 / 3.0
                } else {
                    1.0 / 3.0 + t * t - 4.0 * t * t * t / 3.0 + 2.0 * t * t * t.ln()
                }
            }
        }
    }

    /// Distance beyond which the kernel vanishes identically (`None` for
    /// the global thin plate spline kernel).
    pub fn support(&self) -> Option<f64> {
        self.rho
    }
}

/// Data points selected as kernel centres.
#[derive(Clone, Debug)]
pub struct ControlPointSet {
    pub points: Vec<Point>,
    /// indices into the originating data set
    pub indices: Vec<usize>,
    pub grid_spacing: f64,
}

impl ControlPointSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Overlay a uniform rectangular grid of spacing `h_bar` on `region`, pick
/// the data point nearest to each grid node, reject nodes whose nearest
/// point is farther than `h_bar / 3`, deduplicate.
pub fn select_control_points(
    data: &ScatteredData,
    region: Rect,
    h_bar: f64,
) -> Result<ControlPointSet, RbfError> {
    let bins = PointBins::build(&data.points, h_bar.max(1e-12));
    let nx = (region.width() / h_bar).round() as usize;
    let ny = (region.height() / h_bar).round() as usize;
    let mut chosen = std::collections::BTreeSet::new();
    for j in 0..=ny {
        for i in 0..=nx {
            let node = Point::new(
                region.x_lo + i as f64 * h_bar,
                region.y_lo + j as f64 * h_bar,
            );
            if let Some((idx, dist)) = bins.nearest(node) {
                if dist <= h_bar / 3.0 {
                    chosen.insert(idx);
                }
            }
        }
    }
    if chosen.is_empty() {
        return Err(RbfError::EmptySelection(h_bar));
    }
    let indices: Vec<usize> = chosen.into_iter().collect();
    let points = indices.iter().map(|&i| data.points[i]).collect();
    Ok(ControlPointSet {
        points,
        indices,
        grid_spacing: h_bar,
    })
}

/// Radius such that the median number of data points inside a kernel's
/// support is about `target`, found by bisection on the radius.
pub fn radius_for_coverage(data: &ScatteredData, cps: &ControlPointSet, target: usize) -> f64 {
    let bbox = data.bbox().unwrap_or(Rect::unit());
    let diameter = bbox.width().hypot(bbox.height()).max(1e-12);
    let cell = (diameter / (data.n() as f64).sqrt()).max(1e-9);
    let bins = PointBins::build(&data.points, cell);
    let median_count = |rho: f64| -> usize {
        let mut counts: Vec<usize> = cps
            .points
            .iter()
            .map(|&p| bins.count_within(p, rho))
            .collect();
        counts.sort_unstable();
        counts[counts.len() / 2]
    };
    let mut lo = 1e-9 * diameter;
    let mut hi = 1.5 * diameter;
    if median_count(hi) < target {
        return hi;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if median_count(mid) >= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// A fitted baseline with its cost report.
pub struct RbfFit {
    pub kernel: Kernel,
    pub centers: Vec<Point>,
    /// kernel weights, then the affine tail `[1, x, y]` for the thin plate
    /// spline kernel
    pub weights: Vec<f64>,
    pub nnz_kernel_matrix: usize,
    pub fill_ratio: f64,
    pub solve_time_s: f64,
    pub rmse: f64,
    pub ridged: bool,
}

impl RbfFit {
    /// Evaluate `s(x) = Σ w_i Ψ_i(x)` (plus the affine tail when present).
    pub fn evaluate(&self, p: Point) -> f64 {
        let nb = self.centers.len();
        let mut acc = 0.0;
        for (c, w) in self.centers.iter().zip(&self.weights) {
            acc += w * self.kernel.eval(c.dist(p));
        }
        if self.weights.len() == nb + 3 {
            acc += self.weights[nb] + self.weights[nb + 1] * p.x + self.weights[nb + 2] * p.y;
        }
        acc
    }
}

const MAX_DENSE_CENTERS: usize = 6000;

/// Least-squares collocation of `Σ w_i Ψ_i(x_j) ≈ y_j` over the whole data
/// set via the normal equations, with a tiny ridge retry on rank loss.
pub fn fit_rbf(
    data: &ScatteredData,
    cps: &ControlPointSet,
    kernel: Kernel,
) -> Result<RbfFit, RbfError> {
    let nb = cps.len();
    if nb == 0 {
        return Err(RbfError::EmptySelection(cps.grid_spacing));
    }
    if nb > MAX_DENSE_CENTERS {
        return Err(RbfError::TooManyCenters(nb));
    }
    let n = data.n();
    let cols = if kernel.kind == KernelKind::Tps {
        nb + 3
    } else {
        nb
    };

    // normal equations, accumulated without materialising the full design
    let mut normal = DMatrix::<f64>::zeros(cols, cols);
    let mut moment = DVector::<f64>::zeros(cols);
    let mut row_idx: Vec<usize> = Vec::with_capacity(cols);
    let mut row_val: Vec<f64> = Vec::with_capacity(cols);
    let support = kernel.support();
    let center_bins = support.map(|rho| (PointBins::build(&cps.points, rho.max(1e-12)), rho));
    match &center_bins {
        Some((bins, rho)) => {
            for (j, &p) in data.points.iter().enumerate() {
                row_idx.clear();
                row_val.clear();
                for i in bins.within(p, *rho) {
                    let v = kernel.eval(cps.points[i].dist(p));
                    if v != 0.0 {
                        row_idx.push(i);
                        row_val.push(v);
                    }
                }
                for (a, &ia) in row_idx.iter().enumerate() {
                    moment[ia] += row_val[a] * data.responses[j];
                    for (b, &ib) in row_idx.iter().enumerate() {
                        normal[(ia, ib)] += row_val[a] * row_val[b];
                    }
                }
            }
        }
        None => {
            // dense design: process in row blocks with matrix products
            let block = 2048;
            let mut start = 0;
            while start < n {
                let end = (start + block).min(n);
                let rows = end - start;
                let mut psi = DMatrix::<f64>::zeros(rows, cols);
                let mut y = DVector::<f64>::zeros(rows);
                for (r, j) in (start..end).enumerate() {
                    let p = data.points[j];
                    for (i, c) in cps.points.iter().enumerate() {
                        psi[(r, i)] = kernel.eval(c.dist(p));
                    }
                    psi[(r, nb)] = 1.0;
                    psi[(r, nb + 1)] = p.x;
                    psi[(r, nb + 2)] = p.y;
                    y[r] = data.responses[j];
                }
                normal.gemm_tr(1.0, &psi, &psi, 1.0);
                moment.gemv_tr(1.0, &psi, &y, 1.0);
                start = end;
            }
        }
    }

    // cost attributes of the centre collocation matrix
    let (nnz, ridged, weights, solve_time_s) = {
        let mut nnz = 0usize;
        match support {
            Some(rho) => {
                let bins = PointBins::build(&cps.points, rho.max(1e-12));
                for &c in &cps.points {
                    nnz += bins.count_within(c, rho);
                }
            }
            None => nnz = nb * nb,
        }
        let t = Instant::now();
        let chol = normal.clone().cholesky();
        let (ridged, solution) = match chol {
            Some(ch) => (false, Some(ch.solve(&moment))),
            None => {
                let ridge = 1e-10 * normal.trace().max(1.0) / cols as f64;
                let mut reg = normal.clone();
                for i in 0..cols {
                    reg[(i, i)] += ridge;
                }
                (true, reg.lu().solve(&moment))
            }
        };
        let solution = solution.ok_or(RbfError::SingularFit)?;
        (
            nnz,
            ridged,
            solution.iter().copied().collect::<Vec<f64>>(),
            t.elapsed().as_secs_f64(),
        )
    };

    let fit = RbfFit {
        kernel,
        centers: cps.points.clone(),
        weights,
        nnz_kernel_matrix: nnz,
        fill_ratio: nnz as f64 / (nb as f64 * nb as f64),
        solve_time_s,
        rmse: 0.0,
        ridged,
    };
    // misfit over the full data set
    let mut acc = 0.0;
    match &center_bins {
        Some((bins, rho)) => {
            for (j, &p) in data.points.iter().enumerate() {
                let mut s = 0.0;
                for i in bins.within(p, *rho) {
                    s += fit.weights[i] * kernel.eval(cps.points[i].dist(p));
                }
                let r = s - data.responses[j];
                acc += r * r;
            }
        }
        None => {
            for (j, &p) in data.points.iter().enumerate() {
                let r = fit.evaluate(p) - data.responses[j];
                acc += r * r;
            }
        }
    }
    Ok(RbfFit {
        rmse: (acc / n as f64).sqrt(),
        ..fit
    })
}

/// One row of the comparison report.
#[derive(Clone, Debug, serde::Serialize)]
pub struct ComparisonRow {
    pub technique: String,
    pub kernel: String,
    pub n_basis: usize,
    pub radius: f64,
    pub nnz: usize,
    pub ratio: f64,
    pub time_s: f64,
    pub rmse: f64,
}

/// CSV report mirroring the cost-comparison table layout.
pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut out = String::from("technique,kernel,n_basis,radius,nnz,ratio,time_s,rmse\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{:.6},{:.3},{}\n",
            r.technique, r.kernel, r.n_basis, r.radius, r.nnz, r.ratio, r.time_s, r.rmse
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_surface, NoiseSpec};

    fn uniform_cloud(n: usize, seed: u64) -> ScatteredData {
        gen_surface(n, Rect::unit(), &NoiseSpec { sigma: 0.0, seed }, |x, y| {
            (3.0 * x).sin() + y
        })
    }

    #[test]
    fn kernel_reference_values() {
        let w0 = Kernel::compact(KernelKind::WendlandC0, 1.0);
        assert_eq!(w0.eval(0.0), 1.0);
        assert_eq!(w0.eval(1.0), 0.0);
        assert_eq!(w0.eval(2.0), 0.0);
        let w2 = Kernel::compact(KernelKind::WendlandC2, 1.0);
        assert_eq!(w2.eval(0.0), 1.0);
        assert_eq!(w2.eval(1.0), 0.0);
        let b = Kernel::compact(KernelKind::Buhmann, 1.0);
        // 1/3 + 1 - 4/3 + 0 = 0 at the support edge
        assert!(b.eval(1.0).abs() < 1e-15);
        assert!((b.eval(0.0) - 1.0 / 3.0).abs() < 1e-15);
        // limit from above at zero
        assert!((b.eval(1e-9) - 1.0 / 3.0).abs() < 1e-6);
        let tps = Kernel::tps();
        assert_eq!(tps.eval(0.0), 0.0);
        assert_eq!(tps.eval(1.0), 0.0);
        // scaled kernels vanish at and beyond the radius
        let scaled = Kernel::compact(KernelKind::WendlandC2, 0.3);
        assert_eq!(scaled.eval(0.3), 0.0);
        assert!(scaled.eval(0.29) > 0.0);
    }

    #[test]
    fn control_points_on_grid_nodes() {
        let mut data = ScatteredData::default();
        for j in 0..5 {
            for i in 0..5 {
                data.push(Point::new(i as f64 * 0.25, j as f64 * 0.25), 0.0);
            }
        }
        let cps = select_control_points(&data, Rect::unit(), 0.25).unwrap();
        assert_eq!(cps.len(), 25, "data exactly on grid nodes is all selected");

        // a grid node whose nearest point is at distance h/2 gets rejected
        let mut sparse = ScatteredData::default();
        sparse.push(Point::new(0.125, 0.0), 0.0); // half a spacing from (0,0) and (0.25,0)
        let sel = select_control_points(&sparse, Rect::unit(), 0.25);
        assert!(matches!(sel, Err(RbfError::EmptySelection(_))));
    }

    #[test]
    fn control_point_count_grows_as_spacing_shrinks() {
        let data = uniform_cloud(5000, 2);
        let mut last = 0;
        for h in [0.25, 0.125, 0.0625] {
            let cps = select_control_points(&data, Rect::unit(), h).unwrap();
            assert!(cps.len() >= last, "selection must grow as the grid refines");
            last = cps.len();
            // selected points are pairwise separated by at least a third of
            // the overlay spacing (brute force)
            for (i, a) in cps.points.iter().enumerate() {
                for b in cps.points.iter().skip(i + 1) {
                    assert!(
                        a.dist(*b) >= h / 3.0 - 1e-12,
                        "separation violated at spacing {h}"
                    );
                }
            }
        }
    }

    #[test]
    fn coverage_radius_matches_density_oracle() {
        // uniform density: rho should be close to sqrt(target / (pi * lambda))
        let n = 20_000;
        let data = uniform_cloud(n, 7);
        let cps = select_control_points(&data, Rect::unit(), 0.1).unwrap();
        let target = 150;
        let rho = radius_for_coverage(&data, &cps, target);
        let lambda = n as f64; // points per unit area
        let expect = (target as f64 / (std::f64::consts::PI * lambda)).sqrt();
        assert!(
            (rho - expect).abs() < 0.15 * expect,
            "rho {rho} vs density estimate {expect}"
        );
        // covering everything needs a radius on the domain scale
        let rho_all = radius_for_coverage(&data, &cps, n);
        assert!(rho_all >= 2.0f64.sqrt() / 2.0);
    }

    #[test]
    fn csrbf_sparsity_against_brute_force() {
        let data = uniform_cloud(2000, 9);
        let cps = select_control_points(&data, Rect::unit(), 0.2).unwrap();
        let rho = 0.3;
        let fit = fit_rbf(&data, &cps, Kernel::compact(KernelKind::WendlandC0, rho)).unwrap();
        let mut brute = 0;
        for a in &cps.points {
            for b in &cps.points {
                if a.dist(*b) < rho {
                    brute += 1;
                }
            }
        }
        assert_eq!(fit.nnz_kernel_matrix, brute);
        assert!(fit.fill_ratio < 1.0);
        let tps = fit_rbf(&data, &cps, Kernel::tps()).unwrap();
        assert_eq!(tps.nnz_kernel_matrix, cps.len() * cps.len());
        assert!((tps.fill_ratio - 1.0).abs() < 1e-15);
    }

    #[test]
    fn recovers_known_weights() {
        // data generated exactly as a kernel expansion is recovered
        let mut centers = ScatteredData::default();
        for j in 0..4 {
            for i in 0..4 {
                centers.push(Point::new(i as f64 * 0.25, j as f64 * 0.25), 0.0);
            }
        }
        let cps = select_control_points(&centers, Rect::unit(), 0.25).unwrap();
        assert_eq!(cps.len(), 16);
        let kernel = Kernel::compact(KernelKind::WendlandC2, 0.6);
        let true_w: Vec<f64> = (0..cps.len()).map(|i| 0.3 + 0.1 * i as f64).collect();
        let probe = uniform_cloud(3000, 21);
        let mut data = ScatteredData::default();
        for &p in &probe.points {
            let mut y = 0.0;
            for (c, w) in cps.points.iter().zip(&true_w) {
                y += w * kernel.eval(c.dist(p));
            }
            data.push(p, y);
        }
        let fit = fit_rbf(&data, &cps, kernel).unwrap();
        assert!(fit.rmse < 1e-8, "rmse {}", fit.rmse);
        for (a, b) in fit.weights.iter().zip(&true_w) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn tps_fit_beats_flat_baseline() {
        let data = uniform_cloud(2000, 33);
        let cps = select_control_points(&data, Rect::unit(), 0.2).unwrap();
        let fit = fit_rbf(&data, &cps, Kernel::tps()).unwrap();
        let mean = data.responses.iter().sum::<f64>() / data.n() as f64;
        let sd = (data
            .responses
            .iter()
            .map(|y| (y - mean) * (y - mean))
            .sum::<f64>()
            / data.n() as f64)
            .sqrt();
        assert!(fit.rmse < 0.3 * sd, "rmse {} vs sd {}", fit.rmse, sd);
    }

    #[test]
    fn comparison_report_layout() {
        let rows = vec![ComparisonRow {
            technique: "tps".into(),
            kernel: "r^2 log r".into(),
            n_basis: 10,
            radius: 0.0,
            nnz: 100,
            ratio: 1.0,
            time_s: 0.01,
            rmse: 0.5,
        }];
        let csv = comparison_csv(&rows);
        assert!(csv.starts_with("technique,kernel,n_basis,radius,nnz,ratio,time_s,rmse\n"));
        assert_eq!(csv.lines().count(), 2);
    }
}

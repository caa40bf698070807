//! Per-edge error indicators for marking refinement candidates.
//!
//! Indicator values are assigned to base and interface base-edges; the
//! computation for an edge `e` runs over the set `τ_e` of triangles sharing
//! it (a pair in the interior, one triangle on the boundary). Five kinds:
//!
//! - *regression*: local root-mean-square misfit of `s` against the data in
//!   `τ_e`; cheap but known to chase noise.
//! - *auxiliary*: solve the same functional on a locally bisected patch
//!   with boundary values lifted from the global solution, then take the
//!   energy-norm difference over `τ_e`.
//! - *residual*: plug the interpolated global solution into the locally
//!   bisected system and combine the coefficient-block residual with the
//!   gradient jump across `e`.
//! - *recovery*: L²-project the piecewise-constant gradient to the nodes
//!   and integrate the difference between projected and raw gradients.
//! - *norm*: project twice to reach second derivatives and integrate the
//!   worst absolute component over `τ_e`.
//!
//! The recovery and norm indicators read only the grid and the `c`
//! coefficients: the gradient fields of the solve are deliberately unused,
//! since they amplify noise.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use faer::prelude::*;
use faer::sparse::{SparseColMat, Triplet};

use crate::assembly::{mass_matrix, p1_gradients};
use crate::data::{DataBuckets, ScatteredData};
use crate::geometry::Point;
use crate::mesh::{BoundaryKind, EdgeId, EdgeKind, NodeId, TriId, TriMesh};
use crate::solver::Smoother;

#[derive(Clone, Copy, PartialEq, Eq, Debug, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum IndicatorKind {
    Regression,
    Auxiliary,
    Residual,
    Recovery,
    Norm,
}

impl std::str::FromStr for IndicatorKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "regression" => Ok(Self::Regression),
            "auxiliary" => Ok(Self::Auxiliary),
            "residual" => Ok(Self::Residual),
            "recovery" => Ok(Self::Recovery),
            "norm" => Ok(Self::Norm),
            other => Err(format!("unknown indicator kind {other:?}")),
        }
    }
}

#[derive(Debug, Error)]
pub enum IndicatorError {
    #[error("local solve failed for edge {0:?}")]
    LocalSolve(EdgeId),
    #[error("gradient recovery mass solve failed")]
    MassSolve,
    #[error("edge {0:?} is not refinable, no indicator value is defined")]
    NotRefinable(EdgeId),
}

/// Balancing constants of the residual indicator.
#[derive(Clone, Copy, Debug)]
pub struct IndicatorConfig {
    pub c1: f64,
    pub c2: f64,
}

impl Default for IndicatorConfig {
    fn default() -> Self {
        IndicatorConfig { c1: 1.0, c2: 1.0 }
    }
}

/// Per-edge nonnegative indicator values, defined on the refinable edges.
#[derive(Clone, Debug)]
pub struct IndicatorField {
    pub kind: IndicatorKind,
    values: BTreeMap<EdgeId, f64>,
    /// regression edges whose patch carried no data
    pub no_data: BTreeSet<EdgeId>,
}

impl IndicatorField {
    pub fn new(kind: IndicatorKind) -> Self {
        IndicatorField {
            kind,
            values: BTreeMap::new(),
            no_data: BTreeSet::new(),
        }
    }

    pub fn get(&self, e: EdgeId) -> Option<f64> {
        self.values.get(&e).copied()
    }

    pub fn insert(&mut self, e: EdgeId, eta: f64) {
        self.values.insert(e, eta);
    }

    pub fn remove(&mut self, e: EdgeId) {
        self.values.remove(&e);
        self.no_data.remove(&e);
    }

    pub fn contains(&self, e: EdgeId) -> bool {
        self.values.contains_key(&e)
    }

    pub fn iter(&self) -> impl Iterator<Item = (EdgeId, f64)> + '_ {
        self.values.iter().map(|(&e, &v)| (e, v))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// CSV export: `edge_id,x_mid,y_mid,eta`.
    pub fn export_csv(&self, mesh: &TriMesh) -> String {
        let mut out = String::from("edge_id,x_mid,y_mid,eta\n");
        for (e, eta) in self.iter() {
            let m = mesh.edge_midpoint(e);
            out.push_str(&format!("{},{},{},{}\n", e.0, m.x, m.y, eta));
        }
        out
    }
}

/// Everything the indicators read. `alpha` for the auxiliary local solves
/// is taken from the smoother.
pub struct IndicatorInputs<'a> {
    pub mesh: &'a TriMesh,
    pub smoother: &'a Smoother,
    pub data: &'a ScatteredData,
    pub buckets: &'a DataBuckets,
    pub config: IndicatorConfig,
}

/// Compute `kind` on the given edges. Per-edge failures are collected so the
/// caller can skip those edges for one marking pass.
pub fn compute_field(
    kind: IndicatorKind,
    inputs: &IndicatorInputs,
    edges: &[EdgeId],
) -> Result<(IndicatorField, Vec<(EdgeId, IndicatorError)>), IndicatorError> {
    let mut field = IndicatorField::new(kind);
    let mut failures = Vec::new();
    match kind {
        IndicatorKind::Regression => {
            for &e in edges {
                let (eta, has_data) = eta_regression(inputs, e);
                field.insert(e, eta);
                if !has_data {
                    field.no_data.insert(e);
                }
            }
        }
        IndicatorKind::Auxiliary => {
            for &e in edges {
                match eta_auxiliary(inputs, e) {
                    Ok(eta) => field.insert(e, eta),
                    Err(err) => failures.push((e, err)),
                }
            }
        }
        IndicatorKind::Residual => {
            for &e in edges {
                match eta_residual(inputs, e) {
                    Ok(eta) => field.insert(e, eta),
                    Err(err) => failures.push((e, err)),
                }
            }
        }
        IndicatorKind::Recovery => {
            let rec = recover_gradient(inputs.mesh, &inputs.smoother.c)?;
            for &e in edges {
                field.insert(e, eta_recovery(&rec, inputs.mesh, inputs.smoother, e));
            }
        }
        IndicatorKind::Norm => {
            let rec = recover_gradient(inputs.mesh, &inputs.smoother.c)?;
            let d2 = second_derivative_bound(inputs.mesh, &rec)?;
            for &e in edges {
                field.insert(e, eta_norm(&d2, inputs.mesh, e));
            }
        }
    }
    Ok((field, failures))
}

// ---- regression ----

/// Local RMSE over the data in `τ_e`; zero (flagged) when the patch holds
/// no data points.
pub fn eta_regression(inputs: &IndicatorInputs, e: EdgeId) -> (f64, bool) {
    let mut acc = 0.0;
    let mut n = 0usize;
    for t in inputs.mesh.tris_of_edge(e) {
        for &i in inputs.buckets.points_in(t) {
            let r = inputs
                .smoother
                .value_in_tri(inputs.mesh, t, inputs.data.points[i])
                - inputs.data.responses[i];
            acc += r * r;
            n += 1;
        }
    }
    if n == 0 {
        (0.0, false)
    } else {
        ((acc / n as f64).sqrt(), true)
    }
}

// ---- gradient recovery ----

/// Nodal gradient field recovered by L²-projection of the element-wise
/// constant gradient of `s = b(x)ᵀ c`.
pub struct RecoveredGradient {
    pub gx: Vec<f64>,
    pub gy: Vec<f64>,
}

/// Reusable factorisation of the mass matrix for nodal L²-projections.
struct MassProjector {
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
    m: usize,
}

impl MassProjector {
    fn new(mesh: &TriMesh) -> Result<Self, IndicatorError> {
        let mass = mass_matrix(mesh);
        let triplets: Vec<Triplet<usize, usize, f64>> =
            mass.iter().map(|(i, j, v)| Triplet::new(i, j, v)).collect();
        let mat = SparseColMat::try_new_from_triplets(mass.nrows(), mass.ncols(), &triplets)
            .map_err(|_| IndicatorError::MassSolve)?;
        let lu = mat.sp_lu().map_err(|_| IndicatorError::MassSolve)?;
        Ok(MassProjector {
            lu,
            m: mass.nrows(),
        })
    }

    fn project(&self, rhs: &[f64]) -> Vec<f64> {
        let mut col = Mat::from_fn(self.m, 1, |i, _| rhs[i]);
        self.lu.solve_in_place(col.as_mut());
        (0..self.m).map(|i| col[(i, 0)]).collect()
    }
}

/// Moment vector `∫ b_p f` for an element-wise constant field `f`.
fn constant_field_moments(mesh: &TriMesh, per_tri: impl Fn(TriId) -> f64) -> Vec<f64> {
    let mut rhs = vec![0.0; mesh.node_count()];
    for t in mesh.alive_tris() {
        let w = mesh.tri_area(t) / 3.0 * per_tri(t);
        for v in mesh.tri_nodes(t) {
            rhs[v.0] += w;
        }
    }
    rhs
}

pub fn recover_gradient(mesh: &TriMesh, c: &[f64]) -> Result<RecoveredGradient, IndicatorError> {
    let projector = MassProjector::new(mesh)?;
    recover_gradient_with(&projector, mesh, c)
}

fn recover_gradient_with(
    projector: &MassProjector,
    mesh: &TriMesh,
    c: &[f64],
) -> Result<RecoveredGradient, IndicatorError> {
    let mut grad: Vec<[f64; 2]> = vec![[0.0, 0.0]; mesh.tri_count()];
    for t in mesh.alive_tris() {
        let (grads, _) = p1_gradients(mesh.tri_coords(t));
        let nodes = mesh.tri_nodes(t);
        for k in 0..3 {
            grad[t.0][0] += grads[k][0] * c[nodes[k].0];
            grad[t.0][1] += grads[k][1] * c[nodes[k].0];
        }
    }
    let gx = projector.project(&constant_field_moments(mesh, |t| grad[t.0][0]));
    let gy = projector.project(&constant_field_moments(mesh, |t| grad[t.0][1]));
    Ok(RecoveredGradient { gx, gy })
}

/// `∫_t (p1 - k)²` for a nodal field `p1` and a constant `k`, by the exact
/// three-midpoint rule (the integrand is quadratic).
fn integral_p1_minus_const_sq(area: f64, nodal: [f64; 3], k: f64) -> f64 {
    let mids = [
        0.5 * (nodal[0] + nodal[1]) - k,
        0.5 * (nodal[1] + nodal[2]) - k,
        0.5 * (nodal[2] + nodal[0]) - k,
    ];
    area / 3.0 * (mids[0] * mids[0] + mids[1] * mids[1] + mids[2] * mids[2])
}

/// Energy of the difference between recovered and raw gradients over `τ_e`.
pub fn eta_recovery(
    rec: &RecoveredGradient,
    mesh: &TriMesh,
    smoother: &Smoother,
    e: EdgeId,
) -> f64 {
    let mut eta_sq = 0.0;
    for t in mesh.tris_of_edge(e) {
        let raw = smoother.grad_in_tri(mesh, t);
        let nodes = mesh.tri_nodes(t);
        let area = mesh.tri_area(t);
        let nx = [rec.gx[nodes[0].0], rec.gx[nodes[1].0], rec.gx[nodes[2].0]];
        let ny = [rec.gy[nodes[0].0], rec.gy[nodes[1].0], rec.gy[nodes[2].0]];
        eta_sq += integral_p1_minus_const_sq(area, nx, raw[0]);
        eta_sq += integral_p1_minus_const_sq(area, ny, raw[1]);
    }
    eta_sq.max(0.0).sqrt()
}

/// Nodal bound on the second derivatives: project the gradients of the two
/// recovered components and take the worst absolute value per node; the two
/// mixed estimates are averaged.
pub fn second_derivative_bound(
    mesh: &TriMesh,
    rec: &RecoveredGradient,
) -> Result<Vec<f64>, IndicatorError> {
    let projector = MassProjector::new(mesh)?;
    let second = |field: &[f64]| -> (Vec<f64>, Vec<f64>) {
        let mut grad: Vec<[f64; 2]> = vec![[0.0, 0.0]; mesh.tri_count()];
        for t in mesh.alive_tris() {
            let (grads, _) = p1_gradients(mesh.tri_coords(t));
            let nodes = mesh.tri_nodes(t);
            for k in 0..3 {
                grad[t.0][0] += grads[k][0] * field[nodes[k].0];
                grad[t.0][1] += grads[k][1] * field[nodes[k].0];
            }
        }
        let dx = projector.project(&constant_field_moments(mesh, |t| grad[t.0][0]));
        let dy = projector.project(&constant_field_moments(mesh, |t| grad[t.0][1]));
        (dx, dy)
    };
    let (dxx, dxy_a) = second(&rec.gx);
    let (dxy_b, dyy) = second(&rec.gy);
    Ok((0..mesh.node_count())
        .map(|v| {
            let mixed = 0.5 * (dxy_a[v] + dxy_b[v]);
            dxx[v].abs().max(mixed.abs()).max(dyy[v].abs())
        })
        .collect())
}

/// Integral of the nodal second-derivative bound over `τ_e`.
pub fn eta_norm(d2max: &[f64], mesh: &TriMesh, e: EdgeId) -> f64 {
    let mut eta = 0.0;
    for t in mesh.tris_of_edge(e) {
        let nodes = mesh.tri_nodes(t);
        let mean = (d2max[nodes[0].0] + d2max[nodes[1].0] + d2max[nodes[2].0]) / 3.0;
        eta += mesh.tri_area(t) * mean;
    }
    eta
}

// ---- local problems (auxiliary and residual) ----

/// A bisected local patch around an edge: the triangles of `τ_e`, everything
/// sharing a node with them, the data inside, and Dirichlet values lifted
/// from the global solution on the patch boundary.
struct LocalProblem {
    coords: Vec<Point>,
    /// local node triples, positively oriented
    tris: Vec<[usize; 3]>,
    /// children of the `τ_e` triangles, paired with their global parent
    target: Vec<(usize, TriId)>,
    /// local data: (point, response, local triangle)
    data: Vec<(Point, f64, usize)>,
    /// lifted `[c, g1, g2, w]` per local node; `None` for interior nodes
    boundary: Vec<Option<[f64; 4]>>,
    /// interpolated global solution at every local node
    lifted: Vec<[f64; 4]>,
}

fn build_local_problem(
    inputs: &IndicatorInputs,
    e: EdgeId,
) -> Result<LocalProblem, IndicatorError> {
    let mesh = inputs.mesh;
    if !mesh.edge_alive(e) || mesh.edge_kind(e) == EdgeKind::Plain {
        return Err(IndicatorError::NotRefinable(e));
    }
    let pair: Vec<TriId> = mesh.tris_of_edge(e).collect();

    // patch triangles: everything sharing a node with τ_e
    let mut patch: BTreeSet<TriId> = BTreeSet::new();
    for &t in &pair {
        for v in mesh.tri_nodes(t) {
            patch.extend(mesh.tris_at_node(v).iter().copied());
        }
    }

    // local node numbering
    let mut local_of: BTreeMap<NodeId, usize> = BTreeMap::new();
    let mut coords = Vec::new();
    let mut global_nodes = Vec::new();
    for &t in &patch {
        for v in mesh.tri_nodes(t) {
            local_of.entry(v).or_insert_with(|| {
                coords.push(mesh.node(v));
                global_nodes.push(v);
                coords.len() - 1
            });
        }
    }

    // a local node is interior iff its whole global star is inside the patch
    // and it does not sit on the global boundary
    let sm = inputs.smoother;
    let mut boundary: Vec<Option<[f64; 4]>> = Vec::with_capacity(coords.len());
    let mut lifted: Vec<[f64; 4]> = Vec::with_capacity(coords.len());
    for &v in &global_nodes {
        let star_inside = mesh.tris_at_node(v).iter().all(|t| patch.contains(t));
        let values = [sm.c[v.0], sm.g1[v.0], sm.g2[v.0], sm.w[v.0]];
        lifted.push(values);
        if star_inside && !mesh.is_boundary_node(v) {
            boundary.push(None);
        } else {
            boundary.push(Some(values));
        }
    }

    // bisect e: append the midpoint and split the pair
    let (ea, eb) = (mesh.edge(e).a, mesh.edge(e).b);
    let mid_local = coords.len();
    coords.push(mesh.edge_midpoint(e));
    let mid_vals = {
        let a = local_of[&ea];
        let b = local_of[&eb];
        [
            0.5 * (lifted[a][0] + lifted[b][0]),
            0.5 * (lifted[a][1] + lifted[b][1]),
            0.5 * (lifted[a][2] + lifted[b][2]),
            0.5 * (lifted[a][3] + lifted[b][3]),
        ]
    };
    lifted.push(mid_vals);
    // the midpoint is interior unless e itself lies on the global boundary
    boundary.push(if mesh.edge(e).boundary.is_some() {
        Some(mid_vals)
    } else {
        None
    });

    let mut tris = Vec::new();
    let mut target = Vec::new();
    let mut tri_of_global: BTreeMap<TriId, Vec<usize>> = BTreeMap::new();
    for &t in &patch {
        let nodes = mesh.tri_nodes(t).map(|v| local_of[&v]);
        if pair.contains(&t) {
            let (la, lb) = (local_of[&ea], local_of[&eb]);
            // replace one endpoint at a time: both children keep orientation
            let child_a = nodes.map(|v| if v == lb { mid_local } else { v });
            let child_b = nodes.map(|v| if v == la { mid_local } else { v });
            for child in [child_a, child_b] {
                tris.push(child);
                target.push((tris.len() - 1, t));
                tri_of_global.entry(t).or_default().push(tris.len() - 1);
            }
        } else {
            tris.push(nodes);
            tri_of_global.entry(t).or_default().push(tris.len() - 1);
        }
    }

    // local data with containing local triangle
    let mut data = Vec::new();
    for &t in &patch {
        let locals = &tri_of_global[&t];
        for &i in inputs.buckets.points_in(t) {
            let p = inputs.data.points[i];
            let lt = if locals.len() == 1 {
                locals[0]
            } else {
                // a split triangle: pick the child with the best worst
                // barycentric coordinate
                let mut best = locals[0];
                let mut best_score = f64::NEG_INFINITY;
                for &cand in locals {
                    let [a, b, c] = tris[cand].map(|v| coords[v]);
                    let score = crate::geometry::barycentric(p, a, b, c)
                        .into_iter()
                        .fold(f64::INFINITY, f64::min);
                    if score > best_score {
                        best = cand;
                        best_score = score;
                    }
                }
                best
            };
            data.push((p, inputs.data.responses[i], lt));
        }
    }

    Ok(LocalProblem {
        coords,
        tris,
        target,
        data,
        boundary,
        lifted,
    })
}

/// Dense reduced saddle system of a local problem: the matrix, the
/// right-hand side and the interior index map (field-major).
struct LocalSystem {
    matrix: DMatrix<f64>,
    rhs: DVector<f64>,
    /// interior reduced index per (field, local node)
    index: Vec<[Option<usize>; 4]>,
    n_nodes: usize,
}

fn assemble_local(lp: &LocalProblem, alpha: f64) -> LocalSystem {
    let n = lp.coords.len();
    let mut l = DMatrix::zeros(n, n);
    let mut g1 = DMatrix::zeros(n, n);
    let mut g2 = DMatrix::zeros(n, n);
    for tri in &lp.tris {
        let coords = [lp.coords[tri[0]], lp.coords[tri[1]], lp.coords[tri[2]]];
        let (grads, area) = p1_gradients(coords);
        for p in 0..3 {
            for q in 0..3 {
                l[(tri[p], tri[q])] +=
                    area * (grads[p][0] * grads[q][0] + grads[p][1] * grads[q][1]);
                g1[(tri[p], tri[q])] += area / 3.0 * grads[q][0];
                g2[(tri[p], tri[q])] += area / 3.0 * grads[q][1];
            }
        }
    }
    let mut a = DMatrix::zeros(n, n);
    let mut d = DVector::zeros(n);
    if !lp.data.is_empty() {
        let inv_n = 1.0 / lp.data.len() as f64;
        for &(p, y, lt) in &lp.data {
            let tri = lp.tris[lt];
            let coords = [lp.coords[tri[0]], lp.coords[tri[1]], lp.coords[tri[2]]];
            let lambda = crate::geometry::barycentric(p, coords[0], coords[1], coords[2]);
            for i in 0..3 {
                d[tri[i]] += inv_n * lambda[i] * y;
                for j in 0..3 {
                    a[(tri[i], tri[j])] += inv_n * lambda[i] * lambda[j];
                }
            }
        }
    }

    // interior numbering, field-major [c, g1, g2, w]
    let mut index = vec![[None; 4]; n];
    let mut size = 0usize;
    for field in 0..4 {
        for v in 0..n {
            if lp.boundary[v].is_none() {
                index[v][field] = Some(size);
                size += 1;
            }
        }
    }

    let blocks: [(&DMatrix<f64>, f64, usize, usize, bool); 9] = [
        (&a, 1.0, 0, 0, false),
        (&l, 1.0, 0, 3, false),
        (&l, alpha, 1, 1, false),
        (&g1, -1.0, 1, 3, true),
        (&l, alpha, 2, 2, false),
        (&g2, -1.0, 2, 3, true),
        (&l, 1.0, 3, 0, false),
        (&g1, -1.0, 3, 1, false),
        (&g2, -1.0, 3, 2, false),
    ];
    let mut matrix = DMatrix::zeros(size, size);
    let mut rhs = DVector::zeros(size);
    for v in 0..n {
        if let Some(k) = index[v][0] {
            rhs[k] = d[v];
        }
    }
    for (block, factor, rf, cf, transpose) in blocks {
        for r in 0..n {
            for c in 0..n {
                let v = if transpose {
                    block[(c, r)]
                } else {
                    block[(r, c)]
                };
                if v == 0.0 {
                    continue;
                }
                match (index[r][rf], index[c][cf]) {
                    (Some(ri), Some(ci)) => matrix[(ri, ci)] += factor * v,
                    (Some(ri), None) => rhs[ri] -= factor * v * lp.boundary[c].unwrap()[cf],
                    _ => {}
                }
            }
        }
    }
    LocalSystem {
        matrix,
        rhs,
        index,
        n_nodes: n,
    }
}

/// Energy-norm difference between the global solution and a locally
/// improved one, over `τ_e`.
pub fn eta_auxiliary(inputs: &IndicatorInputs, e: EdgeId) -> Result<f64, IndicatorError> {
    let lp = build_local_problem(inputs, e)?;
    let sys = assemble_local(&lp, inputs.smoother.alpha);
    let solution = sys
        .matrix
        .clone()
        .lu()
        .solve(&sys.rhs)
        .ok_or(IndicatorError::LocalSolve(e))?;
    // local c values: solved interior, lifted boundary
    let mut c_hat = vec![0.0; sys.n_nodes];
    for v in 0..sys.n_nodes {
        c_hat[v] = match sys.index[v][0] {
            Some(k) => solution[k],
            None => lp.boundary[v].unwrap()[0],
        };
    }
    let mut eta_sq = 0.0;
    for &(lt, parent) in &lp.target {
        let tri = lp.tris[lt];
        let coords = [lp.coords[tri[0]], lp.coords[tri[1]], lp.coords[tri[2]]];
        let (grads, area) = p1_gradients(coords);
        let mut gh = [0.0, 0.0];
        for k in 0..3 {
            gh[0] += grads[k][0] * c_hat[tri[k]];
            gh[1] += grads[k][1] * c_hat[tri[k]];
        }
        let gs = inputs.smoother.grad_in_tri(inputs.mesh, parent);
        eta_sq += area * ((gs[0] - gh[0]).powi(2) + (gs[1] - gh[1]).powi(2));
    }
    Ok(eta_sq.max(0.0).sqrt())
}

/// Gradient jump of `s` across `e`: zero on Dirichlet boundary edges, the
/// one-sided normal derivative on Neumann boundary edges.
fn gradient_jump(mesh: &TriMesh, sm: &Smoother, e: EdgeId) -> f64 {
    let edge = mesh.edge(e);
    let (a, b) = (mesh.node(edge.a), mesh.node(edge.b));
    let len = a.dist(b);
    if len == 0.0 {
        return 0.0;
    }
    let normal = [(b.y - a.y) / len, (a.x - b.x) / len];
    let tris: Vec<TriId> = mesh.tris_of_edge(e).collect();
    match (tris.len(), edge.boundary) {
        (2, _) => {
            let ga = sm.grad_in_tri(mesh, tris[0]);
            let gb = sm.grad_in_tri(mesh, tris[1]);
            normal[0] * (ga[0] - gb[0]) + normal[1] * (ga[1] - gb[1])
        }
        (1, Some(BoundaryKind::Neumann)) => {
            let g = sm.grad_in_tri(mesh, tris[0]);
            -(normal[0] * g[0] + normal[1] * g[1])
        }
        _ => 0.0,
    }
}

/// Residual of the interpolated global solution in the locally bisected
/// system, combined with the gradient jump across `e`.
pub fn eta_residual(inputs: &IndicatorInputs, e: EdgeId) -> Result<f64, IndicatorError> {
    let lp = build_local_problem(inputs, e)?;
    let sys = assemble_local(&lp, inputs.smoother.alpha);
    // interpolated global solution on the interior unknowns
    let mut x = DVector::zeros(sys.rhs.len());
    for v in 0..sys.n_nodes {
        for field in 0..4 {
            if let Some(k) = sys.index[v][field] {
                x[k] = lp.lifted[v][field];
            }
        }
    }
    let residual = &sys.matrix * &x - &sys.rhs;
    // coefficient block of the residual as a nodal field, zero on boundary
    let mut r_c = vec![0.0; sys.n_nodes];
    for v in 0..sys.n_nodes {
        if let Some(k) = sys.index[v][0] {
            r_c[v] = residual[k];
        }
    }
    // its squared L² norm through the local mass matrix
    let mut norm_sq = 0.0;
    for tri in &lp.tris {
        let coords = [lp.coords[tri[0]], lp.coords[tri[1]], lp.coords[tri[2]]];
        let (_, area) = p1_gradients(coords);
        for p in 0..3 {
            for q in 0..3 {
                let w = if p == q { area / 6.0 } else { area / 12.0 };
                norm_sq += w * r_c[tri[p]] * r_c[tri[q]];
            }
        }
    }
    let h = inputs.mesh.patch_mesh_size(e);
    let jump = gradient_jump(inputs.mesh, inputs.smoother, e);
    let jump_sq = jump * jump * inputs.mesh.edge_length(e);
    let eta_sq = inputs.config.c1 * h * h * norm_sq + inputs.config.c2 * h * jump_sq;
    Ok(eta_sq.max(0.0).sqrt())
}

//! Assembly of the sparse system blocks and the boundary treatment.
//!
//! For the piecewise linear basis `b_1..b_m` on the grid the blocks are
//!
//! - `L`:  stiffness, `L_pq = ∫ ∇b_p · ∇b_q`
//! - `G_k`: gradient coupling, `(G_k)_pq = ∫ b_p ∂_k b_q`
//! - `A`:  data normal matrix, `(1/n) Σ_i b(x_i) b(x_i)ᵀ`
//! - `d`:  data load, `(1/n) Σ_i b(x_i) y_i`
//!
//! All element integrals are closed-form: gradients are constant per
//! element and `∫ b_p` over a triangle is a third of its area, so no
//! quadrature is involved. Dirichlet boundaries are handled by symmetric
//! elimination; the eliminated column contributions are exposed as the four
//! load vectors `h_1..h_4` of the block system.

use thiserror::Error;

use crate::data::{DataBuckets, ScatteredData};
use crate::geometry::Point;
use crate::mesh::{NodeId, TriId, TriMesh};
use crate::sparse::SparseMatrix;

#[derive(Debug, Error)]
pub enum AssemblyError {
    #[error("triangle {0:?} is degenerate (area {1:.3e})")]
    DegenerateTriangle(TriId, f64),
    #[error("bucket references triangle {0:?} which is not alive")]
    StaleBucket(TriId),
    #[error("node {0:?} is not a boundary node")]
    NotBoundary(NodeId),
}

/// Constant gradients of the three nodal basis functions on a triangle,
/// with its area.
pub fn p1_gradients(coords: [Point; 3]) -> ([[f64; 2]; 3], f64) {
    let [a, b, c] = coords;
    let area2 = crate::geometry::signed_area2(a, b, c);
    let grads = [
        [(b.y - c.y) / area2, (c.x - b.x) / area2],
        [(c.y - a.y) / area2, (a.x - c.x) / area2],
        [(a.y - b.y) / area2, (b.x - a.x) / area2],
    ];
    (grads, 0.5 * area2)
}

/// Stiffness and the two gradient blocks.
pub struct FemBlocks {
    pub l: SparseMatrix,
    pub g1: SparseMatrix,
    pub g2: SparseMatrix,
}

pub fn assemble_fem(mesh: &TriMesh) -> Result<FemBlocks, AssemblyError> {
    let m = mesh.node_count();
    let cap = 9 * mesh.alive_tri_count();
    let mut tl = Vec::with_capacity(cap);
    let mut tg1 = Vec::with_capacity(cap);
    let mut tg2 = Vec::with_capacity(cap);
    for t in mesh.alive_tris() {
        let nodes = mesh.tri_nodes(t);
        let (grads, area) = p1_gradients(mesh.tri_coords(t));
        if !(area > 0.0) || !area.is_finite() {
            return Err(AssemblyError::DegenerateTriangle(t, area));
        }
        for p in 0..3 {
            let gp = nodes[p].0;
            for q in 0..3 {
                let gq = nodes[q].0;
                tl.push((
                    gp,
                    gq,
                    area * (grads[p][0] * grads[q][0] + grads[p][1] * grads[q][1]),
                ));
                // ∫ b_p ∂_k b_q = (area / 3) ∂_k b_q
                tg1.push((gp, gq, area / 3.0 * grads[q][0]));
                tg2.push((gp, gq, area / 3.0 * grads[q][1]));
            }
        }
    }
    Ok(FemBlocks {
        l: SparseMatrix::from_triplets(m, m, tl),
        g1: SparseMatrix::from_triplets(m, m, tg1),
        g2: SparseMatrix::from_triplets(m, m, tg2),
    })
}

/// Scatter the bucketed data into the normal matrix and load vector.
pub fn assemble_data(
    mesh: &TriMesh,
    data: &ScatteredData,
    buckets: &DataBuckets,
) -> Result<(SparseMatrix, Vec<f64>), AssemblyError> {
    let m = mesh.node_count();
    let n = buckets.located();
    let mut ta = Vec::new();
    let mut d = vec![0.0; m];
    if n == 0 {
        return Ok((SparseMatrix::zeros(m, m), d));
    }
    let inv_n = 1.0 / n as f64;
    for t in (0..mesh.tri_count()).map(TriId) {
        let idxs = buckets.points_in(t);
        if idxs.is_empty() {
            continue;
        }
        if !mesh.tri_alive(t) {
            return Err(AssemblyError::StaleBucket(t));
        }
        let nodes = mesh.tri_nodes(t);
        for &i in idxs {
            let lambda = mesh.tri_barycentric(t, data.points[i]);
            for p in 0..3 {
                let gp = nodes[p].0;
                d[gp] += inv_n * lambda[p] * data.responses[i];
                for q in 0..3 {
                    ta.push((gp, nodes[q].0, inv_n * lambda[p] * lambda[q]));
                }
            }
        }
    }
    Ok((SparseMatrix::from_triplets(m, m, ta), d))
}

/// Mass matrix `M_pq = ∫ b_p b_q`, used by the gradient recovery.
pub fn mass_matrix(mesh: &TriMesh) -> SparseMatrix {
    let m = mesh.node_count();
    let mut tm = Vec::with_capacity(9 * mesh.alive_tri_count());
    for t in mesh.alive_tris() {
        let nodes = mesh.tri_nodes(t);
        let area = mesh.tri_area(t);
        for p in 0..3 {
            for q in 0..3 {
                let w = if p == q { area / 6.0 } else { area / 12.0 };
                tm.push((nodes[p].0, nodes[q].0, w));
            }
        }
    }
    SparseMatrix::from_triplets(m, m, tm)
}

/// How the boundary enters the solve.
#[derive(Clone, Debug)]
pub enum BoundaryTreatment {
    /// Natural boundary; the constant ambiguity of the two gradient fields
    /// is pinned to zero at one node.
    Neumann { pin: NodeId },
    /// Prescribed nodal values, eliminated symmetrically. `values[i]` holds
    /// `[s, u1, u2, w]` for `nodes[i]`.
    Dirichlet {
        nodes: Vec<NodeId>,
        values: Vec<[f64; 4]>,
    },
}

/// The assembled block system for one grid and data set.
#[derive(Debug)]
pub struct TpsfemSystem {
    pub m: usize,
    pub n_data: usize,
    pub a: SparseMatrix,
    pub l: SparseMatrix,
    pub g1: SparseMatrix,
    pub g2: SparseMatrix,
    pub d: Vec<f64>,
    pub boundary: BoundaryTreatment,
}

impl TpsfemSystem {
    /// Assemble all blocks with the natural (Neumann) boundary treatment.
    pub fn assemble(
        mesh: &TriMesh,
        data: &ScatteredData,
        buckets: &DataBuckets,
    ) -> Result<Self, AssemblyError> {
        let fem = assemble_fem(mesh)?;
        let (a, d) = assemble_data(mesh, data, buckets)?;
        Ok(TpsfemSystem {
            m: mesh.node_count(),
            n_data: buckets.located(),
            a,
            l: fem.l,
            g1: fem.g1,
            g2: fem.g2,
            d,
            boundary: BoundaryTreatment::Neumann { pin: NodeId(0) },
        })
    }

    /// Switch to Dirichlet boundaries with values taken from the given
    /// functions at every boundary node (the multiplier is prescribed zero).
    pub fn apply_dirichlet(
        &mut self,
        mesh: &TriMesh,
        s: &dyn Fn(Point) -> f64,
        u1: &dyn Fn(Point) -> f64,
        u2: &dyn Fn(Point) -> f64,
    ) {
        let mut nodes = Vec::new();
        let mut values = Vec::new();
        for v in mesh.boundary_nodes() {
            let p = mesh.node(v);
            nodes.push(v);
            values.push([s(p), u1(p), u2(p), 0.0]);
        }
        self.boundary = BoundaryTreatment::Dirichlet { nodes, values };
    }

    /// Prescribe explicit `[s, u1, u2, w]` values per node; every node must
    /// be a boundary node of the grid.
    pub fn apply_dirichlet_values(
        &mut self,
        mesh: &TriMesh,
        pairs: &[(NodeId, [f64; 4])],
    ) -> Result<(), AssemblyError> {
        let mut nodes = Vec::new();
        let mut values = Vec::new();
        for &(v, vals) in pairs {
            if !mesh.is_boundary_node(v) {
                return Err(AssemblyError::NotBoundary(v));
            }
            nodes.push(v);
            values.push(vals);
        }
        self.boundary = BoundaryTreatment::Dirichlet { nodes, values };
        Ok(())
    }

    /// Convenience: constant Dirichlet values for `s`, `u1`, `u2`.
    pub fn apply_dirichlet_constants(&mut self, mesh: &TriMesh, s: f64, u1: f64, u2: f64) {
        self.apply_dirichlet(mesh, &|_| s, &|_| u1, &|_| u2);
    }

    /// Per-field prescribed values (full length, zero off the boundary) and
    /// a mask of eliminated nodes. Fields are ordered `[c, g1, g2, w]`.
    pub(crate) fn elimination(&self) -> (Vec<[f64; 4]>, [Vec<bool>; 4]) {
        let mut vals = vec![[0.0; 4]; self.m];
        let mut mask = [
            vec![false; self.m],
            vec![false; self.m],
            vec![false; self.m],
            vec![false; self.m],
        ];
        match &self.boundary {
            BoundaryTreatment::Neumann { pin } => {
                // only the gradient fields carry a constant ambiguity
                mask[1][pin.0] = true;
                mask[2][pin.0] = true;
            }
            BoundaryTreatment::Dirichlet { nodes, values } => {
                for (v, val) in nodes.iter().zip(values) {
                    vals[v.0] = *val;
                    for field_mask in mask.iter_mut() {
                        field_mask[v.0] = true;
                    }
                }
            }
        }
        (vals, mask)
    }

    /// Debug dump of all blocks in coordinate text format.
    pub fn dump_blocks(&self) -> String {
        let mut out = String::new();
        for (name, block) in [
            ("A", &self.a),
            ("L", &self.l),
            ("G1", &self.g1),
            ("G2", &self.g2),
        ] {
            out.push_str(&format!(
                "# {} {}x{} nnz {}\n",
                name,
                block.nrows(),
                block.ncols(),
                block.nnz()
            ));
            out.push_str(&block.to_coo_string());
        }
        out.push_str(&format!("# d {}\n", self.d.len()));
        for (i, v) in self.d.iter().enumerate() {
            out.push_str(&format!("{} {}\n", i, v));
        }
        out
    }

    /// The four Dirichlet load vectors of the block system at the given
    /// smoothing parameter: the eliminated column contributions per block
    /// row, full length with zeros on eliminated rows. All zero under
    /// Neumann boundaries.
    pub fn h_vectors(&self, alpha: f64) -> [Vec<f64>; 4] {
        let (vals, mask) = self.elimination();
        let mut h = [
            vec![0.0; self.m],
            vec![0.0; self.m],
            vec![0.0; self.m],
            vec![0.0; self.m],
        ];
        if matches!(self.boundary, BoundaryTreatment::Neumann { .. }) {
            return h;
        }
        // block layout: row 0: A c + L w; row 1: αL g1 − G1ᵀ w;
        // row 2: αL g2 − G2ᵀ w; row 3: L c − G1 g1 − G2 g2
        let mut add = |block: &SparseMatrix,
                       factor: f64,
                       row_field: usize,
                       col_field: usize,
                       transpose: bool| {
            for (i, j, v) in block.iter() {
                let (r, c) = if transpose { (j, i) } else { (i, j) };
                if !mask[row_field][r] && mask[col_field][c] {
                    h[row_field][r] += factor * v * vals[c][col_field];
                }
            }
        };
        add(&self.a, 1.0, 0, 0, false);
        add(&self.l, 1.0, 0, 3, false);
        add(&self.l, alpha, 1, 1, false);
        add(&self.g1, -1.0, 1, 3, true);
        add(&self.l, alpha, 2, 2, false);
        add(&self.g2, -1.0, 2, 3, true);
        add(&self.l, 1.0, 3, 0, false);
        add(&self.g1, -1.0, 3, 1, false);
        add(&self.g2, -1.0, 3, 2, false);
        h
    }
}

//! Conforming triangular grids over square and L-shaped domains with
//! newest-node bisection refinement.
//!
//! Every triangle stores its vertices as `[p, q, newest]` with positive
//! orientation; the *base edge* joins `p` and `q` and is the only edge along
//! which the triangle may be bisected. Bisection inserts the midpoint of the
//! base edge, splits every triangle sharing that edge and hands each child
//! the old non-base edge of its parent as its new base edge, so a whole
//! sweep of bisections stays legal. An edge shared by triangles of different
//! refinement generations (base for the finer side only) is an *interface
//! base-edge*; bisecting it first recursively bisects the coarser neighbour,
//! which keeps the grid free of hanging nodes.
//!
//! Split triangles and edges are kept as tombstones so identifiers stay
//! stable across refinement; buckets and indicator fields index by id.

use std::collections::HashMap;

use serde::Serialize;
use thiserror::Error;

use crate::geometry::{barycentric, signed_area2, Point, Rect};

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize)]
pub struct NodeId(pub usize);

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize)]
pub struct EdgeId(pub usize);

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize)]
pub struct TriId(pub usize);

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryKind {
    Dirichlet,
    Neumann,
}

/// Refinement role of an edge, derived from the triangles that use it.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum EdgeKind {
    /// Base edge of every triangle sharing it; bisection is legal directly.
    Base,
    /// Base edge for some but not all sharers; the coarse neighbour must be
    /// bisected first.
    InterfaceBase,
    /// Not a base edge of any sharer; bisection is a contract violation.
    Plain,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainShape {
    Square,
    LShape,
}

/// The meshed region: a rectangle, or a rectangle minus one closed corner
/// quadrant (`cut` is the inner corner; the removed quadrant spans from
/// `cut` to the upper-right corner of the bounding box).
#[derive(Clone, Copy, Debug, Serialize)]
pub struct DomainSpec {
    pub shape: DomainShape,
    pub bbox: Rect,
    pub cut: Point,
}

const GEOM_REL_TOL: f64 = 1e-12;

impl DomainSpec {
    pub fn square(bbox: Rect) -> Self {
        DomainSpec {
            shape: DomainShape::Square,
            bbox,
            cut: bbox.center(),
        }
    }

    pub fn unit_square() -> Self {
        Self::square(Rect::unit())
    }

    pub fn lshape(bbox: Rect, cut: Point) -> Self {
        DomainSpec {
            shape: DomainShape::LShape,
            bbox,
            cut,
        }
    }

    /// Unit square minus the closed quadrant `[0.5,1] x [0.5,1]`.
    pub fn unit_lshape() -> Self {
        Self::lshape(Rect::unit(), Point::new(0.5, 0.5))
    }

    fn scale(&self) -> f64 {
        self.bbox.width().max(self.bbox.height())
    }

    /// Closed-region membership; points on the boundary count as inside.
    pub fn contains(&self, p: Point) -> bool {
        let tol = GEOM_REL_TOL * self.scale();
        if !self.bbox.contains(p, tol) {
            return false;
        }
        match self.shape {
            DomainShape::Square => true,
            // excluded open quadrant; its edges stay in the domain
            DomainShape::LShape => !(p.x > self.cut.x + tol && p.y > self.cut.y + tol),
        }
    }

    pub fn area(&self) -> f64 {
        let full = self.bbox.width() * self.bbox.height();
        match self.shape {
            DomainShape::Square => full,
            DomainShape::LShape => {
                full - (self.bbox.x_hi - self.cut.x) * (self.bbox.y_hi - self.cut.y)
            }
        }
    }

    fn validate(&self) -> Result<(), MeshError> {
        if !self.bbox.is_valid() {
            return Err(MeshError::InvalidDomain(
                "bounding box has non-positive extent".into(),
            ));
        }
        if self.shape == DomainShape::LShape {
            let tol = GEOM_REL_TOL * self.scale();
            if p_outside_open(self.cut.x, self.bbox.x_lo, self.bbox.x_hi, tol)
                || p_outside_open(self.cut.y, self.bbox.y_lo, self.bbox.y_hi, tol)
            {
                return Err(MeshError::InvalidDomain(
                    "cut corner must lie strictly inside the bounding box".into(),
                ));
            }
        }
        Ok(())
    }
}

fn p_outside_open(v: f64, lo: f64, hi: f64, tol: f64) -> bool {
    v <= lo + tol || v >= hi - tol
}

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("invalid grid configuration: {0}")]
    InvalidGrid(String),
    #[error("edge {0:?} is not a base or interface base-edge")]
    NotRefinable(EdgeId),
    #[error("edge {0:?} has been split and is no longer part of the grid")]
    DeadEdge(EdgeId),
    #[error("refinement recursion exceeded the triangle count; grid labelling is inconsistent")]
    RecursionLimit,
}

#[derive(Clone, Debug)]
pub struct Edge {
    pub a: NodeId,
    pub b: NodeId,
    pub boundary: Option<BoundaryKind>,
    alive: bool,
}

#[derive(Clone, Debug)]
struct Tri {
    /// `[p, q, newest]`, positively oriented; the base edge joins `p` and `q`.
    nodes: [NodeId; 3],
    /// `[(p,q), (q,newest), (newest,p)]`; `edges[0]` is the base edge.
    edges: [EdgeId; 3],
    level: u32,
    children: Option<[TriId; 2]>,
}

/// What one refinement call added and removed.
///
/// `new_nodes` lists `(midpoint, endpoint_a, endpoint_b)` in creation order,
/// which is what nodal-value averaging needs; `split_tris` lists
/// `(parent, children)` in creation order for re-bucketing.
#[derive(Clone, Debug, Default)]
pub struct RefinementDelta {
    pub new_nodes: Vec<(NodeId, NodeId, NodeId)>,
    pub new_edges: Vec<EdgeId>,
    pub new_tris: Vec<TriId>,
    pub split_tris: Vec<(TriId, [TriId; 2])>,
    pub split_edges: Vec<EdgeId>,
    pub max_recursion_depth: usize,
}

impl RefinementDelta {
    pub fn merge(&mut self, other: RefinementDelta) {
        self.new_nodes.extend(other.new_nodes);
        self.new_edges.extend(other.new_edges);
        self.new_tris.extend(other.new_tris);
        self.split_tris.extend(other.split_tris);
        self.split_edges.extend(other.split_edges);
        self.max_recursion_depth = self.max_recursion_depth.max(other.max_recursion_depth);
    }
}

#[derive(Clone, Debug)]
pub struct TriMesh {
    domain: DomainSpec,
    nodes: Vec<Point>,
    node_boundary: Vec<bool>,
    edges: Vec<Edge>,
    tris: Vec<Tri>,
    /// Alive triangles using each edge (at most two).
    edge_tris: Vec<[Option<TriId>; 2]>,
    /// Alive triangles touching each node.
    node_tris: Vec<Vec<TriId>>,
    alive_tris: usize,
}

impl TriMesh {
    /// Uniform initial grid of `n_per_side`² nodes (L-shape: the subset
    /// outside the cut quadrant). Each cell is split along its lower-left to
    /// upper-right diagonal; the right-angle vertices are the newest nodes,
    /// so the diagonals are the base edges and the first sweep of
    /// bisections cuts the hypotenuses.
    pub fn build_initial_grid(
        domain: DomainSpec,
        n_per_side: usize,
        bc: BoundaryKind,
    ) -> Result<TriMesh, MeshError> {
        domain.validate()?;
        if n_per_side < 2 {
            return Err(MeshError::InvalidGrid(
                "need at least 2 nodes per side".into(),
            ));
        }
        let n = n_per_side;
        let hx = domain.bbox.width() / (n - 1) as f64;
        let hy = domain.bbox.height() / (n - 1) as f64;
        let tol = GEOM_REL_TOL * domain.scale();

        // For the L-shape the cut corner must land on grid lines, otherwise
        // the kept cells do not tile the domain.
        if domain.shape == DomainShape::LShape {
            let fx = (domain.cut.x - domain.bbox.x_lo) / hx;
            let fy = (domain.cut.y - domain.bbox.y_lo) / hy;
            if (fx - fx.round()).abs() > 1e-9 || (fy - fy.round()).abs() > 1e-9 {
                return Err(MeshError::InvalidGrid(format!(
                    "cut corner ({}, {}) does not lie on the {}x{} grid",
                    domain.cut.x, domain.cut.y, n, n
                )));
            }
        }

        // Grid nodes inside the (closed) domain, renumbered row-major.
        let mut node_of = vec![None; n * n];
        let mut nodes = Vec::new();
        for j in 0..n {
            for i in 0..n {
                let p = Point::new(
                    domain.bbox.x_lo + i as f64 * hx,
                    domain.bbox.y_lo + j as f64 * hy,
                );
                if domain.contains(p) {
                    node_of[j * n + i] = Some(NodeId(nodes.len()));
                    nodes.push(p);
                }
            }
        }

        let mut mesh = TriMesh {
            domain,
            node_boundary: vec![false; nodes.len()],
            node_tris: vec![Vec::new(); nodes.len()],
            nodes,
            edges: Vec::new(),
            tris: Vec::new(),
            edge_tris: Vec::new(),
            alive_tris: 0,
        };

        let mut edge_lookup: HashMap<(NodeId, NodeId), EdgeId> = HashMap::new();
        let mut edge_of = |mesh: &mut TriMesh, a: NodeId, b: NodeId| -> EdgeId {
            let key = if a < b { (a, b) } else { (b, a) };
            *edge_lookup
                .entry(key)
                .or_insert_with(|| mesh.push_edge(a, b, None))
        };

        for j in 0..n - 1 {
            for i in 0..n - 1 {
                // skip cells inside the cut quadrant
                if domain.shape == DomainShape::LShape {
                    let x0 = domain.bbox.x_lo + i as f64 * hx;
                    let y0 = domain.bbox.y_lo + j as f64 * hy;
                    if x0 >= domain.cut.x - tol && y0 >= domain.cut.y - tol {
                        continue;
                    }
                }
                let ll = node_of[j * n + i].expect("cell corner missing");
                let lr = node_of[j * n + i + 1].expect("cell corner missing");
                let ul = node_of[(j + 1) * n + i].expect("cell corner missing");
                let ur = node_of[(j + 1) * n + i + 1].expect("cell corner missing");
                let diag = edge_of(&mut mesh, ll, ur);
                // lower triangle: newest node at the right angle (lr)
                let e_bottom = edge_of(&mut mesh, ll, lr);
                let e_right = edge_of(&mut mesh, lr, ur);
                mesh.push_tri([ur, ll, lr], [diag, e_bottom, e_right], 0);
                // upper triangle: newest node at the right angle (ul)
                let e_top = edge_of(&mut mesh, ur, ul);
                let e_left = edge_of(&mut mesh, ul, ll);
                mesh.push_tri([ll, ur, ul], [diag, e_top, e_left], 0);
            }
        }

        // Boundary edges have a single incident triangle.
        for e in 0..mesh.edges.len() {
            let count = mesh.edge_tris[e].iter().flatten().count();
            if count == 1 {
                mesh.edges[e].boundary = Some(bc);
                mesh.node_boundary[mesh.edges[e].a.0] = true;
                mesh.node_boundary[mesh.edges[e].b.0] = true;
            }
        }

        debug_assert!(mesh.alive_tris > 0);
        Ok(mesh)
    }

    fn push_edge(&mut self, a: NodeId, b: NodeId, boundary: Option<BoundaryKind>) -> EdgeId {
        let id = EdgeId(self.edges.len());
        self.edges.push(Edge {
            a,
            b,
            boundary,
            alive: true,
        });
        self.edge_tris.push([None, None]);
        id
    }

    fn push_tri(&mut self, nodes: [NodeId; 3], edges: [EdgeId; 3], level: u32) -> TriId {
        let id = TriId(self.tris.len());
        self.tris.push(Tri {
            nodes,
            edges,
            level,
            children: None,
        });
        for e in edges {
            let slot = &mut self.edge_tris[e.0];
            if slot[0].is_none() {
                slot[0] = Some(id);
            } else {
                debug_assert!(slot[1].is_none(), "more than two triangles on one edge");
                slot[1] = Some(id);
            }
        }
        for v in nodes {
            self.node_tris[v.0].push(id);
        }
        self.alive_tris += 1;
        id
    }

    /// Remove `t` from the incidence structures; the caller records its
    /// children afterwards. Between the two steps the grid is transiently
    /// inconsistent, so this stays private to the refinement path.
    fn detach_tri(&mut self, t: TriId) {
        for e in self.tris[t.0].edges {
            for slot in self.edge_tris[e.0].iter_mut() {
                if *slot == Some(t) {
                    *slot = None;
                }
            }
        }
        for v in self.tris[t.0].nodes {
            self.node_tris[v.0].retain(|&x| x != t);
        }
        self.alive_tris -= 1;
    }

    // ---- accessors ----

    pub fn domain(&self) -> &DomainSpec {
        &self.domain
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node(&self, v: NodeId) -> Point {
        self.nodes[v.0]
    }

    pub fn is_boundary_node(&self, v: NodeId) -> bool {
        self.node_boundary[v.0]
    }

    pub fn boundary_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.nodes.len())
            .filter(|&i| self.node_boundary[i])
            .map(NodeId)
    }

    pub fn edge(&self, e: EdgeId) -> &Edge {
        &self.edges[e.0]
    }

    pub fn edge_alive(&self, e: EdgeId) -> bool {
        self.edges[e.0].alive
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edge_length(&self, e: EdgeId) -> f64 {
        let ed = &self.edges[e.0];
        self.nodes[ed.a.0].dist(self.nodes[ed.b.0])
    }

    pub fn edge_midpoint(&self, e: EdgeId) -> Point {
        let ed = &self.edges[e.0];
        Point::midpoint(self.nodes[ed.a.0], self.nodes[ed.b.0])
    }

    /// Alive triangles sharing edge `e` (one for boundary edges, else two).
    pub fn tris_of_edge(&self, e: EdgeId) -> impl Iterator<Item = TriId> + '_ {
        self.edge_tris[e.0].into_iter().flatten()
    }

    /// Alive triangles touching node `v`.
    pub fn tris_at_node(&self, v: NodeId) -> &[TriId] {
        &self.node_tris[v.0]
    }

    pub fn tri_alive(&self, t: TriId) -> bool {
        self.tris[t.0].children.is_none()
    }

    pub fn tri_children(&self, t: TriId) -> Option<[TriId; 2]> {
        self.tris[t.0].children
    }

    pub fn tri_nodes(&self, t: TriId) -> [NodeId; 3] {
        self.tris[t.0].nodes
    }

    pub fn tri_edges(&self, t: TriId) -> [EdgeId; 3] {
        self.tris[t.0].edges
    }

    pub fn tri_level(&self, t: TriId) -> u32 {
        self.tris[t.0].level
    }

    pub fn tri_newest_node(&self, t: TriId) -> NodeId {
        self.tris[t.0].nodes[2]
    }

    pub fn tri_base_edge(&self, t: TriId) -> EdgeId {
        self.tris[t.0].edges[0]
    }

    pub fn tri_coords(&self, t: TriId) -> [Point; 3] {
        let n = self.tris[t.0].nodes;
        [self.nodes[n[0].0], self.nodes[n[1].0], self.nodes[n[2].0]]
    }

    pub fn tri_area(&self, t: TriId) -> f64 {
        let [a, b, c] = self.tri_coords(t);
        0.5 * signed_area2(a, b, c)
    }

    pub fn tri_count(&self) -> usize {
        self.tris.len()
    }

    pub fn alive_tri_count(&self) -> usize {
        self.alive_tris
    }

    pub fn alive_tris(&self) -> impl Iterator<Item = TriId> + '_ {
        (0..self.tris.len())
            .map(TriId)
            .filter(move |&t| self.tri_alive(t))
    }

    pub fn alive_edges(&self) -> impl Iterator<Item = EdgeId> + '_ {
        (0..self.edges.len())
            .map(EdgeId)
            .filter(move |&e| self.edges[e.0].alive)
    }

    /// Edges along which bisection is currently legal (base and interface
    /// base-edges).
    pub fn refinable_edges(&self) -> impl Iterator<Item = EdgeId> + '_ {
        self.alive_edges()
            .filter(move |&e| self.edge_kind(e) != EdgeKind::Plain)
    }

    /// Refinement role of `e`, derived from the triangles sharing it.
    pub fn edge_kind(&self, e: EdgeId) -> EdgeKind {
        let mut total = 0usize;
        let mut base_for = 0usize;
        for t in self.tris_of_edge(e) {
            total += 1;
            if self.tri_base_edge(t) == e {
                base_for += 1;
            }
        }
        if total == 0 || base_for == 0 {
            EdgeKind::Plain
        } else if base_for == total {
            EdgeKind::Base
        } else {
            EdgeKind::InterfaceBase
        }
    }

    /// Longest triangle edge over the whole grid.
    pub fn mesh_size(&self) -> f64 {
        self.alive_edges()
            .map(|e| self.edge_length(e))
            .fold(0.0, f64::max)
    }

    /// Longest edge among the alive triangles sharing `e`.
    pub fn patch_mesh_size(&self, e: EdgeId) -> f64 {
        let mut h: f64 = 0.0;
        for t in self.tris_of_edge(e) {
            for te in self.tri_edges(t) {
                h = h.max(self.edge_length(te));
            }
        }
        h
    }

    pub fn total_area(&self) -> f64 {
        self.alive_tris().map(|t| self.tri_area(t)).sum()
    }

    /// Smallest interior angle over all alive triangles, in radians.
    pub fn min_angle(&self) -> f64 {
        let mut best = f64::INFINITY;
        for t in self.alive_tris() {
            let [a, b, c] = self.tri_coords(t);
            for (u, v, w) in [(a, b, c), (b, c, a), (c, a, b)] {
                let d1 = Point::new(v.x - u.x, v.y - u.y);
                let d2 = Point::new(w.x - u.x, w.y - u.y);
                let dot = d1.x * d2.x + d1.y * d2.y;
                let cross = d1.x * d2.y - d1.y * d2.x;
                best = best.min(cross.abs().atan2(dot));
            }
        }
        best
    }

    // ---- refinement ----

    /// Bisect along `e`. If `e` is an interface base-edge the coarser
    /// neighbours are recursively bisected first; the returned delta covers
    /// the whole closure.
    pub fn bisect_edge(&mut self, e: EdgeId) -> Result<RefinementDelta, MeshError> {
        if !self.edges[e.0].alive {
            return Err(MeshError::DeadEdge(e));
        }
        if self.edge_kind(e) == EdgeKind::Plain {
            return Err(MeshError::NotRefinable(e));
        }
        let mut delta = RefinementDelta::default();
        let limit = self.alive_tris + 1;
        self.refine_edge(e, &mut delta, 1, limit)?;
        Ok(delta)
    }

    /// One full sweep: every triangle bisected once along its base edge.
    /// On a grid without interface base-edges the triangle count doubles
    /// exactly and the old non-base edges become the new base edges.
    pub fn uniform_refine(&mut self) -> RefinementDelta {
        let snapshot: Vec<TriId> = self.alive_tris().collect();
        let limit = 2 * self.alive_tris + 2;
        let mut delta = RefinementDelta::default();
        for t in snapshot {
            if self.tri_alive(t) {
                let base = self.tri_base_edge(t);
                self.refine_edge(base, &mut delta, 1, limit)
                    .expect("base-edge bisection cannot fail on a conforming grid");
            }
        }
        delta
    }

    fn refine_edge(
        &mut self,
        e: EdgeId,
        delta: &mut RefinementDelta,
        depth: usize,
        limit: usize,
    ) -> Result<(), MeshError> {
        if depth > limit {
            return Err(MeshError::RecursionLimit);
        }
        delta.max_recursion_depth = delta.max_recursion_depth.max(depth);

        // Promote: bisect coarse neighbours until e is base for all sharers.
        loop {
            let offender = self.tris_of_edge(e).find(|&t| self.tri_base_edge(t) != e);
            match offender {
                None => break,
                Some(t) => {
                    let neighbour_base = self.tri_base_edge(t);
                    self.refine_edge(neighbour_base, delta, depth + 1, limit)?;
                }
            }
        }

        let sharers: Vec<TriId> = self.tris_of_edge(e).collect();
        debug_assert!(
            !sharers.is_empty(),
            "edge with no triangles cannot be refined"
        );

        // Midpoint node and the two half-edges, shared by all sharers.
        let (na, nb) = (self.edges[e.0].a, self.edges[e.0].b);
        let boundary = self.edges[e.0].boundary;
        let mid = NodeId(self.nodes.len());
        self.nodes
            .push(Point::midpoint(self.nodes[na.0], self.nodes[nb.0]));
        self.node_boundary.push(boundary.is_some());
        self.node_tris.push(Vec::new());
        delta.new_nodes.push((mid, na, nb));

        let half_a = self.push_edge(na, mid, boundary);
        let half_b = self.push_edge(mid, nb, boundary);
        delta.new_edges.push(half_a);
        delta.new_edges.push(half_b);

        self.edges[e.0].alive = false;
        delta.split_edges.push(e);

        for t in sharers {
            let [p, q, r] = self.tri_nodes(t);
            let [_, e_qr, e_rp] = self.tri_edges(t);
            let level = self.tri_level(t);
            // orient the halves to this triangle's (p, q) order
            let (half_p, half_q) = if p == na {
                (half_a, half_b)
            } else {
                (half_b, half_a)
            };
            debug_assert!((p == na && q == nb) || (p == nb && q == na));
            let connector = self.push_edge(r, mid, None);
            delta.new_edges.push(connector);
            // children: the old non-base edges become the new base edges,
            // the midpoint is the newest node of both children
            self.detach_tri(t);
            let c1 = self.push_tri([r, p, mid], [e_rp, half_p, connector], level + 1);
            let c2 = self.push_tri([q, r, mid], [e_qr, connector, half_q], level + 1);
            self.tris[t.0].children = Some([c1, c2]);
            delta.new_tris.push(c1);
            delta.new_tris.push(c2);
            delta.split_tris.push((t, [c1, c2]));
        }
        Ok(())
    }

    // ---- point location ----

    /// Signed sub-areas of `p` in triangle `t`, scaled tolerance included:
    /// `p` is inside iff every sub-area is at least `-tol`.
    fn sub_areas(&self, t: TriId, p: Point) -> ([f64; 3], f64) {
        let [a, b, c] = self.tri_coords(t);
        let total = signed_area2(a, b, c);
        (
            [
                signed_area2(p, b, c),
                signed_area2(a, p, c),
                signed_area2(a, b, p),
            ],
            total,
        )
    }

    pub fn tri_contains(&self, t: TriId, p: Point) -> bool {
        let (w, total) = self.sub_areas(t, p);
        let tol = GEOM_REL_TOL * total;
        w.iter().all(|&wi| wi >= -tol)
    }

    /// Barycentric coordinates of `p` in `t`.
    pub fn tri_barycentric(&self, t: TriId, p: Point) -> [f64; 3] {
        let [a, b, c] = self.tri_coords(t);
        barycentric(p, a, b, c)
    }

    /// Walk from `hint` towards `p` across shared edges; falls back to a
    /// linear scan if the walk stalls (non-convex domains, stale hints).
    /// Returns any alive triangle containing `p`.
    pub fn find_triangle(&self, p: Point, hint: Option<TriId>) -> Option<TriId> {
        let start = hint
            .filter(|&t| t.0 < self.tris.len() && self.tri_alive(t))
            .or_else(|| self.alive_tris().next())?;
        let mut cur = start;
        let mut steps = 0usize;
        let cap = 2 * self.alive_tris + 16;
        loop {
            let (w, total) = self.sub_areas(cur, p);
            let tol = GEOM_REL_TOL * total;
            if w.iter().all(|&wi| wi >= -tol) {
                return Some(cur);
            }
            steps += 1;
            if steps > cap {
                break;
            }
            // cross the edge opposite the most negative weight; try the
            // second-most negative if there is no neighbour on that side
            let mut order = [0usize, 1, 2];
            order.sort_by(|&i, &j| w[i].partial_cmp(&w[j]).unwrap());
            let mut moved = false;
            for &i in order.iter().take(2) {
                if w[i] >= -tol {
                    break;
                }
                let edge = self.tri_edges(cur)[(i + 1) % 3];
                if let Some(next) = self.tris_of_edge(edge).find(|&t| t != cur) {
                    cur = next;
                    moved = true;
                    break;
                }
            }
            if !moved {
                break;
            }
        }
        self.alive_tris().find(|&t| self.tri_contains(t, p))
    }

    /// Containing triangle with the deterministic tie rule: points on shared
    /// edges or vertices go to the incident triangle with the smallest id.
    pub fn find_triangle_min_id(&self, p: Point, hint: Option<TriId>) -> Option<TriId> {
        let t = self.find_triangle(p, hint)?;
        // candidates sharing a node with t cover every triangle that can
        // also contain p (only possible on shared edges/vertices)
        let mut best = t;
        for &v in self.tri_nodes(t).iter() {
            for &cand in self.tris_at_node(v) {
                if cand < best && self.tri_contains(cand, p) {
                    best = cand;
                }
            }
        }
        Some(best)
    }

    // ---- export & checking ----

    /// JSON export with fixed field order: nodes, triangles, levels, boundary.
    pub fn export_json(&self) -> String {
        #[derive(Serialize)]
        struct Export {
            nodes: Vec<[f64; 2]>,
            triangles: Vec<[usize; 3]>,
            levels: Vec<u32>,
            boundary: Vec<(usize, usize, BoundaryKind)>,
        }
        let nodes = self.nodes.iter().map(|p| [p.x, p.y]).collect();
        let mut triangles = Vec::with_capacity(self.alive_tris);
        let mut levels = Vec::with_capacity(self.alive_tris);
        for t in self.alive_tris() {
            let [a, b, c] = self.tri_nodes(t);
            triangles.push([a.0, b.0, c.0]);
            levels.push(self.tri_level(t));
        }
        let boundary = self
            .alive_edges()
            .filter_map(|e| {
                let ed = &self.edges[e.0];
                ed.boundary.map(|k| (ed.a.0, ed.b.0, k))
            })
            .collect();
        serde_json::to_string(&Export {
            nodes,
            triangles,
            levels,
            boundary,
        })
        .expect("mesh export cannot fail")
    }

    /// Exhaustive conformity check, meant for tests: every alive edge is
    /// shared by exactly two triangles or is a boundary edge with one; no
    /// node lies strictly inside an alive edge; areas are positive;
    /// interface base-edges are exactly the edges with mixed levels.
    pub fn check_conforming(&self) -> Result<(), String> {
        for e in self.alive_edges() {
            let cnt = self.tris_of_edge(e).count();
            let is_boundary = self.edges[e.0].boundary.is_some();
            match (cnt, is_boundary) {
                (2, false) | (1, true) => {}
                _ => {
                    return Err(format!(
                        "edge {:?}: {} incident triangles, boundary = {}",
                        e, cnt, is_boundary
                    ))
                }
            }
            let levels: Vec<u32> = self.tris_of_edge(e).map(|t| self.tri_level(t)).collect();
            let mixed = levels.len() == 2 && levels[0] != levels[1];
            let is_interface = self.edge_kind(e) == EdgeKind::InterfaceBase;
            if mixed != is_interface {
                return Err(format!(
                    "edge {:?}: interface flag {} but levels {:?}",
                    e, is_interface, levels
                ));
            }
        }
        for t in self.alive_tris() {
            if self.tri_area(t) <= 0.0 {
                return Err(format!("triangle {:?} has non-positive area", t));
            }
            for e in self.tri_edges(t) {
                if !self.edges[e.0].alive {
                    return Err(format!("triangle {:?} uses dead edge {:?}", t, e));
                }
            }
            let [a, b, c] = self.tri_nodes(t);
            let base = self.edge(self.tri_base_edge(t));
            let base_pair = if base.a < base.b {
                (base.a, base.b)
            } else {
                (base.b, base.a)
            };
            let expect = if a < b { (a, b) } else { (b, a) };
            if base_pair != expect {
                return Err(format!(
                    "triangle {:?}: base edge does not oppose the newest node",
                    t
                ));
            }
            let _ = c;
        }
        // hanging nodes: a node strictly interior to an alive edge
        for e in self.alive_edges() {
            let ed = &self.edges[e.0];
            let (pa, pb) = (self.nodes[ed.a.0], self.nodes[ed.b.0]);
            let len = pa.dist(pb);
            for (i, p) in self.nodes.iter().enumerate() {
                if i == ed.a.0 || i == ed.b.0 {
                    continue;
                }
                let cross = signed_area2(pa, pb, *p).abs();
                if cross < 1e-12 * self.domain.scale() * len {
                    let d = pa.dist(*p) + pb.dist(*p);
                    if (d - len).abs() < 1e-10 * len {
                        return Err(format!("node {} hangs inside edge {:?}", i, e));
                    }
                }
            }
        }
        Ok(())
    }
}

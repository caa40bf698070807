//! Scattered data: file ingestion, synthetic generation, scaling into the
//! finite element domain, point location and per-triangle bucketing.

use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::geometry::{Point, Rect};
use crate::mesh::{DomainSpec, RefinementDelta, TriId, TriMesh};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: expected at least three numeric fields, got {content:?}")]
    Malformed {
        path: String,
        line: usize,
        content: String,
    },
    #[error("{path}: file contains no data points")]
    Empty { path: String },
}

/// Predictor points and responses, in domain units after scaling.
#[derive(Clone, Debug, Default)]
pub struct ScatteredData {
    pub points: Vec<Point>,
    pub responses: Vec<f64>,
}

impl ScatteredData {
    pub fn n(&self) -> usize {
        self.points.len()
    }

    pub fn push(&mut self, p: Point, y: f64) {
        self.points.push(p);
        self.responses.push(y);
    }

    pub fn bbox(&self) -> Option<Rect> {
        let first = self.points.first()?;
        let mut r = Rect::new(first.x, first.x, first.y, first.y);
        for p in &self.points {
            r.x_lo = r.x_lo.min(p.x);
            r.x_hi = r.x_hi.max(p.x);
            r.y_lo = r.y_lo.min(p.y);
            r.y_hi = r.y_hi.max(p.y);
        }
        Some(r)
    }

    pub fn y_max(&self) -> f64 {
        self.responses
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// The similarity transform applied on ingestion: `x' = offset + scale * x`.
/// Aspect-preserving, so one scale factor serves both axes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScaleTransform {
    pub scale: f64,
    pub offset: Point,
}

impl ScaleTransform {
    pub fn identity() -> Self {
        ScaleTransform {
            scale: 1.0,
            offset: Point::new(0.0, 0.0),
        }
    }

    pub fn apply(&self, p: Point) -> Point {
        Point::new(
            self.offset.x + self.scale * p.x,
            self.offset.y + self.scale * p.y,
        )
    }

    pub fn invert(&self, p: Point) -> Point {
        Point::new(
            (p.x - self.offset.x) / self.scale,
            (p.y - self.offset.y) / self.scale,
        )
    }
}

/// Scale a point cloud so its bounding box fits centred inside `target`,
/// preserving aspect ratio. Responses are left untouched.
pub fn scale_into(data: &mut ScatteredData, target: Rect) -> ScaleTransform {
    let Some(bbox) = data.bbox() else {
        return ScaleTransform::identity();
    };
    let (bw, bh) = (bbox.width(), bbox.height());
    let scale = if bw <= 0.0 && bh <= 0.0 {
        1.0
    } else if bw <= 0.0 {
        target.height() / bh
    } else if bh <= 0.0 {
        target.width() / bw
    } else {
        (target.width() / bw).min(target.height() / bh)
    };
    let bc = bbox.center();
    let tc = target.center();
    let transform = ScaleTransform {
        scale,
        offset: Point::new(tc.x - scale * bc.x, tc.y - scale * bc.y),
    };
    for p in data.points.iter_mut() {
        *p = transform.apply(*p);
    }
    transform
}

/// Read whitespace-separated `x y z` records; `#` starts a comment, blank
/// lines are ignored. When `target` is given the cloud is scaled into it.
pub fn load_xyz(
    path: &Path,
    target: Option<Rect>,
) -> Result<(ScatteredData, ScaleTransform), DataError> {
    let pstr = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: pstr.clone(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut data = ScatteredData::default();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| DataError::Io {
            path: pstr.clone(),
            source,
        })?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let mut fields = body.split_whitespace();
        let mut next_num = || -> Option<f64> { fields.next().and_then(|f| f.parse().ok()) };
        match (next_num(), next_num(), next_num()) {
            (Some(x), Some(y), Some(z)) => data.push(Point::new(x, y), z),
            _ => {
                return Err(DataError::Malformed {
                    path: pstr,
                    line: lineno + 1,
                    content: body.to_string(),
                });
            }
        }
    }
    if data.n() == 0 {
        return Err(DataError::Empty { path: pstr });
    }
    let transform = match target {
        Some(t) => scale_into(&mut data, t),
        None => ScaleTransform::identity(),
    };
    Ok((data, transform))
}

pub fn write_xyz(path: &Path, data: &ScatteredData) -> std::io::Result<()> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (p, y) in data.points.iter().zip(&data.responses) {
        writeln!(out, "{} {} {}", p.x, p.y, y)?;
    }
    Ok(())
}

/// Gaussian response noise, mean zero.
#[derive(Clone, Copy, Debug)]
pub struct NoiseSpec {
    pub sigma: f64,
    pub seed: u64,
}

/// The classic two-dimensional test surface with three local maxima and
/// three local minima around the origin.
pub fn peaks(x1: f64, x2: f64) -> f64 {
    3.0 * (1.0 - x1).powi(2) * (-(x1 * x1) - (x2 + 1.0).powi(2)).exp()
        - 10.0 * (x1 / 5.0 - x1.powi(3) - x2.powi(5)) * (-x1 * x1 - x2 * x2).exp()
        - (1.0 / 3.0) * (-(x1 + 1.0).powi(2) - x2 * x2).exp()
}

/// `n` seeded uniform samples of the peaks surface in `region`, with
/// Gaussian noise added to the responses. A standard normal draw is consumed
/// per point even when `sigma` is zero, so noisy and noiseless data sets
/// with the same seed share the same sample positions.
pub fn gen_peaks(n: usize, region: Rect, noise: &NoiseSpec) -> ScatteredData {
    gen_surface(n, region, noise, peaks)
}

/// Same sampling scheme for an arbitrary test surface.
pub fn gen_surface(
    n: usize,
    region: Rect,
    noise: &NoiseSpec,
    f: impl Fn(f64, f64) -> f64,
) -> ScatteredData {
    assert!(noise.sigma >= 0.0, "noise level must be nonnegative");
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let mut data = ScatteredData::default();
    for _ in 0..n {
        let x = rng.random_range(region.x_lo..=region.x_hi);
        let y = rng.random_range(region.y_lo..=region.y_hi);
        let eps: f64 = StandardNormal.sample(&mut rng);
        data.push(Point::new(x, y), f(x, y) + noise.sigma * eps);
    }
    data
}

/// Per-triangle index buckets. Every in-domain point sits in exactly one
/// bucket; points on shared edges or vertices are assigned once, to the
/// incident triangle with the smallest id.
#[derive(Clone, Debug)]
pub struct DataBuckets {
    tri_points: Vec<Vec<usize>>,
    pub out_of_domain: Vec<usize>,
    located: usize,
}

impl DataBuckets {
    pub fn points_in(&self, t: TriId) -> &[usize] {
        self.tri_points.get(t.0).map_or(&[], |v| v.as_slice())
    }

    /// Number of points inside the grid.
    pub fn located(&self) -> usize {
        self.located
    }

    /// Data indices inside the triangles sharing edge `e`, each exactly once.
    pub fn points_on_edge<'a>(
        &'a self,
        mesh: &'a TriMesh,
        e: crate::mesh::EdgeId,
    ) -> impl Iterator<Item = usize> + 'a {
        mesh.tris_of_edge(e)
            .flat_map(move |t| self.points_in(t).iter().copied())
    }

    /// CSV report of points that fell outside the domain.
    pub fn out_of_domain_csv(&self, data: &ScatteredData) -> String {
        let mut s = String::from("index,x,y\n");
        for &i in &self.out_of_domain {
            s.push_str(&format!(
                "{},{},{}\n",
                i, data.points[i].x, data.points[i].y
            ));
        }
        s
    }

    /// Move the points of split triangles into their children. Points stay
    /// within the descendants of their former triangle; ties on the new
    /// interior edge go to the smaller child id.
    pub fn rebucket(&mut self, mesh: &TriMesh, data: &ScatteredData, delta: &RefinementDelta) {
        if mesh.tri_count() > self.tri_points.len() {
            self.tri_points.resize(mesh.tri_count(), Vec::new());
        }
        for &(parent, children) in &delta.split_tris {
            let moved = std::mem::take(&mut self.tri_points[parent.0]);
            for idx in moved {
                let p = data.points[idx];
                // children partition the parent: pick the one whose worst
                // barycentric coordinate is best, ties to the first (smaller id)
                let mut best = children[0];
                let mut best_score = f64::NEG_INFINITY;
                for &c in &children {
                    let score = mesh
                        .tri_barycentric(c, p)
                        .into_iter()
                        .fold(f64::INFINITY, f64::min);
                    if score > best_score + 1e-14 {
                        best = c;
                        best_score = score;
                    }
                }
                self.tri_points[best.0].push(idx);
            }
        }
    }
}

/// Assign every data point to a containing triangle by walking the grid
/// from the previous hit; out-of-domain points are reported, not fitted.
pub fn locate(mesh: &TriMesh, data: &ScatteredData) -> DataBuckets {
    let mut buckets = DataBuckets {
        tri_points: vec![Vec::new(); mesh.tri_count()],
        out_of_domain: Vec::new(),
        located: 0,
    };
    let mut hint: Option<TriId> = None;
    for (i, &p) in data.points.iter().enumerate() {
        if !mesh.domain().contains(p) {
            buckets.out_of_domain.push(i);
            continue;
        }
        match mesh.find_triangle_min_id(p, hint) {
            Some(t) => {
                buckets.tri_points[t.0].push(i);
                buckets.located += 1;
                hint = Some(t);
            }
            None => buckets.out_of_domain.push(i),
        }
    }
    buckets
}

/// Approximate the largest distance from any domain point to the data, by
/// probing a uniform grid of spacing `resolution`. Diagnostic only.
pub fn max_data_gap(data: &ScatteredData, domain: &DomainSpec, resolution: f64) -> f64 {
    if data.n() == 0 {
        return f64::INFINITY;
    }
    let bins = PointBins::build(&data.points, resolution.max(1e-12));
    let bbox = domain.bbox;
    let nx = (bbox.width() / resolution).ceil() as usize;
    let ny = (bbox.height() / resolution).ceil() as usize;
    let mut worst: f64 = 0.0;
    for j in 0..=ny {
        for i in 0..=nx {
            let p = Point::new(
                (bbox.x_lo + i as f64 * resolution).min(bbox.x_hi),
                (bbox.y_lo + j as f64 * resolution).min(bbox.y_hi),
            );
            if !domain.contains(p) {
                continue;
            }
            if let Some((_, d)) = bins.nearest(p) {
                worst = worst.max(d);
            }
        }
    }
    worst
}

/// Uniform-cell spatial index over a fixed point set; nearest-neighbour and
/// radius queries by ring search.
pub(crate) struct PointBins<'a> {
    points: &'a [Point],
    cell: f64,
    origin: Point,
    grid: HashMap<(i64, i64), Vec<usize>>,
}

impl<'a> PointBins<'a> {
    pub fn build(points: &'a [Point], cell: f64) -> Self {
        let origin = points.first().copied().unwrap_or(Point::new(0.0, 0.0));
        let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            grid.entry(Self::key(origin, cell, *p)).or_default().push(i);
        }
        PointBins {
            points,
            cell,
            origin,
            grid,
        }
    }

    fn key(origin: Point, cell: f64, p: Point) -> (i64, i64) {
        (
            ((p.x - origin.x) / cell).floor() as i64,
            ((p.y - origin.y) / cell).floor() as i64,
        )
    }

    /// Index and distance of the nearest point to `p`.
    pub fn nearest(&self, p: Point) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let (cx, cy) = Self::key(self.origin, self.cell, p);
        let mut best: Option<(usize, f64)> = None;
        let max_ring = 8 + 2 * (self.grid.len() as f64).sqrt() as i64;
        for ring in 0i64.. {
            for dx in -ring..=ring {
                for dy in -ring..=ring {
                    if dx.abs() != ring && dy.abs() != ring {
                        continue;
                    }
                    if let Some(cell_pts) = self.grid.get(&(cx + dx, cy + dy)) {
                        for &i in cell_pts {
                            let d = self.points[i].dist(p);
                            if best.map_or(true, |(_, bd)| d < bd) {
                                best = Some((i, d));
                            }
                        }
                    }
                }
            }
            // once a hit is at most `ring` cells away, farther rings cannot win
            if let Some((_, d)) = best {
                if d <= ring as f64 * self.cell {
                    return best;
                }
            }
            if ring > max_ring {
                break;
            }
        }
        // degenerate spread; linear scan settles it
        let mut lin: Option<(usize, f64)> = best;
        for (i, q) in self.points.iter().enumerate() {
            let d = q.dist(p);
            if lin.map_or(true, |(_, bd)| d < bd) {
                lin = Some((i, d));
            }
        }
        lin
    }

    /// Number of points within distance `radius` of `p`.
    pub fn count_within(&self, p: Point, radius: f64) -> usize {
        let r_cells = (radius / self.cell).ceil() as i64 + 1;
        let (cx, cy) = Self::key(self.origin, self.cell, p);
        let mut count = 0;
        for dx in -r_cells..=r_cells {
            for dy in -r_cells..=r_cells {
                if let Some(cell_pts) = self.grid.get(&(cx + dx, cy + dy)) {
                    count += cell_pts
                        .iter()
                        .filter(|&&i| self.points[i].dist(p) < radius)
                        .count();
                }
            }
        }
        count
    }

    /// Indices of points within distance `radius` of `p`.
    pub fn within(&self, p: Point, radius: f64) -> Vec<usize> {
        let r_cells = (radius / self.cell).ceil() as i64 + 1;
        let (cx, cy) = Self::key(self.origin, self.cell, p);
        let mut out = Vec::new();
        for dx in -r_cells..=r_cells {
            for dy in -r_cells..=r_cells {
                if let Some(cell_pts) = self.grid.get(&(cx + dx, cy + dy)) {
                    out.extend(
                        cell_pts
                            .iter()
                            .copied()
                            .filter(|&i| self.points[i].dist(p) < radius),
                    );
                }
            }
        }
        out
    }
}

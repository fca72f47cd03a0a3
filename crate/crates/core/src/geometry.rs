//! Angular sectors of the unit disk, their reflections, and triangulations.
//!
//! A sector `A_m` is symmetric about the positive `x₂`-axis with half-angle
//! `π/2^m`, so `2^m` copies tile the disk. Sector meshes are built ring by
//! ring and are mirror-symmetric about the axis bit for bit, which lets the
//! disk mesh be assembled from exact images of one sector mesh.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Coincidence tolerance used when merging reflected nodes.
pub const MERGE_TOL: f64 = 1e-10;

const MIN_TRIANGLES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Sector {
    pub m: u32,
    pub half_angle: f64,
    pub inradius: f64,
    pub incenter: Point,
    pub axis: Point,
}

impl Sector {
    pub fn new(m: u32) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidInput("sector index m must be at least 1".into()));
        }
        if m > 30 {
            return Err(Error::InvalidInput(format!("sector index m = {m} is too large")));
        }
        let half_angle = PI / f64::from(1u32 << m);
        let s = half_angle.sin();
        let inradius = s / (1.0 + s);
        Ok(Self {
            m,
            half_angle,
            inradius,
            incenter: [0.0, 1.0 - inradius],
            axis: [0.0, 1.0],
        })
    }

    /// Open-set membership: `cos β |x₁| < sin β x₂` and `|x| < 1`.
    pub fn contains(&self, x: Point) -> bool {
        let (s, c) = self.half_angle.sin_cos();
        c * x[0].abs() < s * x[1] && x[0].hypot(x[1]) < 1.0
    }

    /// Area of the sector (opening `2β`, radius 1).
    pub fn area(&self) -> f64 {
        self.half_angle
    }

    /// Number of copies of the sector that tile the disk.
    pub fn copies(&self) -> usize {
        1usize << self.m
    }

    /// Unit direction of the straight side on the `x₁ > 0` side.
    pub fn side_direction(&self) -> Point {
        snap([self.half_angle.sin(), self.half_angle.cos()])
    }

    /// Distance from `x` to the boundary `∂A_m`, for points in the closed sector.
    pub fn boundary_distance(&self, x: Point) -> f64 {
        let r = x[0].hypot(x[1]);
        let d = self.side_direction();
        let right = Line { direction: d };
        let left = Line {
            direction: [-d[0], d[1]],
        };
        (1.0 - r).abs().min(right.distance(x)).min(left.distance(x))
    }
}

// zero out round-off such as cos(π/2) = 6e-17
fn snap(p: Point) -> Point {
    let clean = |v: f64| if v.abs() < 1e-15 { 0.0 } else { v };
    [clean(p[0]), clean(p[1])]
}

/// A line through the origin, given by a unit direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Line {
    pub direction: Point,
}

impl Line {
    pub fn from_angle(angle: f64) -> Self {
        Self {
            direction: snap([angle.cos(), angle.sin()]),
        }
    }

    pub fn distance(&self, x: Point) -> f64 {
        (x[0] * self.direction[1] - x[1] * self.direction[0]).abs()
    }
}

/// Householder reflection of `x` across `line`.
pub fn reflect_point(x: Point, line: &Line) -> Point {
    let d = line.direction;
    let proj = x[0] * d[0] + x[1] * d[1];
    [2.0 * proj * d[0] - x[0], 2.0 * proj * d[1] - x[1]]
}

/// Element of the dihedral group of the `2^m`-sector tiling:
/// optional reflection across the `x₂`-axis followed by a rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DihedralElement {
    pub rotation: f64,
    pub reflect: bool,
}

impl DihedralElement {
    /// The element with determinant `(−1)^k` mapping `A_m` onto the `k`-th sector.
    pub fn for_copy(k: usize, half_angle: f64) -> Self {
        Self {
            rotation: 2.0 * half_angle * k as f64,
            reflect: k % 2 == 1,
        }
    }

    pub fn determinant(&self) -> i32 {
        if self.reflect {
            -1
        } else {
            1
        }
    }

    pub fn apply(&self, x: Point) -> Point {
        let p = if self.reflect { [-x[0], x[1]] } else { x };
        if self.rotation == 0.0 {
            return p;
        }
        let (s, c) = self.rotation.sin_cos();
        [c * p[0] - s * p[1], s * p[0] + c * p[1]]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TriMesh {
    pub nodes: Vec<Point>,
    /// Counterclockwise node triples.
    pub triangles: Vec<[usize; 3]>,
    /// Dirichlet flag per node.
    pub boundary: Vec<bool>,
    /// Sector index of the generating copy (all zero on sector meshes).
    pub parity: Vec<u32>,
    pub h: f64,
}

impl TriMesh {
    pub fn signed_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        let (p, q, r) = (self.nodes[a], self.nodes[b], self.nodes[c]);
        0.5 * ((q[0] - p[0]) * (r[1] - p[1]) - (r[0] - p[0]) * (q[1] - p[1]))
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.signed_area(t)).sum()
    }

    pub fn free_count(&self) -> usize {
        self.boundary.iter().filter(|b| !**b).count()
    }

    /// Checks indices and orientation; the first bad triangle is reported.
    pub fn validate(&self) -> Result<()> {
        if self.boundary.len() != self.nodes.len() || self.parity.len() != self.triangles.len() {
            return Err(Error::Mesh("per-node or per-triangle arrays have inconsistent lengths".into()));
        }
        for (t, tri) in self.triangles.iter().enumerate() {
            if tri.iter().any(|&i| i >= self.nodes.len()) {
                return Err(Error::Mesh(format!("triangle {t} references a missing node")));
            }
            let area = self.signed_area(t);
            if !(area > 0.0) {
                return Err(Error::DegenerateTriangle { triangle: t, area });
            }
        }
        Ok(())
    }

    /// Sorted undirected edges with the number of triangles using each.
    pub fn edge_counts(&self) -> Vec<((usize, usize), usize)> {
        let mut edges: Vec<(usize, usize)> = self
            .triangles
            .iter()
            .flat_map(|&[a, b, c]| [(a, b), (b, c), (c, a)])
            .map(|(u, v)| (u.min(v), u.max(v)))
            .collect();
        edges.sort_unstable();
        let mut out: Vec<((usize, usize), usize)> = Vec::new();
        for e in edges {
            match out.last_mut() {
                Some((last, n)) if *last == e => *n += 1,
                _ => out.push((e, 1)),
            }
        }
        out
    }

    /// Maximum edge length over triangles touching the disk `B(center, radius)`.
    pub fn local_max_edge(&self, center: Point, radius: f64) -> Option<f64> {
        let dist = |p: Point| (p[0] - center[0]).hypot(p[1] - center[1]);
        self.triangles
            .iter()
            .filter(|tri| {
                let c = centroid(self, tri);
                let reach = tri.iter().map(|&i| dist(self.nodes[i])).fold(0.0, f64::max);
                dist(c) <= radius || reach <= radius || tri.iter().any(|&i| dist(self.nodes[i]) <= radius)
            })
            .map(|&[a, b, c]| {
                let len = |i: usize, j: usize| {
                    let (p, q) = (self.nodes[i], self.nodes[j]);
                    (p[0] - q[0]).hypot(p[1] - q[1])
                };
                len(a, b).max(len(b, c)).max(len(c, a))
            })
            .reduce(f64::max)
    }
}

fn centroid(mesh: &TriMesh, tri: &[usize; 3]) -> Point {
    let mut c = [0.0; 2];
    for &i in tri {
        c[0] += mesh.nodes[i][0] / 3.0;
        c[1] += mesh.nodes[i][1] / 3.0;
    }
    c
}

/// Structured ring triangulation of `A_m`.
///
/// Rings sit at radii `(i/N)^grading`, so `grading > 1` clusters nodes toward
/// the corner at the origin. Each ring carries nodes at angles `β·j/n_i`,
/// `j = −n_i..=n_i`; the left half is the exact mirror image of the right
/// half, and the side and arc nodes are flagged Dirichlet.
pub fn mesh_sector(sector: &Sector, h: f64, grading: f64) -> Result<TriMesh> {
    if !(h > 0.0 && h < 1.0) {
        return Err(Error::InvalidInput(format!("mesh size h must lie in (0, 1), got {h}")));
    }
    if !(grading >= 1.0 && grading.is_finite()) {
        return Err(Error::InvalidInput(format!("grading must be >= 1, got {grading}")));
    }
    let beta = sector.half_angle;
    let rings = ((grading / h).ceil() as usize).max(2);
    let radius = |i: usize| (i as f64 / rings as f64).powf(grading);

    // half-ring segment counts, nondecreasing outward
    let mut counts = vec![0usize; rings + 1];
    for i in 1..=rings {
        let spacing = 0.5 * (radius(i + 1) - radius(i - 1));
        let target = (beta * radius(i) / spacing).round().max(1.0) as usize;
        counts[i] = target.max(counts[i - 1]);
    }

    let mut nodes: Vec<Point> = vec![[0.0, 0.0]];
    let mut boundary = vec![true];
    let mut offsets = vec![0usize; rings + 1];
    for i in 1..=rings {
        offsets[i] = nodes.len();
        let n = counts[i] as i64;
        let r = if i == rings { 1.0 } else { radius(i) };
        for j in -n..=n {
            let right = if j.unsigned_abs() as usize == counts[i] {
                let d = sector.side_direction();
                [r * d[0], r * d[1]]
            } else {
                let theta = beta * j.unsigned_abs() as f64 / n as f64;
                [r * theta.sin(), r * theta.cos()]
            };
            nodes.push(if j < 0 { [-right[0], right[1]] } else { right });
            boundary.push(i == rings || j.unsigned_abs() as usize == counts[i]);
        }
    }
    let index = |ring: usize, j: i64| -> usize {
        if ring == 0 {
            0
        } else {
            (offsets[ring] as i64 + j + counts[ring] as i64) as usize
        }
    };

    // right half by greedy angular merging of consecutive rings
    let mut right: Vec<[(usize, i64); 3]> = Vec::new();
    for i in 0..rings {
        let (n_in, n_out) = (counts[i], counts[i + 1]);
        let (mut p, mut q) = (0usize, 0usize);
        while p < n_in || q < n_out {
            let advance_inner = if p == n_in {
                false
            } else if q == n_out {
                true
            } else {
                // (p+1)/n_in <= (q+1)/n_out, exactly
                (p + 1) * n_out <= (q + 1) * n_in
            };
            if advance_inner {
                right.push([(i, p as i64), (i + 1, q as i64), (i, p as i64 + 1)]);
                p += 1;
            } else {
                right.push([(i, p as i64), (i + 1, q as i64), (i + 1, q as i64 + 1)]);
                q += 1;
            }
        }
    }

    let mut mesh = TriMesh {
        nodes,
        triangles: Vec::with_capacity(2 * right.len()),
        boundary,
        parity: Vec::new(),
        h,
    };
    for tri in &right {
        let ids = tri.map(|(ring, j)| index(ring, j));
        let mirrored = tri.map(|(ring, j)| index(ring, -j));
        push_ccw(&mut mesh, ids);
        push_ccw(&mut mesh, mirrored);
    }
    mesh.parity = vec![0; mesh.triangles.len()];
    if mesh.triangles.len() < MIN_TRIANGLES {
        return Err(Error::Mesh(format!(
            "h = {h} resolves the sector with only {} triangles (minimum {MIN_TRIANGLES})",
            mesh.triangles.len()
        )));
    }
    mesh.validate()?;
    Ok(mesh)
}

/// Local refinement of a mirror-symmetric sector mesh toward `focus` on the
/// axis: triangles are bisected until their longest edge is at most `h_min`
/// within distance `core` of the focus, growing by `rate` per unit distance
/// beyond it.
///
/// The right half is refined by conforming longest-edge bisection and then
/// mirrored, so the result stays mirror-consistent. Midpoints of arc edges are
/// pushed back onto the unit circle.
pub fn refine_toward(mesh: &TriMesh, focus: Point, core: f64, h_min: f64, rate: f64) -> Result<TriMesh> {
    if focus[0] != 0.0 || !focus[1].is_finite() {
        return Err(Error::InvalidInput(format!(
            "refinement focus must lie on the symmetry axis, got ({}, {})",
            focus[0], focus[1]
        )));
    }
    if !(h_min > 0.0 && rate > 0.0 && rate.is_finite() && core >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "refinement needs core >= 0, h_min > 0 and rate > 0, got {core}, {h_min}, {rate}"
        )));
    }
    if h_min < 1e3 * MERGE_TOL {
        return Err(Error::InvalidInput(format!(
            "h_min = {h_min:e} is below the node merge resolution"
        )));
    }

    // right half, axis nodes included
    let mut index = vec![usize::MAX; mesh.nodes.len()];
    let mut nodes = Vec::new();
    let mut boundary = Vec::new();
    for (i, &x) in mesh.nodes.iter().enumerate() {
        if x[0] >= 0.0 {
            index[i] = nodes.len();
            nodes.push(x);
            boundary.push(mesh.boundary[i]);
        }
    }
    let mut tris = Vec::new();
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let right = tri.iter().all(|&i| mesh.nodes[i][0] >= 0.0);
        let left = tri.iter().all(|&i| mesh.nodes[i][0] <= 0.0);
        if right && !left {
            tris.push(tri.map(|i| index[i]));
        } else if !left {
            return Err(Error::Mesh(format!("triangle {t} straddles the symmetry axis")));
        }
    }

    let len = |nodes: &[Point], a: usize, b: usize| (nodes[a][0] - nodes[b][0]).hypot(nodes[a][1] - nodes[b][1]);
    let key = |a: usize, b: usize| (a.min(b), a.max(b));
    // longest edge, ties broken by node indices for determinism
    let longest = |nodes: &[Point], t: &[usize; 3]| -> (usize, usize) {
        let edges = [key(t[0], t[1]), key(t[1], t[2]), key(t[2], t[0])];
        let mut best = edges[0];
        for &e in &edges[1..] {
            let (l, lb) = (len(nodes, e.0, e.1), len(nodes, best.0, best.1));
            if l > lb || (l == lb && e < best) {
                best = e;
            }
        }
        best
    };

    for _ in 0..64 {
        let mut marked: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for t in &tris {
            let e = longest(&nodes, t);
            let l = len(&nodes, e.0, e.1);
            let c = [
                (nodes[t[0]][0] + nodes[t[1]][0] + nodes[t[2]][0]) / 3.0,
                (nodes[t[0]][1] + nodes[t[1]][1] + nodes[t[2]][1]) / 3.0,
            ];
            let dist = ((c[0] - focus[0]).hypot(c[1] - focus[1]) - l).max(0.0);
            if l > h_min + rate * (dist - core).max(0.0) {
                marked.insert(e, usize::MAX);
            }
        }
        if marked.is_empty() {
            break;
        }
        // closure: a triangle with any split edge also splits its longest edge
        loop {
            let mut grew = false;
            for t in &tris {
                let edges = [key(t[0], t[1]), key(t[1], t[2]), key(t[2], t[0])];
                if edges.iter().any(|e| marked.contains_key(e)) {
                    let e = longest(&nodes, t);
                    if !marked.contains_key(&e) {
                        marked.insert(e, usize::MAX);
                        grew = true;
                    }
                }
            }
            if !grew {
                break;
            }
        }

        let mut uses: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for t in &tris {
            for e in [key(t[0], t[1]), key(t[1], t[2]), key(t[2], t[0])] {
                *uses.entry(e).or_default() += 1;
            }
        }
        for (&(a, b), mid) in marked.iter_mut() {
            let (p, q) = (nodes[a], nodes[b]);
            let mut x = [0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])];
            let on_axis = p[0] == 0.0 && q[0] == 0.0;
            let outer = uses[&(a, b)] == 1 && !on_axis;
            let on_arc = |y: Point| (y[0].hypot(y[1]) - 1.0).abs() < MERGE_TOL;
            if outer && on_arc(p) && on_arc(q) {
                let r = x[0].hypot(x[1]);
                x = [x[0] / r, x[1] / r];
            }
            *mid = nodes.len();
            nodes.push(x);
            boundary.push(outer && boundary[a] && boundary[b]);
        }

        let mut next = Vec::with_capacity(2 * tris.len());
        for t in &tris {
            split_marked(&nodes, *t, &marked, &mut next);
        }
        tris = next;
    }

    // mirror the refined half
    let mut full_index = vec![0usize; nodes.len()];
    let mut all_nodes = nodes.clone();
    let mut all_boundary = boundary.clone();
    for (i, &x) in nodes.iter().enumerate() {
        if x[0] == 0.0 {
            full_index[i] = i;
        } else {
            full_index[i] = all_nodes.len();
            all_nodes.push([-x[0], x[1]]);
            all_boundary.push(boundary[i]);
        }
    }
    let mut out = TriMesh {
        nodes: all_nodes,
        triangles: Vec::with_capacity(2 * tris.len()),
        boundary: all_boundary,
        parity: Vec::new(),
        h: mesh.h,
    };
    for t in &tris {
        out.triangles.push(*t);
        let [a, b, c] = t.map(|i| full_index[i]);
        out.triangles.push([a, c, b]);
    }
    out.parity = vec![0; out.triangles.len()];
    out.validate()?;
    Ok(out)
}

/// Bisects `t` along its marked edges (longest first), emitting the pieces.
fn split_marked(nodes: &[Point], t: [usize; 3], marked: &BTreeMap<(usize, usize), usize>, out: &mut Vec<[usize; 3]>) {
    let key = |a: usize, b: usize| (a.min(b), a.max(b));
    let len = |a: usize, b: usize| (nodes[a][0] - nodes[b][0]).hypot(nodes[a][1] - nodes[b][1]);
    // rotate so that the edge to split is (t[1], t[2]), opposite t[0]
    let mut best: Option<(usize, f64)> = None;
    for r in 0..3 {
        let (b, c) = (t[(r + 1) % 3], t[(r + 2) % 3]);
        if marked.contains_key(&key(b, c)) {
            let l = len(b, c);
            if best.map_or(true, |(_, bl)| l > bl) {
                best = Some((r, l));
            }
        }
    }
    let Some((r, _)) = best else {
        out.push(t);
        return;
    };
    let (a, b, c) = (t[r], t[(r + 1) % 3], t[(r + 2) % 3]);
    let m = marked[&key(b, c)];
    split_marked(nodes, [a, b, m], marked, out);
    split_marked(nodes, [a, m, c], marked, out);
}

fn push_ccw(mesh: &mut TriMesh, [a, b, c]: [usize; 3]) {
    let (p, q, r) = (mesh.nodes[a], mesh.nodes[b], mesh.nodes[c]);
    let area = (q[0] - p[0]) * (r[1] - p[1]) - (r[0] - p[0]) * (q[1] - p[1]);
    mesh.triangles.push(if area >= 0.0 { [a, b, c] } else { [a, c, b] });
}

/// Spatial hash for coincident-point lookups.
pub(crate) struct PointLocator {
    cell: f64,
    buckets: HashMap<(i64, i64), Vec<usize>>,
    points: Vec<Point>,
}

impl PointLocator {
    pub(crate) fn new() -> Self {
        Self {
            cell: 1e-6,
            buckets: HashMap::new(),
            points: Vec::new(),
        }
    }

    fn key(&self, x: Point) -> (i64, i64) {
        ((x[0] / self.cell).floor() as i64, (x[1] / self.cell).floor() as i64)
    }

    pub(crate) fn find(&self, x: Point) -> Option<usize> {
        let (kx, ky) = self.key(x);
        let mut best: Option<(usize, f64)> = None;
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(bucket) = self.buckets.get(&(kx + dx, ky + dy)) {
                    for &i in bucket {
                        let p = self.points[i];
                        let d = (p[0] - x[0]).hypot(p[1] - x[1]);
                        if d <= MERGE_TOL && best.map_or(true, |(_, bd)| d < bd) {
                            best = Some((i, d));
                        }
                    }
                }
            }
        }
        best.map(|(i, _)| i)
    }

    /// Returns the index of a coincident point, inserting `x` if there is none.
    pub(crate) fn insert(&mut self, x: Point) -> (usize, bool) {
        if let Some(i) = self.find(x) {
            return (i, false);
        }
        let i = self.points.len();
        self.points.push(x);
        let key = self.key(x);
        self.buckets.entry(key).or_default().push(i);
        (i, true)
    }
}

/// Disk mesh tiled by the `2^m` dihedral images of a sector mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct DiskMesh {
    pub mesh: TriMesh,
    pub m: u32,
    /// `copies[k][p]` is the disk node carrying sector node `p` in copy `k`.
    pub copies: Vec<Vec<usize>>,
    /// Nodes on the straight interfaces between copies (including the origin).
    pub interface: Vec<bool>,
    pub sector_triangles: usize,
}

impl DiskMesh {
    pub fn sign(&self, copy: usize) -> f64 {
        if copy % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// Node permutation induced by a point map, e.g. an interface reflection.
    pub fn node_map<G: Fn(Point) -> Point>(&self, g: G) -> Result<Vec<usize>> {
        node_permutation(&self.mesh, g)
    }
}

/// `map[i]` is the node at `g(x_i)`; errors if some image is not a node.
pub fn node_permutation<G: Fn(Point) -> Point>(mesh: &TriMesh, g: G) -> Result<Vec<usize>> {
    let mut locator = PointLocator::new();
    for &p in &mesh.nodes {
        locator.insert(p);
    }
    mesh.nodes
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            locator
                .find(g(p))
                .ok_or_else(|| Error::Mesh(format!("image of node {i} is not a mesh node")))
        })
        .collect()
}

/// The `2^{m−1}` distinct lines carrying the interfaces between sector copies.
pub fn interface_lines(m: u32) -> Vec<Line> {
    let beta = PI / f64::from(1u32 << m);
    let count = 1usize << (m - 1);
    // interfaces sit at angle β + 2βj from the x₂-axis
    (0..count)
        .map(|j| Line::from_angle(PI / 2.0 + beta + 2.0 * beta * j as f64))
        .collect()
}

pub fn build_disk_mesh(m: u32, sector_mesh: &TriMesh) -> Result<DiskMesh> {
    let sector = Sector::new(m)?;
    sector_mesh.validate()?;
    check_mirror_consistent(&sector, sector_mesh)?;

    let copies_n = sector.copies();
    let mut locator = PointLocator::new();
    let mut nodes: Vec<Point> = Vec::new();
    let mut boundary: Vec<bool> = Vec::new();
    let mut interface: Vec<bool> = Vec::new();
    let mut copies = Vec::with_capacity(copies_n);
    let mut triangles = Vec::with_capacity(copies_n * sector_mesh.triangles.len());
    let mut parity = Vec::with_capacity(triangles.capacity());

    for k in 0..copies_n {
        let g = DihedralElement::for_copy(k, sector.half_angle);
        let mut map = Vec::with_capacity(sector_mesh.nodes.len());
        for (p, &x) in sector_mesh.nodes.iter().enumerate() {
            let (id, fresh) = locator.insert(g.apply(x));
            if fresh {
                let on_arc = (x[0].hypot(x[1]) - 1.0).abs() < MERGE_TOL;
                nodes.push(g.apply(x));
                boundary.push(on_arc);
                interface.push(sector_mesh.boundary[p] && !on_arc);
            }
            map.push(id);
        }
        for &[a, b, c] in &sector_mesh.triangles {
            let tri = if g.determinant() < 0 {
                [map[a], map[c], map[b]]
            } else {
                [map[a], map[b], map[c]]
            };
            triangles.push(tri);
            parity.push(k as u32);
        }
        copies.push(map);
    }

    let mesh = TriMesh {
        nodes,
        triangles,
        boundary,
        parity,
        h: sector_mesh.h,
    };
    mesh.validate()?;
    Ok(DiskMesh {
        mesh,
        m,
        copies,
        interface,
        sector_triangles: sector_mesh.triangles.len(),
    })
}

fn check_mirror_consistent(sector: &Sector, mesh: &TriMesh) -> Result<()> {
    let d = sector.side_direction();
    let sides = [
        Line { direction: d },
        Line {
            direction: [-d[0], d[1]],
        },
    ];
    for (i, &x) in mesh.nodes.iter().enumerate() {
        let r = x[0].hypot(x[1]);
        if mesh.boundary[i] && (r - 1.0).abs() > MERGE_TOL && sides.iter().all(|l| l.distance(x) > MERGE_TOL) {
            return Err(Error::Mesh(format!(
                "boundary node {i} at ({}, {}) lies neither on the arc nor on a side",
                x[0], x[1]
            )));
        }
    }
    let mut locator = PointLocator::new();
    for &x in &mesh.nodes {
        locator.insert(x);
    }
    for (i, &x) in mesh.nodes.iter().enumerate() {
        match locator.find([-x[0], x[1]]) {
            Some(j) if mesh.boundary[j] == mesh.boundary[i] => {}
            _ => {
                return Err(Error::Mesh(format!(
                    "sector mesh is not mirror-consistent: node {i} has no mirror image"
                )))
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    // independent inradius: bisection on the tangency condition (1 − d) sin β = d
    fn tangency_inradius(beta: f64) -> f64 {
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if (1.0 - mid) * beta.sin() - mid > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn sector_constants() {
        let s1 = Sector::new(1).unwrap();
        assert!((s1.half_angle - PI / 2.0).abs() < 1e-15);
        assert!((s1.inradius - 0.5).abs() < 1e-15);
        assert!((s1.incenter[1] - 0.5).abs() < 1e-15 && s1.incenter[0] == 0.0);
        for m in 1..8 {
            let s = Sector::new(m).unwrap();
            assert!((s.inradius - tangency_inradius(s.half_angle)).abs() < 1e-14);
        }
        let s2 = Sector::new(2).unwrap();
        assert!((s2.inradius - 0.414_213_562_373_095).abs() < 1e-12);
        assert!(Sector::new(0).is_err());
    }

    #[test]
    fn membership() {
        let s1 = Sector::new(1).unwrap();
        assert!(s1.contains([0.0, 0.5]));
        assert!(!s1.contains([0.5, -0.1]));
        assert!(!s1.contains([0.0, 1.0]));
        let s3 = Sector::new(3).unwrap();
        assert!(s3.contains([0.0, 0.9]));
        assert!(!s3.contains([0.5, 0.5]));
    }

    #[test]
    fn inscribed_ball_is_inside_and_maximal() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for m in 1..=4 {
            let s = Sector::new(m).unwrap();
            for _ in 0..10_000 {
                let r = s.inradius * rng.gen::<f64>().sqrt() * (1.0 - 1e-12);
                let t = rng.gen::<f64>() * 2.0 * PI;
                let x = [s.incenter[0] + r * t.cos(), s.incenter[1] + r * t.sin()];
                assert!(s.contains(x), "m={m}: {x:?}");
            }
            // a slightly larger ball leaks out wherever it sits on the axis
            let big = s.inradius * (1.0 + 1e-3);
            for k in 0..=400 {
                let c = [0.0, big + (1.0 - 2.0 * big) * k as f64 / 400.0];
                let leaks = (0..720).any(|j| {
                    let t = j as f64 * PI / 360.0;
                    !s.contains([c[0] + big * t.cos(), c[1] + big * t.sin()])
                });
                assert!(leaks, "m={m}, center {c:?}");
            }
        }
    }

    #[test]
    fn reflection_properties() {
        let axis = Line::from_angle(PI / 2.0);
        assert_eq!(reflect_point([0.3, 0.7], &axis), [-0.3, 0.7]);
        let line = Line::from_angle(0.37);
        let x = [0.21, -0.93];
        let y = reflect_point(reflect_point(x, &line), &line);
        assert!((y[0] - x[0]).abs() < 1e-15 && (y[1] - x[1]).abs() < 1e-15);
        let rx = reflect_point(x, &line);
        assert!((rx[0].hypot(rx[1]) - x[0].hypot(x[1])).abs() < 1e-15);
    }

    #[test]
    fn half_disk_mesh_area_and_boundary() {
        let s = Sector::new(1).unwrap();
        let mesh = mesh_sector(&s, 0.05, 2.0).unwrap();
        assert!((mesh.area() / (PI / 2.0) - 1.0).abs() < 0.005);
        for (i, &x) in mesh.nodes.iter().enumerate() {
            if mesh.boundary[i] {
                assert!(s.boundary_distance(x) < 1e-12, "node {i}: {x:?}");
            } else {
                assert!(s.contains(x));
            }
        }
    }

    #[test]
    fn refinement_quadruples_triangles() {
        for m in [1, 3] {
            let s = Sector::new(m).unwrap();
            let coarse = mesh_sector(&s, 0.04, 2.0).unwrap().triangles.len() as f64;
            let fine = mesh_sector(&s, 0.02, 2.0).unwrap().triangles.len() as f64;
            let ratio = fine / coarse;
            assert!(ratio > 3.5 && ratio < 4.5, "m={m}: ratio {ratio}");
        }
    }

    #[test]
    fn mesh_is_conforming_and_symmetric() {
        for m in 1..=3 {
            let s = Sector::new(m).unwrap();
            let mesh = mesh_sector(&s, 0.05, 2.0).unwrap();
            // interior edges have two triangles; single-use edges lie on ∂A_m
            for ((a, b), n) in mesh.edge_counts() {
                assert!(n <= 2);
                if n == 1 {
                    assert!(mesh.boundary[a] && mesh.boundary[b]);
                    let mid = [
                        0.5 * (mesh.nodes[a][0] + mesh.nodes[b][0]),
                        0.5 * (mesh.nodes[a][1] + mesh.nodes[b][1]),
                    ];
                    assert!(s.boundary_distance(mid) < 2e-3, "edge ({a},{b})");
                }
            }
            // Euler characteristic of a disk: V − E + T = 1
            let e = mesh.edge_counts().len() as i64;
            assert_eq!(mesh.nodes.len() as i64 - e + mesh.triangles.len() as i64, 1);
            let mut locator = PointLocator::new();
            for &x in &mesh.nodes {
                locator.insert(x);
            }
            for &x in &mesh.nodes {
                let j = locator.find([-x[0], x[1]]).expect("mirror node");
                assert_eq!(mesh.nodes[j], [-x[0], x[1]]);
            }
        }
    }

    #[test]
    fn coarse_h_is_rejected() {
        let s = Sector::new(6).unwrap();
        assert!(matches!(mesh_sector(&s, 0.9, 1.0), Err(Error::Mesh(_))));
        assert!(mesh_sector(&s, 1.5, 1.0).is_err());
        assert!(mesh_sector(&s, 0.1, 0.5).is_err());
    }

    #[test]
    fn disk_mesh_tiles_the_disk() {
        for m in 1..=3 {
            let s = Sector::new(m).unwrap();
            let sector_mesh = mesh_sector(&s, 0.05, 2.0).unwrap();
            let disk = build_disk_mesh(m, &sector_mesh).unwrap();
            let copies = 1usize << m;
            assert!((disk.mesh.area() - copies as f64 * sector_mesh.area()).abs() < 1e-12);
            assert!((disk.mesh.area() / PI - 1.0).abs() < 0.005);
            assert!(disk.mesh.nodes.len() < copies * sector_mesh.nodes.len());
            let mut classes: Vec<u32> = disk.mesh.parity.clone();
            classes.dedup();
            assert_eq!(classes.len(), copies);
            // copy 0 reproduces the sector mesh exactly
            assert_eq!(&disk.copies[0], &(0..sector_mesh.nodes.len()).collect::<Vec<_>>());
            for ((a, b), n) in disk.mesh.edge_counts() {
                if n == 1 {
                    assert!(disk.mesh.boundary[a] && disk.mesh.boundary[b]);
                }
            }
            // interface reflections permute the nodes
            for line in interface_lines(m) {
                let map = disk.node_map(|x| reflect_point(x, &line)).unwrap();
                let mut sorted = map.clone();
                sorted.sort_unstable();
                sorted.dedup();
                assert_eq!(sorted.len(), disk.mesh.nodes.len());
            }
        }
    }

    #[test]
    fn parity_classes_map_back_to_copy_zero() {
        let m = 2;
        let s = Sector::new(m).unwrap();
        let sector_mesh = mesh_sector(&s, 0.08, 2.0).unwrap();
        let disk = build_disk_mesh(m, &sector_mesh).unwrap();
        let n = sector_mesh.triangles.len();
        for k in 0..4 {
            let g = DihedralElement::for_copy(k, s.half_angle);
            for t in 0..n {
                let tri = disk.mesh.triangles[k * n + t];
                assert_eq!(disk.mesh.parity[k * n + t], k as u32);
                let src = sector_mesh.triangles[t];
                for (&d, &p) in tri.iter().zip(src.iter()).take(1) {
                    let y = g.apply(sector_mesh.nodes[p]);
                    let x = disk.mesh.nodes[d];
                    assert!((x[0] - y[0]).hypot(x[1] - y[1]) < MERGE_TOL);
                }
            }
        }
    }

    #[test]
    fn asymmetric_sector_mesh_is_rejected() {
        let s = Sector::new(2).unwrap();
        let mut mesh = mesh_sector(&s, 0.1, 1.0).unwrap();
        let i = mesh.boundary.iter().position(|b| !b).unwrap();
        mesh.nodes[i][0] += 1e-4;
        assert!(matches!(build_disk_mesh(2, &mesh), Err(Error::Mesh(_))));
    }

    #[test]
    fn focused_refinement_is_conforming_and_local() {
        let s = Sector::new(3).unwrap();
        let base = mesh_sector(&s, 0.05, 2.0).unwrap();
        let fine = refine_toward(&base, s.incenter, 2e-3, 1e-3, 0.3).unwrap();
        assert!(fine.triangles.len() > base.triangles.len());
        // every edge is shared by at most two triangles; boundary edges close up
        let counts = fine.edge_counts();
        assert!(counts.iter().all(|&(_, n)| n <= 2));
        let v = fine.nodes.len() as i64;
        let e = counts.len() as i64;
        let f = fine.triangles.len() as i64;
        assert_eq!(v - e + f, 1);
        // the polygonal area can only grow toward the exact sector area
        assert!(fine.area() >= base.area() - 1e-14 && fine.area() <= s.area());
        let near = fine.local_max_edge(s.incenter, 2e-3).unwrap();
        assert!(near <= 1e-3 * (1.0 + 1e-12), "local edge {near}");
        let far = fine.local_max_edge([0.0, 0.05], 0.01).unwrap();
        assert!(far > 0.01);
        // the disk can still be assembled from it
        let disk = build_disk_mesh(3, &fine).unwrap();
        assert!((disk.mesh.area() - 8.0 * fine.area()).abs() < 1e-12);
        // deterministic
        assert_eq!(fine, refine_toward(&base, s.incenter, 2e-3, 1e-3, 0.3).unwrap());
    }

    #[test]
    fn refinement_rejects_off_axis_focus() {
        let s = Sector::new(2).unwrap();
        let base = mesh_sector(&s, 0.1, 2.0).unwrap();
        assert!(refine_toward(&base, [0.1, 0.5], 0.0, 1e-2, 0.3).is_err());
        assert!(refine_toward(&base, [0.0, 0.5], 0.0, 1e-9, 0.3).is_err());
    }
}

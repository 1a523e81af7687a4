//! Conforming triangulations of planar polygonal domains.
//!
//! Cells are stored counter-clockwise. Local edge `i` of a cell is the edge
//! opposite local vertex `i`, traversed counter-clockwise from vertex
//! `(i + 1) % 3` to vertex `(i + 2) % 3`. Global edges are oriented from the
//! lower to the higher vertex index; `cell_edge_aligned` records whether the
//! counter-clockwise traversal of a local edge agrees with that orientation.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Affine map from the reference triangle `(0,0), (1,0), (0,1)` onto a cell.
#[derive(Debug, Clone, Copy)]
pub struct CellGeometry {
    pub origin: Point,
    /// Columns are `v1 - v0` and `v2 - v0`.
    pub jacobian: [[f64; 2]; 2],
    pub det: f64,
    /// Inverse transpose of the Jacobian, used to map reference gradients.
    pub inv_t: [[f64; 2]; 2],
}

impl CellGeometry {
    pub fn new(v: [Point; 3]) -> Self {
        let j = [[v[1][0] - v[0][0], v[2][0] - v[0][0]], [v[1][1] - v[0][1], v[2][1] - v[0][1]]];
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        let inv_t = [[j[1][1] / det, -j[1][0] / det], [-j[0][1] / det, j[0][0] / det]];
        Self {
            origin: v[0],
            jacobian: j,
            det,
            inv_t,
        }
    }

    #[inline]
    pub fn map(&self, xr: Point) -> Point {
        let j = &self.jacobian;
        [
            self.origin[0] + j[0][0] * xr[0] + j[0][1] * xr[1],
            self.origin[1] + j[1][0] * xr[0] + j[1][1] * xr[1],
        ]
    }

    /// Physical gradient from a reference gradient.
    #[inline]
    pub fn grad(&self, g: Point) -> Point {
        let m = &self.inv_t;
        [m[0][0] * g[0] + m[0][1] * g[1], m[1][0] * g[0] + m[1][1] * g[1]]
    }

    /// Contravariant Piola transform of a reference vector.
    #[inline]
    pub fn piola(&self, s: Point) -> Point {
        let j = &self.jacobian;
        [
            (j[0][0] * s[0] + j[0][1] * s[1]) / self.det,
            (j[1][0] * s[0] + j[1][1] * s[1]) / self.det,
        ]
    }

    /// Inverse of [`CellGeometry::piola`].
    #[inline]
    pub fn piola_inverse(&self, s: Point) -> Point {
        // det * J^{-1} s
        let j = &self.jacobian;
        [j[1][1] * s[0] - j[0][1] * s[1], -j[1][0] * s[0] + j[0][0] * s[1]]
    }

    /// Reference coordinates of a physical point.
    pub fn pullback(&self, x: Point) -> Point {
        let d = [x[0] - self.origin[0], x[1] - self.origin[1]];
        let j = &self.jacobian;
        [
            (j[1][1] * d[0] - j[0][1] * d[1]) / self.det,
            (-j[1][0] * d[0] + j[0][0] * d[1]) / self.det,
        ]
    }

    pub fn area(&self) -> f64 {
        0.5 * self.det
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    vertices: Vec<Point>,
    cells: Vec<[usize; 3]>,
    edges: Vec<[usize; 2]>,
    cell_edges: Vec<[usize; 3]>,
    cell_edge_aligned: Vec<[bool; 3]>,
    /// Cells adjacent to each edge; the second entry is `None` on the boundary.
    edge_cells: Vec<(usize, Option<usize>)>,
    boundary_edges: Vec<bool>,
    boundary_vertices: Vec<bool>,
    vertex_cells: Vec<Vec<usize>>,
}

fn signed_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

impl Mesh {
    /// Builds topology and validates a triangulation given counter-clockwise cells.
    pub fn new(vertices: Vec<Point>, cells: Vec<[usize; 3]>) -> Result<Self> {
        let nv = vertices.len();
        let mut used = vec![false; nv];
        for (c, cell) in cells.iter().enumerate() {
            for &v in cell {
                if v >= nv {
                    return Err(Error::InvalidMesh(format!("cell {c} references vertex {v} >= {nv}")));
                }
                used[v] = true;
            }
            if cell[0] == cell[1] || cell[1] == cell[2] || cell[0] == cell[2] {
                return Err(Error::InvalidMesh(format!("cell {c} has repeated vertices")));
            }
            let a = signed_area(vertices[cell[0]], vertices[cell[1]], vertices[cell[2]]);
            if !(a > 0.0) {
                return Err(Error::InvalidMesh(format!("cell {c} has non-positive signed area {a:e}")));
            }
        }
        if let Some(v) = used.iter().position(|u| !u) {
            return Err(Error::InvalidMesh(format!("vertex {v} is not used by any cell")));
        }

        let mut edge_index: HashMap<[usize; 2], usize> = HashMap::with_capacity(cells.len() * 2);
        let mut edges = Vec::new();
        let mut edge_cells: Vec<(usize, Option<usize>)> = Vec::new();
        let mut cell_edges = Vec::with_capacity(cells.len());
        let mut cell_edge_aligned = Vec::with_capacity(cells.len());
        for (c, cell) in cells.iter().enumerate() {
            let mut ce = [0; 3];
            let mut al = [true; 3];
            for i in 0..3 {
                let a = cell[(i + 1) % 3];
                let b = cell[(i + 2) % 3];
                let key = [a.min(b), a.max(b)];
                al[i] = a < b;
                let e = match edge_index.get(&key) {
                    Some(&e) => {
                        match edge_cells[e].1 {
                            None => edge_cells[e].1 = Some(c),
                            Some(_) => {
                                return Err(Error::InvalidMesh(format!(
                                    "edge ({}, {}) shared by more than two cells",
                                    key[0], key[1]
                                )))
                            }
                        }
                        e
                    }
                    None => {
                        let e = edges.len();
                        edges.push(key);
                        edge_cells.push((c, None));
                        edge_index.insert(key, e);
                        e
                    }
                };
                ce[i] = e;
            }
            cell_edges.push(ce);
            cell_edge_aligned.push(al);
        }
        // Orientation consistency: an interior edge must be traversed in
        // opposite directions by its two cells.
        for (e, &(c0, c1)) in edge_cells.iter().enumerate() {
            if let Some(c1) = c1 {
                let dir = |c: usize| {
                    let i = cell_edges[c].iter().position(|&x| x == e).unwrap();
                    cell_edge_aligned[c][i]
                };
                if dir(c0) == dir(c1) {
                    return Err(Error::InvalidMesh(format!("cells {c0} and {c1} overlap across edge {e}")));
                }
            }
        }
        let boundary_edges: Vec<bool> = edge_cells.iter().map(|ec| ec.1.is_none()).collect();
        let mut boundary_vertices = vec![false; nv];
        for (e, &b) in boundary_edges.iter().enumerate() {
            if b {
                boundary_vertices[edges[e][0]] = true;
                boundary_vertices[edges[e][1]] = true;
            }
        }
        let mut vertex_cells = vec![Vec::new(); nv];
        for (c, cell) in cells.iter().enumerate() {
            for &v in cell {
                vertex_cells[v].push(c);
            }
        }
        Ok(Self {
            vertices,
            cells,
            edges,
            cell_edges,
            cell_edge_aligned,
            edge_cells,
            boundary_edges,
            boundary_vertices,
            vertex_cells,
        })
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }
    pub fn cells(&self) -> &[[usize; 3]] {
        &self.cells
    }
    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }
    pub fn cell_edges(&self, c: usize) -> [usize; 3] {
        self.cell_edges[c]
    }
    /// Whether local edge `i` of cell `c` runs from the lower to the higher vertex
    /// when traversed counter-clockwise.
    pub fn cell_edge_aligned(&self, c: usize) -> [bool; 3] {
        self.cell_edge_aligned[c]
    }
    pub fn edge_cells(&self, e: usize) -> (usize, Option<usize>) {
        self.edge_cells[e]
    }
    pub fn is_boundary_edge(&self, e: usize) -> bool {
        self.boundary_edges[e]
    }
    pub fn is_boundary_vertex(&self, v: usize) -> bool {
        self.boundary_vertices[v]
    }
    pub fn boundary_edges(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.edges.len()).filter(move |&e| self.boundary_edges[e])
    }
    /// Cells containing vertex `v`.
    pub fn vertex_cells(&self, v: usize) -> &[usize] {
        &self.vertex_cells[v]
    }
    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }
    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }
    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn cell_points(&self, c: usize) -> [Point; 3] {
        let [a, b, d] = self.cells[c];
        [self.vertices[a], self.vertices[b], self.vertices[d]]
    }

    pub fn geometry(&self, c: usize) -> CellGeometry {
        CellGeometry::new(self.cell_points(c))
    }

    pub fn cell_area(&self, c: usize) -> f64 {
        let p = self.cell_points(c);
        signed_area(p[0], p[1], p[2])
    }

    pub fn cell_diameter(&self, c: usize) -> f64 {
        let p = self.cell_points(c);
        dist(p[0], p[1]).max(dist(p[1], p[2])).max(dist(p[2], p[0]))
    }

    pub fn max_diameter(&self) -> f64 {
        (0..self.n_cells()).map(|c| self.cell_diameter(c)).fold(0.0, f64::max)
    }

    /// Smallest ratio `|T| / diam(T)^2` over all cells.
    pub fn shape_regularity(&self) -> f64 {
        (0..self.n_cells())
            .map(|c| self.cell_area(c) / self.cell_diameter(c).powi(2))
            .fold(f64::INFINITY, f64::min)
    }

    /// Local index (0..3) of global vertex `v` in cell `c`.
    pub fn local_vertex(&self, c: usize, v: usize) -> Option<usize> {
        self.cells[c].iter().position(|&x| x == v)
    }
}

/// Unit square split into `2 n^2` triangles.
///
/// Grid squares with even `i + j` are cut along the anti-diagonal, odd ones along
/// the main diagonal, so interior vertex valences alternate between 4 and 8.
pub fn generate_structured(n: usize) -> Result<Mesh> {
    if n == 0 {
        return Err(Error::InvalidArgument("structured mesh needs n >= 1".into()));
    }
    let h = 1.0 / n as f64;
    let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            vertices.push([i as f64 * h, j as f64 * h]);
        }
    }
    // Exact endpoints so that refinement levels stay nested bit-for-bit.
    for v in vertices.iter_mut() {
        for x in v.iter_mut() {
            if (*x - 1.0).abs() < 1e-14 {
                *x = 1.0;
            }
        }
    }
    let id = |i: usize, j: usize| j * (n + 1) + i;
    let mut cells = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            if (i + j) % 2 == 0 {
                cells.push([a, b, d]);
                cells.push([b, c, d]);
            } else {
                cells.push([a, b, c]);
                cells.push([a, c, d]);
            }
        }
    }
    Mesh::new(vertices, cells)
}

/// Randomly displaces interior vertices by up to `amplitude` times the shortest
/// incident edge length. Boundary vertices stay fixed.
pub fn perturb(mesh: &Mesh, amplitude: f64, seed: u64) -> Result<Mesh> {
    if !(0.0..0.3).contains(&amplitude) {
        return Err(Error::Perturbation(format!("amplitude {amplitude} outside [0, 0.3)")));
    }
    if amplitude == 0.0 {
        return Ok(mesh.clone());
    }
    let nv = mesh.n_vertices();
    let mut local_h = vec![f64::INFINITY; nv];
    for e in mesh.edges() {
        let l = dist(mesh.vertices[e[0]], mesh.vertices[e[1]]);
        local_h[e[0]] = local_h[e[0]].min(l);
        local_h[e[1]] = local_h[e[1]].min(l);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offsets: Vec<Point> = (0..nv)
        .map(|_| loop {
            let d = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            if d[0] * d[0] + d[1] * d[1] <= 1.0 {
                break d;
            }
        })
        .collect();
    let mut amp = amplitude;
    for _ in 0..=10 {
        let vertices: Vec<Point> = (0..nv)
            .map(|v| {
                let p = mesh.vertices[v];
                if mesh.is_boundary_vertex(v) {
                    p
                } else {
                    let s = amp * local_h[v];
                    [p[0] + s * offsets[v][0], p[1] + s * offsets[v][1]]
                }
            })
            .collect();
        let ok = mesh
            .cells()
            .iter()
            .all(|c| signed_area(vertices[c[0]], vertices[c[1]], vertices[c[2]]) > 0.0);
        if ok {
            return Mesh::new(vertices, mesh.cells.clone());
        }
        amp *= 0.5;
    }
    Err(Error::Perturbation("cells stay inverted after 10 halvings".into()))
}

/// Red refinement: every cell is split into four by its edge midpoints.
pub fn refine_uniform(mesh: &Mesh) -> Result<Mesh> {
    let nv = mesh.n_vertices();
    let mut vertices = mesh.vertices.clone();
    for e in mesh.edges() {
        let (a, b) = (mesh.vertices[e[0]], mesh.vertices[e[1]]);
        vertices.push([0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]);
    }
    let mut cells = Vec::with_capacity(4 * mesh.n_cells());
    for c in 0..mesh.n_cells() {
        let [v0, v1, v2] = mesh.cells[c];
        let [e0, e1, e2] = mesh.cell_edges[c];
        let (m0, m1, m2) = (nv + e0, nv + e1, nv + e2);
        cells.push([v0, m2, m1]);
        cells.push([m2, v1, m0]);
        cells.push([m1, m0, v2]);
        cells.push([m0, m1, m2]);
    }
    Mesh::new(vertices, cells)
}

/// Result of [`import_mesh`]: the mesh plus any normalization warnings.
#[derive(Debug, Clone)]
pub struct ImportedMesh {
    pub mesh: Mesh,
    pub warnings: Vec<String>,
}

/// Parses the ASCII format `nv nc`, then `nv` lines `x y`, then `nc` lines `i j k`.
///
/// Clockwise cells are repaired by swapping their last two indices.
pub fn import_mesh(text: &str) -> Result<ImportedMesh> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let fmt_err = |line: usize, message: String| Error::MeshFormat { line, message };

    let (hl, header) = lines.next().ok_or_else(|| fmt_err(1, "empty document".into()))?;
    let counts: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| fmt_err(hl, format!("bad header: {e}")))?;
    if counts.len() != 2 {
        return Err(fmt_err(hl, format!("header needs 2 counts, found {}", counts.len())));
    }
    let (nv, nc) = (counts[0], counts[1]);

    let mut vertices = Vec::with_capacity(nv);
    for k in 0..nv {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| fmt_err(hl, format!("expected {nv} vertices, found {k}")))?;
        let xy: Vec<f64> = l
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| fmt_err(ln, format!("bad coordinate: {e}")))?;
        if xy.len() != 2 || !xy.iter().all(|x| x.is_finite()) {
            return Err(fmt_err(ln, "vertex needs two finite coordinates".into()));
        }
        vertices.push([xy[0], xy[1]]);
    }
    let mut cells = Vec::with_capacity(nc);
    let mut cell_lines = Vec::with_capacity(nc);
    let mut warnings = Vec::new();
    for k in 0..nc {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| fmt_err(hl, format!("expected {nc} cells, found {k}")))?;
        let idx: Vec<usize> = l
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| fmt_err(ln, format!("bad cell index: {e}")))?;
        if idx.len() != 3 {
            return Err(fmt_err(ln, "cell needs three vertex indices".into()));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= nv) {
            return Err(fmt_err(ln, format!("vertex index {bad} out of range (nv = {nv})")));
        }
        let mut cell = [idx[0], idx[1], idx[2]];
        let a = signed_area(vertices[cell[0]], vertices[cell[1]], vertices[cell[2]]);
        if a == 0.0 {
            return Err(fmt_err(ln, "degenerate cell with zero area".into()));
        }
        if a < 0.0 {
            cell.swap(1, 2);
            let w = format!("line {ln}: cell {k} was clockwise, reordered");
            log::warn!("{w}");
            warnings.push(w);
        }
        cells.push(cell);
        cell_lines.push(ln);
    }
    if let Some((ln, _)) = lines.next() {
        return Err(fmt_err(ln, "trailing content after cell list".into()));
    }
    let mut used = vec![false; nv];
    for c in &cells {
        for &v in c {
            used[v] = true;
        }
    }
    if let Some(v) = used.iter().position(|u| !u) {
        return Err(fmt_err(hl + 1 + v, format!("dangling vertex {v}")));
    }
    let mesh = Mesh::new(vertices, cells).map_err(|e| fmt_err(hl, e.to_string()))?;
    Ok(ImportedMesh { mesh, warnings })
}

/// Writes the format read by [`import_mesh`]. Coordinates use shortest
/// round-trip formatting, so re-import is bit-exact.
pub fn export_mesh(mesh: &Mesh) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{} {}", mesh.n_vertices(), mesh.n_cells());
    for v in mesh.vertices() {
        let _ = writeln!(s, "{:?} {:?}", v[0], v[1]);
    }
    for c in mesh.cells() {
        let _ = writeln!(s, "{} {} {}", c[0], c[1], c[2]);
    }
    s
}

/// The cells around a vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexPatch {
    pub vertex: usize,
    pub cells: Vec<usize>,
    /// Edges on the patch boundary, including domain-boundary edges through the vertex.
    pub patch_boundary_edges: Vec<usize>,
    /// Edges through the vertex shared by two patch cells.
    pub interior_edges: Vec<usize>,
    pub h: f64,
}

impl VertexPatch {
    pub fn is_interior_edge(&self, e: usize) -> bool {
        self.interior_edges.contains(&e)
    }
    pub fn area(&self, mesh: &Mesh) -> f64 {
        self.cells.iter().map(|&c| mesh.cell_area(c)).sum()
    }
}

pub fn build_patches(mesh: &Mesh) -> Vec<VertexPatch> {
    (0..mesh.n_vertices())
        .map(|v| {
            let cells = mesh.vertex_cells(v).to_vec();
            let mut boundary = Vec::new();
            let mut interior = Vec::new();
            for &c in &cells {
                for &e in &mesh.cell_edges(c) {
                    let [a, b] = mesh.edges()[e];
                    let through = a == v || b == v;
                    let list = if through && !mesh.is_boundary_edge(e) {
                        &mut interior
                    } else {
                        &mut boundary
                    };
                    if !list.contains(&e) {
                        list.push(e);
                    }
                }
            }
            let h = cells.iter().map(|&c| mesh.cell_diameter(c)).fold(0.0, f64::max);
            VertexPatch {
                vertex: v,
                cells,
                patch_boundary_edges: boundary,
                interior_edges: interior,
                h,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn structured_counts() {
        let m1 = generate_structured(1).unwrap();
        assert_eq!((m1.n_vertices(), m1.n_cells(), m1.n_edges()), (4, 2, 5));
        let m2 = generate_structured(2).unwrap();
        assert_eq!((m2.n_vertices(), m2.n_cells(), m2.n_edges()), (9, 8, 16));
        let m4 = generate_structured(4).unwrap();
        assert_eq!((m4.n_vertices(), m4.n_cells()), (25, 32));
        for m in [&m1, &m2, &m4] {
            assert!(m.shape_regularity() > 0.05);
            // Euler characteristic of the disk
            assert_eq!(m.n_vertices() as i64 - m.n_edges() as i64 + m.n_cells() as i64, 1);
        }
    }

    #[test]
    fn edge_sharing() {
        let m = generate_structured(3).unwrap();
        for e in 0..m.n_edges() {
            let (_, c1) = m.edge_cells(e);
            assert_eq!(c1.is_none(), m.is_boundary_edge(e));
        }
        assert_eq!(m.boundary_edges().count(), 12);
    }

    #[test]
    fn patches_on_single_square() {
        let m = generate_structured(1).unwrap();
        let p = build_patches(&m);
        let sizes: Vec<usize> = p.iter().map(|p| p.cells.len()).collect();
        // The anti-diagonal of the single square joins vertices 1 and 2.
        assert_eq!(sizes, vec![1, 2, 2, 1]);
        assert_eq!(p[1].interior_edges.len(), 1);
        assert_eq!(p[0].interior_edges.len(), 0);
        assert_eq!(p[0].patch_boundary_edges.len(), 3);
    }

    #[test]
    fn patch_invariants() {
        let m = perturb(&generate_structured(5).unwrap(), 0.2, 7).unwrap();
        let p = build_patches(&m);
        assert_eq!(p.iter().map(|p| p.cells.len()).sum::<usize>(), 3 * m.n_cells());
        for patch in &p {
            let h = patch.cells.iter().map(|&c| m.cell_diameter(c)).fold(0.0, f64::max);
            assert_eq!(patch.h, h);
            // edge-connected: walk interior edges from the first cell
            let mut seen = vec![patch.cells[0]];
            let mut grow = true;
            while grow {
                grow = false;
                for &e in &patch.interior_edges {
                    let (a, b) = m.edge_cells(e);
                    let b = b.unwrap();
                    if seen.contains(&a) != seen.contains(&b) {
                        seen.push(if seen.contains(&a) { b } else { a });
                        grow = true;
                    }
                }
            }
            assert_eq!(seen.len(), patch.cells.len());
        }
    }

    #[test]
    fn center_vertex_valence() {
        let m = generate_structured(2).unwrap();
        let p = build_patches(&m);
        assert_eq!(p[4].cells.len(), 4);
    }

    #[test]
    fn refinement() {
        let m = generate_structured(1).unwrap();
        let r = refine_uniform(&m).unwrap();
        assert_eq!(r.n_cells(), 8);
        assert_eq!(r.max_diameter(), 0.5 * m.max_diameter());
        for c in 0..m.n_cells() {
            for k in 0..4 {
                assert_eq!(r.cell_area(4 * c + k), 0.25 * m.cell_area(c));
            }
        }
        for v in 0..m.n_vertices() {
            assert_eq!(r.vertices()[v], m.vertices()[v]);
            assert_eq!(r.is_boundary_vertex(v), m.is_boundary_vertex(v));
        }
        for (e, ed) in m.edges().iter().enumerate() {
            let (a, b) = (m.vertices()[ed[0]], m.vertices()[ed[1]]);
            assert_eq!(r.vertices()[m.n_vertices() + e], [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]);
        }
    }

    #[test]
    fn perturbation() {
        let m = generate_structured(4).unwrap();
        assert_eq!(perturb(&m, 0.0, 1).unwrap(), m);
        let a = perturb(&m, 0.2, 1).unwrap();
        let b = perturb(&m, 0.2, 1).unwrap();
        assert_eq!(a.vertices(), b.vertices());
        assert!((0..a.n_cells()).all(|c| a.cell_area(c) > 0.0));
        assert_ne!(a.vertices(), m.vertices());
        assert!(perturb(&m, 0.3, 1).is_err());
    }

    #[test]
    fn import_export() {
        let m = perturb(&generate_structured(3).unwrap(), 0.25, 3).unwrap();
        let back = import_mesh(&export_mesh(&m)).unwrap();
        assert!(back.warnings.is_empty());
        assert_eq!(back.mesh, m);
    }

    #[test]
    fn import_repairs_orientation() {
        let text = "4 2\n0 0\n1 0\n0 1\n1 1\n0 2 1\n1 3 2\n";
        let im = import_mesh(text).unwrap();
        assert_eq!(im.warnings.len(), 1);
        assert!(im.warnings[0].contains("line 6"));
        assert_eq!(im.mesh.cells()[0], [0, 1, 2]);
    }

    #[test]
    fn import_errors() {
        let bad_index = "3 1\n0 0\n1 0\n0 1\n0 1 3\n";
        match import_mesh(bad_index) {
            Err(Error::MeshFormat { line, .. }) => assert_eq!(line, 5),
            other => panic!("{other:?}"),
        }
        let short = "4 1\n0 0\n1 0\n0 1\n";
        assert!(matches!(import_mesh(short), Err(Error::MeshFormat { .. })));
        let dangling = "4 1\n0 0\n1 0\n0 1\n5 5\n0 1 2\n";
        match import_mesh(dangling) {
            Err(Error::MeshFormat { line, message }) => {
                assert_eq!(line, 5);
                assert!(message.contains("dangling"));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(import_mesh("2\n"), Err(Error::MeshFormat { line: 1, .. })));
    }

    #[test]
    fn geometry_roundtrip() {
        let m = perturb(&generate_structured(2).unwrap(), 0.2, 5).unwrap();
        let g = m.geometry(3);
        let x = g.map([0.2, 0.3]);
        let back = g.pullback(x);
        assert!((back[0] - 0.2).abs() < 1e-14 && (back[1] - 0.3).abs() < 1e-14);
        let s = [0.7, -0.4];
        let t = g.piola_inverse(g.piola(s));
        assert!((t[0] - s[0]).abs() < 1e-14 && (t[1] - s[1]).abs() < 1e-14);
    }
}

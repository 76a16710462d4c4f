//! Simplicial meshes of polygonal/polyhedral domains with marked Dirichlet
//! boundary facets, geometric queries, and the inward-translation boundary
//! cover used by the recovery pipeline.

use crate::error::{Error, Result};
use std::collections::HashMap;
use std::fmt::Write as _;

/// Padded 3-vectors; the third component is zero in dimension 2.
pub type Vec3 = [f64; 3];

pub fn vdot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn vsub(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn vadd(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn vscale(a: &Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn vnorm(a: &Vec3) -> f64 {
    vdot(a, a).sqrt()
}

pub fn vcross(a: &Vec3, b: &Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Boundary facet: an (n-1)-simplex lying on exactly one cell, with outward
/// unit normal and surface measure.
#[derive(Debug, Clone)]
pub struct BoundaryFacet {
    pub verts: [usize; 3],
    pub cell: usize,
    pub normal: Vec3,
    pub measure: f64,
    pub gamma0: bool,
}

impl BoundaryFacet {
    pub fn vert_count(&self, dim: usize) -> usize {
        dim
    }

    pub fn centroid(&self, mesh: &Mesh) -> Vec3 {
        let n = mesh.dim;
        let mut c = [0.0; 3];
        for &v in self.verts.iter().take(n) {
            c = vadd(&c, &mesh.vertices[v]);
        }
        vscale(&c, 1.0 / n as f64)
    }
}

/// Simplicial mesh with marked Dirichlet boundary.
#[derive(Debug, Clone)]
pub struct Mesh {
    dim: usize,
    vertices: Vec<Vec3>,
    cells: Vec<[usize; 4]>,
    cell_volumes: Vec<f64>,
    /// P1 basis gradients per cell, one per local vertex.
    cell_grads: Vec<[Vec3; 4]>,
    facets: Vec<BoundaryFacet>,
    gamma0_facets: Vec<usize>,
    boundary_vertices: Vec<bool>,
    gamma0_vertices: Vec<bool>,
}

/// Selector for Dirichlet sides of generated boxes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Gamma0Select {
    All,
    Sides(Vec<Side>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    XMin,
    XMax,
    YMin,
    YMax,
    ZMin,
    ZMax,
}

impl Side {
    pub fn parse(s: &str) -> Option<Side> {
        match s.trim().to_ascii_lowercase().as_str() {
            "left" | "xmin" => Some(Side::XMin),
            "right" | "xmax" => Some(Side::XMax),
            "bottom" | "ymin" => Some(Side::YMin),
            "top" | "ymax" => Some(Side::YMax),
            "back" | "zmin" => Some(Side::ZMin),
            "front" | "zmax" => Some(Side::ZMax),
            _ => None,
        }
    }

    fn matches(&self, dim: usize, widths: &[f64], centroid: &Vec3, tol: f64) -> bool {
        match self {
            Side::XMin => centroid[0].abs() < tol,
            Side::XMax => (centroid[0] - widths[0]).abs() < tol,
            Side::YMin => centroid[1].abs() < tol,
            Side::YMax => (centroid[1] - widths[1]).abs() < tol,
            Side::ZMin => dim == 3 && centroid[2].abs() < tol,
            Side::ZMax => dim == 3 && (centroid[2] - widths[2]).abs() < tol,
        }
    }
}

impl Mesh {
    /// Build a mesh from raw vertices and cells; boundary facets, normals,
    /// measures and gradients are derived. `gamma0` marks boundary facets by
    /// their centroid.
    pub fn from_raw(
        dim: usize,
        vertices: Vec<Vec3>,
        cells_in: Vec<Vec<usize>>,
        gamma0: impl Fn(&Vec3) -> bool,
    ) -> Result<Mesh> {
        if dim != 2 && dim != 3 {
            return Err(Error::BadDimension(dim));
        }
        let mut cells = Vec::with_capacity(cells_in.len());
        for c in &cells_in {
            if c.len() != dim + 1 {
                return Err(Error::Mesh(format!(
                    "cell must have {} vertices, got {}",
                    dim + 1,
                    c.len()
                )));
            }
            let mut a = [0usize; 4];
            a[..dim + 1].copy_from_slice(c);
            cells.push(a);
        }
        let mut mesh = Mesh {
            dim,
            vertices,
            cells,
            cell_volumes: Vec::new(),
            cell_grads: Vec::new(),
            facets: Vec::new(),
            gamma0_facets: Vec::new(),
            boundary_vertices: Vec::new(),
            gamma0_vertices: Vec::new(),
        };
        mesh.orient_cells()?;
        mesh.compute_geometry()?;
        mesh.derive_boundary()?;
        for f in mesh.facets.iter_mut() {
            let mut c = [0.0; 3];
            for &v in f.verts.iter().take(dim) {
                c = vadd(&c, &mesh.vertices[v]);
            }
            let c = vscale(&c, 1.0 / dim as f64);
            f.gamma0 = gamma0(&c);
        }
        mesh.index_boundary();
        Ok(mesh)
    }

    fn orient_cells(&mut self) -> Result<()> {
        let dim = self.dim;
        for cell in self.cells.iter_mut() {
            let vol = simplex_signed_volume(dim, &self.vertices, &cell[..dim + 1]);
            if vol.abs() < 1e-300 {
                return Err(Error::Mesh("degenerate cell with zero volume".into()));
            }
            if vol < 0.0 {
                cell.swap(0, 1);
            }
        }
        Ok(())
    }

    fn compute_geometry(&mut self) -> Result<()> {
        let dim = self.dim;
        self.cell_volumes.clear();
        self.cell_grads.clear();
        for cell in &self.cells {
            let vol = simplex_signed_volume(dim, &self.vertices, &cell[..dim + 1]);
            debug_assert!(vol > 0.0);
            self.cell_volumes.push(vol);
            self.cell_grads.push(p1_gradients(dim, &self.vertices, cell));
        }
        Ok(())
    }

    fn derive_boundary(&mut self) -> Result<()> {
        let dim = self.dim;
        // faces shared by exactly one cell are boundary facets
        let mut face_map: HashMap<Vec<usize>, Vec<(usize, [usize; 3])>> = HashMap::new();
        for (ci, cell) in self.cells.iter().enumerate() {
            for skip in 0..=dim {
                let mut face = [0usize; 3];
                let mut idx = 0;
                for (l, &v) in cell[..dim + 1].iter().enumerate() {
                    if l != skip {
                        face[idx] = v;
                        idx += 1;
                    }
                }
                let mut key: Vec<usize> = face[..dim].to_vec();
                key.sort_unstable();
                face_map.entry(key).or_default().push((ci, face));
            }
        }
        self.facets.clear();
        let mut keys: Vec<_> = face_map
            .iter()
            .filter(|(_, v)| v.len() == 1)
            .map(|(k, _)| k.clone())
            .collect();
        keys.sort_unstable();
        for key in keys {
            let (ci, face) = face_map[&key][0];
            let (normal, measure) = facet_normal_measure(dim, &self.vertices, &face);
            // orient outward: away from the owning cell centroid
            let mut fc = [0.0; 3];
            for &v in face.iter().take(dim) {
                fc = vadd(&fc, &self.vertices[v]);
            }
            let fc = vscale(&fc, 1.0 / dim as f64);
            let cc = self.cell_centroid(ci);
            let normal = if vdot(&normal, &vsub(&fc, &cc)) > 0.0 {
                normal
            } else {
                vscale(&normal, -1.0)
            };
            self.facets.push(BoundaryFacet {
                verts: face,
                cell: ci,
                normal,
                measure,
                gamma0: false,
            });
        }
        Ok(())
    }

    fn index_boundary(&mut self) {
        self.boundary_vertices = vec![false; self.vertices.len()];
        self.gamma0_vertices = vec![false; self.vertices.len()];
        self.gamma0_facets.clear();
        for (fi, f) in self.facets.iter().enumerate() {
            for &v in f.verts.iter().take(self.dim) {
                self.boundary_vertices[v] = true;
                if f.gamma0 {
                    self.gamma0_vertices[v] = true;
                }
            }
            if f.gamma0 {
                self.gamma0_facets.push(fi);
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    pub fn vertex(&self, i: usize) -> &Vec3 {
        &self.vertices[i]
    }

    pub fn cell(&self, i: usize) -> &[usize] {
        &self.cells[i][..self.dim + 1]
    }

    pub fn cell_volume(&self, i: usize) -> f64 {
        self.cell_volumes[i]
    }

    pub fn cell_grads(&self, i: usize) -> &[Vec3; 4] {
        &self.cell_grads[i]
    }

    pub fn cell_centroid(&self, i: usize) -> Vec3 {
        let mut c = [0.0; 3];
        for &v in self.cell(i) {
            c = vadd(&c, &self.vertices[v]);
        }
        vscale(&c, 1.0 / (self.dim + 1) as f64)
    }

    pub fn facets(&self) -> &[BoundaryFacet] {
        &self.facets
    }

    pub fn gamma0_facets(&self) -> &[usize] {
        &self.gamma0_facets
    }

    pub fn is_boundary_vertex(&self, v: usize) -> bool {
        self.boundary_vertices[v]
    }

    pub fn is_gamma0_vertex(&self, v: usize) -> bool {
        self.gamma0_vertices[v]
    }

    pub fn total_volume(&self) -> f64 {
        self.cell_volumes.iter().sum()
    }

    pub fn boundary_measure(&self) -> f64 {
        self.facets.iter().map(|f| f.measure).sum()
    }

    /// The distinct outward normals of Gamma0 facets adjacent to a vertex
    /// (deduplicated by direction).
    pub fn gamma0_vertex_normals(&self, v: usize) -> Vec<Vec3> {
        let mut out: Vec<Vec3> = Vec::new();
        for &fi in &self.gamma0_facets {
            let f = &self.facets[fi];
            if f.verts[..self.dim].contains(&v) {
                if !out.iter().any(|n| vdot(n, &f.normal) > 1.0 - 1e-9) {
                    out.push(f.normal);
                }
            }
        }
        out
    }

    /// Longest edge among boundary-adjacent cells; the resolution scale used
    /// by the pipeline ops.
    pub fn boundary_mesh_size(&self) -> f64 {
        let mut h: f64 = 0.0;
        for f in &self.facets {
            let cell = self.cell(f.cell);
            for (a, &va) in cell.iter().enumerate() {
                for &vb in cell.iter().skip(a + 1) {
                    h = h.max(vnorm(&vsub(&self.vertices[vb], &self.vertices[va])));
                }
            }
        }
        h
    }

    /// Depth of the boundary one-ring: the largest boundary distance among
    /// vertices of boundary-adjacent cells.
    pub fn boundary_ring_depth(&self) -> f64 {
        let mut depth: f64 = 0.0;
        for f in &self.facets {
            for &v in self.cell(f.cell) {
                depth = depth.max(self.boundary_distance_unchecked(&self.vertices[v]));
            }
        }
        depth
    }

    pub fn max_cell_diameter(&self) -> f64 {
        let mut h: f64 = 0.0;
        for ci in 0..self.cells.len() {
            let cell = self.cell(ci);
            for (a, &va) in cell.iter().enumerate() {
                for &vb in cell.iter().skip(a + 1) {
                    h = h.max(vnorm(&vsub(&self.vertices[vb], &self.vertices[va])));
                }
            }
        }
        h
    }

    /// Barycentric coordinates of `x` in cell `ci` (first dim+1 entries).
    pub fn barycentric(&self, ci: usize, x: &Vec3) -> [f64; 4] {
        let cell = &self.cells[ci];
        let grads = &self.cell_grads[ci];
        let x0 = &self.vertices[cell[0]];
        let mut lam = [0.0; 4];
        let dx = vsub(x, x0);
        let mut rest = 0.0;
        for l in 1..=self.dim {
            // lambda_l is affine with gradient grads[l] and value 0 at x0
            lam[l] = vdot(&grads[l], &dx);
            rest += lam[l];
        }
        lam[0] = 1.0 - rest;
        lam
    }

    /// Locate the cell containing `x` (tolerance on barycentric coordinates).
    pub fn locate(&self, x: &Vec3, tol: f64) -> Option<(usize, [f64; 4])> {
        for ci in 0..self.cells.len() {
            let lam = self.barycentric(ci, x);
            if lam[..self.dim + 1].iter().all(|&l| l >= -tol) {
                return Some((ci, lam));
            }
        }
        None
    }

    /// Distance from a point of the closed domain to the boundary.
    pub fn boundary_distance(&self, x: &Vec3) -> Result<f64> {
        if self.locate(x, 1e-10).is_none() {
            return Err(Error::OutsideDomain(x[0], x[1], x[2]));
        }
        Ok(self.boundary_distance_unchecked(x))
    }

    /// Distance to the boundary facets without the containment check.
    pub fn boundary_distance_unchecked(&self, x: &Vec3) -> f64 {
        let mut best = f64::INFINITY;
        for f in &self.facets {
            let d = if self.dim == 2 {
                point_segment_distance(x, &self.vertices[f.verts[0]], &self.vertices[f.verts[1]])
            } else {
                point_triangle_distance(
                    x,
                    &self.vertices[f.verts[0]],
                    &self.vertices[f.verts[1]],
                    &self.vertices[f.verts[2]],
                )
            };
            best = best.min(d);
        }
        best
    }

    /// Bucketed index over the boundary facets for fast distance queries.
    pub fn facet_index(&self) -> FacetIndex<'_> {
        FacetIndex::new(self)
    }

    /// The outward normal of the nearest boundary facet, together with the
    /// distance and whether the nearest facet is unique within `tie_tol`.
    pub fn nearest_boundary_normal(&self, x: &Vec3, tie_tol: f64) -> (Vec3, f64, bool) {
        let mut best = f64::INFINITY;
        let mut second = f64::INFINITY;
        let mut normal = [0.0; 3];
        let mut second_normal = [0.0; 3];
        for f in &self.facets {
            let d = if self.dim == 2 {
                point_segment_distance(x, &self.vertices[f.verts[0]], &self.vertices[f.verts[1]])
            } else {
                point_triangle_distance(
                    x,
                    &self.vertices[f.verts[0]],
                    &self.vertices[f.verts[1]],
                    &self.vertices[f.verts[2]],
                )
            };
            if d < best {
                if vdot(&normal, &f.normal) < 1.0 - 1e-12 {
                    second = best;
                    second_normal = normal;
                }
                best = d;
                normal = f.normal;
            } else if d < second && vdot(&f.normal, &normal) < 1.0 - 1e-12 {
                second = d;
                second_normal = f.normal;
            }
        }
        let unique = second - best > tie_tol || vdot(&normal, &second_normal) > 1.0 - 1e-9;
        (normal, best, unique)
    }

    /// Uniform midpoint refinement (each triangle into 4, each tetrahedron
    /// into 8). Gamma0 markers are inherited geometrically.
    pub fn refine_uniform(&self) -> Result<Mesh> {
        let dim = self.dim;
        let mut vertices = self.vertices.clone();
        let mut edge_mid: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, vertices: &mut Vec<Vec3>| -> usize {
            let key = (a.min(b), a.max(b));
            if let Some(&m) = edge_mid.get(&key) {
                return m;
            }
            let pm = vscale(&vadd(&self.vertices[a], &self.vertices[b]), 0.5);
            vertices.push(pm);
            let idx = vertices.len() - 1;
            edge_mid.insert(key, idx);
            idx
        };
        let mut cells: Vec<Vec<usize>> = Vec::new();
        if dim == 2 {
            for cell in &self.cells {
                let [a, b, c, _] = *cell;
                let ab = mid(a, b, &mut vertices);
                let bc = mid(b, c, &mut vertices);
                let ca = mid(c, a, &mut vertices);
                cells.push(vec![a, ab, ca]);
                cells.push(vec![ab, b, bc]);
                cells.push(vec![ca, bc, c]);
                cells.push(vec![ab, bc, ca]);
            }
        } else {
            for cell in &self.cells {
                let [a, b, c, d] = *cell;
                let ab = mid(a, b, &mut vertices);
                let ac = mid(a, c, &mut vertices);
                let ad = mid(a, d, &mut vertices);
                let bc = mid(b, c, &mut vertices);
                let bd = mid(b, d, &mut vertices);
                let cd = mid(c, d, &mut vertices);
                cells.push(vec![a, ab, ac, ad]);
                cells.push(vec![ab, b, bc, bd]);
                cells.push(vec![ac, bc, c, cd]);
                cells.push(vec![ad, bd, cd, d]);
                // interior octahedron split along the ab-cd diagonal
                cells.push(vec![ab, ac, ad, cd]);
                cells.push(vec![ab, ac, bc, cd]);
                cells.push(vec![ab, ad, bd, cd]);
                cells.push(vec![ab, bc, bd, cd]);
            }
        }
        // inherit markers: a child facet centroid lies on a parent facet
        let parent_facets: Vec<_> = self
            .facets
            .iter()
            .filter(|f| f.gamma0)
            .map(|f| f.verts)
            .collect();
        let old_vertices = self.vertices.clone();
        let sdim = dim;
        Mesh::from_raw(dim, vertices, cells, move |c| {
            parent_facets.iter().any(|verts| {
                let d = if sdim == 2 {
                    point_segment_distance(c, &old_vertices[verts[0]], &old_vertices[verts[1]])
                } else {
                    point_triangle_distance(
                        c,
                        &old_vertices[verts[0]],
                        &old_vertices[verts[1]],
                        &old_vertices[verts[2]],
                    )
                };
                d < 1e-9
            })
        })
    }

    /// Serialize to the plain-text mesh format:
    /// line 1 `n V C F`, then V coordinate lines, C cell lines (0-based
    /// vertex indices), F facet lines (vertex indices plus marker, 1 for
    /// Gamma0).
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let n = self.dim;
        writeln!(
            s,
            "{} {} {} {}",
            n,
            self.vertices.len(),
            self.cells.len(),
            self.facets.len()
        )
        .unwrap();
        for v in &self.vertices {
            let coords: Vec<String> = v[..n].iter().map(|x| format!("{x:.17}")).collect();
            writeln!(s, "{}", coords.join(" ")).unwrap();
        }
        for c in &self.cells {
            let idx: Vec<String> = c[..n + 1].iter().map(|i| i.to_string()).collect();
            writeln!(s, "{}", idx.join(" ")).unwrap();
        }
        for f in &self.facets {
            let mut idx: Vec<String> = f.verts[..n].iter().map(|i| i.to_string()).collect();
            idx.push(if f.gamma0 { "1".into() } else { "0".into() });
            writeln!(s, "{}", idx.join(" ")).unwrap();
        }
        s
    }

    /// Parse the plain-text mesh format.
    pub fn from_text(text: &str) -> Result<Mesh> {
        let mut lines = text.lines().enumerate();
        let parse_err = |line: usize, msg: &str| Error::Parse {
            line: line + 1,
            msg: msg.to_string(),
        };
        let (hl, header) = lines
            .next()
            .ok_or_else(|| parse_err(0, "empty mesh file"))?;
        let head: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| parse_err(hl, &format!("bad header: {e}")))?;
        if head.len() != 4 {
            return Err(parse_err(hl, "header must be `n V C F`"));
        }
        let (n, nv, nc, nf) = (head[0], head[1], head[2], head[3]);
        if n != 2 && n != 3 {
            return Err(parse_err(hl, "dimension must be 2 or 3"));
        }
        let mut vertices = Vec::with_capacity(nv);
        for _ in 0..nv {
            let (ln, line) = lines
                .next()
                .ok_or_else(|| parse_err(0, "unexpected end of file in vertices"))?;
            let xs: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| parse_err(ln, &format!("bad coordinate: {e}")))?;
            if xs.len() != n {
                return Err(parse_err(ln, &format!("expected {n} coordinates")));
            }
            let mut v = [0.0; 3];
            v[..n].copy_from_slice(&xs);
            vertices.push(v);
        }
        let mut cells = Vec::with_capacity(nc);
        for _ in 0..nc {
            let (ln, line) = lines
                .next()
                .ok_or_else(|| parse_err(0, "unexpected end of file in cells"))?;
            let ids: Vec<usize> = line
                .split_whitespace()
                .map(|t| t.parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| parse_err(ln, &format!("bad vertex index: {e}")))?;
            if ids.len() != n + 1 {
                return Err(parse_err(ln, &format!("expected {} vertex indices", n + 1)));
            }
            if ids.iter().any(|&i| i >= nv) {
                return Err(parse_err(ln, "vertex index out of range"));
            }
            cells.push(ids);
        }
        let mut marked: Vec<(Vec<usize>, bool)> = Vec::with_capacity(nf);
        for _ in 0..nf {
            let (ln, line) = lines
                .next()
                .ok_or_else(|| parse_err(0, "unexpected end of file in facets"))?;
            let ids: Vec<usize> = line
                .split_whitespace()
                .map(|t| t.parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| parse_err(ln, &format!("bad facet entry: {e}")))?;
            if ids.len() != n + 1 {
                return Err(parse_err(ln, &format!("expected {n} indices plus marker")));
            }
            let marker = ids[n];
            if marker > 1 {
                return Err(parse_err(ln, "marker must be 0 or 1"));
            }
            let mut key = ids[..n].to_vec();
            key.sort_unstable();
            marked.push((key, marker == 1));
        }
        let verts_for_marker = vertices.clone();
        let dim = n;
        let mesh = Mesh::from_raw(n, vertices, cells, move |c| {
            // match the facet whose vertex set centroid coincides
            for (key, g0) in &marked {
                let mut fc = [0.0; 3];
                for &v in key {
                    fc = vadd(&fc, &verts_for_marker[v]);
                }
                let fc = vscale(&fc, 1.0 / dim as f64);
                if vnorm(&vsub(&fc, c)) < 1e-12 {
                    return *g0;
                }
            }
            false
        })?;
        Ok(mesh)
    }

    /// Stable checksum of the canonical text form (FNV-1a).
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for b in self.to_text().as_bytes() {
            h ^= *b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        h
    }
}

fn simplex_signed_volume(dim: usize, vertices: &[Vec3], cell: &[usize]) -> f64 {
    let p0 = &vertices[cell[0]];
    if dim == 2 {
        let a = vsub(&vertices[cell[1]], p0);
        let b = vsub(&vertices[cell[2]], p0);
        0.5 * (a[0] * b[1] - a[1] * b[0])
    } else {
        let a = vsub(&vertices[cell[1]], p0);
        let b = vsub(&vertices[cell[2]], p0);
        let c = vsub(&vertices[cell[3]], p0);
        vdot(&a, &vcross(&b, &c)) / 6.0
    }
}

fn p1_gradients(dim: usize, vertices: &[Vec3], cell: &[usize; 4]) -> [Vec3; 4] {
    // gradients of barycentric coordinates: rows of the inverse edge matrix
    let p0 = &vertices[cell[0]];
    let mut grads = [[0.0; 3]; 4];
    if dim == 2 {
        let a = vsub(&vertices[cell[1]], p0);
        let b = vsub(&vertices[cell[2]], p0);
        let det = a[0] * b[1] - a[1] * b[0];
        grads[1] = [b[1] / det, -b[0] / det, 0.0];
        grads[2] = [-a[1] / det, a[0] / det, 0.0];
    } else {
        let a = vsub(&vertices[cell[1]], p0);
        let b = vsub(&vertices[cell[2]], p0);
        let c = vsub(&vertices[cell[3]], p0);
        let det = vdot(&a, &vcross(&b, &c));
        grads[1] = vscale(&vcross(&b, &c), 1.0 / det);
        grads[2] = vscale(&vcross(&c, &a), 1.0 / det);
        grads[3] = vscale(&vcross(&a, &b), 1.0 / det);
    }
    for k in 0..3 {
        grads[0][k] = -(grads[1][k] + grads[2][k] + grads[3][k]);
    }
    grads
}

fn facet_normal_measure(dim: usize, vertices: &[Vec3], face: &[usize; 3]) -> (Vec3, f64) {
    if dim == 2 {
        let a = &vertices[face[0]];
        let b = &vertices[face[1]];
        let e = vsub(b, a);
        let len = vnorm(&e);
        ([e[1] / len, -e[0] / len, 0.0], len)
    } else {
        let a = &vertices[face[0]];
        let b = &vertices[face[1]];
        let c = &vertices[face[2]];
        let n = vcross(&vsub(b, a), &vsub(c, a));
        let area2 = vnorm(&n);
        (vscale(&n, 1.0 / area2), 0.5 * area2)
    }
}

pub fn point_segment_distance(x: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let ab = vsub(b, a);
    let t = (vdot(&vsub(x, a), &ab) / vdot(&ab, &ab)).clamp(0.0, 1.0);
    vnorm(&vsub(x, &vadd(a, &vscale(&ab, t))))
}

pub fn point_triangle_distance(x: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    // region-based closest point on a triangle
    let ab = vsub(b, a);
    let ac = vsub(c, a);
    let ap = vsub(x, a);
    let d1 = vdot(&ab, &ap);
    let d2 = vdot(&ac, &ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return vnorm(&ap);
    }
    let bp = vsub(x, b);
    let d3 = vdot(&ab, &bp);
    let d4 = vdot(&ac, &bp);
    if d3 >= 0.0 && d4 <= d3 {
        return vnorm(&bp);
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let t = d1 / (d1 - d3);
        return vnorm(&vsub(x, &vadd(a, &vscale(&ab, t))));
    }
    let cp = vsub(x, c);
    let d5 = vdot(&ab, &cp);
    let d6 = vdot(&ac, &cp);
    if d6 >= 0.0 && d5 <= d6 {
        return vnorm(&cp);
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let t = d2 / (d2 - d6);
        return vnorm(&vsub(x, &vadd(a, &vscale(&ac, t))));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let t = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        let bc = vsub(c, b);
        return vnorm(&vsub(x, &vadd(b, &vscale(&bc, t))));
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    let closest = vadd(a, &vadd(&vscale(&ab, v), &vscale(&ac, w)));
    vnorm(&vsub(x, &closest))
}

/// Structured simplicial mesh of an axis-aligned box `[0,w_1] x ... x [0,w_n]`
/// with `m` subdivisions per axis.
pub fn gen_rectangle(
    dim: usize,
    widths: &[f64],
    m: usize,
    gamma0: &Gamma0Select,
) -> Result<Mesh> {
    if dim != 2 && dim != 3 {
        return Err(Error::BadDimension(dim));
    }
    if widths.len() != dim {
        return Err(Error::Mesh(format!("expected {dim} widths")));
    }
    if widths.iter().any(|&w| w <= 0.0) {
        return Err(Error::Mesh("zero or negative width".into()));
    }
    if m < 1 {
        return Err(Error::Mesh("subdivision count must be >= 1".into()));
    }
    let mut vertices = Vec::new();
    let mut cells = Vec::new();
    if dim == 2 {
        let idx = |i: usize, j: usize| j * (m + 1) + i;
        for j in 0..=m {
            for i in 0..=m {
                vertices.push([
                    widths[0] * i as f64 / m as f64,
                    widths[1] * j as f64 / m as f64,
                    0.0,
                ]);
            }
        }
        for j in 0..m {
            for i in 0..m {
                let v00 = idx(i, j);
                let v10 = idx(i + 1, j);
                let v01 = idx(i, j + 1);
                let v11 = idx(i + 1, j + 1);
                cells.push(vec![v00, v10, v11]);
                cells.push(vec![v00, v11, v01]);
            }
        }
    } else {
        let idx = |i: usize, j: usize, k: usize| (k * (m + 1) + j) * (m + 1) + i;
        for k in 0..=m {
            for j in 0..=m {
                for i in 0..=m {
                    vertices.push([
                        widths[0] * i as f64 / m as f64,
                        widths[1] * j as f64 / m as f64,
                        widths[2] * k as f64 / m as f64,
                    ]);
                }
            }
        }
        // Kuhn subdivision of each cube into 6 tetrahedra along vertex paths
        let paths: [[usize; 3]; 6] = [
            [0, 1, 2],
            [0, 2, 1],
            [1, 0, 2],
            [1, 2, 0],
            [2, 0, 1],
            [2, 1, 0],
        ];
        for k in 0..m {
            for j in 0..m {
                for i in 0..m {
                    let base = [i, j, k];
                    for path in &paths {
                        let mut corner = base;
                        let mut tet = vec![idx(corner[0], corner[1], corner[2])];
                        for &axis in path {
                            corner[axis] += 1;
                            tet.push(idx(corner[0], corner[1], corner[2]));
                        }
                        cells.push(tet);
                    }
                }
            }
        }
    }
    let widths_owned = widths.to_vec();
    let sel = gamma0.clone();
    let tol = 1e-12 * widths.iter().cloned().fold(1.0, f64::max);
    Mesh::from_raw(dim, vertices, cells, move |c| match &sel {
        Gamma0Select::All => true,
        Gamma0Select::Sides(sides) => sides
            .iter()
            .any(|s| s.matches(dim, &widths_owned, c, tol)),
    })
}

/// L-shaped domain `[0,2]^2` minus the open quadrant `(1,2)^2`, meshed with
/// `m` subdivisions per unit length.
pub fn gen_lshape(m: usize, gamma0_all: bool) -> Result<Mesh> {
    let mm = 2 * m;
    let h = 1.0 / m as f64;
    let mut index = HashMap::new();
    let mut vertices = Vec::new();
    for j in 0..=mm {
        for i in 0..=mm {
            let x = i as f64 * h;
            let y = j as f64 * h;
            if x <= 1.0 + 1e-12 || y <= 1.0 + 1e-12 {
                index.insert((i, j), vertices.len());
                vertices.push([x, y, 0.0]);
            }
        }
    }
    let mut cells = Vec::new();
    for j in 0..mm {
        for i in 0..mm {
            let inside = |ii: usize, jj: usize| index.contains_key(&(ii, jj));
            if inside(i, j) && inside(i + 1, j) && inside(i, j + 1) && inside(i + 1, j + 1) {
                // skip squares inside the removed quadrant
                let cx = (i as f64 + 0.5) * h;
                let cy = (j as f64 + 0.5) * h;
                if cx > 1.0 && cy > 1.0 {
                    continue;
                }
                let v00 = index[&(i, j)];
                let v10 = index[&(i + 1, j)];
                let v01 = index[&(i, j + 1)];
                let v11 = index[&(i + 1, j + 1)];
                cells.push(vec![v00, v10, v11]);
                cells.push(vec![v00, v11, v01]);
            }
        }
    }
    Mesh::from_raw(2, vertices, cells, move |_| gamma0_all)
}

/// One patch of the boundary cover: an inward translation direction, a
/// piecewise-linear partition-of-unity weight, and the cells supporting it.
#[derive(Debug, Clone)]
pub struct CoverPatch {
    /// Inward unit translation direction; zero for the interior patch.
    pub direction: Vec3,
    /// Per-vertex P1 weight in [0, 1].
    pub weights: Vec<f64>,
    /// Cells on which the weight is not identically zero.
    pub support_cells: Vec<usize>,
}

/// Boundary cover with validated inward-translation property for k >= k0.
#[derive(Debug, Clone)]
pub struct Cover {
    pub patches: Vec<CoverPatch>,
    pub k0: usize,
    /// Depth parameter of the side ramps.
    pub depth: f64,
}

impl Cover {
    /// Strictly positive interior margin after translating every boundary
    /// patch support by its direction / k; errors when some sample point
    /// leaves the domain.
    pub fn translation_margin(&self, mesh: &Mesh, k: usize) -> Result<f64> {
        self.translation_margin_scaled(mesh, k as f64)
    }

    /// Variant with a real-valued translation divisor.
    pub fn translation_margin_scaled(&self, mesh: &Mesh, k: f64) -> Result<f64> {
        let index = mesh.facet_index();
        let locator = crate::grid::CellLocator::new(mesh);
        let mut margin = f64::INFINITY;
        for (pi, patch) in self.patches.iter().enumerate().skip(1) {
            let shift = vscale(&patch.direction, 1.0 / k);
            for &ci in &patch.support_cells {
                let mut points: Vec<Vec3> = mesh.cell(ci).iter().map(|&v| *mesh.vertex(v)).collect();
                points.push(mesh.cell_centroid(ci));
                let c = mesh.cell_centroid(ci);
                for v in mesh.cell(ci) {
                    points.push(vscale(&vadd(&c, mesh.vertex(*v)), 0.5));
                }
                for p in &points {
                    let q = vadd(p, &shift);
                    if locator.locate_wide(&q).is_none() {
                        return Err(Error::CoverValidation(format!(
                            "patch {pi}: sample ({:.4}, {:.4}, {:.4}) translated to ({:.4}, {:.4}, {:.4}) leaves the domain at k = {k}",
                            p[0], p[1], p[2], q[0], q[1], q[2]
                        )));
                    }
                    let d = index.distance(&q);
                    if d <= 0.0 {
                        return Err(Error::CoverValidation(format!(
                            "patch {pi}: sample ({:.4}, {:.4}, {:.4}) translated to ({:.4}, {:.4}, {:.4}) touches the boundary at k = {k}",
                            p[0], p[1], p[2], q[0], q[1], q[2]
                        )));
                    }
                    margin = margin.min(d);
                }
            }
        }
        Ok(margin)
    }
}

/// Build the inward-translation cover of a polygonal/polyhedral boundary:
/// one patch per flat side, one per hinge feature (corner in 2-D, edge and
/// corner in 3-D), plus the untranslated interior patch at index 0.
pub fn build_cover(mesh: &Mesh) -> Result<Cover> {
    build_cover_with_depth(mesh, 0.25)
}

/// Variant with an explicit ramp-depth fraction of the smallest side
/// diameter. Deeper ramps reduce the seam error of the translated partition
/// of unity at the cost of wider patch overlap.
pub fn build_cover_with_depth(mesh: &Mesh, depth_fraction: f64) -> Result<Cover> {
    let dim = mesh.dim();
    let nv = mesh.vertex_count();

    // group boundary facets into flat sides by normal direction
    let mut side_of_facet = vec![usize::MAX; mesh.facets().len()];
    let mut sides: Vec<Vec<usize>> = Vec::new();
    for fi in 0..mesh.facets().len() {
        if side_of_facet[fi] != usize::MAX {
            continue;
        }
        let sid = sides.len();
        let mut stack = vec![fi];
        side_of_facet[fi] = sid;
        let mut members = Vec::new();
        while let Some(f) = stack.pop() {
            members.push(f);
            for g in 0..mesh.facets().len() {
                if side_of_facet[g] != usize::MAX {
                    continue;
                }
                let share = mesh.facets()[f].verts[..dim]
                    .iter()
                    .any(|v| mesh.facets()[g].verts[..dim].contains(v));
                let parallel =
                    vdot(&mesh.facets()[f].normal, &mesh.facets()[g].normal) > 1.0 - 1e-9;
                if share && parallel {
                    side_of_facet[g] = sid;
                    stack.push(g);
                }
            }
        }
        sides.push(members);
    }

    let ring = mesh.boundary_ring_depth();
    // smallest side diameter as the geometric scale of the ramps
    let min_side_diam: f64 = sides
        .iter()
        .map(|members| {
            let mut pts: Vec<&Vec3> = Vec::new();
            for &f in members {
                for &v in mesh.facets()[f].verts[..dim].iter() {
                    pts.push(mesh.vertex(v));
                }
            }
            let mut diam: f64 = 0.0;
            for (i, a) in pts.iter().enumerate() {
                for b in pts.iter().skip(i + 1) {
                    diam = diam.max(vnorm(&vsub(a, b)));
                }
            }
            diam
        })
        .fold(f64::INFINITY, f64::min);
    // depth of the side ramps; plateau covers the one-ring of the boundary
    // (side diameters are face diagonals in 3-D, hence the scaling)
    let side_scale = min_side_diam / ((dim - 1) as f64).sqrt();
    let depth = (2.05 * ring).max(depth_fraction * side_scale);

    // hinge features: boundary vertices (2-D) / edges and vertices (3-D)
    // where several sides meet; each gets the averaged inward direction
    let mut hinge_dirs: HashMap<usize, Vec<Vec3>> = HashMap::new();
    for (sid, members) in sides.iter().enumerate() {
        let _ = sid;
        let n = mesh.facets()[members[0]].normal;
        for &f in members {
            for &v in mesh.facets()[f].verts[..dim].iter() {
                let e = hinge_dirs.entry(v).or_default();
                if !e.iter().any(|m| vdot(m, &n) > 1.0 - 1e-9) {
                    e.push(n);
                }
            }
        }
    }
    // 2-D: hinge vertices have two distinct normals; 3-D: two (edges) or
    // three (corners). Cluster hinge vertices by their normal sets so a cube
    // edge becomes one feature.
    #[derive(Clone)]
    struct Feature {
        verts: Vec<usize>,
        dir: Vec3,
        /// Number of distinct side normals meeting at the feature; higher
        /// order features suppress lower ones with growing radii.
        order: usize,
    }
    let mut features: Vec<Feature> = Vec::new();
    {
        let mut keyed: HashMap<Vec<u64>, Vec<usize>> = HashMap::new();
        for (&v, normals) in hinge_dirs.iter() {
            if normals.len() < 2 {
                continue;
            }
            let mut key: Vec<u64> = normals
                .iter()
                .map(|n| {
                    let q = |x: f64| ((x * 1e9).round() as i64) as u64;
                    q(n[0]).wrapping_mul(31).wrapping_add(q(n[1])).wrapping_mul(31).wrapping_add(q(n[2]))
                })
                .collect();
            key.sort_unstable();
            keyed.entry(key).or_default().push(v);
        }
        let mut groups: Vec<Vec<usize>> = keyed.into_values().collect();
        groups.sort();
        for mut verts in groups {
            verts.sort_unstable();
            let normals = &hinge_dirs[&verts[0]];
            let mut sum = [0.0; 3];
            for n in normals {
                sum = vadd(&sum, n);
            }
            let len = vnorm(&sum);
            if len < 1e-9 {
                return Err(Error::CoverValidation(
                    "opposing side normals meet at a feature; no inward direction".into(),
                ));
            }
            features.push(Feature {
                verts,
                dir: vscale(&sum, -1.0 / len),
                order: normals.len(),
            });
        }
    }

    // distance from a point to one side (its facet union)
    let side_distance = |members: &[usize], p: &Vec3| -> f64 {
        let mut d = f64::INFINITY;
        for &f in members {
            let facet = &mesh.facets()[f];
            let dd = if dim == 2 {
                point_segment_distance(p, mesh.vertex(facet.verts[0]), mesh.vertex(facet.verts[1]))
            } else {
                point_triangle_distance(
                    p,
                    mesh.vertex(facet.verts[0]),
                    mesh.vertex(facet.verts[1]),
                    mesh.vertex(facet.verts[2]),
                )
            };
            d = d.min(dd);
        }
        d
    };
    // suppression ramp: a patch must keep clear of any side it cannot be
    // translated away from
    let up_ramp = |d: f64| ((d - depth) / depth).clamp(0.0, 1.0);
    // feature plateau radii chosen so feature patches cover the suppressed
    // rings of the lower-order patches with margin
    let feat_radius = |order: usize| if order <= 2 { 2.4 * depth } else { 4.8 * depth };
    let side_verts: Vec<std::collections::HashSet<usize>> = sides
        .iter()
        .map(|members| {
            members
                .iter()
                .flat_map(|&f| mesh.facets()[f].verts[..dim].to_vec())
                .collect()
        })
        .collect();

    let mut raw: Vec<Vec<f64>> = Vec::new();
    let mut dirs: Vec<Vec3> = Vec::new();
    for (sj, members) in sides.iter().enumerate() {
        let normal = mesh.facets()[members[0]].normal;
        let mut w = vec![0.0; nv];
        for (vi, weight) in w.iter_mut().enumerate() {
            let p = mesh.vertex(vi);
            let mut val = plateau_ramp(side_distance(members, p), depth);
            if val > 0.0 {
                for (sk, other) in sides.iter().enumerate() {
                    if sk == sj {
                        continue;
                    }
                    let parallel = vdot(&mesh.facets()[other[0]].normal, &normal).abs() > 1.0 - 1e-9;
                    if !parallel {
                        val *= up_ramp(side_distance(other, p));
                    }
                }
            }
            *weight = val;
        }
        raw.push(w);
        dirs.push(vscale(&normal, -1.0));
    }
    for feat in &features {
        let adjacent: Vec<bool> = side_verts
            .iter()
            .map(|sv| feat.verts.iter().any(|v| sv.contains(v)))
            .collect();
        let mut w = vec![0.0; nv];
        for (vi, weight) in w.iter_mut().enumerate() {
            let p = mesh.vertex(vi);
            let mut dist = f64::INFINITY;
            for &fv in &feat.verts {
                dist = dist.min(vnorm(&vsub(p, mesh.vertex(fv))));
            }
            let mut val = plateau_ramp(dist, feat_radius(feat.order));
            if val > 0.0 {
                for (sk, members) in sides.iter().enumerate() {
                    if !adjacent[sk] {
                        val *= up_ramp(side_distance(members, p));
                    }
                }
            }
            *weight = val;
        }
        raw.push(w);
        dirs.push(feat.dir);
    }

    // normalise at vertices: boundary patches own min(S, 1), the interior
    // patch the rest
    let mut patches = Vec::with_capacity(raw.len() + 1);
    let mut interior = vec![0.0; nv];
    let mut scaled: Vec<Vec<f64>> = vec![vec![0.0; nv]; raw.len()];
    for vi in 0..nv {
        let s: f64 = raw.iter().map(|w| w[vi]).sum();
        if s > 0.0 {
            let factor = s.min(1.0) / s;
            for (j, w) in raw.iter().enumerate() {
                scaled[j][vi] = w[vi] * factor;
            }
        }
        interior[vi] = (1.0 - s).max(0.0);
    }
    let support_of = |w: &Vec<f64>| -> Vec<usize> {
        (0..mesh.cell_count())
            .filter(|&ci| mesh.cell(ci).iter().any(|&v| w[v] > 0.0))
            .collect()
    };
    patches.push(CoverPatch {
        direction: [0.0; 3],
        weights: interior.clone(),
        support_cells: support_of(&interior),
    });
    for (j, w) in scaled.into_iter().enumerate() {
        patches.push(CoverPatch {
            direction: dirs[j],
            weights: w.clone(),
            support_cells: support_of(&w),
        });
    }

    // the interior patch must vanish on the one-ring of the boundary, so
    // translated-and-mollified fields vanish at boundary vertices
    for f in mesh.facets() {
        for &v in f.verts[..dim].iter() {
            if patches[0].weights[v] > 1e-12 {
                return Err(Error::CoverValidation(format!(
                    "interior patch weight {:.3e} at boundary vertex {v}; mesh too coarse for the ramp depth {depth:.3}",
                    patches[0].weights[v]
                )));
            }
        }
    }
    for &ci in &patches[0].support_cells {
        let on_boundary = mesh
            .facets()
            .iter()
            .any(|f| f.cell == ci);
        if on_boundary {
            return Err(Error::CoverValidation(
                "interior patch support touches a boundary cell; mesh too coarse".into(),
            ));
        }
    }

    let cover = Cover {
        patches,
        k0: 0,
        depth,
    };
    // find the smallest validated k0 with a healthy interior margin (at
    // least a quarter of the translation length) and confirm dyadic
    // multiples
    let mut k0 = None;
    let mut last_err = String::new();
    for k in [1usize, 2, 3, 4, 6, 8, 12, 16, 24, 32] {
        match cover.translation_margin(mesh, k) {
            Ok(margin) => {
                if margin >= 0.25 / k as f64 {
                    k0 = Some(k);
                    break;
                }
                last_err = format!("margin {margin:.3e} at k = {k} is below a quarter shift");
            }
            Err(e) => last_err = e.to_string(),
        }
    }
    let k0 = k0.ok_or_else(|| {
        Error::CoverValidation(format!(
            "no k <= 32 admits the inward translation ({last_err})"
        ))
    })?;
    for mult in [2usize, 4] {
        cover.translation_margin(mesh, k0 * mult).map_err(|e| {
            Error::CoverValidation(format!("validated k0 = {k0} but k = {} fails: {e}", k0 * mult))
        })?;
    }
    Ok(Cover { k0, ..cover })
}

/// Uniform-bucket index of boundary facets for accelerated distance queries.
pub struct FacetIndex<'a> {
    mesh: &'a Mesh,
    origin: Vec3,
    h: f64,
    shape: [usize; 3],
    bins: Vec<Vec<usize>>,
}

impl<'a> FacetIndex<'a> {
    fn new(mesh: &'a Mesh) -> Self {
        let dim = mesh.dim();
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for vi in 0..mesh.vertex_count() {
            let v = mesh.vertex(vi);
            for a in 0..dim {
                lo[a] = lo[a].min(v[a]);
                hi[a] = hi[a].max(v[a]);
            }
        }
        let n = ((mesh.facets().len() as f64).powf(1.0 / dim as f64).ceil() as usize).max(1);
        let mut h = 0.0f64;
        for a in 0..dim {
            h = h.max((hi[a] - lo[a]) / n as f64);
        }
        let h = h.max(1e-12);
        let mut shape = [1usize; 3];
        for a in 0..dim {
            shape[a] = (((hi[a] - lo[a]) / h).ceil() as usize).max(1) + 1;
        }
        let flat = |i: usize, j: usize, k: usize| (k * shape[1] + j) * shape[0] + i;
        let mut bins = vec![Vec::new(); shape[0] * shape[1] * shape[2]];
        for (fi, f) in mesh.facets().iter().enumerate() {
            let mut flo = [f64::INFINITY; 3];
            let mut fhi = [f64::NEG_INFINITY; 3];
            for &v in f.verts.iter().take(dim) {
                let p = mesh.vertex(v);
                for a in 0..dim {
                    flo[a] = flo[a].min(p[a]);
                    fhi[a] = fhi[a].max(p[a]);
                }
            }
            let mut ilo = [0usize; 3];
            let mut ihi = [0usize; 3];
            for a in 0..dim {
                ilo[a] = (((flo[a] - lo[a]) / h).floor().max(0.0) as usize).min(shape[a] - 1);
                ihi[a] = (((fhi[a] - lo[a]) / h).floor().max(0.0) as usize).min(shape[a] - 1);
            }
            for k in ilo[2]..=ihi[2] {
                for j in ilo[1]..=ihi[1] {
                    for i in ilo[0]..=ihi[0] {
                        bins[flat(i, j, k)].push(fi);
                    }
                }
            }
        }
        FacetIndex {
            mesh,
            origin: lo,
            h,
            shape,
            bins,
        }
    }

    fn facet_distance(&self, fi: usize, x: &Vec3) -> f64 {
        let f = &self.mesh.facets()[fi];
        if self.mesh.dim() == 2 {
            point_segment_distance(x, self.mesh.vertex(f.verts[0]), self.mesh.vertex(f.verts[1]))
        } else {
            point_triangle_distance(
                x,
                self.mesh.vertex(f.verts[0]),
                self.mesh.vertex(f.verts[1]),
                self.mesh.vertex(f.verts[2]),
            )
        }
    }

    /// Distance to the boundary by expanding ring search over the buckets.
    pub fn distance(&self, x: &Vec3) -> f64 {
        let dim = self.mesh.dim();
        let mut centre = [0i64; 3];
        for a in 0..dim {
            centre[a] = ((x[a] - self.origin[a]) / self.h).floor() as i64;
        }
        let max_ring = self.shape.iter().max().cloned().unwrap_or(1) as i64 + 2;
        let mut best = f64::INFINITY;
        for ring in 0..=max_ring {
            // one extra ring past the first hit guards the bucket diagonal
            if best.is_finite() && (ring as f64 - 2.0) * self.h > best {
                break;
            }
            let kr = if dim == 3 { ring } else { 0 };
            for dk in -kr..=kr {
                for dj in -ring..=ring {
                    for di in -ring..=ring {
                        let on_shell =
                            di.abs() == ring || dj.abs() == ring || (dim == 3 && dk.abs() == ring);
                        if !on_shell && ring > 0 {
                            continue;
                        }
                        let (i, j, k) = (centre[0] + di, centre[1] + dj, centre[2] + dk);
                        if i < 0 || j < 0 || k < 0 {
                            continue;
                        }
                        let (i, j, k) = (i as usize, j as usize, k as usize);
                        if i >= self.shape[0] || j >= self.shape[1] || k >= self.shape[2] {
                            continue;
                        }
                        let flat = (k * self.shape[1] + j) * self.shape[0] + i;
                        for &fi in &self.bins[flat] {
                            let d = self.facet_distance(fi, x);
                            if d < best {
                                best = d;
                            }
                        }
                    }
                }
            }
        }
        best
    }
}

/// Ramp equal to 1 up to half the depth and linearly decaying to 0 at depth.
fn plateau_ramp(d: f64, depth: f64) -> f64 {
    if d <= 0.5 * depth {
        1.0
    } else if d >= depth {
        0.0
    } else {
        2.0 * (1.0 - d / depth)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_square_m2_combinatorics() {
        let mesh = gen_rectangle(2, &[1.0, 1.0], 2, &Gamma0Select::All).unwrap();
        assert_eq!(mesh.vertex_count(), 9);
        assert_eq!(mesh.cell_count(), 8);
        assert_eq!(mesh.facets().len(), 8);
        assert_eq!(mesh.gamma0_facets().len(), 8);
    }

    #[test]
    fn unit_square_m1_areas() {
        let mesh = gen_rectangle(2, &[1.0, 1.0], 1, &Gamma0Select::All).unwrap();
        assert_eq!(mesh.cell_count(), 2);
        for ci in 0..2 {
            assert!((mesh.cell_volume(ci) - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn gamma0_bottom_only() {
        let mesh = gen_rectangle(2, &[1.0, 1.0], 2, &Gamma0Select::Sides(vec![Side::YMin])).unwrap();
        assert_eq!(mesh.gamma0_facets().len(), 2);
    }

    #[test]
    fn zero_width_rejected() {
        assert!(gen_rectangle(2, &[0.0, 1.0], 2, &Gamma0Select::All).is_err());
    }

    #[test]
    fn volume_and_perimeter_sums() {
        let mesh = gen_rectangle(2, &[2.0, 0.5], 7, &Gamma0Select::All).unwrap();
        assert!((mesh.total_volume() - 1.0).abs() < 1e-12);
        assert!((mesh.boundary_measure() - 5.0).abs() < 1e-12);
        let mesh3 = gen_rectangle(3, &[1.0, 1.0, 1.0], 3, &Gamma0Select::All).unwrap();
        assert!((mesh3.total_volume() - 1.0).abs() < 1e-12 * mesh3.cell_count() as f64);
        assert!((mesh3.boundary_measure() - 6.0).abs() < 1e-12 * mesh3.facets().len() as f64);
    }

    #[test]
    fn discrete_divergence_theorem() {
        // linear field v = A x + b: sum of cell div integrals equals the
        // boundary flux; validates normals and measures together
        for (dim, mesh) in [
            (2usize, gen_rectangle(2, &[1.0, 1.0], 5, &Gamma0Select::All).unwrap()),
            (3usize, gen_rectangle(3, &[1.0, 1.0, 1.0], 2, &Gamma0Select::All).unwrap()),
        ] {
            let a = [[0.3, -0.7, 0.2], [1.1, 0.4, -0.5], [0.0, 0.6, 0.9]];
            let b = [0.1, -0.2, 0.3];
            let v = |x: &Vec3| -> Vec3 {
                let mut out = b;
                for i in 0..3 {
                    for j in 0..3 {
                        out[i] += a[i][j] * x[j];
                    }
                }
                out
            };
            let div: f64 = (0..dim).map(|i| a[i][i]).sum();
            let lhs: f64 = (0..mesh.cell_count()).map(|c| mesh.cell_volume(c) * div).sum();
            let rhs: f64 = mesh
                .facets()
                .iter()
                .map(|f| vdot(&v(&f.centroid(&mesh)), &f.normal) * f.measure)
                .sum();
            assert!((lhs - rhs).abs() < 1e-10, "dim {dim}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn boundary_distance_values() {
        let mesh = gen_rectangle(2, &[1.0, 1.0], 4, &Gamma0Select::All).unwrap();
        assert!((mesh.boundary_distance(&[0.5, 0.5, 0.0]).unwrap() - 0.5).abs() < 1e-14);
        assert!(mesh.boundary_distance(&[0.0, 0.3, 0.0]).unwrap() < 1e-14);
        assert!((mesh.boundary_distance(&[0.25, 0.5, 0.0]).unwrap() - 0.25).abs() < 1e-14);
        assert!(mesh.boundary_distance(&[1.5, 0.5, 0.0]).is_err());
    }

    #[test]
    fn refinement_preserves_volume_and_markers() {
        let mesh = gen_rectangle(2, &[1.0, 1.0], 2, &Gamma0Select::Sides(vec![Side::YMin])).unwrap();
        let fine = mesh.refine_uniform().unwrap();
        assert_eq!(fine.cell_count(), 4 * mesh.cell_count());
        assert!((fine.total_volume() - 1.0).abs() < 1e-12);
        assert_eq!(fine.gamma0_facets().len(), 4);
        let mesh3 = gen_rectangle(3, &[1.0, 1.0, 1.0], 1, &Gamma0Select::All).unwrap();
        let fine3 = mesh3.refine_uniform().unwrap();
        assert_eq!(fine3.cell_count(), 8 * mesh3.cell_count());
        assert!((fine3.total_volume() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn text_roundtrip() {
        let mesh = gen_rectangle(2, &[1.0, 2.0], 3, &Gamma0Select::Sides(vec![Side::XMin])).unwrap();
        let text = mesh.to_text();
        let back = Mesh::from_text(&text).unwrap();
        assert_eq!(back.vertex_count(), mesh.vertex_count());
        assert_eq!(back.cell_count(), mesh.cell_count());
        assert_eq!(back.gamma0_facets().len(), mesh.gamma0_facets().len());
        assert_eq!(back.to_text(), text);
        assert_eq!(back.checksum(), mesh.checksum());
    }

    #[test]
    fn malformed_text_reports_line() {
        let err = Mesh::from_text("2 2 1 0\n0 0\nnot a number\n0 1 2\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn cover_unit_square() {
        let mesh = gen_rectangle(2, &[1.0, 1.0], 16, &Gamma0Select::All).unwrap();
        let cover = build_cover(&mesh).unwrap();
        // 4 sides + 4 corners + interior
        assert_eq!(cover.patches.len(), 9);
        assert!(cover.k0 >= 1);
        // partition of unity at vertices
        for vi in 0..mesh.vertex_count() {
            let s: f64 = cover.patches.iter().map(|p| p.weights[vi]).sum();
            assert!((s - 1.0).abs() < 1e-12, "PU at vertex {vi}: {s}");
        }
        // interior patch: zero direction, weight 1 at the centroid region
        assert_eq!(cover.patches[0].direction, [0.0; 3]);
        let center = mesh
            .locate(&[0.5, 0.5, 0.0], 1e-12)
            .map(|(ci, _)| ci)
            .unwrap();
        let winterior: f64 = mesh
            .cell(center)
            .iter()
            .map(|&v| cover.patches[0].weights[v])
            .sum::<f64>()
            / 3.0;
        assert!(winterior > 0.99, "interior weight at centre: {winterior}");
        // dyadic translations validated
        assert!(cover.translation_margin(&mesh, cover.k0).unwrap() > 0.0);
        assert!(cover.translation_margin(&mesh, 2 * cover.k0).unwrap() > 0.0);
    }

    #[test]
    fn cover_lshape() {
        let mesh = gen_lshape(8, true).unwrap();
        let cover = build_cover(&mesh).unwrap();
        // 6 sides + 6 corners (4 convex outer, 1 reentrant, plus the two
        // notch corners) + interior; at least 6 boundary patches
        assert!(cover.patches.len() - 1 >= 6, "got {} patches", cover.patches.len() - 1);
        let margin = cover.translation_margin(&mesh, cover.k0).unwrap();
        assert!(margin > 0.0);
        for vi in 0..mesh.vertex_count() {
            let s: f64 = cover.patches.iter().map(|p| p.weights[vi]).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cover_3d_box() {
        let mesh = gen_rectangle(3, &[1.0, 1.0, 1.0], 8, &Gamma0Select::All).unwrap();
        let cover = build_cover(&mesh).unwrap();
        // 6 faces + 12 edges + 8 corners + interior
        assert_eq!(cover.patches.len(), 27);
        assert!(cover.translation_margin(&mesh, cover.k0).unwrap() > 0.0);
    }
}

//! Discrete analogues of the function spaces: P1 displacements, P0 elastic
//! strains, and plastic measures with an absolutely continuous cell part
//! plus a singular part on Dirichlet facets, together with weak* and strict
//! convergence diagnostics.

use crate::error::{Error, Result};
use crate::mesh::{vadd, vdot, vscale, BoundaryFacet, Mesh, Vec3};
use crate::tensor::{sym_outer, SymTensor};
use serde::{Deserialize, Serialize};

/// Piecewise-linear vector field given by vertex values (stride = dim).
#[derive(Debug, Clone, PartialEq)]
pub struct Displacement {
    dim: usize,
    values: Vec<f64>,
}

impl Displacement {
    pub fn zero(mesh: &Mesh) -> Self {
        Displacement {
            dim: mesh.dim(),
            values: vec![0.0; mesh.dim() * mesh.vertex_count()],
        }
    }

    pub fn interpolate(mesh: &Mesh, f: impl Fn(&Vec3) -> Vec3) -> Self {
        let dim = mesh.dim();
        let mut values = vec![0.0; dim * mesh.vertex_count()];
        for vi in 0..mesh.vertex_count() {
            let v = f(mesh.vertex(vi));
            values[dim * vi..dim * vi + dim].copy_from_slice(&v[..dim]);
        }
        Displacement { dim, values }
    }

    pub fn from_values(dim: usize, values: Vec<f64>) -> Self {
        Displacement { dim, values }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn vertex_value(&self, v: usize) -> Vec3 {
        let mut out = [0.0; 3];
        out[..self.dim].copy_from_slice(&self.values[self.dim * v..self.dim * v + self.dim]);
        out
    }

    pub fn set_vertex_value(&mut self, v: usize, val: &Vec3) {
        self.values[self.dim * v..self.dim * v + self.dim].copy_from_slice(&val[..self.dim]);
    }

    pub fn add(&self, other: &Displacement) -> Displacement {
        let values = self
            .values
            .iter()
            .zip(other.values.iter())
            .map(|(a, b)| a + b)
            .collect();
        Displacement {
            dim: self.dim,
            values,
        }
    }

    pub fn sub(&self, other: &Displacement) -> Displacement {
        let values = self
            .values
            .iter()
            .zip(other.values.iter())
            .map(|(a, b)| a - b)
            .collect();
        Displacement {
            dim: self.dim,
            values,
        }
    }

    pub fn scale(&self, s: f64) -> Displacement {
        Displacement {
            dim: self.dim,
            values: self.values.iter().map(|a| a * s).collect(),
        }
    }

    /// Value at a quadrature point of a cell from barycentric coordinates.
    pub fn eval_in_cell(&self, mesh: &Mesh, ci: usize, lam: &[f64]) -> Vec3 {
        let mut out = [0.0; 3];
        for (l, &v) in mesh.cell(ci).iter().enumerate() {
            let val = self.vertex_value(v);
            out = vadd(&out, &vscale(&val, lam[l]));
        }
        out
    }

    /// `L^p` norm by fixed mid-edge (2-D) / interior-point (3-D) quadrature.
    pub fn lp_norm(&self, mesh: &Mesh, p: f64) -> f64 {
        let mut acc = 0.0;
        for ci in 0..mesh.cell_count() {
            let vol = mesh.cell_volume(ci);
            for (lam, w) in cell_quadrature(mesh.dim()) {
                let v = self.eval_in_cell(mesh, ci, &lam);
                acc += w * vol * vnorm3(&v).powf(p);
            }
        }
        acc.powf(1.0 / p)
    }

    pub fn l1_norm(&self, mesh: &Mesh) -> f64 {
        self.lp_norm(mesh, 1.0)
    }

    pub fn l2_norm(&self, mesh: &Mesh) -> f64 {
        self.lp_norm(mesh, 2.0)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn vnorm3(v: &Vec3) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Fixed quadrature rules (degree 2): mid-edge rule on triangles, 4-point
/// rule on tetrahedra.
pub fn cell_quadrature(dim: usize) -> Vec<(Vec<f64>, f64)> {
    if dim == 2 {
        vec![
            (vec![0.5, 0.5, 0.0], 1.0 / 3.0),
            (vec![0.0, 0.5, 0.5], 1.0 / 3.0),
            (vec![0.5, 0.0, 0.5], 1.0 / 3.0),
        ]
    } else {
        let a = 0.585_410_196_624_968_5;
        let b = 0.138_196_601_125_010_5;
        vec![
            (vec![a, b, b, b], 0.25),
            (vec![b, a, b, b], 0.25),
            (vec![b, b, a, b], 0.25),
            (vec![b, b, b, a], 0.25),
        ]
    }
}

/// Facet quadrature (degree 2): 2-point Gauss on segments, mid-edge rule on
/// triangles. Returns barycentric weights over the facet vertices.
pub fn facet_quadrature(dim: usize) -> Vec<(Vec<f64>, f64)> {
    if dim == 2 {
        let g = 1.0 / 3f64.sqrt();
        vec![
            (vec![0.5 * (1.0 - g), 0.5 * (1.0 + g)], 0.5),
            (vec![0.5 * (1.0 + g), 0.5 * (1.0 - g)], 0.5),
        ]
    } else {
        vec![
            (vec![0.5, 0.5, 0.0], 1.0 / 3.0),
            (vec![0.0, 0.5, 0.5], 1.0 / 3.0),
            (vec![0.5, 0.0, 0.5], 1.0 / 3.0),
        ]
    }
}

/// Per-cell elastic strain (P0).
#[derive(Debug, Clone)]
pub struct ElasticStrain {
    pub cells: Vec<SymTensor>,
}

impl ElasticStrain {
    pub fn zero(mesh: &Mesh) -> Self {
        ElasticStrain {
            cells: vec![SymTensor::zero(mesh.dim()); mesh.cell_count()],
        }
    }

    pub fn l2_norm(&self, mesh: &Mesh) -> f64 {
        self.cells
            .iter()
            .enumerate()
            .map(|(ci, e)| mesh.cell_volume(ci) * e.dot(e))
            .sum::<f64>()
            .sqrt()
    }

    pub fn l2_distance(&self, mesh: &Mesh, other: &ElasticStrain) -> f64 {
        self.cells
            .iter()
            .zip(other.cells.iter())
            .enumerate()
            .map(|(ci, (a, b))| {
                let d = a.sub(b);
                mesh.cell_volume(ci) * d.dot(&d)
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// Plastic strain as a measure: a P0 density on cells plus singular facet
/// amplitudes on the Dirichlet facets (measure = amplitude x facet measure).
#[derive(Debug, Clone)]
pub struct PlasticMeasure {
    pub ac: Vec<SymTensor>,
    /// One amplitude per entry of `mesh.gamma0_facets()`.
    pub singular: Vec<SymTensor>,
}

impl PlasticMeasure {
    pub fn zero(mesh: &Mesh) -> Self {
        PlasticMeasure {
            ac: vec![SymTensor::zero(mesh.dim()); mesh.cell_count()],
            singular: vec![SymTensor::zero(mesh.dim()); mesh.gamma0_facets().len()],
        }
    }

    /// Validate that every stored tensor is trace-free (relative 1e-10).
    pub fn validate_trace_free(&self) -> Result<()> {
        for t in self.ac.iter().chain(self.singular.iter()) {
            t.require_deviatoric()?;
        }
        Ok(())
    }

    pub fn scale(&self, s: f64) -> PlasticMeasure {
        PlasticMeasure {
            ac: self.ac.iter().map(|t| t.scale(s)).collect(),
            singular: self.singular.iter().map(|t| t.scale(s)).collect(),
        }
    }
}

/// Total variation of a plastic measure.
pub fn total_variation(mesh: &Mesh, p: &PlasticMeasure) -> f64 {
    let mut tv = 0.0;
    for (ci, t) in p.ac.iter().enumerate() {
        tv += t.norm() * mesh.cell_volume(ci);
    }
    for (gi, &fi) in mesh.gamma0_facets().iter().enumerate() {
        tv += p.singular[gi].norm() * mesh.facets()[fi].measure;
    }
    tv
}

/// Exact per-cell symmetric gradient of a P1 field.
pub fn sym_gradient(mesh: &Mesh, u: &Displacement) -> Vec<SymTensor> {
    let dim = mesh.dim();
    (0..mesh.cell_count())
        .map(|ci| {
            let grads = mesh.cell_grads(ci);
            let mut e = SymTensor::zero(dim);
            for (l, &v) in mesh.cell(ci).iter().enumerate() {
                e = e.add(&sym_outer(dim, &u.vertex_value(v), &grads[l]));
            }
            e
        })
        .collect()
}

/// Per-cell divergence of a P1 field.
pub fn divergence(mesh: &Mesh, u: &Displacement) -> Vec<f64> {
    sym_gradient(mesh, u).iter().map(|e| e.trace()).collect()
}

/// Average of a P1 field over a boundary facet (the discrete trace).
pub fn facet_average(mesh: &Mesh, u: &Displacement, facet: &BoundaryFacet) -> Vec3 {
    let n = mesh.dim();
    let mut acc = [0.0; 3];
    for &v in facet.verts.iter().take(n) {
        acc = vadd(&acc, &u.vertex_value(v));
    }
    vscale(&acc, 1.0 / n as f64)
}

/// Admissible triplet: displacement, elastic strain, plastic measure, datum.
#[derive(Debug, Clone)]
pub struct Triplet {
    pub u: Displacement,
    pub e: ElasticStrain,
    pub p: PlasticMeasure,
    /// Boundary datum interpolated at the vertices.
    pub w: Displacement,
    pub regular: bool,
}

impl Triplet {
    /// Regular triplet: hard boundary condition and no singular part. The
    /// plastic density is assembled per cell as `Eu - e`, which makes the
    /// kinematic identity exact.
    pub fn regular(mesh: &Mesh, u: Displacement, e: ElasticStrain, w: Displacement) -> Result<Triplet> {
        let scale = u.max_abs().max(w.max_abs()).max(1e-30);
        for vi in 0..mesh.vertex_count() {
            if mesh.is_gamma0_vertex(vi) {
                let du = u.vertex_value(vi);
                let dw = w.vertex_value(vi);
                let diff = vnorm3(&[du[0] - dw[0], du[1] - dw[1], du[2] - dw[2]]);
                if diff > 1e-12 * scale {
                    return Err(Error::BcViolation(format!(
                        "u != w at Gamma0 vertex {vi} (|diff| = {diff:.3e})"
                    )));
                }
            }
        }
        let strains = sym_gradient(mesh, &u);
        let mut p = PlasticMeasure::zero(mesh);
        for (ci, eu) in strains.iter().enumerate() {
            p.ac[ci] = eu.sub(&e.cells[ci]);
        }
        p.validate_trace_free()?;
        Ok(Triplet {
            u,
            e,
            p,
            w,
            regular: true,
        })
    }

    /// Relaxed triplet: the singular amplitude on each Dirichlet facet is
    /// `(w - u) (.) nu` from facet-averaged traces; requires the per-facet
    /// normal-trace constraint `(w - u) . nu = 0`.
    pub fn relaxed(mesh: &Mesh, u: Displacement, e: ElasticStrain, w: Displacement) -> Result<Triplet> {
        let dim = mesh.dim();
        let strains = sym_gradient(mesh, &u);
        let mut p = PlasticMeasure::zero(mesh);
        for (ci, eu) in strains.iter().enumerate() {
            p.ac[ci] = eu.sub(&e.cells[ci]);
        }
        let scale = u.max_abs().max(w.max_abs()).max(1e-30);
        for (gi, &fi) in mesh.gamma0_facets().iter().enumerate() {
            let f = &mesh.facets()[fi];
            let slip = slip_vector(mesh, &u, &w, f);
            let normal_trace = vdot(&slip, &f.normal);
            if normal_trace.abs() > 1e-10 * scale.max(1.0) {
                return Err(Error::BcViolation(format!(
                    "facet-average normal trace {normal_trace:.3e} on Gamma0 facet {fi}"
                )));
            }
            p.singular[gi] = sym_outer(dim, &slip, &f.normal);
        }
        p.validate_trace_free()?;
        Ok(Triplet {
            u,
            e,
            p,
            w,
            regular: false,
        })
    }

    /// Kinematic admissibility residual, zero by assembly.
    pub fn kinematic_residual(&self, mesh: &Mesh) -> f64 {
        let strains = sym_gradient(mesh, &self.u);
        strains
            .iter()
            .zip(self.e.cells.iter().zip(self.p.ac.iter()))
            .map(|(eu, (e, p))| eu.sub(&e.add(p)).norm())
            .fold(0.0, f64::max)
    }
}

/// Facet-averaged slip `(w - u)` on a boundary facet.
pub fn slip_vector(mesh: &Mesh, u: &Displacement, w: &Displacement, f: &BoundaryFacet) -> Vec3 {
    let ub = facet_average(mesh, u, f);
    let wb = facet_average(mesh, w, f);
    [wb[0] - ub[0], wb[1] - ub[1], wb[2] - ub[2]]
}

/// Smooth M_D-valued test fields: deviatoric basis tensors times monomials
/// of degree <= 2, times a cubic cutoff vanishing on the free boundary part
/// when it is nonempty.
pub struct TestField {
    pub tensor: SymTensor,
    monomial: (usize, usize, usize),
    cutoff_depth: f64,
    norm_scale: f64,
}

impl TestField {
    pub fn eval(&self, mesh: &Mesh, x: &Vec3) -> SymTensor {
        let (a, b, c) = self.monomial;
        let m = x[0].powi(a as i32) * x[1].powi(b as i32) * x[2].powi(c as i32);
        let cut = if self.cutoff_depth > 0.0 {
            let d = free_boundary_distance(mesh, x);
            smoothstep((d / self.cutoff_depth).min(1.0))
        } else {
            1.0
        };
        self.tensor.scale(m * cut / self.norm_scale)
    }
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

fn free_boundary_distance(mesh: &Mesh, x: &Vec3) -> f64 {
    let mut best = f64::INFINITY;
    for f in mesh.facets() {
        if f.gamma0 {
            continue;
        }
        let d = if mesh.dim() == 2 {
            crate::mesh::point_segment_distance(x, mesh.vertex(f.verts[0]), mesh.vertex(f.verts[1]))
        } else {
            crate::mesh::point_triangle_distance(
                x,
                mesh.vertex(f.verts[0]),
                mesh.vertex(f.verts[1]),
                mesh.vertex(f.verts[2]),
            )
        };
        best = best.min(d);
    }
    best
}

/// The deterministic test family: tensor basis x monomials up to degree 2
/// (12 fields in 2-D, 50 in 3-D).
pub fn test_fields(mesh: &Mesh) -> Vec<TestField> {
    let dim = mesh.dim();
    let monomials: Vec<(usize, usize, usize)> = if dim == 2 {
        vec![(0, 0, 0), (1, 0, 0), (0, 1, 0), (2, 0, 0), (1, 1, 0), (0, 2, 0)]
    } else {
        vec![
            (0, 0, 0),
            (1, 0, 0),
            (0, 1, 0),
            (0, 0, 1),
            (2, 0, 0),
            (0, 2, 0),
            (0, 0, 2),
            (1, 1, 0),
            (1, 0, 1),
            (0, 1, 1),
        ]
    };
    let has_free_boundary = mesh.facets().iter().any(|f| !f.gamma0);
    let cutoff_depth = if has_free_boundary {
        2.0 * mesh.boundary_mesh_size()
    } else {
        0.0
    };
    let mut fields = Vec::new();
    let diam: f64 = mesh.max_cell_diameter() * (mesh.cell_count() as f64).powf(1.0 / dim as f64);
    for tensor in crate::tensor::deviatoric_basis(dim) {
        for &monomial in &monomials {
            let deg = monomial.0 + monomial.1 + monomial.2;
            fields.push(TestField {
                tensor,
                monomial,
                cutoff_depth,
                norm_scale: diam.max(1.0).powi(deg as i32),
            });
        }
    }
    fields
}

/// Pairing of a plastic measure with a smooth test field,
/// `sum over cells of int phi : p + sum over facets of int phi : P`.
pub fn pair_measure(mesh: &Mesh, p: &PlasticMeasure, phi: &TestField) -> f64 {
    let mut acc = 0.0;
    for (ci, t) in p.ac.iter().enumerate() {
        let vol = mesh.cell_volume(ci);
        for (lam, w) in cell_quadrature(mesh.dim()) {
            let mut x = [0.0; 3];
            for (l, &v) in mesh.cell(ci).iter().enumerate() {
                x = vadd(&x, &vscale(mesh.vertex(v), lam[l]));
            }
            acc += w * vol * phi.eval(mesh, &x).dot(t);
        }
    }
    for (gi, &fi) in mesh.gamma0_facets().iter().enumerate() {
        let f = &mesh.facets()[fi];
        for (lam, w) in facet_quadrature(mesh.dim()) {
            let mut x = [0.0; 3];
            for (l, wl) in lam.iter().enumerate() {
                x = vadd(&x, &vscale(mesh.vertex(f.verts[l]), *wl));
            }
            acc += w * f.measure * phi.eval(mesh, &x).dot(&p.singular[gi]);
        }
    }
    acc
}

/// Weak* gap of the last sequence element against the limit: the maximum
/// over the test family of the pairing difference.
pub fn weakstar_gap(
    mesh: &Mesh,
    p_seq: &[PlasticMeasure],
    p: &PlasticMeasure,
    tests: &[TestField],
) -> f64 {
    match p_seq.last() {
        None => 0.0,
        Some(last) => tests
            .iter()
            .map(|phi| (pair_measure(mesh, last, phi) - pair_measure(mesh, p, phi)).abs())
            .fold(0.0, f64::max),
    }
}

/// Gap curve over the whole sequence, for convergence diagnostics.
pub fn weakstar_gap_curve(
    mesh: &Mesh,
    p_seq: &[PlasticMeasure],
    p: &PlasticMeasure,
    tests: &[TestField],
) -> Vec<f64> {
    p_seq
        .iter()
        .map(|pk| {
            tests
                .iter()
                .map(|phi| (pair_measure(mesh, pk, phi) - pair_measure(mesh, p, phi)).abs())
                .fold(0.0, f64::max)
        })
        .collect()
}

/// Strict gap: weak* gap plus the total-variation mismatch.
pub fn strict_gap(
    mesh: &Mesh,
    p_seq: &[PlasticMeasure],
    p: &PlasticMeasure,
    tests: &[TestField],
) -> f64 {
    match p_seq.last() {
        None => 0.0,
        Some(last) => {
            weakstar_gap(mesh, p_seq, p, tests)
                + (total_variation(mesh, last) - total_variation(mesh, p)).abs()
        }
    }
}

pub fn strict_gap_curve(
    mesh: &Mesh,
    p_seq: &[PlasticMeasure],
    p: &PlasticMeasure,
    tests: &[TestField],
) -> Vec<f64> {
    let ws = weakstar_gap_curve(mesh, p_seq, p, tests);
    p_seq
        .iter()
        .zip(ws)
        .map(|(pk, w)| w + (total_variation(mesh, pk) - total_variation(mesh, p)).abs())
        .collect()
}

/// Serializable field snapshot.
#[derive(Debug, Serialize, Deserialize)]
pub struct FieldSnapshot {
    pub mesh_checksum: u64,
    pub u: Vec<f64>,
    pub e: Vec<Vec<f64>>,
    pub p_ac: Vec<Vec<f64>>,
    pub p_singular: Vec<Vec<f64>>,
}

impl FieldSnapshot {
    pub fn from_triplet(mesh: &Mesh, t: &Triplet) -> FieldSnapshot {
        FieldSnapshot {
            mesh_checksum: mesh.checksum(),
            u: t.u.values().to_vec(),
            e: t.e.cells.iter().map(|s| s.components()).collect(),
            p_ac: t.p.ac.iter().map(|s| s.components()).collect(),
            p_singular: t.p.singular.iter().map(|s| s.components()).collect(),
        }
    }
}

//! Assembly and evaluation of the classical functional over regular
//! triplets, the relaxed functional over general triplets, and the reduced
//! displacement-only form obtained by eliminating the elastic/plastic split
//! pointwise.

use crate::error::{Error, Result};
use crate::fields::{slip_vector, sym_gradient, Displacement, ElasticStrain, PlasticMeasure, Triplet};
use crate::mesh::{vdot, Mesh, Vec3};
use crate::tensor::{sym_outer, ElasticModuli, ReducedDensity, SymTensor, YieldSet};
use serde::{Deserialize, Serialize};

/// Closed-form boundary datum families evaluable on the closed domain.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum BoundaryDatum {
    Zero,
    /// `w(x) = A x + b`.
    Affine { a: [[f64; 3]; 3], b: [f64; 3] },
    /// Simple shear `w(x) = (gamma x_2, 0, 0)`.
    Shear { gamma: f64 },
    /// Compact C^2 bump `amp * max(0, 1 - |x-c|^2/r^2)^3`.
    Bump {
        center: [f64; 3],
        radius: f64,
        amp: [f64; 3],
    },
}

impl BoundaryDatum {
    pub fn eval(&self, x: &Vec3) -> Vec3 {
        match self {
            BoundaryDatum::Zero => [0.0; 3],
            BoundaryDatum::Affine { a, b } => {
                let mut out = *b;
                for i in 0..3 {
                    for j in 0..3 {
                        out[i] += a[i][j] * x[j];
                    }
                }
                out
            }
            BoundaryDatum::Shear { gamma } => [gamma * x[1], 0.0, 0.0],
            BoundaryDatum::Bump { center, radius, amp } => {
                let mut r2 = 0.0;
                for i in 0..3 {
                    let d = x[i] - center[i];
                    r2 += d * d;
                }
                let q = 1.0 - r2 / (radius * radius);
                if q <= 0.0 {
                    [0.0; 3]
                } else {
                    let s = q * q * q;
                    [amp[0] * s, amp[1] * s, amp[2] * s]
                }
            }
        }
    }

    /// The constant symmetric gradient for affine data, when available.
    pub fn affine_sym_gradient(&self, dim: usize) -> Option<SymTensor> {
        match self {
            BoundaryDatum::Zero => Some(SymTensor::zero(dim)),
            BoundaryDatum::Affine { a, .. } => {
                let mut t = SymTensor::zero(dim);
                for i in 0..dim {
                    for j in i..dim {
                        t.set(i, j, 0.5 * (a[i][j] + a[j][i]));
                    }
                }
                Some(t)
            }
            BoundaryDatum::Shear { gamma } => {
                let mut t = SymTensor::zero(dim);
                t.set(0, 1, 0.5 * gamma);
                Some(t)
            }
            BoundaryDatum::Bump { .. } => None,
        }
    }
}

/// A solvable problem instance: mesh with marked Dirichlet boundary,
/// elastic moduli, yield set, and boundary datum.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub mesh: Mesh,
    pub moduli: ElasticModuli,
    pub yield_set: YieldSet,
    pub datum: BoundaryDatum,
}

impl Scenario {
    pub fn new(
        mesh: Mesh,
        moduli: ElasticModuli,
        yield_set: YieldSet,
        datum: BoundaryDatum,
    ) -> Result<Scenario> {
        if mesh.gamma0_facets().is_empty() {
            return Err(Error::Scenario("Gamma0 must be nonempty".into()));
        }
        if moduli.dim() != mesh.dim() || yield_set.dim() != mesh.dim() {
            return Err(Error::Scenario("dimension mismatch".into()));
        }
        Ok(Scenario {
            mesh,
            moduli,
            yield_set,
            datum,
        })
    }

    pub fn density(&self) -> ReducedDensity {
        ReducedDensity::new(self.moduli.clone(), self.yield_set.clone())
            .expect("dimensions validated at construction")
    }

    pub fn datum_field(&self) -> Displacement {
        Displacement::interpolate(&self.mesh, |x| self.datum.eval(x))
    }

    pub fn full_dirichlet(&self) -> bool {
        self.mesh.gamma0_facets().len() == self.mesh.facets().len()
    }
}

/// Energy split into elastic, bulk-dissipation and boundary-dissipation
/// parts.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct EnergyBreakdown {
    pub elastic: f64,
    pub bulk: f64,
    pub boundary: f64,
    pub total: f64,
}

impl EnergyBreakdown {
    pub fn new(elastic: f64, bulk: f64, boundary: f64) -> EnergyBreakdown {
        EnergyBreakdown {
            elastic,
            bulk,
            boundary,
            total: elastic + bulk + boundary,
        }
    }

    pub fn zero() -> EnergyBreakdown {
        EnergyBreakdown::new(0.0, 0.0, 0.0)
    }
}

/// Value of the classical functional: finite on admissible regular pairs,
/// explicitly infeasible otherwise.
#[derive(Debug, Clone)]
pub enum FValue {
    Finite(EnergyBreakdown),
    Infeasible(String),
}

impl FValue {
    pub fn finite(&self) -> Option<EnergyBreakdown> {
        match self {
            FValue::Finite(e) => Some(*e),
            FValue::Infeasible(_) => None,
        }
    }
}

/// Classical functional on regular triplets: elastic energy plus the bulk
/// dissipation of the density `Eu - e`; boundary term zero. Boundary-
/// condition violations yield the infeasible marker.
pub fn eval_f(s: &Scenario, t: &Triplet) -> Result<FValue> {
    if !t.regular {
        return Ok(FValue::Infeasible("triplet is not regular".into()));
    }
    let mesh = &s.mesh;
    let scale = t.u.max_abs().max(t.w.max_abs()).max(1e-30);
    for vi in 0..mesh.vertex_count() {
        if mesh.is_gamma0_vertex(vi) {
            let du = t.u.vertex_value(vi);
            let dw = t.w.vertex_value(vi);
            let diff = ((du[0] - dw[0]).powi(2) + (du[1] - dw[1]).powi(2) + (du[2] - dw[2]).powi(2))
                .sqrt();
            if diff > 1e-10 * scale {
                return Ok(FValue::Infeasible(format!(
                    "u != w at Gamma0 vertex {vi} (|diff| = {diff:.3e})"
                )));
            }
        }
    }
    let strains = sym_gradient(mesh, &t.u);
    let mut elastic = 0.0;
    let mut bulk = 0.0;
    for ci in 0..mesh.cell_count() {
        let vol = mesh.cell_volume(ci);
        elastic += vol * s.moduli.energy(&t.e.cells[ci]);
        let p = strains[ci].sub(&t.e.cells[ci]);
        p.require_deviatoric()?;
        bulk += vol * s.yield_set.support_unchecked(&p.deviator());
    }
    Ok(FValue::Finite(EnergyBreakdown::new(elastic, bulk, 0.0)))
}

/// Relaxed functional: elastic energy, bulk dissipation of the plastic
/// density, and boundary dissipation of the singular facet amplitudes.
pub fn eval_g(s: &Scenario, t: &Triplet) -> Result<EnergyBreakdown> {
    let mesh = &s.mesh;
    let mut elastic = 0.0;
    let mut bulk = 0.0;
    for ci in 0..mesh.cell_count() {
        let vol = mesh.cell_volume(ci);
        elastic += vol * s.moduli.energy(&t.e.cells[ci]);
        t.p.ac[ci].require_deviatoric()?;
        bulk += vol * s.yield_set.support_unchecked(&t.p.ac[ci].deviator());
    }
    let mut boundary = 0.0;
    for (gi, &fi) in mesh.gamma0_facets().iter().enumerate() {
        let f = &mesh.facets()[fi];
        t.p.singular[gi].require_deviatoric()?;
        boundary += f.measure * s.yield_set.support_unchecked(&t.p.singular[gi].deviator());
    }
    Ok(EnergyBreakdown::new(elastic, bulk, boundary))
}

/// Reduced relaxed functional of the displacement alone: per cell the
/// pointwise optimal split through the reduced density, plus the boundary
/// term; returns the recovered triplet alongside the energy.
pub fn eval_g_reduced(s: &Scenario, u: &Displacement) -> Result<(EnergyBreakdown, Triplet)> {
    let mesh = &s.mesh;
    let density = s.density();
    let w = s.datum_field();
    let strains = sym_gradient(mesh, u);
    let mut elastic = 0.0;
    let mut bulk = 0.0;
    let mut e = ElasticStrain::zero(mesh);
    let mut p = PlasticMeasure::zero(mesh);
    for ci in 0..mesh.cell_count() {
        let vol = mesh.cell_volume(ci);
        let (ec, pc) = density.split(&strains[ci])?;
        elastic += vol * s.moduli.energy(&ec);
        bulk += vol * s.yield_set.support_unchecked(&pc.deviator());
        e.cells[ci] = ec;
        p.ac[ci] = pc;
    }
    let mut boundary = 0.0;
    let scale = u.max_abs().max(w.max_abs()).max(1.0);
    for (gi, &fi) in mesh.gamma0_facets().iter().enumerate() {
        let f = &mesh.facets()[fi];
        let slip = slip_vector(mesh, u, &w, f);
        let normal_trace = vdot(&slip, &f.normal);
        if normal_trace.abs() > 1e-10 * scale {
            return Err(Error::BcViolation(format!(
                "normal-trace constraint violated on facet {fi}: {normal_trace:.3e}"
            )));
        }
        let amp = sym_outer(mesh.dim(), &slip, &f.normal);
        p.singular[gi] = amp;
        boundary += f.measure * s.yield_set.support_unchecked(&amp.deviator());
    }
    let triplet = Triplet {
        u: u.clone(),
        e,
        p,
        w,
        regular: false,
    };
    Ok((EnergyBreakdown::new(elastic, bulk, boundary), triplet))
}

/// Dissipation energy of a plastic measure alone (the `H`-energy), used by
/// the Reshetnyak continuity diagnostics.
pub fn h_energy(mesh: &Mesh, k: &YieldSet, p: &PlasticMeasure) -> Result<f64> {
    let mut acc = 0.0;
    for (ci, t) in p.ac.iter().enumerate() {
        t.require_deviatoric()?;
        acc += mesh.cell_volume(ci) * k.support_unchecked(&t.deviator());
    }
    for (gi, &fi) in mesh.gamma0_facets().iter().enumerate() {
        p.singular[gi].require_deviatoric()?;
        acc += mesh.facets()[fi].measure * k.support_unchecked(&p.singular[gi].deviator());
    }
    Ok(acc)
}

//! First-order primal-dual minimisation of the reduced relaxed functional
//! and its hard-boundary classical counterpart.
//!
//! The primal variable is the displacement; dual variables live per cell
//! (stresses, confined to the yield cylinder) and per Dirichlet facet
//! (boundary tractions, confined to the scaled yield set). Dirichlet data
//! is imposed by substitution: hard mode pins the boundary vertices, the
//! relaxed mode pins only the normal components through the per-vertex
//! constraint projections. The reported gap is a certified bound: the dual
//! value is corrected by the equilibrium residual times a coercivity-based
//! radius for the minimiser.

use crate::error::{Error, Result};
use crate::fields::{facet_average, sym_gradient, Displacement, ElasticStrain, Triplet};
use crate::functionals::{eval_g_reduced, EnergyBreakdown, Scenario};
use crate::linalg::{conjugate_gradient, norm, power_iteration, seeded_vector};
use crate::mesh::{vdot, vscale, vsub, Mesh, Vec3};
use crate::tensor::{deviator, sym_outer, SymTensor};
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BcMode {
    /// Classical functional: u = w at Dirichlet vertices.
    Hard,
    /// Relaxed functional: only the normal trace is pinned; tangential slip
    /// is paid by the boundary dissipation.
    Relaxed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    PrimalDual,
    /// Primal-only proximal-gradient fallback (hard mode).
    ProxGradient,
}

#[derive(Debug, Clone)]
pub struct SolveConfig {
    pub max_iters: usize,
    /// Relative primal-dual gap tolerance.
    pub tol: f64,
    /// Step-size safety factor (steps satisfy sigma tau |K|^2 < 1).
    pub safety: f64,
    pub opnorm_iters: usize,
    pub bc: BcMode,
    pub method: Method,
    pub check_every: usize,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            max_iters: 500_000,
            tol: 1e-8,
            safety: 0.95,
            opnorm_iters: 50,
            bc: BcMode::Relaxed,
            method: Method::PrimalDual,
            check_every: 50,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceRow {
    pub iter: usize,
    pub energy: f64,
    pub gap: f64,
    pub dual_residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub energy: EnergyBreakdown,
    pub iterations: usize,
    pub converged: bool,
    /// Certified relative primal-dual gap at exit.
    pub final_gap: f64,
    /// Distance of the dual stresses to the yield set (max over cells and
    /// facets, relative).
    pub dual_residual: f64,
    pub opnorm: f64,
    /// Running-minimum gap envelope at the check iterations.
    pub gap_history: Vec<(usize, f64)>,
    pub trace: Vec<TraceRow>,
}

impl SolveReport {
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("iter,energy,gap,dual_residual\n");
        for row in &self.trace {
            s.push_str(&format!(
                "{},{:.17e},{:.17e},{:.17e}\n",
                row.iter, row.energy, row.gap, row.dual_residual
            ));
        }
        s
    }
}

/// Per-vertex boundary-condition handling.
enum VertexBc {
    Free,
    Pin,
    /// Orthonormalised constraint directions with affine targets u . n = c.
    Normals(Vec<(Vec3, f64)>),
}

struct Constraints {
    dim: usize,
    bcs: Vec<VertexBc>,
    targets: Vec<Vec3>,
}

impl Constraints {
    fn build(mesh: &Mesh, w: &Displacement, mode: BcMode) -> Constraints {
        let dim = mesh.dim();
        let mut bcs = Vec::with_capacity(mesh.vertex_count());
        let mut targets = Vec::with_capacity(mesh.vertex_count());
        for vi in 0..mesh.vertex_count() {
            targets.push(w.vertex_value(vi));
            if !mesh.is_gamma0_vertex(vi) {
                bcs.push(VertexBc::Free);
                continue;
            }
            match mode {
                BcMode::Hard => bcs.push(VertexBc::Pin),
                BcMode::Relaxed => {
                    // one constraint per distinct adjacent facet normal; a
                    // full set of independent normals pins the vertex
                    let normals = mesh.gamma0_vertex_normals(vi);
                    let mut ortho: Vec<Vec3> = Vec::new();
                    for n in &normals {
                        let mut v = *n;
                        for o in &ortho {
                            v = vsub(&v, &vscale(o, vdot(o, &v)));
                        }
                        let len = (vdot(&v, &v)).sqrt();
                        if len > 1e-9 {
                            ortho.push(vscale(&v, 1.0 / len));
                        }
                    }
                    if ortho.len() >= dim {
                        bcs.push(VertexBc::Pin);
                    } else {
                        let wv = w.vertex_value(vi);
                        bcs.push(VertexBc::Normals(
                            ortho.into_iter().map(|n| (n, vdot(&n, &wv))).collect(),
                        ));
                    }
                }
            }
        }
        Constraints { dim, bcs, targets }
    }

    /// Affine projection onto the admissible set.
    fn project(&self, u: &mut Displacement) {
        for (vi, bc) in self.bcs.iter().enumerate() {
            match bc {
                VertexBc::Free => {}
                VertexBc::Pin => {
                    let t = self.targets[vi];
                    u.set_vertex_value(vi, &t);
                }
                VertexBc::Normals(list) => {
                    let mut val = u.vertex_value(vi);
                    for (n, c) in list {
                        let d = vdot(n, &val) - c;
                        val = vsub(&val, &vscale(n, d));
                    }
                    u.set_vertex_value(vi, &val);
                }
            }
        }
        let _ = self.dim;
    }

    /// Linear projection onto the homogeneous constraint space.
    fn project_linear(&self, u: &mut [f64]) {
        let dim = self.dim;
        for (vi, bc) in self.bcs.iter().enumerate() {
            match bc {
                VertexBc::Free => {}
                VertexBc::Pin => {
                    for c in 0..dim {
                        u[dim * vi + c] = 0.0;
                    }
                }
                VertexBc::Normals(list) => {
                    let mut val = [0.0; 3];
                    val[..dim].copy_from_slice(&u[dim * vi..dim * vi + dim]);
                    for (n, _) in list {
                        let d = vdot(n, &val);
                        val = vsub(&val, &vscale(n, d));
                    }
                    u[dim * vi..dim * vi + dim].copy_from_slice(&val[..dim]);
                }
            }
        }
    }
}

/// Stacked linear operator rows: per-cell symmetric gradients and (relaxed
/// mode) per-facet slip tensors `dev(avg(u) (.) nu)`.
struct Operator<'a> {
    mesh: &'a Mesh,
    dim: usize,
    facets: Vec<(usize, Vec3, f64)>, // (facet index, normal, measure)
    with_facets: bool,
}

impl<'a> Operator<'a> {
    fn new(mesh: &'a Mesh, with_facets: bool) -> Operator<'a> {
        let facets = mesh
            .gamma0_facets()
            .iter()
            .map(|&fi| {
                let f = &mesh.facets()[fi];
                (fi, f.normal, f.measure)
            })
            .collect();
        Operator {
            mesh,
            dim: mesh.dim(),
            facets,
            with_facets,
        }
    }

    fn cell_rows(&self, u: &Displacement) -> Vec<SymTensor> {
        sym_gradient(self.mesh, u)
    }

    fn facet_rows(&self, u: &Displacement) -> Vec<SymTensor> {
        if !self.with_facets {
            return Vec::new();
        }
        self.facets
            .iter()
            .map(|&(fi, normal, _)| {
                let f = &self.mesh.facets()[fi];
                let avg = facet_average(self.mesh, u, f);
                deviator(&sym_outer(self.dim, &avg, &normal))
            })
            .collect()
    }

    /// Adjoint: nodal force field from cell and facet duals.
    fn adjoint(&self, cell_duals: &[SymTensor], facet_duals: &[SymTensor]) -> Vec<f64> {
        let mesh = self.mesh;
        let dim = self.dim;
        let mut out = vec![0.0; dim * mesh.vertex_count()];
        for ci in 0..mesh.cell_count() {
            let grads = mesh.cell_grads(ci);
            for (l, &v) in mesh.cell(ci).iter().enumerate() {
                let f = cell_duals[ci].apply(&grads[l]);
                for c in 0..dim {
                    out[dim * v + c] += f[c];
                }
            }
        }
        if self.with_facets {
            for (k, &(fi, normal, _)) in self.facets.iter().enumerate() {
                let f = &mesh.facets()[fi];
                // eta : dev(avg (.) nu) = (eta nu) . avg for trace-free eta
                let force = facet_duals[k].deviator().apply(&normal);
                let share = 1.0 / dim as f64;
                for &v in f.verts.iter().take(dim) {
                    for c in 0..dim {
                        out[dim * v + c] += share * force[c];
                    }
                }
            }
        }
        out
    }

    fn dual_len(&self) -> usize {
        let m = crate::tensor::packed_len(self.dim);
        m * (self.mesh.cell_count() + if self.with_facets { self.facets.len() } else { 0 })
    }

    /// Operator norm by power iteration on a flattened representation.
    fn opnorm(&self, iters: usize) -> f64 {
        let mesh = self.mesh;
        let dim = self.dim;
        let n = dim * mesh.vertex_count();
        let m = self.dual_len();
        let forward = |x: &[f64], y: &mut [f64]| {
            let u = Displacement::from_values(dim, x.to_vec());
            let cells = self.cell_rows(&u);
            let facets = self.facet_rows(&u);
            let mut idx = 0;
            for t in cells.iter().chain(facets.iter()) {
                let oc = t.ortho_coords();
                for v in oc.iter() {
                    y[idx] = *v;
                    idx += 1;
                }
            }
        };
        let adjointf = |y: &[f64], x: &mut [f64]| {
            let ml = crate::tensor::packed_len(dim);
            let nc = mesh.cell_count();
            let mut cells = Vec::with_capacity(nc);
            for ci in 0..nc {
                let v = nalgebra::DVector::from_iterator(ml, y[ml * ci..ml * (ci + 1)].iter().cloned());
                cells.push(SymTensor::from_ortho_coords(dim, &v));
            }
            let mut facets = Vec::new();
            if self.with_facets {
                for k in 0..self.facets.len() {
                    let off = ml * (nc + k);
                    let v =
                        nalgebra::DVector::from_iterator(ml, y[off..off + ml].iter().cloned());
                    facets.push(SymTensor::from_ortho_coords(dim, &v));
                }
            }
            let a = self.adjoint(&cells, &facets);
            x.copy_from_slice(&a);
        };
        let start = seeded_vector(n, 0x5eed);
        power_iteration(&forward, &adjointf, &start, m, iters)
    }
}

/// Power-iteration estimate of the discrete symmetric-gradient operator
/// norm, with a deterministic seeded start.
pub fn estimate_opnorm(mesh: &Mesh) -> f64 {
    let op = Operator::new(mesh, false);
    op.opnorm(50)
}

/// Variant taking an explicit start field; zero input is re-seeded.
pub fn estimate_opnorm_with_start(mesh: &Mesh, start: &Displacement) -> f64 {
    let op = Operator::new(mesh, false);
    let x0 = if start.max_abs() == 0.0 {
        seeded_vector(mesh.dim() * mesh.vertex_count(), 0x5eed)
    } else {
        start.values().to_vec()
    };
    let dim = mesh.dim();
    let n = dim * mesh.vertex_count();
    let m = op.dual_len();
    let forward = |x: &[f64], y: &mut [f64]| {
        let u = Displacement::from_values(dim, x.to_vec());
        let cells = op.cell_rows(&u);
        let mut idx = 0;
        for t in cells.iter() {
            let oc = t.ortho_coords();
            for v in oc.iter() {
                y[idx] = *v;
                idx += 1;
            }
        }
    };
    let adjointf = |y: &[f64], x: &mut [f64]| {
        let ml = crate::tensor::packed_len(dim);
        let mut cells = Vec::with_capacity(mesh.cell_count());
        for ci in 0..mesh.cell_count() {
            let v = nalgebra::DVector::from_iterator(ml, y[ml * ci..ml * (ci + 1)].iter().cloned());
            cells.push(SymTensor::from_ortho_coords(dim, &v));
        }
        let a = op.adjoint(&cells, &[]);
        x.copy_from_slice(&a);
    };
    let _ = n;
    power_iteration(&forward, &adjointf, &x0, m, 50)
}

/// Coercivity data for the certified dual bound.
struct Coercivity {
    /// f(xi) >= a |xi| - b
    a: f64,
    b: f64,
    /// boundary density >= (a / sqrt 2) |slip|
    volume: f64,
    /// smallest singular value of the weighted constraint-space operator
    s_min: f64,
}

fn coercivity(s: &Scenario, cons: &Constraints, op: &Operator) -> Result<Coercivity> {
    if !s.yield_set.is_full_dimensional() {
        return Err(Error::Scenario(
            "solver requires a yield set of full dimension in the deviatoric space \
             (the relaxation hypothesis r |xi| <= H(xi) with r > 0)"
                .into(),
        ));
    }
    let r = s.yield_set.inner_radius();
    let lam_min = s.moduli.min_stiffness_eigenvalue();
    let a = r;
    let b = r * r / (2.0 * lam_min);
    let mesh = &s.mesh;
    let dim = mesh.dim();
    let n = dim * mesh.vertex_count();

    // weighted operator W: rows vol_T E_T and area_F avg_F
    let apply_w = |x: &[f64]| -> (Vec<SymTensor>, Vec<Vec3>) {
        let u = Displacement::from_values(dim, x.to_vec());
        let cells: Vec<SymTensor> = op
            .cell_rows(&u)
            .iter()
            .enumerate()
            .map(|(ci, t)| t.scale(mesh.cell_volume(ci)))
            .collect();
        let facets: Vec<Vec3> = if op.with_facets {
            op.facets
                .iter()
                .map(|&(fi, _, measure)| {
                    let f = &mesh.facets()[fi];
                    vscale(&facet_average(mesh, &u, f), measure)
                })
                .collect()
        } else {
            Vec::new()
        };
        (cells, facets)
    };
    let apply_wt = |cells: &[SymTensor], facets: &[Vec3]| -> Vec<f64> {
        let mut out = vec![0.0; n];
        for ci in 0..mesh.cell_count() {
            let grads = mesh.cell_grads(ci);
            let t = cells[ci].scale(mesh.cell_volume(ci));
            for (l, &v) in mesh.cell(ci).iter().enumerate() {
                let f = t.apply(&grads[l]);
                for c in 0..dim {
                    out[dim * v + c] += f[c];
                }
            }
        }
        if op.with_facets {
            for (k, &(fi, _, measure)) in op.facets.iter().enumerate() {
                let f = &mesh.facets()[fi];
                let share = measure / dim as f64;
                for &v in f.verts.iter().take(dim) {
                    for c in 0..dim {
                        out[dim * v + c] += share * facets[k][c];
                    }
                }
            }
        }
        out
    };
    // M x = P W^T W P x + (I - P) x, SPD with spectrum of W^T W on V
    let apply_m = |x: &[f64], y: &mut [f64]| {
        let mut px = x.to_vec();
        cons.project_linear(&mut px);
        let (cells, facets) = apply_w(&px);
        let mut wt = apply_wt(&cells, &facets);
        cons.project_linear(&mut wt);
        for i in 0..x.len() {
            y[i] = wt[i] + (x[i] - px[i]);
        }
    };
    // inverse power iteration for the smallest eigenvalue on V
    let mut x = seeded_vector(n, 0xc0e3);
    cons.project_linear(&mut x);
    let nx = norm(&x);
    if nx == 0.0 {
        return Err(Error::Scenario("constraint space is trivial".into()));
    }
    for v in x.iter_mut() {
        *v /= nx;
    }
    let mut rho = 1.0;
    for _ in 0..30 {
        let (z, _) = conjugate_gradient(&apply_m, &x, 1e-10, 4000);
        let nz = norm(&z);
        if nz == 0.0 {
            break;
        }
        for i in 0..n {
            x[i] = z[i] / nz;
        }
        let mut mx = vec![0.0; n];
        apply_m(&x, &mut mx);
        rho = crate::linalg::dot(&x, &mx);
    }
    // residual-corrected Rayleigh quotient; the correction guards against
    // incomplete convergence of the inverse iteration
    let mut mx = vec![0.0; n];
    apply_m(&x, &mut mx);
    let mut resid = 0.0;
    for i in 0..n {
        resid += (mx[i] - rho * x[i]).powi(2);
    }
    let lam = (rho - resid.sqrt()).max(1e-300);
    Ok(Coercivity {
        a,
        b,
        volume: mesh.total_volume(),
        s_min: lam.sqrt(),
    })
}

struct DualState {
    cells: Vec<SymTensor>,
    facets: Vec<SymTensor>,
}

/// Primal objective in the chosen mode.
fn primal_energy(s: &Scenario, op: &Operator, u: &Displacement, w: &Displacement) -> Result<(f64, f64)> {
    let density = s.density();
    let mesh = &s.mesh;
    let mut bulk_l1 = 0.0;
    let mut energy = 0.0;
    let strains = sym_gradient(mesh, u);
    for (ci, eu) in strains.iter().enumerate() {
        let vol = mesh.cell_volume(ci);
        energy += vol * density.eval(eu)?;
        bulk_l1 += vol * eu.norm();
    }
    if op.with_facets {
        for &(fi, normal, measure) in &op.facets {
            let f = &mesh.facets()[fi];
            let slip = vsub(&facet_average(mesh, w, f), &facet_average(mesh, u, f));
            let amp = deviator(&sym_outer(mesh.dim(), &slip, &normal));
            energy += measure * s.yield_set.support_unchecked(&amp);
        }
    }
    Ok((energy, bulk_l1))
}

/// Certified dual lower bound from duals projected into the yield set.
#[allow(clippy::too_many_arguments)]
fn dual_bound(
    s: &Scenario,
    op: &Operator,
    cons: &Constraints,
    coer: &Coercivity,
    duals: &DualState,
    u_best: &Displacement,
    p_best: f64,
    c_facets: &[SymTensor],
) -> Result<(f64, f64)> {
    let mesh = &s.mesh;
    // project duals into feasibility
    let mut cells = Vec::with_capacity(duals.cells.len());
    let mut dual_resid: f64 = 0.0;
    for (ci, sig) in duals.cells.iter().enumerate() {
        let vol = mesh.cell_volume(ci);
        let phys = sig.scale(1.0 / vol);
        let dev = phys.deviator();
        let proj = s.yield_set.project_unchecked(&dev)?;
        dual_resid = dual_resid.max(dev.sub(&proj).norm() / (1.0 + dev.norm()));
        cells.push(proj.add(&phys.vol_part()).scale(vol));
    }
    let mut facets = Vec::with_capacity(duals.facets.len());
    for (k, eta) in duals.facets.iter().enumerate() {
        let (_, _, measure) = op.facets[k];
        let neg = eta.scale(-1.0 / measure).deviator();
        let proj = s.yield_set.project_unchecked(&neg)?;
        dual_resid = dual_resid.max(neg.sub(&proj).norm() / (1.0 + neg.norm()));
        facets.push(proj.scale(-measure));
    }
    // dual value: <A(Y), u_best> - sum vol f*(sigma/vol) - sum eta : c_F
    let a_field = op.adjoint(&cells, &facets);
    let mut value = crate::linalg::dot(&a_field, u_best.values());
    for (ci, sig) in cells.iter().enumerate() {
        let vol = mesh.cell_volume(ci);
        value -= vol * s.moduli.conjugate_energy(&sig.scale(1.0 / vol));
    }
    for (k, eta) in facets.iter().enumerate() {
        value -= eta.dot(&c_facets[k]);
    }
    // equilibrium residual on the free directions
    let mut resid_field = a_field;
    cons.project_linear(&mut resid_field);
    let resid_norm = norm(&resid_field);
    // coercivity radius for |u* - u_best|
    let m_e = (p_best + coer.b * coer.volume).max(0.0) / coer.a;
    let m_b = if op.with_facets {
        2f64.sqrt() * p_best.max(0.0) / s.yield_set.inner_radius()
    } else {
        0.0
    };
    let radius = 2.0 * (m_e + m_b) / coer.s_min;
    Ok((value - resid_norm * radius, dual_resid))
}

/// Minimise the configured functional from the initial displacement.
pub fn solve(
    s: &Scenario,
    cfg: &SolveConfig,
    u0: &Displacement,
) -> Result<(Displacement, Triplet, SolveReport)> {
    match cfg.method {
        Method::PrimalDual => solve_pdhg(s, cfg, u0),
        Method::ProxGradient => solve_prox_gradient(s, cfg, u0),
    }
}

fn solve_pdhg(
    s: &Scenario,
    cfg: &SolveConfig,
    u0: &Displacement,
) -> Result<(Displacement, Triplet, SolveReport)> {
    let mesh = &s.mesh;
    let dim = mesh.dim();
    let w = s.datum_field();
    let with_facets = cfg.bc == BcMode::Relaxed;
    let op = Operator::new(mesh, with_facets);
    let cons = Constraints::build(mesh, &w, cfg.bc);
    let coer = coercivity(s, &cons, &op)?;
    let density = s.density();

    let opnorm = op.opnorm(cfg.opnorm_iters);
    let step = cfg.safety / opnorm.max(1e-12);
    let (gamma_p, gamma_d) = (step, step);

    // affine offsets of the facet terms: c_F = dev(avg(w) (.) nu)
    let c_facets: Vec<SymTensor> = op
        .facets
        .iter()
        .map(|&(fi, normal, _)| {
            let f = &mesh.facets()[fi];
            deviator(&sym_outer(dim, &facet_average(mesh, &w, f), &normal))
        })
        .collect();

    let mut u = u0.clone();
    cons.project(&mut u);
    let mut u_tilde = u.clone();

    // feasible dual warm start from the optimal split at u0
    let strains = sym_gradient(mesh, &u);
    let mut duals = DualState {
        cells: strains
            .iter()
            .enumerate()
            .map(|(ci, eu)| {
                let g = density.grad(eu)?;
                Ok(g.scale(mesh.cell_volume(ci)))
            })
            .collect::<Result<Vec<_>>>()?,
        facets: vec![SymTensor::zero(dim); op.facets.len()],
    };

    let (mut p_best, _) = primal_energy(s, &op, &u, &w)?;
    let mut u_best = u.clone();
    let mut gap_envelope = f64::INFINITY;
    let mut gap_history = Vec::new();
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut dual_residual = 0.0;

    for it in 0..cfg.max_iters {
        iterations = it + 1;
        // dual ascent with per-cell prox through the Moreau identity
        let cell_rows = op.cell_rows(&u_tilde);
        for (ci, row) in cell_rows.iter().enumerate() {
            let vol = mesh.cell_volume(ci);
            let zeta = duals.cells[ci].add(&row.scale(gamma_d));
            let prox = density.prox(&zeta.scale(1.0 / gamma_d), vol / gamma_d)?;
            duals.cells[ci] = zeta.sub(&prox.scale(gamma_d));
        }
        if with_facets {
            let facet_rows = op.facet_rows(&u_tilde);
            for (k, row) in facet_rows.iter().enumerate() {
                let (_, _, measure) = op.facets[k];
                let zeta = duals.facets[k].add(&row.scale(gamma_d));
                let shifted = zeta.sub(&c_facets[k].scale(gamma_d));
                let proj = s
                    .yield_set
                    .project_unchecked(&shifted.scale(-1.0 / measure).deviator())?;
                duals.facets[k] = proj.scale(-measure);
            }
        }
        // primal descent and extrapolation
        let force = op.adjoint(&duals.cells, &duals.facets);
        let mut u_new = u.clone();
        for (i, v) in u_new.values_mut().iter_mut().enumerate() {
            *v -= gamma_p * force[i];
        }
        cons.project(&mut u_new);
        let two_minus = u_new.scale(2.0).sub(&u);
        u = u_new;
        u_tilde = two_minus;

        if (it + 1) % cfg.check_every == 0 || it + 1 == cfg.max_iters {
            let (p_now, _) = primal_energy(s, &op, &u, &w)?;
            if p_now < p_best {
                p_best = p_now;
                u_best = u.clone();
            }
            let (d_val, d_res) =
                dual_bound(s, &op, &cons, &coer, &duals, &u_best, p_best, &c_facets)?;
            dual_residual = d_res;
            let gap = (p_best - d_val).max(0.0) / (1.0 + p_best.abs());
            gap_envelope = gap_envelope.min(gap);
            gap_history.push((it + 1, gap_envelope));
            trace.push(TraceRow {
                iter: it + 1,
                energy: p_best,
                gap,
                dual_residual: d_res,
            });
            if gap <= cfg.tol {
                converged = true;
                break;
            }
        }
    }

    let (energy, triplet) = finish(s, cfg.bc, &u_best)?;
    let final_gap = gap_history.last().map(|&(_, g)| g).unwrap_or(f64::INFINITY);
    Ok((
        u_best,
        triplet,
        SolveReport {
            energy,
            iterations,
            converged,
            final_gap,
            dual_residual,
            opnorm,
            gap_history,
            trace,
        },
    ))
}

/// Primal-only fallback: monotone FISTA on the smooth reduced energy (hard
/// boundary mode, where the nonsmooth boundary term is absent).
fn solve_prox_gradient(
    s: &Scenario,
    cfg: &SolveConfig,
    u0: &Displacement,
) -> Result<(Displacement, Triplet, SolveReport)> {
    if cfg.bc != BcMode::Hard {
        return Err(Error::Scenario(
            "the primal-only fallback supports the hard boundary mode".into(),
        ));
    }
    let mesh = &s.mesh;
    let w = s.datum_field();
    let op = Operator::new(mesh, false);
    let cons = Constraints::build(mesh, &w, BcMode::Hard);
    let coer = coercivity(s, &cons, &op)?;
    let density = s.density();

    // Lipschitz constant of the gradient via the volume-weighted operator
    let dim = mesh.dim();
    let n = dim * mesh.vertex_count();
    let forward = |x: &[f64], y: &mut [f64]| {
        let u = Displacement::from_values(dim, x.to_vec());
        let rows = op.cell_rows(&u);
        let mut idx = 0;
        for (ci, t) in rows.iter().enumerate() {
            let sc = t.scale(mesh.cell_volume(ci).sqrt());
            for v in sc.ortho_coords().iter() {
                y[idx] = *v;
                idx += 1;
            }
        }
    };
    let adjointf = |y: &[f64], x: &mut [f64]| {
        let ml = crate::tensor::packed_len(dim);
        let mut cells = Vec::with_capacity(mesh.cell_count());
        for ci in 0..mesh.cell_count() {
            let v = nalgebra::DVector::from_iterator(ml, y[ml * ci..ml * (ci + 1)].iter().cloned());
            cells.push(SymTensor::from_ortho_coords(dim, &v).scale(mesh.cell_volume(ci).sqrt() / mesh.cell_volume(ci)));
        }
        let a = op.adjoint(
            &cells
                .iter()
                .enumerate()
                .map(|(ci, t)| t.scale(mesh.cell_volume(ci)))
                .collect::<Vec<_>>(),
            &[],
        );
        x.copy_from_slice(&a);
    };
    let wnorm = power_iteration(
        &forward,
        &adjointf,
        &seeded_vector(n, 0xfee1),
        crate::tensor::packed_len(dim) * mesh.cell_count(),
        cfg.opnorm_iters,
    );
    let lips = s.moduli.max_stiffness_eigenvalue() * wnorm * wnorm;
    let step = cfg.safety / lips;

    let grad = |u: &Displacement| -> Result<(Vec<f64>, DualState)> {
        let strains = sym_gradient(mesh, u);
        let cells: Vec<SymTensor> = strains
            .iter()
            .enumerate()
            .map(|(ci, eu)| Ok(density.grad(eu)?.scale(mesh.cell_volume(ci))))
            .collect::<Result<Vec<_>>>()?;
        let g = op.adjoint(&cells, &[]);
        Ok((
            g,
            DualState {
                cells,
                facets: Vec::new(),
            },
        ))
    };

    let mut u = u0.clone();
    cons.project(&mut u);
    let mut u_prev = u.clone();
    let mut t_prev = 1.0_f64;
    let (mut p_best, _) = primal_energy(s, &op, &u, &w)?;
    let mut u_best = u.clone();
    let mut gap_envelope = f64::INFINITY;
    let mut gap_history = Vec::new();
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut dual_residual = 0.0;

    for it in 0..cfg.max_iters {
        iterations = it + 1;
        let t = 0.5 * (1.0 + (1.0 + 4.0 * t_prev * t_prev).sqrt());
        let beta = (t_prev - 1.0) / t;
        let mut z = u.add(&u.sub(&u_prev).scale(beta));
        cons.project(&mut z);
        let (g, duals) = grad(&z)?;
        let mut u_new = z.clone();
        for (i, v) in u_new.values_mut().iter_mut().enumerate() {
            *v -= step * g[i];
        }
        cons.project(&mut u_new);
        u_prev = u;
        u = u_new;
        t_prev = t;

        if (it + 1) % cfg.check_every == 0 || it + 1 == cfg.max_iters {
            let (p_now, _) = primal_energy(s, &op, &u, &w)?;
            if p_now < p_best {
                p_best = p_now;
                u_best = u.clone();
            } else {
                // monotone restart
                t_prev = 1.0;
            }
            let (d_val, d_res) = dual_bound(s, &op, &cons, &coer, &duals, &u_best, p_best, &[])?;
            dual_residual = d_res;
            let gap = (p_best - d_val).max(0.0) / (1.0 + p_best.abs());
            gap_envelope = gap_envelope.min(gap);
            gap_history.push((it + 1, gap_envelope));
            trace.push(TraceRow {
                iter: it + 1,
                energy: p_best,
                gap,
                dual_residual: d_res,
            });
            if gap <= cfg.tol {
                converged = true;
                break;
            }
        }
    }
    let (energy, triplet) = finish(s, BcMode::Hard, &u_best)?;
    let final_gap = gap_history.last().map(|&(_, g)| g).unwrap_or(f64::INFINITY);
    Ok((
        u_best,
        triplet,
        SolveReport {
            energy,
            iterations,
            converged,
            final_gap,
            dual_residual,
            opnorm: wnorm,
            gap_history,
            trace,
        },
    ))
}

/// Build the optimal-split triplet and its energy breakdown at the solution.
fn finish(s: &Scenario, bc: BcMode, u: &Displacement) -> Result<(EnergyBreakdown, Triplet)> {
    match bc {
        BcMode::Relaxed => {
            let (energy, triplet) = eval_g_reduced(s, u)?;
            Ok((energy, triplet))
        }
        BcMode::Hard => {
            let mesh = &s.mesh;
            let density = s.density();
            let strains = sym_gradient(mesh, u);
            let mut e = ElasticStrain::zero(mesh);
            let mut elastic = 0.0;
            let mut bulk = 0.0;
            for (ci, eu) in strains.iter().enumerate() {
                let vol = mesh.cell_volume(ci);
                let (ec, pc) = density.split(eu)?;
                elastic += vol * s.moduli.energy(&ec);
                bulk += vol * s.yield_set.support_unchecked(&pc.deviator());
                e.cells[ci] = ec;
            }
            let w = s.datum_field();
            let triplet = Triplet::regular(mesh, u.clone(), e, w)?;
            Ok((EnergyBreakdown::new(elastic, bulk, 0.0), triplet))
        }
    }
}

//! Integration tests of the recovery pipeline: identity case, plastic
//! affine data, boundary slip, the mollification budgets, and boundary
//! peeling.

use hencky::fields::{sym_gradient, total_variation, Displacement, ElasticStrain, Triplet};
use hencky::functionals::{eval_g, BoundaryDatum, Scenario};
use hencky::mesh::{gen_rectangle, Gamma0Select};
use hencky::pipeline::{
    mollify_budget, peel_boundary, recover_dirichlet, strip_dissipation, PipelineConfig,
};
use hencky::tensor::{ElasticModuli, YieldSet};

fn scenario(gamma: f64, m: usize) -> Scenario {
    let mesh = gen_rectangle(2, &[1.0, 1.0], m, &Gamma0Select::All).unwrap();
    Scenario::new(
        mesh,
        ElasticModuli::isotropic(2, 1.0, 1.0).unwrap(),
        YieldSet::ball(2, 1.0).unwrap(),
        BoundaryDatum::Shear { gamma },
    )
    .unwrap()
}

/// Optimal-split triplet for u = w (affine data).
fn homogeneous_triplet(s: &Scenario) -> Triplet {
    let w = s.datum_field();
    let density = s.density();
    let strains = sym_gradient(&s.mesh, &w);
    let mut e = ElasticStrain::zero(&s.mesh);
    for (ci, eu) in strains.iter().enumerate() {
        e.cells[ci] = density.split(eu).unwrap().0;
    }
    Triplet::relaxed(&s.mesh, w.clone(), e, w.clone()).unwrap()
}

#[test]
fn identity_case_recovers_exactly() {
    // purely elastic, u = w: the shifted fields vanish, so every stage is
    // exact and the energies match to mollification error (here zero)
    let s = scenario(0.2, 8);
    let t = homogeneous_triplet(&s);
    let cfg = PipelineConfig {
        schedule: vec![2, 4, 8, 16],
        ..Default::default()
    };
    let (outs, trace) = recover_dirichlet(&s, &t, &cfg).unwrap();
    assert_eq!(outs.len(), 4);
    for row in &trace.rows {
        assert!(row.err_u < 1e-10, "err_u {} at k {}", row.err_u, row.k);
        assert!(row.err_e < 1e-8, "err_e {} at k {}", row.err_e, row.k);
        assert!(
            row.gap <= 1e-3 * (1.0 + row.energy_g),
            "gap {} at k {}",
            row.gap,
            row.k
        );
    }
    assert!(trace.violations.is_empty(), "violations: {:?}", trace.violations);
}

#[test]
fn plastic_affine_recovery_converges() {
    // gamma = 2: constant plastic density, no slip; the recovery must hit
    // the total variation and the energy within a few percent by k = 16
    let s = scenario(2.0, 16);
    let t = homogeneous_triplet(&s);
    let cfg = PipelineConfig {
        schedule: vec![2, 4, 8, 16],
        ..Default::default()
    };
    let (outs, trace) = recover_dirichlet(&s, &t, &cfg).unwrap();
    let last = trace.rows.last().unwrap();
    eprintln!("plastic affine trace:");
    for r in &trace.rows {
        eprintln!(
            "  k={} err_u={:.3e} err_e={:.3e} tv={:.6} target={:.6} F={:.6} G={:.6} gap={:.3e}",
            r.k, r.err_u, r.err_e, r.tv_pk, r.tv_target, r.energy_f, r.energy_g, r.gap
        );
    }
    assert!(
        (last.tv_pk - last.tv_target).abs() <= 0.05 * last.tv_target,
        "TV {} vs target {}",
        last.tv_pk,
        last.tv_target
    );
    assert!(
        last.gap <= 0.05 * last.energy_g,
        "energy gap {} vs G {}",
        last.gap,
        last.energy_g
    );
    // regularity invariants of every output
    for out in &outs {
        assert!(out.regular);
        assert!(out.kinematic_residual(&s.mesh) < 1e-10);
        for amp in &out.p.singular {
            assert_eq!(amp.norm(), 0.0);
        }
    }
    // the energy gap is eventually decreasing
    let gaps: Vec<f64> = trace.rows.iter().map(|r| r.gap).collect();
    assert!(
        gaps.last().unwrap() <= &gaps[gaps.len() - 2],
        "gaps {gaps:?}"
    );
}

#[test]
fn boundary_slip_recovery_converges_in_tv() {
    // u with tangential slip against w = 0 on top and bottom: the singular
    // boundary mass must be recovered by the bulk densities
    let mesh = gen_rectangle(2, &[1.0, 1.0], 16, &Gamma0Select::All).unwrap();
    let s = Scenario::new(
        mesh,
        ElasticModuli::isotropic(2, 1.0, 1.0).unwrap(),
        YieldSet::ball(2, 1.0).unwrap(),
        BoundaryDatum::Zero,
    )
    .unwrap();
    // slip concentrated on a strip of the bottom side, decaying into the bulk
    let g = |x1: f64| {
        let a = ((x1 - 0.15) / 0.15).clamp(0.0, 1.0);
        let b = ((0.85 - x1) / 0.15).clamp(0.0, 1.0);
        a.min(b)
    };
    let u = Displacement::interpolate(&s.mesh, |x| {
        [g(x[0]) * (1.0 - x[1] / 0.3).max(0.0), 0.0, 0.0]
    });
    let strains = sym_gradient(&s.mesh, &u);
    let density = s.density();
    let mut e = ElasticStrain::zero(&s.mesh);
    for (ci, eu) in strains.iter().enumerate() {
        e.cells[ci] = density.split(eu).unwrap().0;
    }
    let t = Triplet::relaxed(&s.mesh, u, e, Displacement::zero(&s.mesh)).unwrap();
    let tv_sing: f64 = s
        .mesh
        .gamma0_facets()
        .iter()
        .enumerate()
        .map(|(gi, &fi)| t.p.singular[gi].norm() * s.mesh.facets()[fi].measure)
        .sum();
    assert!(tv_sing > 0.3, "test needs genuine boundary slip, got {tv_sing}");

    let cfg = PipelineConfig {
        schedule: vec![2, 4, 8, 16],
        ..Default::default()
    };
    let (_, trace) = recover_dirichlet(&s, &t, &cfg).unwrap();
    eprintln!("slip trace:");
    for r in &trace.rows {
        eprintln!(
            "  k={} err_u={:.3e} err_e={:.3e} tv={:.6} target={:.6} F={:.6} G={:.6} gap={:.3e} ws={:.3e} strict={:.3e}",
            r.k, r.err_u, r.err_e, r.tv_pk, r.tv_target, r.energy_f, r.energy_g, r.gap, r.weakstar, r.strict
        );
    }
    let last = trace.rows.last().unwrap();
    assert!(
        (last.tv_pk - last.tv_target).abs() <= 0.05 * last.tv_target,
        "TV {} vs target {} (rel {:.3})",
        last.tv_pk,
        last.tv_target,
        (last.tv_pk - last.tv_target).abs() / last.tv_target
    );
    // the weak* and strict gaps shrink along the schedule
    let first = &trace.rows[0];
    assert!(last.strict < first.strict, "strict gaps did not shrink");
}

#[test]
fn zero_triplet_recovers_to_zero() {
    let s = scenario(0.0, 8);
    let t = Triplet::relaxed(
        &s.mesh,
        Displacement::zero(&s.mesh),
        ElasticStrain::zero(&s.mesh),
        Displacement::zero(&s.mesh),
    )
    .unwrap();
    let cfg = PipelineConfig {
        schedule: vec![2, 4],
        ..Default::default()
    };
    let (outs, trace) = recover_dirichlet(&s, &t, &cfg).unwrap();
    for out in &outs {
        assert_eq!(out.u.max_abs(), 0.0);
    }
    for row in &trace.rows {
        assert_eq!(row.energy_f, 0.0);
    }
}

#[test]
fn mollify_budget_meets_bounds() {
    // smooth compactly supported triplet with zero datum
    let mesh = gen_rectangle(2, &[1.0, 1.0], 12, &Gamma0Select::All).unwrap();
    let s = Scenario::new(
        mesh,
        ElasticModuli::isotropic(2, 1.0, 1.0).unwrap(),
        YieldSet::ball(2, 1.0).unwrap(),
        BoundaryDatum::Zero,
    )
    .unwrap();
    let bump = BoundaryDatum::Bump {
        center: [0.5, 0.5, 0.0],
        radius: 0.4,
        amp: [0.3, -0.2, 0.0],
    };
    let u = Displacement::interpolate(&s.mesh, |x| bump.eval(x));
    let strains = sym_gradient(&s.mesh, &u);
    let density = s.density();
    let mut e = ElasticStrain::zero(&s.mesh);
    for (ci, eu) in strains.iter().enumerate() {
        e.cells[ci] = density.split(eu).unwrap().0;
    }
    let t = Triplet::relaxed(&s.mesh, u, e, Displacement::zero(&s.mesh)).unwrap();

    let k = 4;
    let cfg = PipelineConfig::default();
    let (out, report) = mollify_budget(&s, &t, k, &cfg).unwrap();
    eprintln!("budget report: eps={:?}", report.eps);
    for (i, errs) in report.per_shell.iter().enumerate() {
        let budget = 1.0 / (k as f64 * 2f64.powi(i as i32));
        eprintln!("  shell {i}: errs={errs:?} budget={budget:.3e}");
        for e in errs {
            assert!(*e <= budget, "shell {i}: {e} > {budget}");
        }
    }
    // TV inequality as computed
    eprintln!("tv_pk={} tv_bound={}", report.tv_pk, report.tv_bound);
    assert!(report.tv_pk <= report.tv_bound * (1.0 + 1e-9));
    // output is regular with hard zero boundary values
    assert!(out.regular);
    for vi in 0..s.mesh.vertex_count() {
        if s.mesh.is_gamma0_vertex(vi) {
            assert_eq!(out.u.vertex_value(vi), [0.0; 3]);
        }
    }
    // identity on the zero triplet
    let z = Triplet::relaxed(
        &s.mesh,
        Displacement::zero(&s.mesh),
        ElasticStrain::zero(&s.mesh),
        Displacement::zero(&s.mesh),
    )
    .unwrap();
    let (zout, _) = mollify_budget(&s, &z, 2, &cfg).unwrap();
    assert_eq!(zout.u.max_abs(), 0.0);
}

#[test]
fn peel_boundary_moves_slip_into_the_strip() {
    let m = 32;
    let mesh = gen_rectangle(2, &[1.0, 1.0], m, &Gamma0Select::All).unwrap();
    let s = Scenario::new(
        mesh,
        ElasticModuli::isotropic(2, 1.0, 1.0).unwrap(),
        YieldSet::ball(2, 1.0).unwrap(),
        BoundaryDatum::Zero,
    )
    .unwrap();
    // tangential field on the bottom strip: g(x1) along e1, decaying in x2
    let g = |x1: f64| {
        let t = ((x1 - 0.2) / 0.1).clamp(0.0, 1.0);
        let t2 = ((0.8 - x1) / 0.1).clamp(0.0, 1.0);
        t.min(t2)
    };
    let depth = |x2: f64| {
        if x2 <= 0.05 {
            1.0
        } else {
            ((0.2 - x2) / 0.15).clamp(0.0, 1.0)
        }
    };
    let v = Displacement::interpolate(&s.mesh, |x| [g(x[0]) * depth(x[1]), 0.0, 0.0]);

    // v = 0 leaves the triplet unchanged
    let u0 = Displacement::interpolate(&s.mesh, |x| {
        [0.1 * x[0] * (1.0 - x[0]) * x[1] * (1.0 - x[1]), 0.0, 0.0]
    });
    let strains = sym_gradient(&s.mesh, &u0);
    let density = s.density();
    let mut e = ElasticStrain::zero(&s.mesh);
    for (ci, eu) in strains.iter().enumerate() {
        e.cells[ci] = density.split(eu).unwrap().0;
    }
    let t = Triplet::relaxed(&s.mesh, u0, e, Displacement::zero(&s.mesh)).unwrap();
    let unchanged = peel_boundary(&s, &t, &Displacement::zero(&s.mesh), 8).unwrap();
    assert!(unchanged.u.sub(&t.u).max_abs() == 0.0);

    // the strip dissipation converges to the closed-form facet integral
    // int g / sqrt(2): g is a trapezoid of area 0.5
    let target = 0.5 / 2f64.sqrt();
    let mut values = Vec::new();
    for k in [4usize, 8, 16, 32] {
        values.push((k, strip_dissipation(&s.mesh, &v, k)));
    }
    eprintln!("strip dissipation: {values:?} target {target}");
    let (_, last) = values.last().unwrap();
    assert!(
        (last - target).abs() <= 0.05 * target,
        "strip TV {last} vs {target}"
    );

    // peeling with the tangential field produces an admissible triplet
    let peeled = peel_boundary(&s, &t, &v, 16).unwrap();
    assert!(peeled.kinematic_residual(&s.mesh) < 1e-10);

    // resolution guard: strip thinner than one cell layer
    assert!(matches!(
        peel_boundary(&s, &t, &v, 64),
        Err(hencky::Error::Resolution(_))
    ));

    // non-tangential fields are rejected
    let bad = Displacement::interpolate(&s.mesh, |x| [0.0, g(x[0]) * depth(x[1]), 0.0]);
    assert!(matches!(
        peel_boundary(&s, &t, &bad, 16),
        Err(hencky::Error::NonTangential(_))
    ));
}

#[test]
fn three_dimensional_recovery_smoke() {
    let mesh = gen_rectangle(3, &[1.0, 1.0, 1.0], 8, &Gamma0Select::All).unwrap();
    let s = Scenario::new(
        mesh,
        ElasticModuli::isotropic(3, 1.0, 1.0).unwrap(),
        YieldSet::ball(3, 1.0).unwrap(),
        BoundaryDatum::Shear { gamma: 2.0 },
    )
    .unwrap();
    let t = homogeneous_triplet(&s);
    let cfg = PipelineConfig {
        schedule: vec![2, 4],
        ..Default::default()
    };
    let (outs, trace) = recover_dirichlet(&s, &t, &cfg).unwrap();
    assert_eq!(outs.len(), 2);
    let last = trace.rows.last().unwrap();
    eprintln!(
        "3d: tv={} target={} F={} G={}",
        last.tv_pk, last.tv_target, last.energy_f, last.energy_g
    );
    assert!(
        (last.tv_pk - last.tv_target).abs() <= 0.25 * last.tv_target.max(1e-12),
        "3d TV {} vs {}",
        last.tv_pk,
        last.tv_target
    );
    for out in &outs {
        assert!(out.regular);
    }
}

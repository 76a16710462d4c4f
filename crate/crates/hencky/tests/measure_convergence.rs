//! Reshetnyak-type continuity of the dissipation energy under strict
//! convergence of discrete plastic measures, and the lower-semicontinuity
//! witness under weak*-only convergence.

use hencky::fields::{
    strict_gap_curve, test_fields, total_variation, weakstar_gap_curve, PlasticMeasure,
};
use hencky::functionals::h_energy;
use hencky::mesh::{gen_rectangle, Gamma0Select, Mesh};
use hencky::tensor::{SymTensor, YieldSet};

fn unit_square(m: usize) -> Mesh {
    gen_rectangle(2, &[1.0, 1.0], m, &Gamma0Select::All).unwrap()
}

fn dirfield() -> SymTensor {
    SymTensor::diag(2, &[1.0, -1.0]).scale(1.0 / 2f64.sqrt())
}

/// Strictly converging sequence 1: mass-preserving mollification of a fixed
/// direction density (a moving average over cell neighbourhoods).
fn smoothed_sequence(mesh: &Mesh, steps: &[usize]) -> (Vec<PlasticMeasure>, PlasticMeasure) {
    let dir = dirfield();
    let density = |x: f64, y: f64, width: f64| {
        // width-mollified indicator of the left half, mass 1/2 overall
        let t = ((x - 0.5) / width.max(1e-9)).clamp(-1.0, 1.0);
        0.5 * (1.0 - t) * (0.2 + y * 0.0)
    };
    let mut limit = PlasticMeasure::zero(mesh);
    for ci in 0..mesh.cell_count() {
        let c = mesh.cell_centroid(ci);
        limit.ac[ci] = dir.scale(density(c[0], c[1], 0.0));
    }
    let seq = steps
        .iter()
        .map(|&s| {
            let width = 0.5 / s as f64;
            let mut p = PlasticMeasure::zero(mesh);
            for ci in 0..mesh.cell_count() {
                let c = mesh.cell_centroid(ci);
                p.ac[ci] = dir.scale(density(c[0], c[1], width));
            }
            p
        })
        .collect();
    (seq, limit)
}

/// Strictly converging sequence 2: a translating bump of constant mass and
/// fixed direction.
fn moving_bump_sequence(mesh: &Mesh, steps: &[usize]) -> (Vec<PlasticMeasure>, PlasticMeasure) {
    let dir = dirfield();
    let bump = |x: f64, y: f64, cx: f64| {
        let r2 = (x - cx).powi(2) + (y - 0.5).powi(2);
        (1.0 - r2 / 0.04).max(0.0)
    };
    let make = |cx: f64| {
        let mut p = PlasticMeasure::zero(mesh);
        for ci in 0..mesh.cell_count() {
            let c = mesh.cell_centroid(ci);
            p.ac[ci] = dir.scale(bump(c[0], c[1], cx));
        }
        p
    };
    let limit = make(0.5);
    let seq = steps.iter().map(|&s| make(0.5 + 0.3 / s as f64)).collect();
    (seq, limit)
}

/// Strictly converging sequence 3: rotating direction approaching a fixed
/// one, with a fixed density.
fn rotating_direction_sequence(mesh: &Mesh, steps: &[usize]) -> (Vec<PlasticMeasure>, PlasticMeasure) {
    let base = dirfield();
    let other = SymTensor::from_components(2, &[0.0, 0.0, 1.0]).scale(1.0 / 2f64.sqrt());
    let make = |angle: f64| {
        let t = base.scale(angle.cos()).add(&other.scale(angle.sin()));
        let mut p = PlasticMeasure::zero(mesh);
        for ci in 0..mesh.cell_count() {
            let c = mesh.cell_centroid(ci);
            p.ac[ci] = t.scale(0.3 + 0.2 * c[1]);
        }
        p
    };
    let limit = make(0.0);
    let seq = steps.iter().map(|&s| make(0.7 / (s * s) as f64)).collect();
    (seq, limit)
}

#[test]
fn reshetnyak_continuity_on_strict_sequences() {
    let mesh = unit_square(24);
    let tests = test_fields(&mesh);
    let steps = [1usize, 2, 4, 8, 16, 32];
    // polytope yield set so the density direction matters
    let a = SymTensor::diag(2, &[1.0, -1.0]);
    let b = SymTensor::from_components(2, &[0.0, 0.0, 1.0]);
    let k = YieldSet::polytope(2, vec![a, a.scale(-1.0), b, b.scale(-1.0)]).unwrap();

    for (name, (seq, limit)) in [
        ("smoothed", smoothed_sequence(&mesh, &steps)),
        ("moving bump", moving_bump_sequence(&mesh, &steps)),
        ("rotating direction", rotating_direction_sequence(&mesh, &steps)),
    ] {
        let strict = strict_gap_curve(&mesh, &seq, &limit, &tests);
        assert!(
            strict.last().unwrap() < &(0.05 * (1.0 + strict[0])),
            "{name}: strict gap does not shrink: {strict:?}"
        );
        let h_limit = h_energy(&mesh, &k, &limit).unwrap();
        let gaps: Vec<f64> = seq
            .iter()
            .map(|p| (h_energy(&mesh, &k, p).unwrap() - h_limit).abs())
            .collect();
        assert!(
            gaps.last().unwrap() < &1e-6,
            "{name}: H-energy gap at the tail is {:?}",
            gaps
        );
    }
}

#[test]
fn weakstar_only_sequence_is_strictly_lower_semicontinuous() {
    // oscillating-sign densities: weak* null, total variation 1; the
    // H-energy of the limit (zero) is strictly below the liminf
    let mesh = unit_square(32);
    let tests = test_fields(&mesh);
    let dir = dirfield();
    let k = YieldSet::ball(2, 1.3).unwrap();
    let mut seq = Vec::new();
    for s in [1usize, 2, 4, 8] {
        let mut p = PlasticMeasure::zero(&mesh);
        for ci in 0..mesh.cell_count() {
            let c = mesh.cell_centroid(ci);
            let sign = if ((c[0] * 2.0 * s as f64).floor() as i64) % 2 == 0 {
                1.0
            } else {
                -1.0
            };
            p.ac[ci] = dir.scale(sign);
        }
        seq.push(p);
    }
    let zero = PlasticMeasure::zero(&mesh);
    let ws = weakstar_gap_curve(&mesh, &seq, &zero, &tests);
    assert!(ws.last().unwrap() < &(0.35 * ws[0]), "weak* gaps {ws:?}");
    for p in &seq {
        assert!((total_variation(&mesh, p) - 1.0).abs() < 1e-12);
    }
    let h_zero = h_energy(&mesh, &k, &zero).unwrap();
    let h_min = seq
        .iter()
        .map(|p| h_energy(&mesh, &k, p).unwrap())
        .fold(f64::INFINITY, f64::min);
    let margin = h_min - h_zero;
    assert!(
        margin > 1.0,
        "expected a positive lower-semicontinuity margin, got {margin}"
    );
}

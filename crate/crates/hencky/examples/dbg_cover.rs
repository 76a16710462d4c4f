use hencky::functionals::{BoundaryDatum, Scenario};
use hencky::mesh::{gen_rectangle, Gamma0Select};
use hencky::solver::{solve, BcMode, SolveConfig};
use hencky::tensor::{ElasticModuli, YieldSet};
use std::time::Instant;

fn main() {
    for (gamma, m, bc) in [(2.0, 16usize, BcMode::Relaxed), (2.0, 16, BcMode::Hard), (0.2, 16, BcMode::Relaxed)] {
        let s = Scenario::new(
            gen_rectangle(2, &[1.0, 1.0], m, &Gamma0Select::All).unwrap(),
            ElasticModuli::isotropic(2, 1.0, 1.0).unwrap(),
            YieldSet::ball(2, 1.0).unwrap(),
            BoundaryDatum::Shear { gamma },
        ).unwrap();
        let cfg = SolveConfig { tol: 2e-4, max_iters: 400_000, bc, ..Default::default() };
        let w = s.datum_field();
        let t0 = Instant::now();
        let (_, _, report) = solve(&s, &cfg, &w).unwrap();
        let expect = { let sdev: f64 = gamma / 2f64.sqrt(); if sdev <= 0.5 { sdev * sdev } else { sdev - 0.25 } };
        println!(
            "gamma={gamma} m={m} bc={bc:?}: iters={} converged={} energy={:.8} (expect {:.8}, rel {:.2e}) gap={:.2e} time={:.1?}",
            report.iterations, report.converged, report.energy.total, expect,
            (report.energy.total - expect).abs() / expect, report.final_gap, t0.elapsed()
        );
    }
}

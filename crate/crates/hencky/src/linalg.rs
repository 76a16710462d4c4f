//! Small shared numerical helpers: compensated summation, conjugate
//! gradients on matrix-free operators, and power iteration.

/// Kahan compensated sum.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for v in values {
        let y = v - c;
        let t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    sum
}

/// Conjugate gradients for a symmetric positive definite operator given as a
/// closure. Returns the iterate when the residual drops below
/// `tol * |rhs|` or after `max_iters`.
pub fn conjugate_gradient(
    apply: &dyn Fn(&[f64], &mut [f64]),
    rhs: &[f64],
    tol: f64,
    max_iters: usize,
) -> (Vec<f64>, f64) {
    let n = rhs.len();
    let mut x = vec![0.0; n];
    let mut r = rhs.to_vec();
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let rhs_norm = norm(rhs).max(f64::MIN_POSITIVE);
    let mut rr: f64 = dot(&r, &r);
    for _ in 0..max_iters {
        if rr.sqrt() <= tol * rhs_norm {
            break;
        }
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            break;
        }
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
    }
    let resid = rr.sqrt() / rhs_norm;
    (x, resid)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Power iteration estimating the largest singular value of an operator
/// given by forward and adjoint applications, from an explicit start vector.
pub fn power_iteration(
    forward: &dyn Fn(&[f64], &mut [f64]),
    adjoint: &dyn Fn(&[f64], &mut [f64]),
    start: &[f64],
    range_len: usize,
    iters: usize,
) -> f64 {
    let n = start.len();
    let mut x = start.to_vec();
    let nx = norm(&x);
    if nx == 0.0 {
        return 0.0;
    }
    for v in x.iter_mut() {
        *v /= nx;
    }
    let mut y = vec![0.0; range_len];
    let mut z = vec![0.0; n];
    let mut lambda = 0.0;
    for _ in 0..iters {
        forward(&x, &mut y);
        adjoint(&y, &mut z);
        let nz = norm(&z);
        if nz == 0.0 {
            return 0.0;
        }
        lambda = nz;
        for i in 0..n {
            x[i] = z[i] / nz;
        }
    }
    lambda.sqrt()
}

/// Deterministic pseudo-random start vector for power iterations.
pub fn seeded_vector(n: usize, seed: u64) -> Vec<f64> {
    let mut state = seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1);
    (0..n)
        .map(|_| {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
        .collect()
}

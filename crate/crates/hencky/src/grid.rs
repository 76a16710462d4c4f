//! Uniform background grid over an extended bounding box, used to realize
//! the continuum translate-mollify constructions: fields are sampled onto
//! the grid, convolved with a C^2 bump, and re-interpolated to the mesh.

use crate::mesh::{Mesh, Vec3};
use rayon::prelude::*;

#[derive(Debug, Clone)]
pub struct Grid {
    pub dim: usize,
    pub origin: Vec3,
    pub h: f64,
    /// Node counts per axis (third entry 1 in 2-D).
    pub shape: [usize; 3],
}

impl Grid {
    /// Grid covering the mesh bounding box inflated by `pad` on every side.
    pub fn covering(mesh: &Mesh, pad: f64, h: f64) -> Grid {
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
        let mut shape = [1usize; 3];
        let mut origin = [0.0; 3];
        for a in 0..dim {
            origin[a] = lo[a] - pad;
            shape[a] = (((hi[a] - lo[a] + 2.0 * pad) / h).ceil() as usize) + 1;
        }
        Grid {
            dim,
            origin,
            h,
            shape,
        }
    }

    pub fn len(&self) -> usize {
        self.shape[0] * self.shape[1] * self.shape[2]
    }

    pub fn node(&self, idx: usize) -> Vec3 {
        let i = idx % self.shape[0];
        let rest = idx / self.shape[0];
        let j = rest % self.shape[1];
        let k = rest / self.shape[1];
        [
            self.origin[0] + i as f64 * self.h,
            self.origin[1] + j as f64 * self.h,
            self.origin[2] + k as f64 * self.h,
        ]
    }

    fn flat(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.shape[1] + j) * self.shape[0] + i
    }

    /// Sample a scalar function at every node (parallel, deterministic by
    /// index).
    #[allow(dead_code)]
    pub fn sample(&self, f: impl Fn(&Vec3) -> f64 + Sync) -> Vec<f64> {
        (0..self.len())
            .into_par_iter()
            .map(|idx| f(&self.node(idx)))
            .collect()
    }

    /// Discrete convolution with the C^2 bump `(1 - (|x|/eps)^2)^3`,
    /// normalized on the grid so constants are preserved exactly.
    pub fn convolve(&self, data: &[f64], eps: f64) -> Vec<f64> {
        let r = (eps / self.h).floor() as i64;
        if r < 1 {
            return data.to_vec();
        }
        let dim = self.dim;
        let mut offsets: Vec<(i64, i64, i64, f64)> = Vec::new();
        let kr = if dim == 3 { r } else { 0 };
        let mut total = 0.0;
        for dk in -kr..=kr {
            for dj in -r..=r {
                for di in -r..=r {
                    let dist2 = ((di * di + dj * dj + dk * dk) as f64) * self.h * self.h;
                    let q = dist2 / (eps * eps);
                    if q < 1.0 {
                        let w = (1.0 - q).powi(3);
                        offsets.push((di, dj, dk, w));
                        total += w;
                    }
                }
            }
        }
        for o in offsets.iter_mut() {
            o.3 /= total;
        }
        let (nx, ny, nz) = (self.shape[0] as i64, self.shape[1] as i64, self.shape[2] as i64);
        (0..self.len())
            .into_par_iter()
            .map(|idx| {
                let i = (idx % self.shape[0]) as i64;
                let rest = idx / self.shape[0];
                let j = (rest % self.shape[1]) as i64;
                let k = (rest / self.shape[1]) as i64;
                let mut acc = 0.0;
                for &(di, dj, dk, w) in &offsets {
                    let (ii, jj, kk) = (i + di, j + dj, k + dk);
                    if ii >= 0 && ii < nx && jj >= 0 && jj < ny && kk >= 0 && kk < nz {
                        acc += w * data[self.flat(ii as usize, jj as usize, kk as usize)];
                    }
                }
                acc
            })
            .collect()
    }

    /// Multilinear interpolation of grid data at an arbitrary point.
    pub fn interpolate(&self, data: &[f64], x: &Vec3) -> f64 {
        let mut rel = [0.0; 3];
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..self.dim {
            rel[a] = (x[a] - self.origin[a]) / self.h;
            if rel[a] < 0.0 || rel[a] > (self.shape[a] - 1) as f64 {
                return 0.0;
            }
            let fl = rel[a].floor();
            base[a] = (fl as usize).min(self.shape[a] - 2);
            frac[a] = rel[a] - base[a] as f64;
        }
        if self.dim == 2 {
            let f00 = data[self.flat(base[0], base[1], 0)];
            let f10 = data[self.flat(base[0] + 1, base[1], 0)];
            let f01 = data[self.flat(base[0], base[1] + 1, 0)];
            let f11 = data[self.flat(base[0] + 1, base[1] + 1, 0)];
            let fx0 = f00 + frac[0] * (f10 - f00);
            let fx1 = f01 + frac[0] * (f11 - f01);
            fx0 + frac[1] * (fx1 - fx0)
        } else {
            let mut acc = 0.0;
            for (dk, wk) in [(0usize, 1.0 - frac[2]), (1, frac[2])] {
                let f00 = data[self.flat(base[0], base[1], base[2] + dk)];
                let f10 = data[self.flat(base[0] + 1, base[1], base[2] + dk)];
                let f01 = data[self.flat(base[0], base[1] + 1, base[2] + dk)];
                let f11 = data[self.flat(base[0] + 1, base[1] + 1, base[2] + dk)];
                let fx0 = f00 + frac[0] * (f10 - f00);
                let fx1 = f01 + frac[0] * (f11 - f01);
                acc += wk * (fx0 + frac[1] * (fx1 - fx0));
            }
            acc
        }
    }

    /// Grid quadrature of `data` (trapezoid-type with unit node weights;
    /// fields are compactly supported well inside the grid).
    #[allow(dead_code)]
    pub fn integrate(&self, data: &[f64]) -> f64 {
        let cell = self.h.powi(self.dim as i32);
        crate::linalg::compensated_sum(data.iter().map(|&v| v * cell))
    }

    /// Grid quadrature of `|f|^p` for a block of component fields
    /// interpreted as one vector field.
    pub fn integrate_lp(&self, comps: &[&[f64]], p: f64) -> f64 {
        let cell = self.h.powi(self.dim as i32);
        let n = self.len();
        let mut sum = 0.0;
        let mut c = 0.0;
        for idx in 0..n {
            let mut mag2 = 0.0;
            for comp in comps {
                mag2 += comp[idx] * comp[idx];
            }
            let v = mag2.sqrt().powf(p) * cell;
            let y = v - c;
            let t = sum + y;
            c = (t - sum) - y;
            sum = t;
        }
        sum
    }
}

/// Accelerated point location: cells bucketed on a uniform lattice.
pub struct CellLocator<'a> {
    mesh: &'a Mesh,
    origin: Vec3,
    h: f64,
    shape: [usize; 3],
    buckets: Vec<Vec<usize>>,
}

impl<'a> CellLocator<'a> {
    pub fn new(mesh: &'a Mesh) -> Self {
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
        let target = (mesh.cell_count() as f64).powf(1.0 / dim as f64).ceil() as usize;
        let n = target.max(1);
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
        let mut buckets = vec![Vec::new(); shape[0] * shape[1] * shape[2]];
        for ci in 0..mesh.cell_count() {
            let mut clo = [f64::INFINITY; 3];
            let mut chi = [f64::NEG_INFINITY; 3];
            for &v in mesh.cell(ci) {
                let p = mesh.vertex(v);
                for a in 0..dim {
                    clo[a] = clo[a].min(p[a]);
                    chi[a] = chi[a].max(p[a]);
                }
            }
            let mut ilo = [0usize; 3];
            let mut ihi = [0usize; 3];
            for a in 0..dim {
                ilo[a] = (((clo[a] - lo[a]) / h).floor().max(0.0) as usize).min(shape[a] - 1);
                ihi[a] = (((chi[a] - lo[a]) / h).floor().max(0.0) as usize).min(shape[a] - 1);
            }
            for k in ilo[2]..=ihi[2] {
                for j in ilo[1]..=ihi[1] {
                    for i in ilo[0]..=ihi[0] {
                        buckets[flat(i, j, k)].push(ci);
                    }
                }
            }
        }
        CellLocator {
            mesh,
            origin: lo,
            h,
            shape,
            buckets,
        }
    }

    pub fn locate(&self, x: &Vec3) -> Option<(usize, [f64; 4])> {
        let dim = self.mesh.dim();
        let mut idx = [0usize; 3];
        for a in 0..dim {
            let rel = (x[a] - self.origin[a]) / self.h;
            if rel < -1.0 || rel > self.shape[a] as f64 + 1.0 {
                return None;
            }
            idx[a] = (rel.floor().max(0.0) as usize).min(self.shape[a] - 1);
        }
        let flat = (idx[2] * self.shape[1] + idx[1]) * self.shape[0] + idx[0];
        for &ci in &self.buckets[flat] {
            let lam = self.mesh.barycentric(ci, x);
            if lam[..dim + 1].iter().all(|&l| l >= -1e-12) {
                return Some((ci, lam));
            }
        }
        None
    }

    /// Robust variant trying the 3^dim neighbouring buckets.
    pub fn locate_wide(&self, x: &Vec3) -> Option<(usize, [f64; 4])> {
        if let Some(hit) = self.locate(x) {
            return Some(hit);
        }
        let dim = self.mesh.dim();
        let mut idx = [0i64; 3];
        for a in 0..dim {
            let rel = (x[a] - self.origin[a]) / self.h;
            idx[a] = rel.floor() as i64;
        }
        let range = |a: usize| -> Vec<usize> {
            let mut out = Vec::new();
            for d in -1..=1i64 {
                let v = idx[a] + d;
                if v >= 0 && (v as usize) < self.shape[a] {
                    out.push(v as usize);
                }
            }
            out
        };
        let ks = if dim == 3 { range(2) } else { vec![0usize] };
        for &k in &ks {
            for &j in &range(1) {
                for &i in &range(0) {
                    let flat = (k * self.shape[1] + j) * self.shape[0] + i;
                    for &ci in &self.buckets[flat] {
                        let lam = self.mesh.barycentric(ci, x);
                        if lam[..dim + 1].iter().all(|&l| l >= -1e-12) {
                            return Some((ci, lam));
                        }
                    }
                }
            }
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{gen_rectangle, Gamma0Select};

    #[test]
    fn convolution_preserves_constants_and_mass() {
        let mesh = gen_rectangle(2, &[1.0, 1.0], 4, &Gamma0Select::All).unwrap();
        let grid = Grid::covering(&mesh, 0.5, 0.02);
        let ones = vec![1.0; grid.len()];
        let sm = grid.convolve(&ones, 0.1);
        // interior nodes keep the value 1 exactly (normalized kernel)
        let centre_idx = grid.len() / 2;
        assert!((sm[centre_idx] - 1.0).abs() < 1e-12);
        // compactly supported bump keeps its integral
        let bump = grid.sample(|x| {
            let r2 = (x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2);
            (1.0 - r2 / 0.04).max(0.0)
        });
        let before = grid.integrate(&bump);
        let after = grid.integrate(&grid.convolve(&bump, 0.08));
        assert!((before - after).abs() < 1e-10 * before);
    }

    #[test]
    fn locator_agrees_with_linear_scan() {
        let mesh = gen_rectangle(2, &[1.0, 1.0], 5, &Gamma0Select::All).unwrap();
        let loc = CellLocator::new(&mesh);
        for (px, py) in [(0.13, 0.77), (0.5, 0.5), (0.999, 0.001), (0.0, 0.0)] {
            let p = [px, py, 0.0];
            let a = loc.locate_wide(&p).map(|(c, _)| c);
            let b = mesh.locate(&p, 1e-12).map(|(c, _)| c);
            assert_eq!(a.is_some(), b.is_some());
        }
        assert!(loc.locate_wide(&[1.5, 0.5, 0.0]).is_none());
    }
}

//! Jordan algebra and Nesterov–Todd scaling for products of nonnegative orthants and
//! second-order cones.

use nalgebra::DMatrix;

/// Cone layout: `orthant` scalar rows first, then one block per second-order cone.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub(crate) struct ConeLayout {
    pub orthant: usize,
    pub socs: Vec<usize>,
}

impl ConeLayout {
    pub fn dim(&self) -> usize {
        self.orthant + self.socs.iter().sum::<usize>()
    }

    /// Barrier degree (number of Jordan-algebra blocks).
    pub fn degree(&self) -> usize {
        self.orthant + self.socs.len()
    }

    pub fn soc_ranges(&self) -> impl Iterator<Item = std::ops::Range<usize>> + '_ {
        let mut start = self.orthant;
        self.socs.iter().map(move |&d| {
            let r = start..start + d;
            start += d;
            r
        })
    }

    pub fn identity(&self) -> Vec<f64> {
        let mut e = vec![0.0; self.dim()];
        e[..self.orthant].iter_mut().for_each(|x| *x = 1.0);
        for r in self.soc_ranges() {
            e[r.start] = 1.0;
        }
        e
    }

    /// Smallest "eigenvalue" of `x` in the Jordan algebra.
    pub fn min_eig(&self, x: &[f64]) -> f64 {
        let mut m = f64::INFINITY;
        for &v in &x[..self.orthant] {
            m = m.min(v);
        }
        for r in self.soc_ranges() {
            m = m.min(x[r.start] - norm(&x[r.start + 1..r.end]));
        }
        m
    }

    /// Smallest per-block complementarity `s_i z_i`, using `√(det s · det z)` on cones.
    pub fn min_complementarity(&self, s: &[f64], z: &[f64]) -> f64 {
        let mut m = f64::INFINITY;
        for i in 0..self.orthant {
            m = m.min(s[i] * z[i]);
        }
        let det = |x: &[f64]| (x[0] * x[0] - x[1..].iter().map(|v| v * v).sum::<f64>()).max(0.0);
        for r in self.soc_ranges() {
            m = m.min((det(&s[r.clone()]) * det(&z[r])).sqrt());
        }
        m
    }

    /// `u ∘ v`.
    pub fn product(&self, u: &[f64], v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; u.len()];
        for i in 0..self.orthant {
            out[i] = u[i] * v[i];
        }
        for r in self.soc_ranges() {
            let (u0, u1) = (u[r.start], &u[r.start + 1..r.end]);
            let (v0, v1) = (v[r.start], &v[r.start + 1..r.end]);
            out[r.start] = u0 * v0 + dot(u1, v1);
            for k in 0..u1.len() {
                out[r.start + 1 + k] = u0 * v1[k] + v0 * u1[k];
            }
        }
        out
    }

    /// Solves `lam ∘ u = r` for `u` (`lam` in the interior).
    pub fn divide(&self, lam: &[f64], r: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; r.len()];
        for i in 0..self.orthant {
            out[i] = r[i] / lam[i];
        }
        for rg in self.soc_ranges() {
            let (l0, l1) = (lam[rg.start], &lam[rg.start + 1..rg.end]);
            let (r0, r1) = (r[rg.start], &r[rg.start + 1..rg.end]);
            let det = l0 * l0 - dot(l1, l1);
            let u0 = (l0 * r0 - dot(l1, r1)) / det;
            out[rg.start] = u0;
            for k in 0..l1.len() {
                out[rg.start + 1 + k] = (r1[k] - u0 * l1[k]) / l0;
            }
        }
        out
    }

    /// Largest `α ≥ 0` (possibly `∞`) with `x + α·dx` in the cone, `x` interior.
    pub fn max_step(&self, x: &[f64], dx: &[f64]) -> f64 {
        let mut alpha = f64::INFINITY;
        for i in 0..self.orthant {
            if dx[i] < 0.0 {
                alpha = alpha.min(-x[i] / dx[i]);
            }
        }
        for r in self.soc_ranges() {
            alpha = alpha.min(soc_step(&x[r.clone()], &dx[r]));
        }
        alpha
    }
}

fn soc_step(x: &[f64], d: &[f64]) -> f64 {
    // smallest positive root of (x0 + a d0)² − ‖x1 + a d1‖² along a ray from an interior x
    let a = d[0] * d[0] - dot(&d[1..], &d[1..]);
    let b = x[0] * d[0] - dot(&x[1..], &d[1..]);
    let c = (x[0] * x[0] - dot(&x[1..], &x[1..])).max(0.0);
    let scale = (x[0] * x[0]).max(d[0] * d[0]).max(1e-300);
    let mut best = f64::INFINITY;
    if a.abs() <= 1e-14 * scale {
        if b < 0.0 {
            best = -c / (2.0 * b);
        }
    } else {
        let disc = b * b - a * c;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            let q = -(b + b.signum() * sq);
            for root in [q / a, if q != 0.0 { c / q } else { f64::INFINITY }] {
                if root > 0.0 && root < best {
                    best = root;
                }
            }
        }
    }
    // guard against leaving through the negative half of the double cone
    if d[0] < 0.0 {
        best = best.min(-x[0] / d[0]);
    }
    best
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Nesterov–Todd scaling `W` with `W z = W⁻¹ s = λ`.
pub(crate) struct Scaling {
    // orthant: W = diag(d)
    d: Vec<f64>,
    // per SOC: W = β (2 v vᵀ − J)
    socs: Vec<(f64, Vec<f64>)>,
    pub lambda: Vec<f64>,
}

impl Scaling {
    pub fn new(layout: &ConeLayout, s: &[f64], z: &[f64]) -> Option<Self> {
        let mut d = Vec::with_capacity(layout.orthant);
        for i in 0..layout.orthant {
            if s[i] <= 0.0 || z[i] <= 0.0 {
                return None;
            }
            d.push((s[i] / z[i]).sqrt());
        }
        let mut socs = Vec::with_capacity(layout.socs.len());
        for r in layout.soc_ranges() {
            let (sb, zb) = (&s[r.clone()], &z[r]);
            let sjs = sb[0] * sb[0] - dot(&sb[1..], &sb[1..]);
            let zjz = zb[0] * zb[0] - dot(&zb[1..], &zb[1..]);
            if !(sjs > 0.0 && zjz > 0.0 && sb[0] > 0.0 && zb[0] > 0.0) {
                return None;
            }
            let (sn, zn) = (sjs.sqrt(), zjz.sqrt());
            let sbar: Vec<f64> = sb.iter().map(|x| x / sn).collect();
            let zbar: Vec<f64> = zb.iter().map(|x| x / zn).collect();
            let gamma = ((1.0 + dot(&sbar, &zbar)) / 2.0).sqrt();
            let mut wbar: Vec<f64> = vec![0.0; sb.len()];
            wbar[0] = (sbar[0] + zbar[0]) / (2.0 * gamma);
            for k in 1..sb.len() {
                wbar[k] = (sbar[k] - zbar[k]) / (2.0 * gamma);
            }
            let beta = (sjs / zjz).powf(0.25);
            let denom = (2.0 * (1.0 + wbar[0])).sqrt();
            let mut v = wbar;
            v[0] += 1.0;
            v.iter_mut().for_each(|x| *x /= denom);
            socs.push((beta, v));
        }
        let mut sc = Self { d, socs, lambda: Vec::new() };
        sc.lambda = sc.apply(layout, z);
        Some(sc)
    }

    /// `W x`.
    pub fn apply(&self, layout: &ConeLayout, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        for i in 0..layout.orthant {
            out[i] = self.d[i] * x[i];
        }
        for (r, (beta, v)) in layout.soc_ranges().zip(&self.socs) {
            let xb = &x[r.clone()];
            // β(2 v vᵀ − J) x
            let vx = dot(v, xb);
            out[r.start] = beta * (2.0 * v[0] * vx - xb[0]);
            for k in 1..xb.len() {
                out[r.start + k] = beta * (2.0 * v[k] * vx + xb[k]);
            }
        }
        out
    }

    /// `W⁻¹ x`.
    pub fn apply_inv(&self, layout: &ConeLayout, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        for i in 0..layout.orthant {
            out[i] = x[i] / self.d[i];
        }
        for (r, (beta, v)) in layout.soc_ranges().zip(&self.socs) {
            let xb = &x[r.clone()];
            // (1/β)(2 J v vᵀ J − J) x
            let jv: Vec<f64> = v.iter().enumerate().map(|(k, &a)| if k == 0 { a } else { -a }).collect();
            let jvx = dot(&jv, xb);
            out[r.start] = (2.0 * jv[0] * jvx - xb[0]) / beta;
            for k in 1..xb.len() {
                out[r.start + k] = (2.0 * jv[k] * jvx + xb[k]) / beta;
            }
        }
        out
    }

    /// Diagonal weights `1/d²` of the orthant part of `W⁻²`.
    pub fn orthant_weights(&self) -> impl Iterator<Item = f64> + '_ {
        self.d.iter().map(|d| 1.0 / (d * d))
    }

    /// Dense `W⁻¹` for SOC block `k`.
    pub fn soc_inverse_block(&self, k: usize) -> DMatrix<f64> {
        let (beta, v) = &self.socs[k];
        let n = v.len();
        let jv: Vec<f64> = v.iter().enumerate().map(|(k, &a)| if k == 0 { a } else { -a }).collect();
        DMatrix::from_fn(n, n, |i, j| {
            let jm = if i != j {
                0.0
            } else if i == 0 {
                1.0
            } else {
                -1.0
            };
            (2.0 * jv[i] * jv[j] - jm) / beta
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout() -> ConeLayout {
        ConeLayout { orthant: 2, socs: vec![3, 2] }
    }

    #[test]
    fn nt_scaling_maps_z_and_s_to_same_point() {
        let l = layout();
        let s = [1.0, 2.0, 3.0, 1.0, -0.5, 2.0, 1.5];
        let z = [0.5, 0.1, 2.0, -0.3, 1.2, 1.0, -0.2];
        let w = Scaling::new(&l, &s, &z).unwrap();
        let wz = w.apply(&l, &z);
        let winv_s = w.apply_inv(&l, &s);
        for (a, b) in wz.iter().zip(&winv_s) {
            assert!((a - b).abs() < 1e-12, "{wz:?} vs {winv_s:?}");
        }
        let back = w.apply_inv(&l, &w.apply(&l, &s));
        for (a, b) in back.iter().zip(&s) {
            assert!((a - b).abs() < 1e-12);
        }
        let blk = w.soc_inverse_block(0);
        let x = nalgebra::DVector::from_column_slice(&s[2..5]);
        let dense = &blk * x;
        let fast = w.apply_inv(&l, &s);
        for k in 0..3 {
            assert!((dense[k] - fast[2 + k]).abs() < 1e-12);
        }
    }

    #[test]
    fn divide_inverts_product() {
        let l = layout();
        let lam = [1.0, 2.0, 3.0, 1.0, -0.5, 2.0, 1.5];
        let u = [0.3, -1.0, 0.2, 0.7, -0.1, 4.0, 0.3];
        let r = l.product(&lam, &u);
        let back = l.divide(&lam, &r);
        for (a, b) in back.iter().zip(&u) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn max_step_hits_boundary() {
        let l = ConeLayout { orthant: 0, socs: vec![3] };
        let x = [2.0, 0.0, 0.0];
        let d = [-1.0, 1.0, 0.0];
        // (2 − a)² = a² → a = 1
        assert!((l.max_step(&x, &d) - 1.0).abs() < 1e-12);
        assert_eq!(l.max_step(&x, &[1.0, 0.5, 0.0]), f64::INFINITY);
    }
}

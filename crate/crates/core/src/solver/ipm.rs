//! Primal-dual interior-point method for conic quadratic programs
//!
//! ```text
//!     min  ½ xᵀP x + qᵀx
//!     s.t. A x = b
//!          G x + s = h,   s ∈ K = R₊ᵐ × Q₁ × … × Q_k
//! ```
//!
//! with Nesterov–Todd scaling and a Mehrotra predictor-corrector. The Newton system is
//! condensed to `[[P + GᵀW⁻²G, Aᵀ], [A, 0]]` and factorized by a quasi-definite `LDLᵀ`
//! with static regularization plus iterative refinement.

use nalgebra::{DMatrix, DVector};

use super::cones::{dot, ConeLayout, Scaling};
use crate::linalg::Ldl;

pub(crate) type SparseRow = Vec<(usize, f64)>;

#[derive(Clone, Debug)]
pub(crate) struct ConicProblem {
    pub n: usize,
    pub p: DMatrix<f64>,
    pub q: Vec<f64>,
    pub a: Vec<SparseRow>,
    pub b: Vec<f64>,
    pub g: Vec<SparseRow>,
    pub h: Vec<f64>,
    pub layout: ConeLayout,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum IpmStatus {
    Converged,
    /// Progress stopped; iterate is the best seen.
    Stalled,
    MaxIterations,
    Diverging,
}

#[derive(Clone, Debug)]
pub(crate) struct IpmResult {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub s: Vec<f64>,
    pub status: IpmStatus,
    pub iterations: usize,
    /// max(primal residual, dual residual, gap), all relative
    pub accuracy: f64,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct IpmSettings {
    pub target: f64,
    pub max_iter: usize,
    pub regularization: f64,
}

/// `x = D x̃`, constraint rows multiplied by `ea`/`eg`, cost multiplied by `cost`.
struct Equilibration {
    d: Vec<f64>,
    ea: Vec<f64>,
    eg: Vec<f64>,
    cost: f64,
}

/// Factorized Newton system for one scaling point.
struct NewtonSystem<'a> {
    w: &'a Scaling,
    kkt: DMatrix<f64>,
    f: Ldl,
    reg: f64,
    full: std::cell::OnceCell<Option<Reduced>>,
}

struct Reduced {
    k: DMatrix<f64>,
    f: Ldl,
    /// Rows of `G` kept explicit, in order.
    kept: Vec<usize>,
    /// Condensed orthant rows and their `W⁻²` weights.
    elim: Vec<(usize, f64)>,
}

struct Residuals {
    rx: Vec<f64>,
    ry: Vec<f64>,
    rz: Vec<f64>,
    pres: f64,
    dres: f64,
    gap: f64,
}

impl ConicProblem {
    fn sparse_mul(rows: &[SparseRow], x: &[f64]) -> Vec<f64> {
        rows.iter().map(|r| r.iter().map(|&(j, c)| c * x[j]).sum()).collect()
    }

    fn sparse_tmul_add(rows: &[SparseRow], y: &[f64], out: &mut [f64]) {
        for (r, &yi) in rows.iter().zip(y) {
            if yi != 0.0 {
                for &(j, c) in r {
                    out[j] += c * yi;
                }
            }
        }
    }

    fn p_mul(&self, x: &[f64]) -> Vec<f64> {
        let xv = DVector::from_column_slice(x);
        (&self.p * xv).as_slice().to_vec()
    }

    fn objective(&self, x: &[f64]) -> f64 {
        0.5 * dot(x, &self.p_mul(x)) + dot(&self.q, x)
    }

    fn data_scale(&self) -> (f64, f64) {
        let bh = self.b.iter().chain(&self.h).fold(0.0f64, |m, v| m.max(v.abs()));
        let q = self.q.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        (1.0 + bh, 1.0 + q)
    }

    fn residuals(&self, x: &[f64], y: &[f64], z: &[f64], s: &[f64]) -> Residuals {
        let mut rx = self.p_mul(x);
        for (r, q) in rx.iter_mut().zip(&self.q) {
            *r += q;
        }
        Self::sparse_tmul_add(&self.a, y, &mut rx);
        Self::sparse_tmul_add(&self.g, z, &mut rx);
        let ax = Self::sparse_mul(&self.a, x);
        let ry: Vec<f64> = ax.iter().zip(&self.b).map(|(a, b)| a - b).collect();
        let gx = Self::sparse_mul(&self.g, x);
        let rz: Vec<f64> = (0..gx.len()).map(|i| gx[i] + s[i] - self.h[i]).collect();
        let (ps, ds) = self.data_scale();
        let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, a| m.max(a.abs()));
        let pres = inf(&ry).max(inf(&rz)) / ps;
        let xs = 1.0 + inf(x);
        let dres = inf(&rx) / (ds + self.p.amax() * xs);
        let pobj = self.objective(x);
        let gap = dot(s, z).abs() / (1.0 + pobj.abs());
        Residuals { rx, ry, rz, pres, dres, gap }
    }

    /// Condensed Newton matrix `[[P + GᵀW⁻²G, Aᵀ], [A, 0]]`.
    fn kkt_matrix(&self, w: &Scaling) -> DMatrix<f64> {
        let n = self.n;
        let p = self.a.len();
        let mut k = DMatrix::zeros(n + p, n + p);
        k.view_mut((0, 0), (n, n)).copy_from(&self.p);
        for (row, wt) in self.g[..self.layout.orthant].iter().zip(w.orthant_weights()) {
            for &(i, ci) in row {
                for &(j, cj) in row {
                    k[(i, j)] += wt * ci * cj;
                }
            }
        }
        for (blk, r) in self.layout.soc_ranges().enumerate() {
            let rows = &self.g[r];
            let mut cols: Vec<usize> = rows.iter().flat_map(|row| row.iter().map(|&(j, _)| j)).collect();
            cols.sort_unstable();
            cols.dedup();
            if cols.is_empty() {
                continue;
            }
            let mut gb = DMatrix::zeros(rows.len(), cols.len());
            for (ri, row) in rows.iter().enumerate() {
                for &(j, c) in row {
                    let cj = cols.binary_search(&j).unwrap();
                    gb[(ri, cj)] += c;
                }
            }
            let wg = w.soc_inverse_block(blk) * gb;
            let m = wg.transpose() * &wg;
            for (a, &i) in cols.iter().enumerate() {
                for (b, &j) in cols.iter().enumerate() {
                    k[(i, j)] += m[(a, b)];
                }
            }
        }
        for (r, row) in self.a.iter().enumerate() {
            for &(j, c) in row {
                k[(n + r, j)] += c;
                k[(j, n + r)] += c;
            }
        }
        k
    }

    /// Full Newton matrix `[[P, Aᵀ, Gᵀ], [A, 0, 0], [G, 0, −W²]]`.
    /// Quasi-definite system in which orthant rows far from their bound (`z/s ≤ 1`) are
    /// condensed into the `P` block while near-active rows and every cone stay explicit.
    fn reduced_system(&self, w: &Scaling) -> (DMatrix<f64>, Vec<usize>, Vec<(usize, f64)>) {
        let (n, p) = (self.n, self.a.len());
        let l = &self.layout;
        let mut kept = Vec::new();
        let mut elim = Vec::new();
        for (i, wt) in w.orthant_weights().enumerate() {
            if wt > 1.0 {
                kept.push(i);
            } else {
                elim.push((i, wt));
            }
        }
        kept.extend(l.orthant..l.dim());
        let size = n + p + kept.len();
        let mut k = DMatrix::zeros(size, size);
        k.view_mut((0, 0), (n, n)).copy_from(&self.p);
        for &(i, wt) in &elim {
            let row = &self.g[i];
            for &(a, ca) in row {
                for &(b, cb) in row {
                    k[(a, b)] += wt * ca * cb;
                }
            }
        }
        for (r, row) in self.a.iter().enumerate() {
            for &(j, c) in row {
                k[(n + r, j)] += c;
                k[(j, n + r)] += c;
            }
        }
        for (t, &i) in kept.iter().enumerate() {
            for &(j, c) in &self.g[i] {
                k[(n + p + t, j)] += c;
                k[(j, n + p + t)] += c;
            }
        }
        let n_orth = kept.len() - (l.dim() - l.orthant);
        let mut unit = vec![0.0; l.dim()];
        for (t, &i) in kept[..n_orth].iter().enumerate() {
            unit[i] = 1.0;
            k[(n + p + t, n + p + t)] -= w.apply(l, &w.apply(l, &unit))[i];
            unit[i] = 0.0;
        }
        // cone row i sits at n + p + n_orth + (i − orthant)
        let base = n + p + n_orth;
        for r in l.soc_ranges() {
            for j in r.clone() {
                unit[j] = 1.0;
                let col = w.apply(l, &w.apply(l, &unit));
                unit[j] = 0.0;
                for i in r.clone() {
                    k[(base + i - l.orthant, base + j - l.orthant)] -= col[i];
                }
            }
        }
        (k, kept, elim)
    }

    fn reduced_factor(&self, w: &Scaling, reg: f64) -> Option<Reduced> {
        let (k, kept, elim) = self.reduced_system(w);
        let n = self.n;
        let scale = 1.0 + self.p.amax();
        let mut delta = reg;
        for _ in 0..8 {
            let regs: Vec<f64> = (0..k.nrows()).map(|i| if i < n { delta * scale } else { -delta }).collect();
            if let Some(f) = Ldl::factor(&k, &regs, n) {
                return Some(Reduced { k, f, kept, elim });
            }
            delta *= 100.0;
        }
        None
    }

    fn reduced_solve(&self, red: &Reduced, bx: &[f64], by: &[f64], bz: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (n, p) = (self.n, self.a.len());
        let mut rhs = DVector::zeros(red.k.nrows());
        rhs.as_mut_slice()[..n].copy_from_slice(bx);
        for &(i, wt) in &red.elim {
            for &(j, c) in &self.g[i] {
                rhs[j] += wt * c * bz[i];
            }
        }
        rhs.as_mut_slice()[n..n + p].copy_from_slice(by);
        for (t, &i) in red.kept.iter().enumerate() {
            rhs[n + p + t] = bz[i];
        }
        let sol = red.f.solve_refined(&red.k, &rhs, 3);
        let dx = sol.as_slice()[..n].to_vec();
        let dy = sol.as_slice()[n..n + p].to_vec();
        let mut dz = vec![0.0; bz.len()];
        for (t, &i) in red.kept.iter().enumerate() {
            dz[i] = sol[n + p + t];
        }
        for &(i, wt) in &red.elim {
            let gdx: f64 = self.g[i].iter().map(|&(j, c)| c * dx[j]).sum();
            dz[i] = wt * (gdx - bz[i]);
        }
        (dx, dy, dz)
    }

    #[allow(clippy::too_many_arguments)]
    fn newton_residual(
        &self,
        w: &Scaling,
        (dx, dy, dz): (&[f64], &[f64], &[f64]),
        bx: &[f64],
        by: &[f64],
        bz: &[f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let l = &self.layout;
        let mut r1 = self.p_mul(dx);
        Self::sparse_tmul_add(&self.a, dy, &mut r1);
        Self::sparse_tmul_add(&self.g, dz, &mut r1);
        let r1: Vec<f64> = bx.iter().zip(&r1).map(|(b, v)| b - v).collect();
        let r2: Vec<f64> = by.iter().zip(Self::sparse_mul(&self.a, dx)).map(|(b, v)| b - v).collect();
        let gdx = Self::sparse_mul(&self.g, dx);
        let w2dz = w.apply(l, &w.apply(l, dz));
        let r3: Vec<f64> = (0..bz.len()).map(|i| bz[i] - (gdx[i] - w2dz[i])).collect();
        (r1, r2, r3)
    }

    /// Solves `P dx + Aᵀdy + Gᵀdz = bx`, `A dx = by`, `G dx − W²dz = bz` through the
    /// condensed system, refining against the full one. When the condensed matrix is too
    /// ill-conditioned for refinement to recover, a quasi-definite system keeping the
    /// near-active rows explicit is factorized (once per scaling, cached in `full`).
    #[allow(clippy::too_many_arguments)]
    fn newton_solve(
        &self,
        sys: &NewtonSystem,
        bx: &[f64],
        by: &[f64],
        bz: &[f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let w = sys.w;
        let (mut dx, mut dy, mut dz) = self.condensed_solve(&sys.kkt, &sys.f, w, bx, by, bz);
        let scale = |v: &[f64]| v.iter().fold(0.0f64, |m, a| m.max(a.abs()));
        let b_norm = 1.0 + scale(bx).max(scale(by)).max(scale(bz));
        let mut err = f64::INFINITY;
        for round in 0..=3 {
            let (r1, r2, r3) = self.newton_residual(w, (&dx, &dy, &dz), bx, by, bz);
            err = scale(&r1).max(scale(&r2)).max(scale(&r3));
            if err <= 1e-15 * b_norm || round == 3 {
                break;
            }
            let (cx, cy, cz) = self.condensed_solve(&sys.kkt, &sys.f, w, &r1, &r2, &r3);
            dx.iter_mut().zip(&cx).for_each(|(a, b)| *a += b);
            dy.iter_mut().zip(&cy).for_each(|(a, b)| *a += b);
            dz.iter_mut().zip(&cz).for_each(|(a, b)| *a += b);
        }
        if err <= 1e-11 * b_norm {
            return (dx, dy, dz);
        }
        let Some(red) = sys.full.get_or_init(|| self.reduced_factor(w, sys.reg)) else {
            return (dx, dy, dz);
        };
        let (mut fx, mut fy, mut fz) = self.reduced_solve(red, bx, by, bz);
        let mut best: Option<(f64, Vec<f64>, Vec<f64>, Vec<f64>)> = None;
        for round in 0..=3 {
            let (r1, r2, r3) = self.newton_residual(w, (&fx, &fy, &fz), bx, by, bz);
            let e = scale(&r1).max(scale(&r2)).max(scale(&r3));
            if matches!(best, Some((b, ..)) if e >= b) {
                break;
            }
            best = Some((e, fx.clone(), fy.clone(), fz.clone()));
            if e <= 1e-15 * b_norm || round == 3 {
                break;
            }
            let (cx, cy, cz) = self.reduced_solve(red, &r1, &r2, &r3);
            fx.iter_mut().zip(&cx).for_each(|(a, b)| *a += b);
            fy.iter_mut().zip(&cy).for_each(|(a, b)| *a += b);
            fz.iter_mut().zip(&cz).for_each(|(a, b)| *a += b);
        }
        match best {
            Some((e, fx, fy, fz)) if e < err => (fx, fy, fz),
            _ => (dx, dy, dz),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn condensed_solve(
        &self,
        kkt: &DMatrix<f64>,
        f: &Ldl,
        w: &Scaling,
        bx: &[f64],
        by: &[f64],
        bz: &[f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = self.n;
        let l = &self.layout;
        let w2bz = w.apply_inv(l, &w.apply_inv(l, bz));
        let mut rhs = DVector::zeros(n + self.a.len());
        rhs.as_mut_slice()[..n].copy_from_slice(bx);
        Self::sparse_tmul_add(&self.g, &w2bz, &mut rhs.as_mut_slice()[..n]);
        rhs.as_mut_slice()[n..].copy_from_slice(by);
        let sol = f.solve_refined(kkt, &rhs, 2);
        let dx = sol.as_slice()[..n].to_vec();
        let dy = sol.as_slice()[n..].to_vec();
        let gdx = Self::sparse_mul(&self.g, &dx);
        let diff: Vec<f64> = gdx.iter().zip(bz).map(|(a, b)| a - b).collect();
        let dz = w.apply_inv(l, &w.apply_inv(l, &diff));
        (dx, dy, dz)
    }

    fn factor(&self, kkt: &DMatrix<f64>, reg: f64) -> Option<Ldl> {
        let n = self.n;
        let total = kkt.nrows();
        let scale = 1.0 + self.p.amax();
        let mut delta = reg;
        for _ in 0..8 {
            let regs: Vec<f64> = (0..total).map(|i| if i < n { delta * scale } else { -delta }).collect();
            if let Some(f) = Ldl::factor(kkt, &regs, n) {
                return Some(f);
            }
            delta *= 100.0;
        }
        None
    }

    fn initial_point(&self, settings: &IpmSettings, warm: Option<&[f64]>) -> Option<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
        let l = &self.layout;
        let m = l.dim();
        let e = l.identity();
        let ones = vec![1.0; m];
        let unit = Scaling::new(l, &e, &e)?;
        let kkt = self.kkt_matrix(&unit);
        let f = self.factor(&kkt, settings.regularization)?;
        let sys = NewtonSystem { w: &unit, kkt, f, reg: settings.regularization, full: Default::default() };
        // primal and dual starting points from separate solves, so a large linear cost
        // does not distort the initial slacks
        let neg_q: Vec<f64> = self.q.iter().map(|v| -v).collect();
        let (x, _, _) = self.newton_solve(&sys, &vec![0.0; self.n], &self.b, &self.h);
        let (_, y, zs) = self.newton_solve(&sys, &neg_q, &vec![0.0; self.a.len()], &vec![0.0; m]);
        let x = match warm {
            Some(w) if w.len() == self.n => w.to_vec(),
            _ => x,
        };
        let gx = Self::sparse_mul(&self.g, &x);
        let mut s: Vec<f64> = (0..m).map(|i| self.h[i] - gx[i]).collect();
        let mut z = zs;
        if warm.is_some() {
            z = ones.clone();
        }
        let shift = |v: &mut Vec<f64>| {
            let me = l.min_eig(v);
            if me <= 0.0 || !me.is_finite() {
                let a = 1.0 + if me.is_finite() { -me } else { 0.0 };
                for (vi, ei) in v.iter_mut().zip(&e) {
                    *vi += a * ei;
                }
            }
        };
        shift(&mut s);
        shift(&mut z);
        // balance the complementarity products so no pair starts far below the average
        let sz = dot(&s, &z);
        let (es, ez) = (dot(&e, &s), dot(&e, &z));
        if sz.is_finite() && es > 0.0 && ez > 0.0 {
            let (ds, dz) = (0.5 * sz / ez, 0.5 * sz / es);
            for i in 0..m {
                s[i] += ds * e[i];
                z[i] += dz * e[i];
            }
        }
        if s.iter().chain(&z).any(|v| !v.is_finite()) {
            return None;
        }
        Some((x, y, z, s))
    }

    /// Solves after Ruiz equilibration of the data and scaling of the cost, then maps
    /// the iterate back. The reported accuracy is measured on the original data.
    pub fn solve(&self, settings: &IpmSettings, warm: Option<&[f64]>) -> IpmResult {
        let (scaled, eq) = self.equilibrate();
        let warm = warm.map(|w| w.iter().zip(&eq.d).map(|(x, d)| x / d).collect::<Vec<_>>());
        let mut res = scaled.solve_unscaled(settings, warm.as_deref());
        for (x, d) in res.x.iter_mut().zip(&eq.d) {
            *x *= d;
        }
        for (y, e) in res.y.iter_mut().zip(&eq.ea) {
            *y *= e / eq.cost;
        }
        for ((z, s), e) in res.z.iter_mut().zip(res.s.iter_mut()).zip(&eq.eg) {
            *z *= e / eq.cost;
            *s /= e;
        }
        if res.accuracy.is_finite() {
            let r = self.residuals(&res.x, &res.y, &res.z, &res.s);
            res.accuracy = r.pres.max(r.dres).max(r.gap);
        }
        res
    }

    fn equilibrate(&self) -> (ConicProblem, Equilibration) {
        let (n, l) = (self.n, &self.layout);
        let mut d = vec![1.0; n];
        let mut ea = vec![1.0; self.a.len()];
        let mut eg = vec![1.0; self.g.len()];
        let clamp = |v: f64| if v > 1e-8 && v.is_finite() { v.sqrt() } else { 1.0 };
        for _ in 0..15 {
            let mut col = vec![0.0f64; n];
            for j in 0..n {
                for i in 0..n {
                    col[j] = col[j].max((d[i] * self.p[(i, j)] * d[j]).abs());
                }
            }
            let mut row_norms = |rows: &[SparseRow], e: &[f64]| -> Vec<f64> {
                rows.iter()
                    .zip(e)
                    .map(|(row, &er)| {
                        let mut m = 0.0f64;
                        for &(j, c) in row {
                            let v = (er * c * d[j]).abs();
                            col[j] = col[j].max(v);
                            m = m.max(v);
                        }
                        m
                    })
                    .collect()
            };
            let ra = row_norms(&self.a, &ea);
            let mut rg = row_norms(&self.g, &eg);
            for r in l.soc_ranges() {
                let m = rg[r.clone()].iter().fold(0.0f64, |a, &b| a.max(b));
                rg[r].iter_mut().for_each(|v| *v = m);
            }
            for (dj, c) in d.iter_mut().zip(&col) {
                *dj = (*dj / clamp(*c)).clamp(1e-4, 1e4);
            }
            for (e, r) in ea.iter_mut().zip(&ra) {
                *e = (*e / clamp(*r)).clamp(1e-4, 1e4);
            }
            for (e, r) in eg.iter_mut().zip(&rg) {
                *e = (*e / clamp(*r)).clamp(1e-4, 1e4);
            }
        }
        let mut p = self.p.clone();
        for j in 0..n {
            for i in 0..n {
                p[(i, j)] *= d[i] * d[j];
            }
        }
        let q: Vec<f64> = self.q.iter().zip(&d).map(|(q, d)| q * d).collect();
        let p_scale = if n > 0 { (0..n).map(|j| p.column(j).amax()).sum::<f64>() / n as f64 } else { 0.0 };
        let c_scale = q.iter().fold(p_scale, |a, v| a.max(v.abs()));
        let cost = if c_scale > 0.0 && c_scale.is_finite() { (1.0 / c_scale).clamp(1e-6, 1e6) } else { 1.0 };
        p *= cost;
        let scale_rows = |rows: &[SparseRow], e: &[f64]| -> Vec<SparseRow> {
            rows.iter().zip(e).map(|(row, &er)| row.iter().map(|&(j, c)| (j, er * c * d[j])).collect()).collect()
        };
        let scaled = ConicProblem {
            n,
            p,
            q: q.iter().map(|v| v * cost).collect(),
            a: scale_rows(&self.a, &ea),
            b: self.b.iter().zip(&ea).map(|(b, e)| b * e).collect(),
            g: scale_rows(&self.g, &eg),
            h: self.h.iter().zip(&eg).map(|(h, e)| h * e).collect(),
            layout: self.layout.clone(),
        };
        (scaled, Equilibration { d, ea, eg, cost })
    }

    fn solve_unscaled(&self, settings: &IpmSettings, warm: Option<&[f64]>) -> IpmResult {
        let l = self.layout.clone();
        let m = l.dim();
        let deg = l.degree().max(1) as f64;
        let failed = |iterations| IpmResult {
            x: vec![0.0; self.n],
            y: vec![0.0; self.a.len()],
            z: vec![0.0; m],
            s: vec![0.0; m],
            status: IpmStatus::Stalled,
            iterations,
            accuracy: f64::INFINITY,
        };
        let Some((mut x, mut y, mut z, mut s)) = self.initial_point(settings, warm) else {
            return failed(0);
        };
        let mut best: Option<IpmResult> = None;
        let mut slow = 0usize;
        let e = l.identity();

        for iter in 0..=settings.max_iter {
            let res = self.residuals(&x, &y, &z, &s);
            let accuracy = res.pres.max(res.dres).max(res.gap);
            if best.as_ref().map_or(true, |b| accuracy < b.accuracy) {
                best = Some(IpmResult {
                    x: x.clone(),
                    y: y.clone(),
                    z: z.clone(),
                    s: s.clone(),
                    status: IpmStatus::Stalled,
                    iterations: iter,
                    accuracy,
                });
                slow = 0;
            } else {
                slow += 1;
            }
            if accuracy <= settings.target {
                let mut b = best.unwrap();
                b.status = IpmStatus::Converged;
                b.iterations = iter;
                return b;
            }
            if x.iter().fold(0.0f64, |a, v| a.max(v.abs())) > 1e13 {
                let mut b = best.unwrap();
                b.status = IpmStatus::Diverging;
                b.iterations = iter;
                return b;
            }
            if iter == settings.max_iter {
                break;
            }
            if slow > 12 {
                let mut b = best.unwrap();
                b.iterations = iter;
                return b;
            }

            let mu = dot(&s, &z) / deg;
            let Some(w) = Scaling::new(&l, &s, &z) else { break };
            let kkt = self.kkt_matrix(&w);
            let Some(f) = self.factor(&kkt, settings.regularization) else { break };
            let sys = NewtonSystem { w: &w, kkt, f, reg: settings.regularization, full: Default::default() };
            let lam = w.lambda.clone();
            let neg_rx: Vec<f64> = res.rx.iter().map(|v| -v).collect();
            let neg_ry: Vec<f64> = res.ry.iter().map(|v| -v).collect();

            let direction = |rc: &[f64]| {
                let xi = l.divide(&lam, rc);
                let wxi = w.apply(&l, &xi);
                let bz: Vec<f64> = (0..m).map(|i| -res.rz[i] - wxi[i]).collect();
                let (dx, dy, dz) = self.newton_solve(&sys, &neg_rx, &neg_ry, &bz);
                let wdz = w.apply(&l, &dz);
                let tmp: Vec<f64> = (0..m).map(|i| xi[i] - wdz[i]).collect();
                let ds = w.apply(&l, &tmp);
                (dx, dy, dz, ds)
            };

            // predictor
            let ll = l.product(&lam, &lam);
            let rc_aff: Vec<f64> = ll.iter().map(|v| -v).collect();
            let (_, _, dz_a, ds_a) = direction(&rc_aff);
            let a_aff = 1f64.min(l.max_step(&s, &ds_a)).min(l.max_step(&z, &dz_a));
            let mu_aff = (0..m)
                .map(|i| (s[i] + a_aff * ds_a[i]) * (z[i] + a_aff * dz_a[i]))
                .sum::<f64>()
                / deg;
            let sigma = if mu > 0.0 { (mu_aff / mu).clamp(0.0, 1.0).powi(3) } else { 0.0 };

            // corrector
            let wds = w.apply_inv(&l, &ds_a);
            let wdz = w.apply(&l, &dz_a);
            let cross = l.product(&wds, &wdz);
            let rc: Vec<f64> = (0..m).map(|i| -ll[i] - cross[i] + sigma * mu * e[i]).collect();
            let (mut dx, mut dy, mut dz, mut ds) = direction(&rc);
            let mut step = l.max_step(&s, &ds).min(l.max_step(&z, &dz));
            if step < 0.2 {
                // the second-order correction can pull toward the boundary when badly
                // centered; try a plain centering direction instead
                let rc: Vec<f64> = (0..m).map(|i| -ll[i] + sigma.max(0.5) * mu * e[i]).collect();
                let (cx, cy, cz, cs) = direction(&rc);
                let c_step = l.max_step(&s, &cs).min(l.max_step(&z, &cz));
                if c_step > step {
                    (dx, dy, dz, ds, step) = (cx, cy, cz, cs, c_step);
                }
            }
            let mut alpha = (0.99 * step).min(1.0);
            // keep every complementarity pair within a wide neighborhood of the average
            for _ in 0..30 {
                let s1: Vec<f64> = (0..m).map(|i| s[i] + alpha * ds[i]).collect();
                let z1: Vec<f64> = (0..m).map(|i| z[i] + alpha * dz[i]).collect();
                if l.min_complementarity(&s1, &z1) >= 1e-3 * dot(&s1, &z1) / deg {
                    break;
                }
                alpha *= 0.8;
            }
            if !alpha.is_finite() || alpha <= 1e-14 {
                break;
            }
            for i in 0..self.n {
                x[i] += alpha * dx[i];
            }
            for i in 0..y.len() {
                y[i] += alpha * dy[i];
            }
            for i in 0..m {
                s[i] += alpha * ds[i];
                z[i] += alpha * dz[i];
            }
            if x.iter().chain(&y).chain(&z).chain(&s).any(|v| !v.is_finite()) {
                break;
            }
        }
        match best {
            Some(mut b) => {
                if b.iterations >= settings.max_iter {
                    b.status = IpmStatus::MaxIterations;
                }
                b
            }
            None => failed(settings.max_iter),
        }
    }

    /// Feasibility problem `min τ` over `G x + s = h + τ·e`, `A x = b`, `τ ≥ −1`.
    pub fn phase_one(&self) -> ConicProblem {
        let n = self.n + 1;
        let tau = self.n;
        let mut g = Vec::with_capacity(self.g.len() + 1);
        let mut h = Vec::with_capacity(self.h.len() + 1);
        for i in 0..self.layout.orthant {
            let mut row = self.g[i].clone();
            row.push((tau, -1.0));
            g.push(row);
            h.push(self.h[i]);
        }
        g.push(vec![(tau, -1.0)]);
        h.push(1.0);
        for r in self.layout.soc_ranges() {
            for (k, i) in r.clone().enumerate() {
                let mut row = self.g[i].clone();
                if k == 0 {
                    row.push((tau, -1.0));
                }
                g.push(row);
                h.push(self.h[i]);
            }
        }
        let mut q = vec![0.0; n];
        q[tau] = 1.0;
        ConicProblem {
            n,
            p: DMatrix::zeros(n, n),
            q,
            a: self.a.clone(),
            b: self.b.clone(),
            g,
            h,
            layout: ConeLayout { orthant: self.layout.orthant + 1, socs: self.layout.socs.clone() },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings() -> IpmSettings {
        IpmSettings { target: 1e-10, max_iter: 100, regularization: 1e-10 }
    }

    #[test]
    fn box_qp() {
        // min (x−3)² + (y+1)², 0 ≤ x ≤ 1, 0 ≤ y ≤ 1
        let prob = ConicProblem {
            n: 2,
            p: DMatrix::from_diagonal_element(2, 2, 2.0),
            q: vec![-6.0, 2.0],
            a: vec![],
            b: vec![],
            g: vec![vec![(0, -1.0)], vec![(0, 1.0)], vec![(1, -1.0)], vec![(1, 1.0)]],
            h: vec![0.0, 1.0, 0.0, 1.0],
            layout: ConeLayout { orthant: 4, socs: vec![] },
        };
        let r = prob.solve(&settings(), None);
        assert_eq!(r.status, IpmStatus::Converged);
        assert!((r.x[0] - 1.0).abs() < 1e-8);
        assert!(r.x[1].abs() < 1e-8);
        // multiplier of x ≤ 1 is 4
        assert!((r.z[1] - 4.0).abs() < 1e-7);
    }

    #[test]
    fn soc_projection() {
        // min (x1−2)² + x2² s.t. ‖(x1, x2)‖ ≤ 1, equality x2 = 0
        let prob = ConicProblem {
            n: 2,
            p: DMatrix::from_diagonal_element(2, 2, 2.0),
            q: vec![-4.0, 0.0],
            a: vec![vec![(1, 1.0)]],
            b: vec![0.0],
            g: vec![vec![], vec![(0, -1.0)], vec![(1, -1.0)]],
            h: vec![1.0, 0.0, 0.0],
            layout: ConeLayout { orthant: 0, socs: vec![3] },
        };
        let r = prob.solve(&settings(), None);
        assert_eq!(r.status, IpmStatus::Converged);
        assert!((r.x[0] - 1.0).abs() < 1e-8, "{:?}", r.x);
    }
}

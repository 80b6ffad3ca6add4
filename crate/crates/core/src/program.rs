//! Convex programs over a partitioned variable vector `[internal | upper | lower]`.
//!
//! A program has a quadratic objective and an ordered list of constraints. Each
//! constraint is one of three forms:
//!
//! * affine `aᵀv + b ≤ 0` (or `= 0`),
//! * convex quadratic `½ v_Sᵀ Q v_S + aᵀv + b ≤ 0` with `Q ⪰ 0` on a variable subset `S`,
//! * second-order cone `‖A v + b‖ ≤ cᵀv + d`.
//!
//! Every form exposes value, gradient and Hessian through [`ConstraintOracle`]. Cone
//! constraints are exposed in the squared form `‖Av + b‖² − (cᵀv + d)²`, whose Hessian
//! is exact and is what the value-function calculus differentiates. The cone itself
//! (including its implied side `cᵀv + d ≥ 0`) is what the solver enforces.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg;
use crate::ProgramError;

/// Sparse affine expression `Σ coef·v[idx] + constant`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LinearExpr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl LinearExpr {
    pub fn new(terms: Vec<(usize, f64)>, constant: f64) -> Self {
        Self { terms, constant }
    }

    pub fn constant(constant: f64) -> Self {
        Self { terms: Vec::new(), constant }
    }

    /// Single-variable expression `coef·v[idx]`.
    pub fn var(idx: usize, coef: f64) -> Self {
        Self { terms: vec![(idx, coef)], constant: 0.0 }
    }

    pub fn with_term(mut self, idx: usize, coef: f64) -> Self {
        self.terms.push((idx, coef));
        self
    }

    pub fn plus(mut self, constant: f64) -> Self {
        self.constant += constant;
        self
    }

    pub fn negated(&self) -> Self {
        Self {
            terms: self.terms.iter().map(|&(i, c)| (i, -c)).collect(),
            constant: -self.constant,
        }
    }

    pub fn eval(&self, v: &[f64]) -> f64 {
        self.terms.iter().map(|&(i, c)| c * v[i]).sum::<f64>() + self.constant
    }

    pub fn max_index(&self) -> Option<usize> {
        self.terms.iter().map(|&(i, _)| i).max()
    }

    pub(crate) fn remapped(&self, map: &impl Fn(usize) -> usize) -> Self {
        Self {
            terms: self.terms.iter().map(|&(i, c)| (map(i), c)).collect(),
            constant: self.constant,
        }
    }

    /// Adds `scale·∇(self)` into a dense gradient.
    pub(crate) fn accumulate(&self, scale: f64, out: &mut [f64]) {
        for &(i, c) in &self.terms {
            out[i] += scale * c;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    LessEq,
    Equal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ConstraintForm {
    /// `expr ≤ 0` or `expr = 0`.
    Affine(LinearExpr),
    /// `½ v_Sᵀ Q v_S + linear ≤ 0`, `Q` symmetric PSD over the variables in `vars`.
    Quadratic {
        vars: Vec<usize>,
        hessian: DMatrix<f64>,
        linear: LinearExpr,
    },
    /// `‖rows(v)‖₂ ≤ bound(v)`.
    Cone {
        rows: Vec<LinearExpr>,
        bound: LinearExpr,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub sense: Sense,
    pub form: ConstraintForm,
}

impl Constraint {
    /// `expr ≤ 0`.
    pub fn le(expr: LinearExpr) -> Self {
        Self { sense: Sense::LessEq, form: ConstraintForm::Affine(expr) }
    }

    /// `expr = 0`.
    pub fn eq(expr: LinearExpr) -> Self {
        Self { sense: Sense::Equal, form: ConstraintForm::Affine(expr) }
    }

    /// `lo ≤ v[idx] ≤ hi` as two affine inequalities.
    pub fn bounds(idx: usize, lo: f64, hi: f64) -> [Self; 2] {
        [
            Self::le(LinearExpr::var(idx, -1.0).plus(lo)),
            Self::le(LinearExpr::var(idx, 1.0).plus(-hi)),
        ]
    }

    pub fn quadratic(vars: Vec<usize>, hessian: DMatrix<f64>, linear: LinearExpr) -> Self {
        Self {
            sense: Sense::LessEq,
            form: ConstraintForm::Quadratic { vars, hessian, linear },
        }
    }

    pub fn cone(rows: Vec<LinearExpr>, bound: LinearExpr) -> Self {
        Self { sense: Sense::LessEq, form: ConstraintForm::Cone { rows, bound } }
    }

    /// Rotated cone `‖w‖² ≤ a·b` with `a, b ≥ 0`, written as
    /// `‖(2w, a − b)‖ ≤ a + b`.
    pub fn rotated_cone(w: Vec<LinearExpr>, a: LinearExpr, b: LinearExpr) -> Self {
        let mut rows: Vec<LinearExpr> = w
            .into_iter()
            .map(|e| LinearExpr {
                terms: e.terms.iter().map(|&(i, c)| (i, 2.0 * c)).collect(),
                constant: 2.0 * e.constant,
            })
            .collect();
        let mut diff = a.clone();
        diff.terms.extend(b.terms.iter().map(|&(i, c)| (i, -c)));
        diff.constant -= b.constant;
        rows.push(diff);
        let mut sum = a;
        sum.terms.extend(b.terms.iter().copied());
        sum.constant += b.constant;
        Self::cone(rows, sum)
    }

    pub fn is_equality(&self) -> bool {
        self.sense == Sense::Equal
    }

    pub(crate) fn max_index(&self) -> Option<usize> {
        match &self.form {
            ConstraintForm::Affine(e) => e.max_index(),
            ConstraintForm::Quadratic { vars, linear, .. } => {
                vars.iter().copied().max().max(linear.max_index())
            }
            ConstraintForm::Cone { rows, bound } => {
                rows.iter().filter_map(|r| r.max_index()).max().max(bound.max_index())
            }
        }
    }

    pub(crate) fn remapped(&self, map: &impl Fn(usize) -> usize) -> Self {
        let form = match &self.form {
            ConstraintForm::Affine(e) => ConstraintForm::Affine(e.remapped(map)),
            ConstraintForm::Quadratic { vars, hessian, linear } => ConstraintForm::Quadratic {
                vars: vars.iter().map(|&i| map(i)).collect(),
                hessian: hessian.clone(),
                linear: linear.remapped(map),
            },
            ConstraintForm::Cone { rows, bound } => ConstraintForm::Cone {
                rows: rows.iter().map(|r| r.remapped(map)).collect(),
                bound: bound.remapped(map),
            },
        };
        Self { sense: self.sense, form }
    }
}

/// Value / gradient / Hessian access to a scalar constraint function `g(v)`.
pub trait ConstraintOracle {
    fn value(&self, v: &[f64]) -> f64;
    /// Dense gradient of length `v.len()`.
    fn gradient(&self, v: &[f64]) -> DVector<f64> {
        let mut g = DVector::zeros(v.len());
        self.add_gradient(v, 1.0, g.as_mut_slice());
        g
    }
    fn add_gradient(&self, v: &[f64], scale: f64, out: &mut [f64]);
    /// Dense Hessian of size `v.len()²`.
    fn hessian(&self, v: &[f64]) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(v.len(), v.len());
        self.add_hessian(v, 1.0, &mut h);
        h
    }
    fn add_hessian(&self, v: &[f64], scale: f64, out: &mut DMatrix<f64>);
}

impl ConstraintOracle for Constraint {
    fn value(&self, v: &[f64]) -> f64 {
        match &self.form {
            ConstraintForm::Affine(e) => e.eval(v),
            ConstraintForm::Quadratic { vars, hessian, linear } => {
                let mut quad = 0.0;
                for (a, &i) in vars.iter().enumerate() {
                    for (b, &j) in vars.iter().enumerate() {
                        quad += v[i] * hessian[(a, b)] * v[j];
                    }
                }
                0.5 * quad + linear.eval(v)
            }
            ConstraintForm::Cone { rows, bound } => {
                let r2: f64 = rows.iter().map(|r| r.eval(v).powi(2)).sum();
                r2 - bound.eval(v).powi(2)
            }
        }
    }

    fn add_gradient(&self, v: &[f64], scale: f64, out: &mut [f64]) {
        match &self.form {
            ConstraintForm::Affine(e) => e.accumulate(scale, out),
            ConstraintForm::Quadratic { vars, hessian, linear } => {
                linear.accumulate(scale, out);
                for (a, &i) in vars.iter().enumerate() {
                    let row: f64 = vars.iter().enumerate().map(|(b, &j)| hessian[(a, b)] * v[j]).sum();
                    out[i] += scale * row;
                }
            }
            ConstraintForm::Cone { rows, bound } => {
                for r in rows {
                    r.accumulate(2.0 * scale * r.eval(v), out);
                }
                bound.accumulate(-2.0 * scale * bound.eval(v), out);
            }
        }
    }

    fn add_hessian(&self, _v: &[f64], scale: f64, out: &mut DMatrix<f64>) {
        match &self.form {
            ConstraintForm::Affine(_) => {}
            ConstraintForm::Quadratic { vars, hessian, .. } => {
                for (a, &i) in vars.iter().enumerate() {
                    for (b, &j) in vars.iter().enumerate() {
                        out[(i, j)] += scale * hessian[(a, b)];
                    }
                }
            }
            ConstraintForm::Cone { rows, bound } => {
                let mut outer = |e: &LinearExpr, s: f64| {
                    for &(i, ci) in &e.terms {
                        for &(j, cj) in &e.terms {
                            out[(i, j)] += s * ci * cj;
                        }
                    }
                };
                for r in rows {
                    outer(r, 2.0 * scale);
                }
                outer(bound, -2.0 * scale);
            }
        }
    }
}

/// Sizes of the three variable blocks, laid out as `[internal | upper | lower]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableBlocks {
    pub n_internal: usize,
    pub n_upper: usize,
    pub n_lower: usize,
}

impl VariableBlocks {
    pub fn new(n_internal: usize, n_upper: usize, n_lower: usize) -> Self {
        Self { n_internal, n_upper, n_lower }
    }

    pub fn total(&self) -> usize {
        self.n_internal + self.n_upper + self.n_lower
    }

    pub fn internal(&self) -> Range<usize> {
        0..self.n_internal
    }

    pub fn upper(&self) -> Range<usize> {
        self.n_internal..self.n_internal + self.n_upper
    }

    pub fn lower(&self) -> Range<usize> {
        self.n_internal + self.n_upper..self.total()
    }
}

/// `c0 + c1ᵀv + ½ vᵀ C2 v`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadraticObjective {
    pub constant: f64,
    pub linear: DVector<f64>,
    pub quadratic: DMatrix<f64>,
}

impl QuadraticObjective {
    pub fn zero(n: usize) -> Self {
        Self {
            constant: 0.0,
            linear: DVector::zeros(n),
            quadratic: DMatrix::zeros(n, n),
        }
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    /// Adds `weight·(v[idx] − target)²`.
    pub fn add_square(&mut self, idx: usize, target: f64, weight: f64) {
        self.quadratic[(idx, idx)] += 2.0 * weight;
        self.linear[idx] -= 2.0 * weight * target;
        self.constant += weight * target * target;
    }

    pub fn eval(&self, v: &[f64]) -> f64 {
        let x = DVector::from_column_slice(v);
        self.constant + self.linear.dot(&x) + 0.5 * x.dot(&(&self.quadratic * &x))
    }

    pub fn gradient(&self, v: &[f64]) -> DVector<f64> {
        let x = DVector::from_column_slice(v);
        &self.linear + &self.quadratic * x
    }

    pub(crate) fn remapped(&self, map: &impl Fn(usize) -> usize, n: usize) -> Self {
        let mut out = Self::zero(n);
        out.constant = self.constant;
        let old = self.dim();
        for i in 0..old {
            out.linear[map(i)] += self.linear[i];
            for j in 0..old {
                let q = self.quadratic[(i, j)];
                if q != 0.0 {
                    out.quadratic[(map(i), map(j))] += q;
                }
            }
        }
        out
    }
}

/// A convex program with partitioned variables and an optional pin on the upper block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvexProgram {
    pub blocks: VariableBlocks,
    pub objective: QuadraticObjective,
    pub constraints: Vec<Constraint>,
    /// When present, the upper boundary block is fixed to this value.
    pub fixed_upper: Option<DVector<f64>>,
}

impl ConvexProgram {
    pub fn new(blocks: VariableBlocks) -> Self {
        Self {
            blocks,
            objective: QuadraticObjective::zero(blocks.total()),
            constraints: Vec::new(),
            fixed_upper: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.blocks.total()
    }

    pub fn push(&mut self, c: Constraint) -> usize {
        self.constraints.push(c);
        self.constraints.len() - 1
    }

    pub fn extend(&mut self, cs: impl IntoIterator<Item = Constraint>) {
        self.constraints.extend(cs);
    }

    pub fn pinned(mut self, upper: DVector<f64>) -> Self {
        self.fixed_upper = Some(upper);
        self
    }

    pub fn unpinned(mut self) -> Self {
        self.fixed_upper = None;
        self
    }

    pub fn objective_value(&self, v: &[f64]) -> f64 {
        self.objective.eval(v)
    }

    /// Indices that the solver optimises over (everything except a pinned upper block).
    pub fn free_indices(&self) -> Vec<usize> {
        let upper = self.blocks.upper();
        (0..self.dim())
            .filter(|i| self.fixed_upper.is_none() || !upper.contains(i))
            .collect()
    }

    /// Indices treated as parameters (the pinned upper block, or nothing).
    pub fn parameter_indices(&self) -> Vec<usize> {
        match self.fixed_upper {
            Some(_) => self.blocks.upper().collect(),
            None => Vec::new(),
        }
    }

    /// Inserts `count` new internal variables at the end of the internal block and
    /// returns the index of the first one. Existing constraints are reindexed.
    pub fn add_internal(&mut self, count: usize) -> usize {
        let first = self.blocks.n_internal;
        let map = |i: usize| if i >= first { i + count } else { i };
        let n = self.dim() + count;
        self.objective = self.objective.remapped(&map, n);
        self.constraints = self.constraints.iter().map(|c| c.remapped(&map)).collect();
        self.blocks.n_internal += count;
        first
    }

    /// Checks structural invariants and convexity of every constraint form.
    pub fn validate(&self) -> Result<(), ProgramError> {
        let n = self.dim();
        let obj = &self.objective;
        if obj.linear.len() != n || obj.quadratic.nrows() != n || obj.quadratic.ncols() != n {
            return Err(ProgramError::DimensionMismatch {
                what: "objective",
                expected: n,
                found: obj.linear.len(),
            });
        }
        if let Some(pin) = &self.fixed_upper {
            if pin.len() != self.blocks.n_upper {
                return Err(ProgramError::DimensionMismatch {
                    what: "fixed_upper",
                    expected: self.blocks.n_upper,
                    found: pin.len(),
                });
            }
            if pin.iter().any(|x| !x.is_finite()) {
                return Err(ProgramError::NonFinite("fixed_upper"));
            }
        }
        let scale = 1.0 + obj.quadratic.amax();
        if !linalg::is_symmetric(&obj.quadratic, 1e-9 * scale) {
            return Err(ProgramError::NotSymmetric("objective"));
        }
        if n > 0 && linalg::min_eigenvalue(&obj.quadratic) < -1e-9 * scale {
            return Err(ProgramError::NotConvex { constraint: None });
        }
        for (k, c) in self.constraints.iter().enumerate() {
            if let Some(m) = c.max_index() {
                if m >= n {
                    return Err(ProgramError::IndexOutOfRange { constraint: k, index: m, dim: n });
                }
            }
            match &c.form {
                ConstraintForm::Affine(_) => {}
                ConstraintForm::Quadratic { vars, hessian, .. } => {
                    if c.is_equality() {
                        return Err(ProgramError::NonAffineEquality(k));
                    }
                    if hessian.nrows() != vars.len() || hessian.ncols() != vars.len() {
                        return Err(ProgramError::DimensionMismatch {
                            what: "quadratic constraint",
                            expected: vars.len(),
                            found: hessian.nrows(),
                        });
                    }
                    let s = 1.0 + hessian.amax();
                    if !linalg::is_symmetric(hessian, 1e-9 * s)
                        || linalg::min_eigenvalue(hessian) < -1e-9 * s
                    {
                        return Err(ProgramError::NotConvex { constraint: Some(k) });
                    }
                }
                ConstraintForm::Cone { .. } => {
                    if c.is_equality() {
                        return Err(ProgramError::NonAffineEquality(k));
                    }
                }
            }
        }
        Ok(())
    }

    /// Full variable vector with the pinned block filled in from `free` values.
    pub fn assemble(&self, free: &[f64]) -> DVector<f64> {
        let mut v = DVector::zeros(self.dim());
        let idx = self.free_indices();
        for (k, &i) in idx.iter().enumerate() {
            v[i] = free[k];
        }
        if let Some(pin) = &self.fixed_upper {
            for (k, i) in self.blocks.upper().enumerate() {
                v[i] = pin[k];
            }
        }
        v
    }

    /// Hessian of the Lagrangian `f + Σ λ_i g_i` over the full variable vector.
    pub fn lagrangian_hessian(&self, v: &[f64], duals: &[f64]) -> DMatrix<f64> {
        let mut h = self.objective.quadratic.clone();
        for (c, &l) in self.constraints.iter().zip(duals) {
            if l != 0.0 {
                c.add_hessian(v, l, &mut h);
            }
        }
        h
    }

    /// Gradient of the Lagrangian over the full variable vector.
    pub fn lagrangian_gradient(&self, v: &[f64], duals: &[f64]) -> DVector<f64> {
        let mut g = self.objective.gradient(v);
        for (c, &l) in self.constraints.iter().zip(duals) {
            if l != 0.0 {
                c.add_gradient(v, l, g.as_mut_slice());
            }
        }
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn finite_diff_grad(c: &Constraint, v: &[f64]) -> Vec<f64> {
        let h = 1e-6;
        (0..v.len())
            .map(|i| {
                let mut p = v.to_vec();
                let mut m = v.to_vec();
                p[i] += h;
                m[i] -= h;
                (c.value(&p) - c.value(&m)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn cone_oracle_matches_squared_form() {
        // y1² + y2² ≤ x² over v = (x, y1, y2)
        let c = Constraint::cone(
            vec![LinearExpr::var(1, 1.0), LinearExpr::var(2, 1.0)],
            LinearExpr::var(0, 1.0),
        );
        let v = [2.0, 0.5, -1.0];
        assert!((c.value(&v) - (0.25 + 1.0 - 4.0)).abs() < 1e-12);
        let g = c.gradient(&v);
        for (a, b) in g.iter().zip(finite_diff_grad(&c, &v)) {
            assert!((a - b).abs() < 1e-6);
        }
        let h = c.hessian(&v);
        assert_eq!(h[(0, 0)], -2.0);
        assert_eq!(h[(1, 1)], 2.0);
        assert_eq!(h[(2, 2)], 2.0);
    }

    #[test]
    fn quadratic_oracle_gradient() {
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let c = Constraint::quadratic(vec![2, 0], q, LinearExpr::var(1, -1.0).plus(0.5));
        let v = [0.3, -0.7, 1.1];
        for (a, b) in c.gradient(&v).iter().zip(finite_diff_grad(&c, &v)) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn add_internal_shifts_boundary_blocks() {
        let mut p = ConvexProgram::new(VariableBlocks::new(1, 1, 1));
        p.objective.add_square(2, 3.0, 1.0);
        p.push(Constraint::le(LinearExpr::var(1, 1.0).with_term(2, 1.0)));
        let s = p.add_internal(2);
        assert_eq!(s, 1);
        assert_eq!(p.blocks, VariableBlocks::new(3, 1, 1));
        assert_eq!(p.objective.quadratic[(4, 4)], 2.0);
        match &p.constraints[0].form {
            ConstraintForm::Affine(e) => assert_eq!(e.terms, vec![(3, 1.0), (4, 1.0)]),
            _ => unreachable!(),
        }
    }

    #[test]
    fn rejects_indefinite_quadratic() {
        let mut p = ConvexProgram::new(VariableBlocks::new(2, 0, 0));
        p.push(Constraint::quadratic(
            vec![0, 1],
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]),
            LinearExpr::constant(-1.0),
        ));
        assert!(matches!(p.validate(), Err(ProgramError::NotConvex { constraint: Some(0) })));
    }
}

//! Solving [`ConvexProgram`]s to primal-dual optimality.
//!
//! The program is restricted to its free variables (a pinned upper block becomes a
//! parameter), compiled into conic form and handed to the interior-point method in
//! [`ipm`]. Conic multipliers are then mapped back onto the constraint oracles so that
//! `∇f + Σ λ_i ∇g_i = 0` holds in the oracle's own form.

mod cones;
mod ipm;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg;
use crate::program::{ConstraintForm, ConstraintOracle, ConvexProgram, LinearExpr, Sense};
use crate::ProgramError;
use cones::ConeLayout;
use ipm::{ConicProblem, IpmSettings, IpmStatus, SparseRow};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIterations,
}

/// Stationarity `‖∇f + Σλ∇g‖∞` (free variables only), complementarity
/// `max|λ_i g_i|` and primal infeasibility `max(g_i, 0)` (`|g_i|` for equalities).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub complementarity: f64,
    pub feasibility: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.complementarity).max(self.feasibility)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    /// Full variable vector, pinned block included.
    pub primal: DVector<f64>,
    /// One multiplier per constraint; nonnegative for inequalities, free for equalities.
    pub duals: DVector<f64>,
    /// Raw cone multipliers `(z_bound, z_rows…)` for `Cone` constraints, empty otherwise.
    /// They stay finite at the cone vertex, where `duals` does not.
    pub cone_duals: Vec<Vec<f64>>,
    pub objective: f64,
    pub status: SolveStatus,
    pub kkt: KktResiduals,
    pub iterations: usize,
}

impl Solution {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    /// KKT tolerance, relative to the problem data scale `1 + max|data|`.
    pub tol: f64,
    pub max_iter: usize,
    /// Static diagonal regularization of the Newton system.
    pub regularization: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 200, regularization: 1e-10 }
    }
}

enum RowMap {
    Equality(usize),
    Orthant(usize),
    /// Cone block rows from `start`; `scale` maps `z0 / s0` onto the oracle multiplier.
    Soc { start: usize, scale: f64 },
    /// No free variable left; evaluated directly.
    Constant,
}

struct Compiled {
    conic: ConicProblem,
    free: Vec<usize>,
    rows: Vec<RowMap>,
    constant_violation: f64,
}

fn restrict(expr: &LinearExpr, slot: &[Option<usize>], full: &[f64]) -> (SparseRow, f64) {
    let mut row: SparseRow = Vec::with_capacity(expr.terms.len());
    let mut constant = expr.constant;
    for &(i, c) in &expr.terms {
        match slot[i] {
            Some(k) => row.push((k, c)),
            None => constant += c * full[i],
        }
    }
    (merge(row), constant)
}

fn merge(mut row: SparseRow) -> SparseRow {
    row.sort_by_key(|&(i, _)| i);
    let mut out: SparseRow = Vec::with_capacity(row.len());
    for (i, c) in row {
        match out.last_mut() {
            Some((j, d)) if *j == i => *d += c,
            _ => out.push((i, c)),
        }
    }
    out.retain(|&(_, c)| c != 0.0);
    out
}

fn compile(program: &ConvexProgram) -> Compiled {
    let n_full = program.dim();
    let free = program.free_indices();
    let mut slot = vec![None; n_full];
    for (k, &i) in free.iter().enumerate() {
        slot[i] = Some(k);
    }
    // parameter values (free entries zero)
    let base = program.assemble(&vec![0.0; free.len()]);
    let base = base.as_slice();
    let n = free.len();

    let obj = &program.objective;
    let p = DMatrix::from_fn(n, n, |a, b| obj.quadratic[(free[a], free[b])]);
    let full_grad = obj.gradient(base);
    let q: Vec<f64> = free.iter().map(|&i| full_grad[i]).collect();

    let mut a_rows = Vec::new();
    let mut b = Vec::new();
    let mut orth = Vec::new();
    let mut orth_h = Vec::new();
    let mut socs: Vec<(Vec<SparseRow>, Vec<f64>)> = Vec::new();
    let mut rows = Vec::with_capacity(program.constraints.len());
    let mut constant_violation = 0.0f64;

    enum Pending {
        Eq(usize),
        Orth(usize),
        Soc(usize, f64),
        Const,
    }
    let mut pending = Vec::with_capacity(program.constraints.len());

    for c in &program.constraints {
        match &c.form {
            ConstraintForm::Affine(e) => {
                let (row, k) = restrict(e, &slot, base);
                if row.is_empty() {
                    let viol = if c.sense == Sense::Equal { k.abs() } else { k.max(0.0) };
                    constant_violation = constant_violation.max(viol);
                    pending.push(Pending::Const);
                } else if c.sense == Sense::Equal {
                    a_rows.push(row);
                    b.push(-k);
                    pending.push(Pending::Eq(a_rows.len() - 1));
                } else {
                    orth.push(row);
                    orth_h.push(-k);
                    pending.push(Pending::Orth(orth.len() - 1));
                }
            }
            ConstraintForm::Quadratic { vars, hessian, linear } => {
                // split the quadratic into free/free, free/param and param/param parts
                let (mut lin, mut k) = restrict(linear, &slot, base);
                let fvars: Vec<(usize, usize)> =
                    vars.iter().enumerate().filter_map(|(a, &i)| slot[i].map(|s| (a, s))).collect();
                for (a, &i) in vars.iter().enumerate() {
                    for (bb, &j) in vars.iter().enumerate() {
                        let qv = hessian[(a, bb)];
                        match (slot[i], slot[j]) {
                            (None, None) => k += 0.5 * base[i] * qv * base[j],
                            (Some(si), None) => lin.push((si, qv * base[j])),
                            _ => {}
                        }
                    }
                }
                let lin = merge(lin);
                let qff = DMatrix::from_fn(fvars.len(), fvars.len(), |a, bb| {
                    hessian[(fvars[a].0, fvars[bb].0)]
                });
                let f = if fvars.is_empty() {
                    DMatrix::zeros(0, 0)
                } else {
                    linalg::psd_factor(&qff, 1e-13)
                };
                if f.nrows() == 0 {
                    if lin.is_empty() {
                        constant_violation = constant_violation.max(k.max(0.0));
                        pending.push(Pending::Const);
                    } else {
                        orth.push(lin);
                        orth_h.push(-k);
                        pending.push(Pending::Orth(orth.len() - 1));
                    }
                    continue;
                }
                // ½‖F v‖² ≤ t, t = −lin·v − k:  ‖(F v, t − ½)‖ ≤ t + ½
                let mut g = Vec::with_capacity(f.nrows() + 2);
                let mut h = Vec::with_capacity(f.nrows() + 2);
                g.push(lin.clone());
                h.push(0.5 - k);
                for r in 0..f.nrows() {
                    let row: SparseRow = fvars
                        .iter()
                        .enumerate()
                        .filter_map(|(cidx, &(_, s))| {
                            let v = f[(r, cidx)];
                            (v != 0.0).then_some((s, -v))
                        })
                        .collect();
                    g.push(merge(row));
                    h.push(0.0);
                }
                g.push(lin);
                h.push(-k - 0.5);
                socs.push((g, h));
                pending.push(Pending::Soc(socs.len() - 1, 1.0));
            }
            ConstraintForm::Cone { rows: crow, bound } => {
                let (brow, bk) = restrict(bound, &slot, base);
                let mut g = vec![brow.iter().map(|&(i, c)| (i, -c)).collect::<SparseRow>()];
                let mut h = vec![bk];
                for r in crow {
                    let (row, rk) = restrict(r, &slot, base);
                    g.push(row.iter().map(|&(i, c)| (i, -c)).collect());
                    h.push(rk);
                }
                if g.iter().all(|r| r.is_empty()) {
                    let norm = h[1..].iter().map(|x| x * x).sum::<f64>().sqrt();
                    constant_violation = constant_violation.max((norm - h[0]).max(0.0));
                    pending.push(Pending::Const);
                    continue;
                }
                socs.push((g, h));
                pending.push(Pending::Soc(socs.len() - 1, 0.5));
            }
        }
    }

    let n_orth = orth.len();
    let mut g = orth;
    let mut h = orth_h;
    let mut soc_start = Vec::with_capacity(socs.len());
    let mut dims = Vec::with_capacity(socs.len());
    for (gb, hb) in socs {
        soc_start.push(g.len());
        dims.push(gb.len());
        g.extend(gb);
        h.extend(hb);
    }
    for p in pending {
        rows.push(match p {
            Pending::Eq(r) => RowMap::Equality(r),
            Pending::Orth(r) => RowMap::Orthant(r),
            Pending::Soc(k, scale) => RowMap::Soc { start: soc_start[k], scale },
            Pending::Const => RowMap::Constant,
        });
    }

    Compiled {
        conic: ConicProblem {
            n,
            p,
            q,
            a: a_rows,
            b,
            g,
            h,
            layout: ConeLayout { orthant: n_orth, socs: dims },
        },
        free,
        rows,
        constant_violation,
    }
}

fn data_scale(program: &ConvexProgram) -> f64 {
    let mut s = program.objective.linear.amax().max(program.objective.quadratic.amax());
    for c in &program.constraints {
        if let ConstraintForm::Affine(e) = &c.form {
            s = s.max(e.constant.abs());
        }
    }
    if let Some(pin) = &program.fixed_upper {
        s = s.max(pin.amax());
    }
    1.0 + s
}

/// Solves `program` (pinned upper block, if any, held fixed).
///
/// Returns `Err` only for malformed programs; solver outcomes are reported through
/// [`Solution::status`].
pub fn solve(program: &ConvexProgram, warm_start: Option<&DVector<f64>>) -> Result<Solution, ProgramError> {
    solve_with(program, warm_start, &SolverSettings::default())
}

pub fn solve_with(
    program: &ConvexProgram,
    warm_start: Option<&DVector<f64>>,
    settings: &SolverSettings,
) -> Result<Solution, ProgramError> {
    program.validate()?;
    if let Some(w) = warm_start {
        if w.len() != program.dim() {
            return Err(ProgramError::DimensionMismatch {
                what: "warm start",
                expected: program.dim(),
                found: w.len(),
            });
        }
    }
    let compiled = compile(program);
    let scale = data_scale(program);
    let tol = settings.tol * scale;
    let m = program.constraints.len();

    if compiled.constant_violation > tol {
        return Ok(terminal(program, SolveStatus::Infeasible, 0));
    }

    let warm_free: Option<Vec<f64>> = warm_start.map(|w| compiled.free.iter().map(|&i| w[i]).collect());
    let ipm_settings = IpmSettings {
        target: settings.tol * 1e-2,
        max_iter: settings.max_iter,
        regularization: settings.regularization,
    };
    let res = compiled.conic.solve(&ipm_settings, warm_free.as_deref());

    let primal = program.assemble(&res.x);
    let duals = map_duals(&compiled, &res, m);
    let cone_duals = map_cone_duals(program, &compiled, &res);
    let kkt = conic_kkt_residual(program, &primal, &duals, &cone_duals);
    let objective = program.objective_value(primal.as_slice());

    // a run that stalls short of the target is still accepted at the requested tolerance
    let status = if res.status == IpmStatus::Converged || res.accuracy <= settings.tol {
        SolveStatus::Optimal
    } else {
        classify_failure(&compiled.conic, &ipm_settings, &res)
    };
    if status != SolveStatus::Optimal {
        log::debug!("solve ended with {status:?} after {} iterations (accuracy {:.2e})", res.iterations, res.accuracy);
    }
    Ok(Solution {
        primal,
        duals,
        cone_duals,
        objective,
        status,
        kkt,
        iterations: res.iterations,
    })
}

fn terminal(program: &ConvexProgram, status: SolveStatus, iterations: usize) -> Solution {
    let n_free = program.free_indices().len();
    Solution {
        primal: program.assemble(&vec![0.0; n_free]),
        duals: DVector::zeros(program.constraints.len()),
        cone_duals: vec![Vec::new(); program.constraints.len()],
        objective: f64::NAN,
        status,
        kkt: KktResiduals {
            stationarity: f64::INFINITY,
            complementarity: f64::INFINITY,
            feasibility: f64::INFINITY,
        },
        iterations,
    }
}

fn classify_failure(conic: &ConicProblem, settings: &IpmSettings, res: &ipm::IpmResult) -> SolveStatus {
    let phase_one = conic.phase_one();
    let p1 = phase_one.solve(&IpmSettings { target: 1e-9, ..*settings }, None);
    let tau = p1.x.last().copied().unwrap_or(f64::INFINITY);
    let scale = 1.0 + conic.h.iter().chain(&conic.b).fold(0.0f64, |a, v| a.max(v.abs()));
    // an unfinished phase one only proves infeasibility when it has clearly settled on a
    // positive violation
    let infeasible = match p1.status {
        IpmStatus::Converged => tau > 1e-7 * scale,
        _ => p1.accuracy <= 1e-6 && tau > 1e-7 * scale,
    };
    if infeasible {
        SolveStatus::Infeasible
    } else if res.status == IpmStatus::Diverging {
        SolveStatus::Unbounded
    } else {
        SolveStatus::MaxIterations
    }
}

fn map_duals(c: &Compiled, res: &ipm::IpmResult, m: usize) -> DVector<f64> {
    let mut duals = DVector::zeros(m);
    for (k, row) in c.rows.iter().enumerate() {
        duals[k] = match *row {
            RowMap::Equality(r) => res.y[r],
            RowMap::Orthant(r) => res.z[r].max(0.0),
            RowMap::Soc { start, scale } => {
                let s0 = res.s[start].max(1e-300);
                (scale * res.z[start] / s0).clamp(0.0, 1e15)
            }
            RowMap::Constant => 0.0,
        };
    }
    duals
}

fn map_cone_duals(program: &ConvexProgram, c: &Compiled, res: &ipm::IpmResult) -> Vec<Vec<f64>> {
    program
        .constraints
        .iter()
        .zip(&c.rows)
        .map(|(con, row)| match (&con.form, row) {
            (ConstraintForm::Cone { rows, .. }, RowMap::Soc { start, .. }) => {
                res.z[*start..*start + rows.len() + 1].to_vec()
            }
            (ConstraintForm::Cone { rows, .. }, _) => vec![0.0; rows.len() + 1],
            _ => Vec::new(),
        })
        .collect()
}

/// Like [`kkt_residual`], but stationarity uses the conic multipliers of `Cone`
/// constraints, which exist even where the squared form loses its constraint
/// qualification (the cone vertex).
fn conic_kkt_residual(
    program: &ConvexProgram,
    point: &DVector<f64>,
    duals: &DVector<f64>,
    cone_duals: &[Vec<f64>],
) -> KktResiduals {
    let v = point.as_slice();
    let mut grad = program.objective.gradient(v);
    let mut complementarity = 0.0f64;
    let mut feasibility = 0.0f64;
    for (i, c) in program.constraints.iter().enumerate() {
        let g = c.value(v);
        match &c.form {
            ConstraintForm::Cone { rows, bound } => {
                let z = &cone_duals[i];
                bound.accumulate(-z[0], grad.as_mut_slice());
                for (r, &zr) in rows.iter().zip(&z[1..]) {
                    r.accumulate(-zr, grad.as_mut_slice());
                }
                let t = bound.eval(v);
                let rn = rows.iter().map(|r| r.eval(v).powi(2)).sum::<f64>().sqrt();
                feasibility = feasibility.max((rn - t).max(0.0));
                let zs = z[0] * t + rows.iter().zip(&z[1..]).map(|(r, zr)| zr * r.eval(v)).sum::<f64>();
                complementarity = complementarity.max(zs.abs());
            }
            _ => {
                c.add_gradient(v, duals[i], grad.as_mut_slice());
                if c.is_equality() {
                    feasibility = feasibility.max(g.abs());
                } else {
                    feasibility = feasibility.max(g.max(0.0));
                    complementarity = complementarity.max((duals[i] * g).abs());
                }
            }
        }
    }
    let stationarity = program.free_indices().into_iter().fold(0.0f64, |a, i| a.max(grad[i].abs()));
    KktResiduals { stationarity, complementarity, feasibility }
}

/// KKT residuals of `(point, duals)` for `program`, in oracle form.
pub fn kkt_residual(
    program: &ConvexProgram,
    point: &DVector<f64>,
    duals: &DVector<f64>,
) -> Result<KktResiduals, ProgramError> {
    if point.len() != program.dim() {
        return Err(ProgramError::DimensionMismatch {
            what: "point",
            expected: program.dim(),
            found: point.len(),
        });
    }
    if duals.len() != program.constraints.len() {
        return Err(ProgramError::DimensionMismatch {
            what: "duals",
            expected: program.constraints.len(),
            found: duals.len(),
        });
    }
    let v = point.as_slice();
    let grad = program.lagrangian_gradient(v, duals.as_slice());
    let stationarity = program
        .free_indices()
        .into_iter()
        .fold(0.0f64, |a, i| a.max(grad[i].abs()));
    let mut complementarity = 0.0f64;
    let mut feasibility = 0.0f64;
    for (c, &l) in program.constraints.iter().zip(duals.iter()) {
        let g = c.value(v);
        if c.is_equality() {
            feasibility = feasibility.max(g.abs());
        } else {
            feasibility = feasibility.max(g.max(0.0));
            complementarity = complementarity.max((l * g).abs());
            if l < 0.0 {
                complementarity = complementarity.max(-l);
            }
        }
    }
    Ok(KktResiduals { stationarity, complementarity, feasibility })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::program::{Constraint, VariableBlocks};

    fn one_var(target: f64) -> ConvexProgram {
        let mut p = ConvexProgram::new(VariableBlocks::new(1, 0, 0));
        p.objective.add_square(0, target, 1.0);
        p
    }

    #[test]
    fn interior_optimum_has_zero_multiplier() {
        // min (x−1)² s.t. x ≥ 0
        let mut p = one_var(1.0);
        p.push(Constraint::le(LinearExpr::var(0, -1.0)));
        let s = solve(&p, None).unwrap();
        assert!(s.is_optimal());
        assert!((s.primal[0] - 1.0).abs() < 1e-8);
        assert!(s.objective.abs() < 1e-12);
        assert!(s.duals[0].abs() < 1e-8);
    }

    #[test]
    fn boundary_optimum_multiplier() {
        // min x² s.t. 1 − x ≤ 0
        let mut p = one_var(0.0);
        p.push(Constraint::le(LinearExpr::var(0, -1.0).plus(1.0)));
        let s = solve(&p, None).unwrap();
        assert!(s.is_optimal());
        assert!((s.primal[0] - 1.0).abs() < 1e-8);
        assert!((s.duals[0] - 2.0).abs() < 1e-7);
        assert!((s.objective - 1.0).abs() < 1e-8);
    }

    #[test]
    fn half_disk_projection() {
        // min (y1−2)² s.t. y1² + y2² ≤ 1, −y2 ≤ 0
        let mut p = ConvexProgram::new(VariableBlocks::new(2, 0, 0));
        p.objective.add_square(0, 2.0, 1.0);
        p.push(Constraint::cone(
            vec![LinearExpr::var(0, 1.0), LinearExpr::var(1, 1.0)],
            LinearExpr::constant(1.0),
        ));
        p.push(Constraint::le(LinearExpr::var(1, -1.0)));
        let s = solve(&p, None).unwrap();
        assert!(s.is_optimal());
        assert!((s.primal[0] - 1.0).abs() < 1e-7);
        // y2 ≥ 0 is weakly active (zero multiplier), so y2 only decays like √μ
        assert!(s.primal[1].abs() < 1e-4);
        assert!((s.objective - 1.0).abs() < 1e-7);
        // grid search over the half-disk at step 1e-3
        let mut best = f64::INFINITY;
        for i in -1000..=1000 {
            for j in 0..=1000 {
                let (y1, y2) = (i as f64 * 1e-3, j as f64 * 1e-3);
                if y1 * y1 + y2 * y2 <= 1.0 {
                    best = best.min((y1 - 2.0) * (y1 - 2.0));
                }
            }
        }
        assert!((s.objective - best).abs() < 1e-2);
        // oracle multiplier: 2(y1−2) + λ·2y1 = 0 → λ = 1
        assert!((s.duals[0] - 1.0).abs() < 1e-6, "{}", s.duals[0]);
    }

    #[test]
    fn quadratic_constraint_multiplier() {
        // min −x s.t. ½·2x² − 1 ≤ 0  → x = 1, λ: −1 + λ·2x = 0 → λ = ½
        let mut p = ConvexProgram::new(VariableBlocks::new(1, 0, 0));
        p.objective.linear[0] = -1.0;
        p.push(Constraint::quadratic(vec![0], DMatrix::from_element(1, 1, 2.0), LinearExpr::constant(-1.0)));
        let s = solve(&p, None).unwrap();
        assert!(s.is_optimal());
        assert!((s.primal[0] - 1.0).abs() < 1e-7);
        assert!((s.duals[0] - 0.5).abs() < 1e-6);
        assert!(s.kkt.max() < 1e-7);
    }

    #[test]
    fn pinned_upper_block_is_a_parameter() {
        // min (z−2)² s.t. z² ≤ u², u pinned at 1
        let mut p = ConvexProgram::new(VariableBlocks::new(1, 1, 0));
        p.objective.add_square(0, 2.0, 1.0);
        p.push(Constraint::cone(vec![LinearExpr::var(0, 1.0)], LinearExpr::var(1, 1.0)));
        let p = p.pinned(DVector::from_vec(vec![1.0]));
        let s = solve(&p, None).unwrap();
        assert!(s.is_optimal());
        assert!((s.primal[0] - 1.0).abs() < 1e-7);
        assert_eq!(s.primal[1], 1.0);
        assert!((s.duals[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn detects_infeasible() {
        let mut p = one_var(0.0);
        p.extend(Constraint::bounds(0, 2.0, 1.0));
        let s = solve(&p, None).unwrap();
        assert_eq!(s.status, SolveStatus::Infeasible);
    }

    #[test]
    fn detects_unbounded() {
        let mut p = ConvexProgram::new(VariableBlocks::new(1, 0, 0));
        p.objective.linear[0] = -1.0;
        p.push(Constraint::le(LinearExpr::var(0, -1.0)));
        let s = solve(&p, None).unwrap();
        assert_eq!(s.status, SolveStatus::Unbounded);
    }

    #[test]
    fn equality_multiplier_sign() {
        // min x² s.t. x − 1 = 0 → ν = −2
        let mut p = one_var(0.0);
        p.push(Constraint::eq(LinearExpr::var(0, 1.0).plus(-1.0)));
        let s = solve(&p, None).unwrap();
        assert!(s.is_optimal());
        assert!((s.duals[0] + 2.0).abs() < 1e-7);
    }

    #[test]
    fn kkt_residual_examples() {
        let mut p = one_var(0.0);
        p.push(Constraint::le(LinearExpr::var(0, -1.0).plus(1.0)));
        let x = DVector::from_vec(vec![1.0]);
        let r = kkt_residual(&p, &x, &DVector::from_vec(vec![2.0])).unwrap();
        assert_eq!(r, KktResiduals::default());
        let r = kkt_residual(&p, &x, &DVector::from_vec(vec![0.0])).unwrap();
        assert_eq!(r.stationarity, 2.0);
        assert_eq!(r.complementarity, 0.0);
        assert_eq!(r.feasibility, 0.0);
        assert!(kkt_residual(&p, &x, &DVector::zeros(2)).is_err());
    }
}

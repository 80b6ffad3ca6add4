//! Multi-period economic dispatch.

use nestdec_core::{Constraint, ConvexProgram, LinearExpr, VariableBlocks};

use crate::built::{push_range, BuiltGrid, PortBlock};
use crate::spec::{GridModel, GridSpec, PortRole};
use crate::GridError;

/// Builds the dispatch QP.
///
/// Variables: generator outputs `P[g,t]`, then reserve contributions `PU[g,t]`,
/// `PD[g,t]` when the spec declares reserves, then the upper port (one coordinate per
/// period) and the lower ports. Port variables carry the exchange from parent to child,
/// so the parent withdraws them and the child injects them.
pub fn build_ded(spec: &GridSpec) -> Result<BuiltGrid, GridError> {
    spec.validate()?;
    if spec.model != GridModel::Ded {
        return Err(GridError::Invalid { grid: spec.name.clone(), what: "not a dispatch model".into() });
    }
    let t_n = spec.periods;
    let g_n = spec.generators.len();
    let with_reserves = spec.reserves.is_some();
    let n_internal = g_n * t_n * if with_reserves { 3 } else { 1 };
    let upper = spec.upper_port().map(|p| PortBlock {
        name: p.name.clone(),
        quantities: spec.port_quantities(p),
        offset: 0,
        dim: t_n,
    });
    let n_upper = upper.as_ref().map_or(0, |p| p.dim);
    let lower: Vec<PortBlock> = spec
        .lower_ports()
        .enumerate()
        .map(|(k, p)| PortBlock { name: p.name.clone(), quantities: spec.port_quantities(p), offset: k * t_n, dim: t_n })
        .collect();
    let n_lower = lower.len() * t_n;

    let pg = |g: usize, t: usize| g * t_n + t;
    let pu = |g: usize, t: usize| g_n * t_n + g * t_n + t;
    let pd = |g: usize, t: usize| 2 * g_n * t_n + g * t_n + t;
    let up = |t: usize| n_internal + t;
    let lo = |k: usize, t: usize| n_internal + n_upper + k * t_n + t;

    let mut labels = Vec::with_capacity(n_internal + n_upper + n_lower);
    for prefix in ["P", "PU", "PD"].iter().take(if with_reserves { 3 } else { 1 }) {
        for g in &spec.generators {
            labels.extend((0..t_n).map(|t| format!("{prefix}[{},{t}]", g.id)));
        }
    }
    if let Some(u) = &upper {
        labels.extend((0..t_n).map(|t| format!("port[{},{t}]", u.name)));
    }
    for l in &lower {
        labels.extend((0..t_n).map(|t| format!("port[{},{t}]", l.name)));
    }

    let mut p = ConvexProgram::new(VariableBlocks::new(n_internal, n_upper, n_lower));
    for (g, gen) in spec.generators.iter().enumerate() {
        for t in 0..t_n {
            let i = pg(g, t);
            p.objective.constant += gen.a0;
            p.objective.linear[i] += gen.a1;
            p.objective.quadratic[(i, i)] += 2.0 * gen.a2;
        }
    }

    let demand: Vec<f64> = (0..t_n).map(|t| spec.loads.iter().map(|l| l.p[t]).sum()).collect();
    let mut warnings = Vec::new();
    for t in 0..t_n {
        let mut terms: Vec<(usize, f64)> = (0..g_n).map(|g| (pg(g, t), 1.0)).collect();
        if upper.is_some() {
            terms.push((up(t), 1.0));
        }
        terms.extend((0..lower.len()).map(|k| (lo(k, t), -1.0)));
        p.push(Constraint::eq(LinearExpr::new(terms, -demand[t])));

        let cap: f64 = spec.generators.iter().map(|g| g.p_max).sum::<f64>() + spec.upper_port().map_or(0.0, |u| u.p_max);
        let exportable: f64 = spec.lower_ports().map(|l| l.p_min).sum();
        if cap - exportable < demand[t] {
            let msg = format!("grid {}: period {t} demand {:.4} exceeds available capacity {:.4}", spec.name, demand[t], cap - exportable);
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }

    for (g, gen) in spec.generators.iter().enumerate() {
        for t in 0..t_n {
            push_range(&mut p, LinearExpr::var(pg(g, t), 1.0), Some(gen.p_min), Some(gen.p_max));
        }
        for t in 1..t_n {
            let step = LinearExpr::new(vec![(pg(g, t), 1.0), (pg(g, t - 1), -1.0)], 0.0);
            push_range(&mut p, step, gen.ramp_down.map(|r| -r * spec.dt), gen.ramp_up.map(|r| r * spec.dt));
        }
    }

    if let Some(res) = &spec.reserves {
        for (g, gen) in spec.generators.iter().enumerate() {
            for t in 0..t_n {
                push_range(&mut p, LinearExpr::var(pu(g, t), 1.0), Some(0.0), gen.ramp_up.map(|r| r * spec.dt));
                push_range(&mut p, LinearExpr::var(pd(g, t), 1.0), Some(0.0), gen.ramp_down.map(|r| r * spec.dt));
                // PU ≤ P̄ − P, PD ≤ P − P̲
                p.push(Constraint::le(LinearExpr::new(vec![(pu(g, t), 1.0), (pg(g, t), 1.0)], -gen.p_max)));
                p.push(Constraint::le(LinearExpr::new(vec![(pd(g, t), 1.0), (pg(g, t), -1.0)], gen.p_min)));
            }
        }
        for t in 0..t_n {
            let s_up = res.up.get(t).copied().unwrap_or(0.0);
            let s_dn = res.down.get(t).copied().unwrap_or(0.0);
            p.push(Constraint::le(LinearExpr::new((0..g_n).map(|g| (pu(g, t), -1.0)).collect(), s_up)));
            p.push(Constraint::le(LinearExpr::new((0..g_n).map(|g| (pd(g, t), -1.0)).collect(), s_dn)));
        }
    }

    for line in spec.lines.iter() {
        let Some(cap) = line.p_max else { continue };
        for t in 0..t_n {
            let mut terms = Vec::new();
            let mut constant = 0.0;
            for (g, gen) in spec.generators.iter().enumerate() {
                if let Some(&f) = line.ptdf.get(&gen.id) {
                    terms.push((pg(g, t), f));
                }
            }
            for l in &spec.loads {
                if let Some(&f) = line.ptdf.get(&l.id) {
                    constant -= f * l.p[t];
                }
            }
            if let Some(u) = &upper {
                if let Some(&f) = line.ptdf.get(&u.name) {
                    terms.push((up(t), f));
                }
            }
            for (k, l) in lower.iter().enumerate() {
                if let Some(&f) = line.ptdf.get(&l.name) {
                    terms.push((lo(k, t), -f));
                }
            }
            push_range(&mut p, LinearExpr::new(terms, constant), Some(-cap), Some(cap));
        }
    }

    for port in &spec.ports {
        let idx: Vec<usize> = match port.role {
            PortRole::Upper => (0..t_n).map(up).collect(),
            PortRole::Lower => {
                let k = lower.iter().position(|l| l.name == port.name).expect("lower port block");
                (0..t_n).map(|t| lo(k, t)).collect()
            }
        };
        for i in idx {
            push_range(&mut p, LinearExpr::var(i, 1.0), Some(port.p_min), Some(port.p_max));
        }
    }

    p.validate().map_err(|source| GridError::Program { grid: spec.name.clone(), source })?;
    Ok(BuiltGrid { name: spec.name.clone(), program: p, upper, lower, labels, warnings })
}

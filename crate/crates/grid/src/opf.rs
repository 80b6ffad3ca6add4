//! Single-period branch-flow optimal power flow on a radial network.

use std::collections::{HashMap, VecDeque};

use nestdec_core::{Constraint, ConvexProgram, LinearExpr, VariableBlocks};

use crate::built::{push_range, BuiltGrid, PortBlock};
use crate::spec::{GridModel, GridSpec, Port, PortRole, Quantity};
use crate::GridError;

/// A line oriented away from the root.
#[derive(Clone, Debug, PartialEq)]
pub struct OrientedLine {
    pub line: usize,
    pub from: u32,
    pub to: u32,
}

/// Orients the lines of a radial network away from `root`, in breadth-first order.
pub fn orient_radial(spec: &GridSpec, root: u32) -> Result<Vec<OrientedLine>, GridError> {
    let fail = |reason: String| GridError::NonRadialTopology { grid: spec.name.clone(), reason };
    if spec.lines.len() + 1 != spec.buses.len() {
        return Err(fail(format!("{} lines for {} buses", spec.lines.len(), spec.buses.len())));
    }
    let mut adj: HashMap<u32, Vec<usize>> = HashMap::new();
    for (k, l) in spec.lines.iter().enumerate() {
        if l.from == l.to {
            return Err(fail(format!("line {} is a self-loop", l.id)));
        }
        adj.entry(l.from).or_default().push(k);
        adj.entry(l.to).or_default().push(k);
    }
    let mut seen = HashMap::from([(root, ())]);
    let mut queue = VecDeque::from([root]);
    let mut out = Vec::with_capacity(spec.lines.len());
    while let Some(b) = queue.pop_front() {
        for &k in adj.get(&b).map(Vec::as_slice).unwrap_or(&[]) {
            let l = &spec.lines[k];
            let other = if l.from == b { l.to } else { l.from };
            if seen.contains_key(&other) {
                continue;
            }
            seen.insert(other, ());
            out.push(OrientedLine { line: k, from: b, to: other });
            queue.push_back(other);
        }
    }
    if out.len() != spec.lines.len() {
        return Err(fail("network is not connected".into()));
    }
    Ok(out)
}

/// Builds the branch-flow SOCP.
///
/// Variables: squared voltages `v[b]`, then per oriented line `P`, `Q` and squared
/// current `l`, then generator `Pg`, `Qg`, then the upper port and the lower ports
/// (quantities in declared order). Each line carries `P² + Q² ≤ v_from·l` as a rotated
/// cone. Port voltage coordinates equal the squared voltage of their bus.
pub fn build_opf_radial(spec: &GridSpec) -> Result<BuiltGrid, GridError> {
    spec.validate()?;
    if spec.model != GridModel::OpfRadial {
        return Err(GridError::Invalid { grid: spec.name.clone(), what: "not a branch-flow model".into() });
    }
    let root = spec
        .upper_port()
        .map(|p| p.bus)
        .or(spec.slack_bus)
        .ok_or_else(|| GridError::MissingSlack(spec.name.clone()))?;
    let lines = orient_radial(spec, root)?;

    let nb = spec.buses.len();
    let nl = lines.len();
    let ng = spec.generators.len();
    let bus_pos: HashMap<u32, usize> = spec.buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect();
    let v = |b: u32| bus_pos[&b];
    let pf = |k: usize| nb + 3 * k;
    let qf = |k: usize| nb + 3 * k + 1;
    let lf = |k: usize| nb + 3 * k + 2;
    let pgi = |g: usize| nb + 3 * nl + 2 * g;
    let qgi = |g: usize| nb + 3 * nl + 2 * g + 1;
    let n_internal = nb + 3 * nl + 2 * ng;

    let block = |p: &Port, offset: usize| PortBlock {
        name: p.name.clone(),
        quantities: spec.port_quantities(p),
        offset,
        dim: spec.port_dim(p),
    };
    let upper = spec.upper_port().map(|p| block(p, 0));
    let n_upper = upper.as_ref().map_or(0, |u| u.dim);
    let mut lower = Vec::new();
    let mut off = 0;
    for p in spec.lower_ports() {
        let b = block(p, off);
        off += b.dim;
        lower.push(b);
    }
    let n_lower = off;

    let mut labels: Vec<String> = spec.buses.iter().map(|b| format!("v[{}]", b.id)).collect();
    for ol in &lines {
        let id = &spec.lines[ol.line].id;
        labels.extend([format!("P[{id}]"), format!("Q[{id}]"), format!("l[{id}]")]);
    }
    for g in &spec.generators {
        labels.extend([format!("Pg[{}]", g.id), format!("Qg[{}]", g.id)]);
    }
    let port_label = |b: &PortBlock, q: Quantity| format!("port[{},{}]", b.name, quantity_name(q));
    for b in upper.iter().chain(&lower) {
        labels.extend(b.quantities.iter().map(|&q| port_label(b, q)));
    }

    let mut p = ConvexProgram::new(VariableBlocks::new(n_internal, n_upper, n_lower));
    for (g, gen) in spec.generators.iter().enumerate() {
        let i = pgi(g);
        p.objective.constant += gen.a0;
        p.objective.linear[i] += gen.a1;
        p.objective.quadratic[(i, i)] += 2.0 * gen.a2;
    }

    // global index of a port quantity, if the port carries it
    let port_var = |role: PortRole, b: &PortBlock, q: Quantity| {
        let base = match role {
            PortRole::Upper => n_internal,
            PortRole::Lower => n_internal + n_upper,
        };
        b.coordinate(q, 0).map(|k| base + b.offset + k)
    };
    let port_specs: Vec<(PortRole, &PortBlock, &Port)> = upper
        .iter()
        .map(|b| (PortRole::Upper, b))
        .chain(lower.iter().map(|b| (PortRole::Lower, b)))
        .map(|(r, b)| (r, b, spec.port(&b.name).expect("declared port")))
        .collect();

    for bus in &spec.buses {
        let mut pt: Vec<(usize, f64)> = Vec::new();
        let mut qt: Vec<(usize, f64)> = Vec::new();
        for (g, gen) in spec.generators.iter().enumerate() {
            if gen.bus == bus.id {
                pt.push((pgi(g), 1.0));
                qt.push((qgi(g), 1.0));
            }
        }
        for (k, ol) in lines.iter().enumerate() {
            let line = &spec.lines[ol.line];
            if ol.to == bus.id {
                pt.extend([(pf(k), 1.0), (lf(k), -line.r)]);
                qt.extend([(qf(k), 1.0), (lf(k), -line.x)]);
            }
            if ol.from == bus.id {
                pt.push((pf(k), -1.0));
                qt.push((qf(k), -1.0));
            }
        }
        for &(role, b, port) in &port_specs {
            if port.bus != bus.id {
                continue;
            }
            let sign = if role == PortRole::Upper { 1.0 } else { -1.0 };
            if let Some(i) = port_var(role, b, Quantity::P) {
                pt.push((i, sign));
            }
            if let Some(i) = port_var(role, b, Quantity::Q) {
                qt.push((i, sign));
            }
        }
        pt.push((v(bus.id), -bus.gs));
        qt.push((v(bus.id), bus.bs));
        let pd: f64 = spec.loads.iter().filter(|l| l.bus == bus.id).map(|l| l.p[0]).sum();
        let qd: f64 = spec.loads.iter().filter(|l| l.bus == bus.id).map(|l| l.q.first().copied().unwrap_or(0.0)).sum();
        p.push(Constraint::eq(LinearExpr::new(pt, -pd)));
        p.push(Constraint::eq(LinearExpr::new(qt, -qd)));
    }

    for (k, ol) in lines.iter().enumerate() {
        let line = &spec.lines[ol.line];
        let z2 = line.r * line.r + line.x * line.x;
        p.push(Constraint::eq(LinearExpr::new(
            vec![(v(ol.to), 1.0), (v(ol.from), -1.0), (pf(k), 2.0 * line.r), (qf(k), 2.0 * line.x), (lf(k), -z2)],
            0.0,
        )));
        p.push(Constraint::rotated_cone(
            vec![LinearExpr::var(pf(k), 1.0), LinearExpr::var(qf(k), 1.0)],
            LinearExpr::var(v(ol.from), 1.0),
            LinearExpr::var(lf(k), 1.0),
        ));
        if let Some(lmax) = line.l_max {
            p.push(Constraint::le(LinearExpr::var(lf(k), 1.0).plus(-lmax)));
        }
        if let Some(smax) = line.s_max {
            p.push(Constraint::cone(
                vec![LinearExpr::var(pf(k), 1.0), LinearExpr::var(qf(k), 1.0)],
                LinearExpr::constant(smax),
            ));
        }
    }

    for bus in &spec.buses {
        push_range(&mut p, LinearExpr::var(v(bus.id), 1.0), Some(bus.v_min * bus.v_min), Some(bus.v_max * bus.v_max));
    }
    for (g, gen) in spec.generators.iter().enumerate() {
        push_range(&mut p, LinearExpr::var(pgi(g), 1.0), Some(gen.p_min), Some(gen.p_max));
        push_range(&mut p, LinearExpr::var(qgi(g), 1.0), Some(gen.q_min), Some(gen.q_max));
    }
    for &(role, b, port) in &port_specs {
        if let Some(i) = port_var(role, b, Quantity::P) {
            push_range(&mut p, LinearExpr::var(i, 1.0), Some(port.p_min), Some(port.p_max));
        }
        if let Some(i) = port_var(role, b, Quantity::Q) {
            push_range(&mut p, LinearExpr::var(i, 1.0), port.q_min, port.q_max);
        }
        if let Some(i) = port_var(role, b, Quantity::V) {
            p.push(Constraint::eq(LinearExpr::new(vec![(i, 1.0), (v(port.bus), -1.0)], 0.0)));
        }
    }

    p.validate().map_err(|source| GridError::Program { grid: spec.name.clone(), source })?;
    Ok(BuiltGrid { name: spec.name.clone(), program: p, upper, lower, labels, warnings: Vec::new() })
}

pub(crate) fn quantity_name(q: Quantity) -> &'static str {
    match q {
        Quantity::P => "p",
        Quantity::Q => "q",
        Quantity::V => "v",
    }
}

"""Writes the grid fixtures and prints cvxpy reference optima for them.

    python3 make_fixtures.py            # write fixtures + print references
"""
import json
import math
import pathlib

import cvxpy as cp
import numpy as np

HERE = pathlib.Path(__file__).parent
T = 24


def profile(peak, phase=0.0):
    return [round(peak * (0.8 + 0.2 * math.sin(2 * math.pi * (t - 8 + phase) / 24)), 6) for t in range(T)]


# dispatch: 1 transmission, 2 distribution, 4 microgrids

def ded_micro(name, a1, a2, cap, peak, phase):
    return {
        "name": name,
        "model": "ded",
        "periods": T,
        "buses": [{"id": 1}],
        "generators": [{"id": f"{name}-g", "bus": 1, "a0": 1.0, "a1": a1, "a2": a2, "p_min": 0.0, "p_max": cap}],
        "loads": [{"id": f"{name}-d", "bus": 1, "p": profile(peak, phase)}],
        "ports": [{"name": "up", "bus": 1, "role": "upper", **micro_range(cap, peak)}],
    }


def micro_range(cap, peak):
    # every exchange in this range is servable in every period (load lies in [0.6, 1]·peak)
    return {"p_min": -(cap - peak) + 3.0, "p_max": round(0.6 * peak - 1.0, 6)}


def dist_range(micro, peak):
    lo = sum(m["ports"][0]["p_min"] for m in micro)
    hi = sum(m["ports"][0]["p_max"] for m in micro)
    return {"p_min": math.ceil(peak + lo - 45.0) + 2.0, "p_max": math.floor(0.6 * peak + hi) - 2.0}


def ded_dist(name, micro, a1, peak, phase):
    return {
        "name": name,
        "model": "ded",
        "periods": T,
        "buses": [{"id": 1}, {"id": 2}],
        "generators": [{"id": f"{name}-g", "bus": 2, "a0": 5.0, "a1": a1, "a2": 0.08, "p_min": 0.0, "p_max": 45.0}],
        "loads": [{"id": f"{name}-d", "bus": 2, "p": profile(peak, phase)}],
        "ports": [
            {"name": "up", "bus": 1, "role": "upper", **dist_range(micro, peak)},
            {"name": "m1", "bus": 2, "role": "lower", **{k: micro[0]["ports"][0][k] for k in ("p_min", "p_max")}},
            {"name": "m2", "bus": 2, "role": "lower", **{k: micro[1]["ports"][0][k] for k in ("p_min", "p_max")}},
        ],
        "hierarchy": {
            "children": micro,
            "coupling": [
                {"child": micro[0]["name"], "parent_port": "m1", "child_port": "up"},
                {"child": micro[1]["name"], "parent_port": "m2", "child_port": "up"},
            ],
        },
    }


def ded_fixture():
    # triangle with equal reactances, bus 1 as reference
    f2 = {"l12": -2 / 3, "l13": -1 / 3, "l23": 1 / 3}
    f3 = {"l12": -1 / 3, "l13": -2 / 3, "l23": -1 / 3}
    at_bus = {"tg2": 2, "td2": 2, "d1": 2, "tg3": 3, "td3": 3, "d2": 3}
    lines = []
    for lid, a, b, cap in [("l12", 1, 2, 160.0), ("l13", 1, 3, 140.0), ("l23", 2, 3, 100.0)]:
        ptdf = {}
        for inj, bus in at_bus.items():
            f = (f2 if bus == 2 else f3)[lid]
            ptdf[inj] = round(f, 12)
        lines.append({"id": lid, "from": a, "to": b, "x": 0.1, "p_max": cap, "ptdf": ptdf})
    micro = [
        ded_micro("mg1", 12.0, 0.5, 30.0, 12.0, 0.0),
        ded_micro("mg2", 14.0, 0.4, 30.0, 10.0, 3.0),
        ded_micro("mg3", 11.0, 0.6, 30.0, 9.0, -2.0),
        ded_micro("mg4", 16.0, 0.3, 30.0, 14.0, 5.0),
    ]
    dists = [ded_dist("dist1", micro[:2], 28.0, 55.0, 1.0), ded_dist("dist2", micro[2:], 31.0, 45.0, -1.0)]
    return {
        "format_version": 1,
        "units": "pu",
        "name": "transmission",
        "model": "ded",
        "periods": T,
        "dt": 1.0,
        "buses": [{"id": 1}, {"id": 2}, {"id": 3}],
        "generators": [
            {"id": "tg1", "bus": 1, "a0": 100.0, "a1": 20.0, "a2": 0.02, "p_min": 20.0, "p_max": 300.0, "ramp_up": 60.0, "ramp_down": 60.0},
            {"id": "tg2", "bus": 2, "a0": 80.0, "a1": 25.0, "a2": 0.03, "p_min": 0.0, "p_max": 200.0, "ramp_up": 50.0, "ramp_down": 50.0},
            {"id": "tg3", "bus": 3, "a0": 60.0, "a1": 35.0, "a2": 0.05, "p_min": 0.0, "p_max": 150.0, "ramp_up": 40.0, "ramp_down": 40.0},
        ],
        "loads": [
            {"id": "td2", "bus": 2, "p": profile(120.0)},
            {"id": "td3", "bus": 3, "p": profile(90.0, 2.0)},
        ],
        "lines": lines,
        "reserves": {"up": [20.0] * T, "down": [10.0] * T},
        "ports": [
            {"name": "d1", "bus": 2, "role": "lower", **{k: dists[0]["ports"][0][k] for k in ("p_min", "p_max")}},
            {"name": "d2", "bus": 3, "role": "lower", **{k: dists[1]["ports"][0][k] for k in ("p_min", "p_max")}},
        ],
        "hierarchy": {
            "children": dists,
            "coupling": [
                {"child": "dist1", "parent_port": "d1", "child_port": "up", "schedule": [25.0] * T},
                {"child": "dist2", "parent_port": "d2", "child_port": "up", "schedule": [20.0] * T},
            ],
        },
    }


# branch flow: same tree shape, one period, ports carry (p, q, v). Voltage limits widen
# down the tree and port ranges stay inside what each child can serve at any voltage
# its parent may hand it. Schedules are an exchange plan every grid can meet on its own
# (voltages allow for the drop along each feeder); only isolated runs use them.
T_V = {"v_min": 0.95, "v_max": 1.05}
DIST_V = {"v_min": 0.85, "v_max": 1.15}
MG_V = {"v_min": 0.75, "v_max": 1.25}
MG_PORT = {"p_min": -0.1, "p_max": 0.1, "q_min": -0.1, "q_max": 0.1}
DIST_PORT = {"p_min": 0.0, "p_max": 0.5, "q_min": 0.0, "q_max": 0.3}


def opf_micro(name, a1, load):
    return {
        "name": name,
        "model": "opf_radial",
        "buses": [{"id": 1, **MG_V}, {"id": 2, **MG_V}],
        "generators": [{"id": f"{name}-g", "bus": 2, "a1": a1, "a2": 20.0, "p_min": 0.0, "p_max": 0.3, "q_min": -0.2, "q_max": 0.2}],
        "loads": [{"id": f"{name}-d", "bus": 2, "p": [load[0]], "q": [load[1]]}],
        "lines": [{"id": "l12", "from": 1, "to": 2, "r": 0.03, "x": 0.03}],
        "ports": [{"name": "up", "bus": 1, "role": "upper", **MG_PORT}],
    }


def opf_dist(name, micro, a1, loads, v_sched):
    return {
        "name": name,
        "model": "opf_radial",
        "buses": [{"id": 1, **DIST_V}, {"id": 2, **DIST_V}, {"id": 3, **DIST_V}],
        "generators": [{"id": f"{name}-g", "bus": 2, "a1": a1, "a2": 8.0, "p_min": 0.0, "p_max": 0.8, "q_min": -0.5, "q_max": 0.5}],
        "loads": [
            {"id": f"{name}-d2", "bus": 2, "p": [loads[0][0]], "q": [loads[0][1]]},
            {"id": f"{name}-d3", "bus": 3, "p": [loads[1][0]], "q": [loads[1][1]]},
        ],
        "lines": [
            {"id": "l12", "from": 1, "to": 2, "r": 0.02, "x": 0.04},
            {"id": "l23", "from": 2, "to": 3, "r": 0.02, "x": 0.04},
        ],
        "ports": [
            {"name": "up", "bus": 1, "role": "upper", **DIST_PORT},
            {"name": "m1", "bus": 3, "role": "lower", **MG_PORT},
            {"name": "m2", "bus": 2, "role": "lower", **MG_PORT},
        ],
        "hierarchy": {
            "children": micro,
            "coupling": [
                {"child": micro[0]["name"], "parent_port": "m1", "child_port": "up", "schedule": [-0.1, -0.05, v_sched[0]]},
                {"child": micro[1]["name"], "parent_port": "m2", "child_port": "up", "schedule": [-0.1, 0.0, v_sched[1]]},
            ],
        },
    }


def opf_fixture():
    micro = [
        opf_micro("mg1", 15.0, (0.15, 0.05)),
        opf_micro("mg2", 17.0, (0.12, 0.04)),
        opf_micro("mg3", 14.0, (0.10, 0.03)),
        opf_micro("mg4", 19.0, (0.18, 0.06)),
    ]
    dists = [
        opf_dist("dist1", micro[:2], 28.0, ((0.3, 0.1), (0.4, 0.15)), (0.915, 0.939)),
        opf_dist("dist2", micro[2:], 30.0, ((0.25, 0.08), (0.35, 0.12)), (0.889, 0.907)),
    ]
    return {
        "format_version": 1,
        "units": "pu",
        "name": "transmission",
        "model": "opf_radial",
        "slack_bus": 1,
        "buses": [{"id": 1, "v_min": 1.0, "v_max": 1.0}, {"id": 2, **T_V}, {"id": 3, **T_V}, {"id": 4, **T_V}],
        "generators": [
            {"id": "tg1", "bus": 1, "a1": 20.0, "a2": 2.0, "p_min": 0.0, "p_max": 5.0, "q_min": -3.0, "q_max": 3.0},
            {"id": "tg3", "bus": 3, "a1": 30.0, "a2": 5.0, "p_min": 0.0, "p_max": 1.0, "q_min": -1.0, "q_max": 1.0},
        ],
        "loads": [
            {"id": "td2", "bus": 2, "p": [0.8], "q": [0.3]},
            {"id": "td4", "bus": 4, "p": [0.6], "q": [0.2]},
        ],
        "lines": [
            {"id": "l12", "from": 1, "to": 2, "r": 0.01, "x": 0.03},
            {"id": "l23", "from": 2, "to": 3, "r": 0.01, "x": 0.03},
            {"id": "l34", "from": 3, "to": 4, "r": 0.01, "x": 0.03},
        ],
        "ports": [
            {"name": "d1", "bus": 3, "role": "lower", **DIST_PORT},
            {"name": "d2", "bus": 4, "role": "lower", **DIST_PORT},
        ],
        "hierarchy": {
            "children": dists,
            "coupling": [
                {"child": "dist1", "parent_port": "d1", "child_port": "up", "schedule": [0.3, 0.0, 0.95]},
                {"child": "dist2", "parent_port": "d2", "child_port": "up", "schedule": [0.3, 0.0, 0.918]},
            ],
        },
    }


def minimal_fixture():
    return {
        "format_version": 1,
        "units": "pu",
        "name": "single",
        "model": "ded",
        "buses": [{"id": 1}],
        "generators": [{"id": "g1", "bus": 1, "a0": 0.0, "a1": 10.0, "a2": 0.1, "p_min": 0.0, "p_max": 10.0}],
        "loads": [{"id": "d1", "bus": 1, "p": [5.0]}],
    }


# independent cvxpy models of the flattened trees

def walk(node):
    yield node
    for c in node.get("hierarchy", {}).get("children", []):
        yield from walk(c)


def ded_reference(root):
    cost = 0
    cons = []
    port_vars = {}
    for g in walk(root):
        gens = g.get("generators", [])
        P = cp.Variable((len(gens), T))
        ports = {p["name"]: cp.Variable(T) for p in g.get("ports", [])}
        port_vars[g["name"]] = ports
        for i, gen in enumerate(gens):
            cost += T * gen.get("a0", 0) + gen["a1"] * cp.sum(P[i]) + gen["a2"] * cp.sum_squares(P[i])
            cons += [P[i] >= gen["p_min"], P[i] <= gen["p_max"]]
            if "ramp_up" in gen:
                cons += [P[i, 1:] - P[i, :-1] <= gen["ramp_up"] * g.get("dt", 1.0)]
            if "ramp_down" in gen:
                cons += [P[i, :-1] - P[i, 1:] <= gen["ramp_down"] * g.get("dt", 1.0)]
        demand = np.sum([l["p"] for l in g.get("loads", [])], axis=0)
        bal = cp.sum(P, axis=0) - demand
        for p in g.get("ports", []):
            v = ports[p["name"]]
            bal = bal + (v if p["role"] == "upper" else -v)
            cons += [v >= p["p_min"], v <= p["p_max"]]
        cons.append(bal == 0)
        if "reserves" in g:
            PU = cp.Variable((len(gens), T))
            PD = cp.Variable((len(gens), T))
            for i, gen in enumerate(gens):
                cons += [PU[i] >= 0, PD[i] >= 0, PU[i] <= gen["p_max"] - P[i], PD[i] <= P[i] - gen["p_min"]]
                if "ramp_up" in gen:
                    cons.append(PU[i] <= gen["ramp_up"] * g.get("dt", 1.0))
                if "ramp_down" in gen:
                    cons.append(PD[i] <= gen["ramp_down"] * g.get("dt", 1.0))
            cons += [cp.sum(PU, axis=0) >= g["reserves"]["up"], cp.sum(PD, axis=0) >= g["reserves"]["down"]]
        names = {gen["id"]: i for i, gen in enumerate(gens)}
        loads = {l["id"]: l for l in g.get("loads", [])}
        for line in g.get("lines", []):
            if "p_max" not in line:
                continue
            flow = 0
            for key, f in line.get("ptdf", {}).items():
                if key in names:
                    flow = flow + f * P[names[key]]
                elif key in loads:
                    flow = flow - f * np.array(loads[key]["p"])
                else:
                    port = next(p for p in g["ports"] if p["name"] == key)
                    flow = flow + (f if port["role"] == "upper" else -f) * ports[key]
            cons += [flow <= line["p_max"], flow >= -line["p_max"]]
        for c in g.get("hierarchy", {}).get("coupling", []):
            child = next(ch for ch in g["hierarchy"]["children"] if ch["name"] == c["child"])
            port_vars.setdefault(child["name"], None)
            cons.append(("link", g["name"], c["parent_port"], child["name"], c["child_port"]))
    real = [c for c in cons if not isinstance(c, tuple)]
    for c in cons:
        if isinstance(c, tuple):
            _, pn, pp, cn, cpn = c
            real.append(port_vars[pn][pp] == port_vars[cn][cpn])
    prob = cp.Problem(cp.Minimize(cost), real)
    prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-10, tol_gap_rel=1e-10, tol_feas=1e-10)
    return prob.value


def opf_reference(root):
    cost = 0
    cons = []
    ports_all = {}
    links = []
    flows = []
    for g in walk(root):
        buses = [b["id"] for b in g["buses"]]
        v = {b: cp.Variable() for b in buses}
        for b in g["buses"]:
            cons += [v[b["id"]] >= b.get("v_min", 0.9) ** 2, v[b["id"]] <= b.get("v_max", 1.1) ** 2]
        lines = g.get("lines", [])
        P = {l["id"]: cp.Variable() for l in lines}
        Q = {l["id"]: cp.Variable() for l in lines}
        L = {l["id"]: cp.Variable() for l in lines}
        gens = g.get("generators", [])
        Pg = {x["id"]: cp.Variable() for x in gens}
        Qg = {x["id"]: cp.Variable() for x in gens}
        ports = {p["name"]: (cp.Variable(), cp.Variable(), cp.Variable()) for p in g.get("ports", [])}
        ports_all[g["name"]] = ports
        for x in gens:
            cost += x.get("a0", 0) + x["a1"] * Pg[x["id"]] + x["a2"] * cp.square(Pg[x["id"]])
            cons += [Pg[x["id"]] >= x["p_min"], Pg[x["id"]] <= x["p_max"], Qg[x["id"]] >= x["q_min"], Qg[x["id"]] <= x["q_max"]]
        for l in lines:
            i, j = l["from"], l["to"]
            cons.append(v[j] == v[i] - 2 * (l["r"] * P[l["id"]] + l["x"] * Q[l["id"]]) + (l["r"] ** 2 + l["x"] ** 2) * L[l["id"]])
            cons.append(cp.quad_over_lin(cp.hstack([P[l["id"]], Q[l["id"]]]), v[i]) <= L[l["id"]])
            flows.append((P[l["id"]], Q[l["id"]], v[i], L[l["id"]]))
        for b in g["buses"]:
            bid = b["id"]
            pin = sum(Pg[x["id"]] for x in gens if x["bus"] == bid)
            qin = sum(Qg[x["id"]] for x in gens if x["bus"] == bid)
            for l in lines:
                if l["to"] == bid:
                    pin += P[l["id"]] - l["r"] * L[l["id"]]
                    qin += Q[l["id"]] - l["x"] * L[l["id"]]
                if l["from"] == bid:
                    pin -= P[l["id"]]
                    qin -= Q[l["id"]]
            for p in g.get("ports", []):
                if p["bus"] == bid:
                    s = 1 if p["role"] == "upper" else -1
                    pin += s * ports[p["name"]][0]
                    qin += s * ports[p["name"]][1]
            pin -= sum(ld["p"][0] for ld in g.get("loads", []) if ld["bus"] == bid) + b.get("gs", 0) * v[bid]
            qin -= sum(ld.get("q", [0])[0] for ld in g.get("loads", []) if ld["bus"] == bid) - b.get("bs", 0) * v[bid]
            cons += [pin == 0, qin == 0]
        for p in g.get("ports", []):
            pp, qq, vv = ports[p["name"]]
            cons += [pp >= p["p_min"], pp <= p["p_max"], qq >= p["q_min"], qq <= p["q_max"], vv == v[p["bus"]]]
        for c in g.get("hierarchy", {}).get("coupling", []):
            links.append((g["name"], c["parent_port"], c["child"], c["child_port"]))
    for pn, pp, cn, cpn in links:
        for k in range(3):
            cons.append(ports_all[pn][pp][k] == ports_all[cn][cpn][k])
    prob = cp.Problem(cp.Minimize(cost), cons)
    prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-10, tol_gap_rel=1e-10, tol_feas=1e-10)
    gap = max(float(p.value ** 2 + q.value ** 2 - vi.value * l.value) for p, q, vi, l in flows)
    return prob.value, gap


def main():
    fixtures = {
        "trilevel_ded.json": ded_fixture(),
        "trilevel_opf.json": opf_fixture(),
        "minimal.json": minimal_fixture(),
    }
    for name, data in fixtures.items():
        (HERE / name).write_text(json.dumps(data, indent=2) + "\n")
    print("ded reference", repr(ded_reference(fixtures["trilevel_ded.json"])))
    print("opf reference (value, worst cone gap)", opf_reference(fixtures["trilevel_opf.json"]))


if __name__ == "__main__":
    main()

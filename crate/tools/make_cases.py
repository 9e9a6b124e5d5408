#!/usr/bin/env python3
"""Generates the bundled case files in cases/ from MATPOWER data (via pypower).

Every dynamic device is calibrated so that the stated operating point is an
exact equilibrium: bus voltages and injections come either from a power flow
or, for the 9-bus case, from a prescribed set of device states.

usage: python3 tools/make_cases.py [--pypower PATH] [--out DIR]
"""
import argparse
import math
import os
import sys

import numpy as np

F_NOM = 60.0


def inertia(h):
    """Swing-equation coefficient from an inertia constant in seconds."""
    return 2.0 * h / (2.0 * math.pi * F_NOM)


def branches(ppc):
    out = []
    for br in ppc["branch"]:
        if br[10] == 0:
            continue
        tap = br[8] if br[8] != 0 else 1.0
        if br[9] != 0:
            raise SystemExit("phase shifters are not supported")
        out.append((int(br[0]), int(br[1]), float(br[2]), float(br[3]), float(br[4]), float(tap)))
    return out


def admittance(ids, lines):
    pos = {b: k for k, b in enumerate(ids)}
    y = np.zeros((len(ids), len(ids)), complex)
    for f, t, r, x, b, tap in lines:
        ys = 1.0 / complex(r, x)
        sh = 0.5j * b
        i, j = pos[f], pos[t]
        y[i, i] += (ys + sh) / tap**2
        y[j, j] += ys + sh
        y[i, j] -= ys / tap
        y[j, i] -= ys / tap
    return y


def rot(d, z):
    """Common-frame phasor to the generator frame."""
    return z * complex(math.cos(d), -math.sin(d))


def calibrate(kind, base, v, i):
    """Parameters and equilibrium states of a device injecting current i at voltage v."""
    s = v * i.conjugate()
    p = dict(base)
    if kind == "SG3":
        d = np.angle(v + 1j * p["xq"] * i)
        vl, il = rot(d, v), rot(d, i)
        eq = vl.real - p["xd_prime"] * il.imag
        p["pm"] = eq * il.real + il.real * il.imag * (p["xd_prime"] - p["xq"])
        p["ef"] = eq - (p["xd"] - p["xd_prime"]) * il.real
        return p, [d, 0.0, eq]
    th, vm = float(np.angle(v)), abs(v)
    if kind == "VSG":
        p.update(p_ref=s.real + p["k_i"] * th, q_ref=s.imag, v_ref=vm)
        return p, [th, 0.0, vm]
    if kind in ("CD", "QD"):
        p.update(theta_ref=th, p_ref=s.real, q_ref=s.imag, v_ref=vm)
        return p, [th, vm]
    if kind == "PLL":
        p.update(p_ref=s.real, q_ref=s.imag, v_ref=vm)
        return p, [0.0, th, s.real, s.imag]
    raise ValueError(kind)


def fmt(v):
    return repr(float(v))


def write_case(path, name, notes, buses, lines, balance=None, certify=None):
    out = ["[meta]", f'name = "{name}"', "base_mva = 100.0"]
    out += [f'notes = """{notes.strip()}"""', ""]
    out += ["[options]", "scaling = 1.0"]
    if balance is not None:
        out.append(f"balance_bus = {balance}")
    out.append("")
    for bid, kind, params in buses:
        out += ["[[buses]]", f"id = {bid}", f'kind = "{kind}"']
        if params:
            body = ", ".join(f"{k} = {fmt(v)}" for k, v in sorted(params.items()))
            out.append(f"params = {{ {body} }}")
        out.append("")
    for f, t, r, x, b, tap in lines:
        out += ["[[lines]]", f"from = {f}", f"to = {t}", f"r = {fmt(r)}", f"x = {fmt(x)}", f"b = {fmt(b)}"]
        if tap != 1.0:
            out.append(f"tap = {fmt(tap)}")
        out.append("")
    if certify:
        out.append("[certify]")
        for k in ("levels", "resolution", "epsilon"):
            if k in certify:
                out.append(f"{k} = {certify[k]}")
        if "box_spec" in certify:
            out.append("box_spec = { " + ", ".join(f"{k} = {fmt(v)}" for k, v in certify["box_spec"].items()) + " }")
        if "anchors" in certify:
            rows = ",\n".join("  [" + ", ".join(fmt(v) for v in a) + "]" for a in certify["anchors"])
            out.append(f"anchors = [\n{rows},\n]")
        out.append("")
    with open(path, "w") as fh:
        fh.write("\n".join(out))


def load_params(p, q, vm, shunt=0j):
    """Constant-impedance load drawing p + jq at voltage vm, plus a bus shunt admittance."""
    return {"zp": p / vm**2 + shunt.real, "zq": q / vm**2 - shunt.imag}


# ---------------------------------------------------------------- 9-bus

SG9 = dict(m=inertia(23.64), d=1.0, t_d0=8.96, xd=0.146, xd_prime=0.0608, xq=0.0969)
VSG9 = dict(m=20.0, d=0.5, k_q=0.01, k_i=0.5, t=5.0)
CD9 = dict(tau1=0.3, tau2=6.0, d1=0.01, d2=0.01)
LOADS9 = {5: (0.9, 0.3), 7: (1.0, 0.35), 9: (1.25, 0.5)}
# stacked states (SG: delta, omega, E'q; VSG: theta, omega, V; CD: theta, V)
NOMINAL9 = [0.26, 0.0, 1.02, 0.17, 0.0, 1.00, 0.08, 1.00]
SECOND9 = [-0.117, 0.0, 1.019, 5.702, 0.0, 0.994, 0.054, 0.993]
# sample padding: the certificates only hold close to the operating points
SMALL_BOX = dict(angle=0.025, frequency=0.0025, magnitude_rel=0.005, other_rel=0.01, input_rel=0.01, input_floor=0.5)


def nine(ppc, out, vsg=VSG9, name="ieee9-modified", path="ieee9.toml", anchors=(NOMINAL9, SECOND9), extra=""):
    lines = branches(ppc)
    ids = list(range(1, 10))
    y = admittance(ids, lines)
    for b, (p, q) in LOADS9.items():
        y[b - 1, b - 1] += complex(p, -q)
    d1, _, eq, th2, _, v2, th3, v3 = NOMINAL9
    sg = SG9
    known = {1: v2 * np.exp(1j * th2), 2: v3 * np.exp(1j * th3)}
    unk = [0, 3, 4, 5, 6, 7, 8]
    # SG current is affine in its terminal voltage; solve the linear network for the free voltages

    def residual(z):
        v = np.zeros(9, complex)
        for k, val in known.items():
            v[k] = val
        for k, b in enumerate(unk):
            v[b] = z[2 * k] + 1j * z[2 * k + 1]
        cur = y @ v
        vl = rot(d1, v[0])
        il = complex(-vl.imag / sg["xq"], (vl.real - eq) / sg["xd_prime"])
        ig = il * complex(math.cos(d1), math.sin(d1))
        r = [cur[0].real - ig.real, cur[0].imag - ig.imag]
        for b in unk[1:]:
            r += [cur[b].real, cur[b].imag]
        return np.array(r), v

    r0, _ = residual(np.zeros(14))
    jac = np.column_stack([residual(np.eye(14)[k])[0] - r0 for k in range(14)])
    z = np.linalg.solve(jac, -r0)
    _, v = residual(z)
    y_net = admittance(ids, lines)
    cur = y_net @ v
    buses = []
    p_sg, x_sg = calibrate("SG3", sg, v[0], cur[0])
    assert abs(x_sg[0] - d1) < 1e-9 and abs(x_sg[2] - eq) < 1e-9
    buses.append((1, "SG3", p_sg))
    buses.append((2, "VSG", calibrate("VSG", vsg, v[1], cur[1])[0]))
    buses.append((3, "CD", calibrate("CD", CD9, v[2], cur[2])[0]))
    for b in range(4, 10):
        if b in LOADS9:
            p, q = LOADS9[b]
            buses.append((b, "ZIP", {"zp": p, "zq": q}))
        else:
            buses.append((b, "IntermediateNode", {}))
    notes = """
Modified 9-bus system: synchronous generator on bus 1, virtual synchronous
generator on bus 2, droop-controlled inverter on bus 3. Loads on buses 5, 7, 9
are constant impedances sized at 1 p.u. voltage. Network data from MATPOWER
case9. Generator constants: xd 0.146, x'd 0.0608, xq 0.0969, T'd0 8.96 s,
H 23.64 s (Anderson and Fouad, 100 MVA base); damping 1.0 chosen here. Device
references are calibrated so that the first anchor is an exact equilibrium.
""" + extra
    write_case(
        os.path.join(out, path),
        name,
        notes,
        buses,
        lines,
        certify={"levels": 3, "resolution": 5, "epsilon": 1e-3, "box_spec": SMALL_BOX, "anchors": list(anchors)},
    )


# ---------------------------------------------------------------- power-flow cases


def run_pf(ppc):
    from pypower.api import ppoption, runpf

    res, ok = runpf(ppc, ppoption(VERBOSE=0, OUT_ALL=0, PF_TOL=1e-12))
    if not ok:
        raise SystemExit("power flow failed")
    return res


def pf_case(res, layout, device_params, path, name, notes, balance=None):
    base = res["baseMVA"]
    ids = [int(b) for b in res["bus"][:, 0]]
    lines = branches(res)
    vm, va = res["bus"][:, 7], np.radians(res["bus"][:, 8])
    v = vm * np.exp(1j * va)
    y = admittance(ids, lines)
    shunt = (res["bus"][:, 4] + 1j * res["bus"][:, 5]) / base
    buses = []
    anchor = []
    for k, b in enumerate(ids):
        if b in layout:
            kind = layout[b]
            # device supplies the network, any local load and the bus shunt
            cur = (y @ v)[k] + shunt[k].conjugate() * v[k]
            params, x = calibrate(kind, device_params[b], v[k], cur)
            buses.append((b, kind, params))
            anchor += x
            continue
        pl, ql = res["bus"][k, 2] / base, res["bus"][k, 3] / base
        if pl != 0 or ql != 0 or shunt[k] != 0:
            buses.append((b, "ZIP", load_params(pl, ql, vm[k], shunt[k])))
        else:
            buses.append((b, "IntermediateNode", {}))
        gen = res["gen"][res["gen"][:, 0] == b]
        if len(gen) and np.any(np.abs(gen[:, 1:3]) > 1e-9):
            raise SystemExit(f"bus {b} has generation but no device")
    write_case(path, name, notes, buses, lines, balance=balance, certify={"anchors": [anchor]})
    return anchor


# 100 MVA base machine constants (Pai): bus -> (H, xd, x'd, xq, T'd0)
PAI39 = {
    30: (42.0, 0.1, 0.031, 0.069, 10.2),
    32: (35.8, 0.2495, 0.0531, 0.237, 5.7),
    38: (34.5, 0.2106, 0.057, 0.205, 4.79),
}


def sg_params(h, xd, xdp, xq, td0):
    return dict(m=inertia(h), d=1.0, t_d0=td0, xd=xd, xd_prime=xdp, xq=xq)


def droop(tau1, tau2, d1=0.01, d2=0.01):
    return dict(tau1=tau1, tau2=tau2, d1=d1, d2=d2)


def pll(ki, kp, tau1, tau2, d1, d2):
    return dict(ki=ki, kp=kp, tau1=tau1, tau2=tau2, d1=d1, d2=d2)


def thirtynine(case39, out):
    res = run_pf(case39())
    layout = {
        30: "SG3", 32: "SG3", 38: "SG3",
        31: "CD", 34: "CD", 36: "CD",
        16: "QD", 35: "QD", 37: "QD",
        33: "PLL", 3: "PLL",
        39: "VSG", 20: "VSG",
    }
    params = {
        30: sg_params(*PAI39[30]), 32: sg_params(*PAI39[32]), 38: sg_params(*PAI39[38]),
        31: droop(0.3, 8.1), 34: droop(0.25, 9.0), 36: droop(0.35, 8.4),
        16: droop(0.3, 8.0), 35: droop(0.2, 7.5), 37: droop(0.4, 6.5),
        33: pll(590, 34, 1.0, 1.0, 0.5, 0.5), 3: pll(592, 35, 1.2, 1.2, 0.4, 0.4),
        39: dict(m=20.0, d=1.5, k_q=0.01, k_i=0.5, t=5.0),
        20: dict(m=50.0, d=2.5, k_q=0.01, k_i=0.8, t=7.0),
    }
    notes = """
Modified 39-bus system. Generators on buses 30, 32, 38 are synchronous machines
(Pai constants, damping 1.0); buses 31, 34, 36 host droop inverters (CD1-3),
buses 16, 35, 37 quadratic droop inverters (QD1-3), buses 33 and 3 PLL-based
inverters (PLL1-2), buses 39 and 20 virtual synchronous generators (VSG1-2).
Bus 38 is the balance bus. Remaining loads are constant impedances. Device
references are calibrated to the MATPOWER case39 power flow; loads on device
buses are absorbed into the device injection.
"""
    pf_case(res, layout, params, os.path.join(out, "ieee39.toml"), "ieee39-modified", notes, balance=38)


def one_eighteen(case118, out):
    ppc = case118()
    res = run_pf(ppc)
    gens = [int(g) for g in res["gen"][:, 0]]
    layout, params = {}, {}
    rng = np.random.default_rng(118)
    for k, b in enumerate(gens):
        if k % 2 == 0:
            layout[b] = "SG3"
            # generic per-machine constants scaled with the dispatch
            h = 3.0 + 0.05 * abs(res["gen"][k, 1])
            params[b] = sg_params(h, 0.8, 0.25, 0.6, 6.0)
        else:
            layout[b] = "CD" if (k // 2) % 2 == 0 else "QD"
            params[b] = droop(round(rng.uniform(0.2, 0.4), 3), round(rng.uniform(6.0, 9.0), 2))
    loads = [int(b) for b, pd in zip(res["bus"][:, 0], res["bus"][:, 2]) if pd > 0 and int(b) not in layout]
    for b in loads[::4]:
        layout[b] = "PLL"
        params[b] = pll(590.0, 34.0, 1.0, 1.0, 0.5, 0.5)
    notes = """
Modified 118-bus system: every other generator or condenser of MATPOWER case118
is replaced by a droop inverter (alternating CD and QD), every fourth load bus
hosts a PLL-based inverter, other loads are constant impedances. Synchronous
machines use generic constants (xd 0.8, x'd 0.25, xq 0.6, T'd0 6 s, damping 1.0)
with inertia growing with dispatch. Device references are calibrated to the
power flow; loads on device buses are absorbed into the device injection.
"""
    pf_case(res, layout, params, os.path.join(out, "ieee118.toml"), "ieee118-modified", notes)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--pypower", default=None, help="directory containing the pypower package")
    ap.add_argument("--out", default=os.path.join(os.path.dirname(__file__), "..", "cases"))
    a = ap.parse_args()
    if a.pypower:
        sys.path.insert(0, a.pypower)
    from pypower.api import case9, case39, case118

    os.makedirs(a.out, exist_ok=True)
    nine(case9(), a.out)
    nine(
        case9(),
        a.out,
        vsg=dict(VSG9, d=2.0),
        name="ieee9-vsg-damped",
        path="ieee9-vsg-damped.toml",
        anchors=(NOMINAL9,),
        extra="""VSG damping raised from 0.5 to 2.0; with 0.5 no block-diagonal storage exists
at the nominal point, so this variant is the one that admits a certificate.
Only the nominal point is used as anchor.
""",
    )
    thirtynine(case39, a.out)
    one_eighteen(case118, a.out)


if __name__ == "__main__":
    main()

"""Writes the bundled feeder files. Run from this directory: python3 generate.py"""

import json

KV69 = 12.66
BASE_VA = 1e6

# from, to, R ohm, X ohm, P kW, Q kvar at the receiving bus
BARAN_WU_69 = """
1 2 .0005 .0012 0 0
2 3 .0005 .0012 0 0
3 4 .0015 .0036 0 0
4 5 .0251 .0294 0 0
5 6 .3660 .1864 2.6 2.2
6 7 .3811 .1941 40.4 30
7 8 .0922 .0470 75 54
8 9 .0493 .0251 30 22
9 10 .8190 .2707 28 19
10 11 .1872 .0619 145 104
11 12 .7114 .2351 145 104
12 13 1.030 .340 8 5
13 14 1.044 .345 8 5.5
14 15 1.058 .3496 0 0
15 16 .1966 .065 45.5 30
16 17 .3744 .1238 60 35
17 18 .0047 .0016 60 35
18 19 .3276 .1083 0 0
19 20 .2106 .069 1 .6
20 21 .3416 .1129 114 81
21 22 .014 .0046 5 3.5
22 23 .1591 .0526 0 0
23 24 .3463 .1145 28 20
24 25 .7488 .2475 0 0
25 26 .3089 .1021 14 10
26 27 .1732 .0572 14 10
3 28 .0044 .0108 26 18.6
28 29 .064 .1565 26 18.6
29 30 .3978 .1315 0 0
30 31 .0702 .0232 0 0
31 32 .351 .116 0 0
32 33 .839 .2816 14 10
33 34 1.708 .5646 19.5 14
34 35 1.474 .4873 6 4
3 36 .0044 .0108 26 18.55
36 37 .064 .1565 26 18.55
37 38 .1053 .123 0 0
38 39 .0304 .0355 24 17
39 40 .0018 .0021 24 17
40 41 .7283 .8509 1.2 1
41 42 .31 .3623 0 0
42 43 .041 .0478 6 4.3
43 44 .0092 .0116 0 0
44 45 .1089 .1373 39.22 26.3
45 46 .0009 .0012 39.22 26.3
4 47 .0034 .0084 0 0
47 48 .0851 .2083 79 56.4
48 49 .2898 .7091 384.7 274.5
49 50 .0822 .2011 384.7 274.5
8 51 .0928 .0473 40.5 28.3
51 52 .3319 .1114 3.6 2.7
9 53 .174 .0886 4.35 3.5
53 54 .203 .1034 26.4 19
54 55 .2842 .1447 24 17.2
55 56 .2813 .1433 0 0
56 57 1.59 .5337 0 0
57 58 .7837 .263 0 0
58 59 .3042 .1006 100 72
59 60 .3861 .1172 0 0
60 61 .5075 .2585 1244 888
61 62 .0974 .0496 32 23
62 63 .145 .0738 0 0
63 64 .7105 .3619 227 162
64 65 1.041 .5302 59 42
11 66 .2012 .0611 18 13
66 67 .0047 .0014 18 13
12 68 .7394 .2444 28 20
68 69 .0047 .0016 28 20
"""

TAPS = [round(0.95 + 0.01 * k, 2) for k in range(11)]


def r6(v):
    return float(f"{v:.6g}")


def ieee69(dg_buses, dg_p, dg_q, svc_buses, svc_q, msc_buses, msc_b, vr_line, v_max, load_scale=1.0):
    zb = (KV69 * 1e3) ** 2 / BASE_VA
    buses = {1: {"id": 1, "v_min_pu": 0.9, "v_max_pu": v_max}}
    branches = []
    for line in BARAN_WU_69.strip().splitlines():
        f, t, r, x, p, q = line.split()
        f, t = int(f), int(t)
        br = {"from": f, "to": t, "r_pu": {"a": r6(float(r) / zb)}, "x_pu": {"a": r6(float(x) / zb)}, "i_max_pu": 5.0}
        if (f, t) == vr_line:
            br["vr"] = {"taps": TAPS}
        branches.append(br)
        b = {"id": t, "v_min_pu": 0.9, "v_max_pu": v_max}
        if float(p) > 0:
            b["load_p_pu"] = {"a": r6(load_scale * float(p) * 1e3 / BASE_VA)}
            b["load_q_pu"] = {"a": r6(load_scale * float(q) * 1e3 / BASE_VA)}
        buses[t] = b
    for k in dg_buses:
        buses[k]["dg"] = {"p_pu": {"a": dg_p}, "q_min_pu": -dg_q, "q_max_pu": dg_q}
    for k in svc_buses:
        buses[k]["svc"] = {"q_min_pu": -svc_q, "q_max_pu": svc_q}
    for k in msc_buses:
        buses[k]["msc"] = {"b_pu": msc_b}
    return {
        "base_power_va": BASE_VA,
        "base_voltage_v": KV69 * 1e3,
        "v_ref_pu": 1.0,
        "phases": ["a"],
        "pcc_bus": 1,
        "buses": [buses[k] for k in sorted(buses)],
        "branches": branches,
    }


def feeder14(seg_r, seg_x, load_p, pf_q, dg_p, dg_q, svc_q, msc_b, v_max, kv=10.0):
    """Synthetic 14-bus radial feeder: trunk 1-10, lateral 5-11-12, lateral 8-13-14."""
    zb = (kv * 1e3) ** 2 / BASE_VA
    edges = [(k, k + 1) for k in range(1, 10)] + [(5, 11), (11, 12), (8, 13), (13, 14)]
    buses = {1: {"id": 1, "v_min_pu": 0.9, "v_max_pu": v_max}}
    branches = []
    for n, (f, t) in enumerate(edges, start=1):
        br = {"from": f, "to": t, "r_pu": {"a": r6(seg_r / zb)}, "x_pu": {"a": r6(seg_x / zb)}, "i_max_pu": 5.0}
        if n == 6:
            br["vr"] = {"taps": TAPS}
        branches.append(br)
        buses[t] = {
            "id": t,
            "load_p_pu": {"a": r6(load_p)},
            "load_q_pu": {"a": r6(load_p * pf_q)},
            "v_min_pu": 0.9,
            "v_max_pu": v_max,
        }
    for k in range(5, 14):
        buses[k]["dg"] = {"p_pu": {"a": dg_p}, "q_min_pu": -dg_q, "q_max_pu": dg_q}
    buses[14]["svc"] = {"q_min_pu": -svc_q, "q_max_pu": svc_q}
    for k in (11, 12, 13, 14):
        buses[k]["msc"] = {"b_pu": msc_b}
    return {
        "base_power_va": BASE_VA,
        "base_voltage_v": kv * 1e3,
        "v_ref_pu": 1.0,
        "phases": ["a"],
        "pcc_bus": 1,
        "buses": [buses[k] for k in sorted(buses)],
        "branches": branches,
    }


# parent bus, new buses, phases
CHAINS_123 = [
    (1, range(2, 14), "abc"),
    (3, range(14, 17), "c"),
    (6, range(17, 31), "abc"),
    (9, range(31, 37), "abc"),
    (32, range(37, 41), "b"),
    (13, range(41, 58), "abc"),
    (57, range(58, 76), "abc"),
    (60, range(76, 81), "c"),
    (65, range(81, 91), "abc"),
    (70, range(91, 94), "abc"),
    (93, range(94, 98), "ab"),
    (86, range(98, 106), "abc"),
    (100, range(106, 111), "a"),
    (50, range(111, 119), "abc"),
    (116, range(119, 124), "abc"),
]
DG_123 = {7: "abc", 12: "abc", 19: "abc", 33: "abc", 43: "abc", 47: "abc", 61: "ab", 84: "abc", 98: "abc", 115: "abc"}
SVC_123 = {94: "ab", 68: "abc"}
MSC_123 = [4, 5, 12, 19, 43]
VR_123 = 58


def feeder123(seg_r, seg_x, load_p, pf_q, dg_p, dg_q, svc_q, msc_b, v_max, kv=4.16, dg_68=None):
    """Synthetic unbalanced 123-bus radial feeder; see CHAINS_123 for the layout."""
    zb = (kv * 1e3) ** 2 / BASE_VA
    buses = {1: {"id": 1, "phases": ["a", "b", "c"], "v_min_pu": 0.9, "v_max_pu": v_max}}
    branches = []
    for parent, chain, ph in CHAINS_123:
        prev = parent
        for k in chain:
            phases = list(ph)
            br = {
                "from": prev,
                "to": k,
                "r_pu": {p: r6(seg_r / zb) for p in phases},
                "x_pu": {p: r6(seg_x / zb) for p in phases},
                "i_max_pu": 5.0,
            }
            if k == VR_123:
                br["vr"] = {"taps": TAPS}
            branches.append(br)
            bus = {"id": k, "phases": phases, "v_min_pu": 0.9, "v_max_pu": v_max}
            # loads on two of every three buses, phase mix rotating with the bus id
            if k % 3 != 0:
                lp = {p: r6(load_p * (1.0 + 0.25 * ((k + i) % 3 - 1))) for i, p in enumerate(phases)}
                bus["load_p_pu"] = lp
                bus["load_q_pu"] = {p: r6(v * pf_q) for p, v in lp.items()}
            buses[k] = bus
            prev = k
    for k, ph in DG_123.items():
        buses[k]["dg"] = {"p_pu": {p: dg_p for p in ph}, "q_min_pu": -dg_q, "q_max_pu": dg_q}
    buses[68]["dg"] = {"p_pu": {"b": dg_68 if dg_68 is not None else 3 * dg_p}, "q_min_pu": -dg_q, "q_max_pu": dg_q}
    for k, ph in SVC_123.items():
        buses[k]["svc"] = {"phases": list(ph), "q_min_pu": -svc_q, "q_max_pu": svc_q}
    for k in MSC_123:
        buses[k]["msc"] = {"b_pu": msc_b}
    return {
        "base_power_va": BASE_VA,
        "base_voltage_v": kv * 1e3,
        "v_ref_pu": 1.0,
        "phases": ["a", "b", "c"],
        "pcc_bus": 1,
        "buses": [buses[k] for k in sorted(buses)],
        "branches": branches,
    }


# (hour, load_mult, pv_mult) knots; linear in between
RAMP_KNOTS = [
    (6.0, 0.55, 0.05),
    (8.0, 0.65, 0.40),
    (10.0, 0.75, 0.75),
    (11.0, 0.85, 0.72),
    (12.0, 0.88, 0.95),
    (13.0, 0.86, 1.00),
    (14.0, 0.80, 0.90),
]


def morning_ramp(path, step_min=15):
    with open(path, "w") as f:
        f.write("time,load_mult,pv_mult\n")
        for m in range(6 * 60, 14 * 60 + 1, step_min):
            h = m / 60
            for (h0, l0, p0), (h1, l1, p1) in zip(RAMP_KNOTS, RAMP_KNOTS[1:]):
                if h0 <= h <= h1:
                    t = (h - h0) / (h1 - h0)
                    load, pv = l0 + t * (l1 - l0), p0 + t * (p1 - p0)
                    break
            f.write(f"{m // 60:02d}:{m % 60:02d},{load:.4f},{pv:.4f}\n")


def dump(name, net):
    with open(name, "w") as f:
        json.dump(net, f, indent=1)
        f.write("\n")


if __name__ == "__main__":
    import os
    import sys

    os.chdir(os.path.dirname(os.path.abspath(__file__)))
    cfg = json.loads(sys.argv[1]) if len(sys.argv) > 1 else {}
    only = cfg.get("only")
    if only in (None, "f69"):
        dump(
            cfg.get("out", "ieee69.json"),
            ieee69(
                dg_buses=[19, 20, 26, 22, 54, 69, 34, 38],
                dg_p=cfg.get("dg_p", 0.3),
                dg_q=cfg.get("dg_q", 0.01),
                svc_buses=cfg.get("svc", [65]),
                svc_q=cfg.get("svc_q", 0.3),
                msc_buses=cfg.get("msc", [11, 21, 50, 61, 64]),
                msc_b=cfg.get("msc_b", 1.0),
                vr_line=(10, 11),
                v_max=1.042,
                load_scale=cfg.get("load_scale", 0.5),
            ),
        )
    c14 = cfg.get("f14", {})
    if only in (None, "f14"):
        dump(
            c14.get("out", "feeder14.json"),
            feeder14(
                seg_r=c14.get("seg_r", 0.6),
                seg_x=c14.get("seg_x", 0.8),
                load_p=c14.get("load_p", 0.2),
                pf_q=0.4,
                dg_p=c14.get("dg_p", 0.3),
                dg_q=c14.get("dg_q", 0.06),
                svc_q=c14.get("svc_q", 0.5),
                msc_b=c14.get("msc_b", 0.2),
                v_max=1.042,
            ),
        )
    c123 = cfg.get("f123", {})
    if only in (None, "f123"):
        dump(
            c123.get("out", "ieee123.json"),
            feeder123(
                seg_r=c123.get("seg_r", 0.05),
                seg_x=c123.get("seg_x", 0.1),
                load_p=c123.get("load_p", 0.01),
                pf_q=0.5,
                dg_p=c123.get("dg_p", 0.15),
                dg_q=c123.get("dg_q", 0.001),
                svc_q=c123.get("svc_q", 0.02),
                msc_b=c123.get("msc_b", 0.05),
                v_max=1.042,
                dg_68=c123.get("dg_68", 1.0),
            ),
        )
    if only in (None, "profile"):
        morning_ramp(cfg.get("profile_out", "morning_ramp.csv"))

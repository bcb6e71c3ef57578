"""Regenerate the bundled feeder documents in src/pmufault/data.

feeder34: the topology, line lengths and conductor data of the IEEE 34-node
test feeder on a single 24.9 kV base.  The two voltage regulators are merged
into the adjacent line sections and the 24.9/4.16 kV transformer is replaced
by a short line; spot and distributed loads are lumped at the receiving
nodes and three small DGs are added.

feeder123: a procedurally generated 123-node radial feeder at 4.16 kV with
three- and single-phase laterals and eight micro-PMUs on the trunk.
"""
import json
from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parents[1] / "src" / "pmufault" / "data"
FT_PER_MILE = 5280.0
M_PER_FT = 0.3048

# ohm/mile phase impedance matrices (upper triangles are mirrored)
CONFIGS = {
    "300": ([[1.3368, 0.2101, 0.2130], [0.2101, 1.3238, 0.2066], [0.2130, 0.2066, 1.3294]],
            [[1.3343, 0.5779, 0.5015], [0.5779, 1.3569, 0.4591], [0.5015, 0.4591, 1.3471]]),
    "301": ([[1.9300, 0.2327, 0.2359], [0.2327, 1.9157, 0.2288], [0.2359, 0.2288, 1.9219]],
            [[1.4115, 0.6442, 0.5691], [0.6442, 1.4281, 0.5238], [0.5691, 0.5238, 1.4209]]),
    "302": 2.7995 + 1.4855j,
    "303": 2.7995 + 1.4855j,
    "304": 1.9217 + 1.4212j,
}


def branch(f, t, feet, config, phases="abc"):
    c = CONFIGS[config]
    r, x = np.zeros((3, 3)), np.zeros((3, 3))
    miles = feet / FT_PER_MILE
    if isinstance(c, complex):
        i = "abc".index(phases)
        r[i, i], x[i, i] = c.real * miles, c.imag * miles
    else:
        keep = np.array([p in phases for p in "abc"])
        m = np.outer(keep, keep)
        r, x = np.array(c[0]) * miles * m, np.array(c[1]) * miles * m
    return {"id": f"{f}-{t}", "from": f, "to": t, "length_m": round(feet * M_PER_FT, 3),
            "r_ohm": np.round(r, 8).tolist(), "x_ohm": np.round(x, 8).tolist()}


def feeder34():
    lines = [
        ("800", "802", 2580, "300", "abc"), ("802", "806", 1730, "300", "abc"),
        ("806", "808", 32230, "300", "abc"), ("808", "810", 5804, "303", "b"),
        ("808", "812", 37500, "300", "abc"), ("812", "814", 29730, "300", "abc"),
        ("814", "816", 320, "301", "abc"), ("816", "818", 1710, "302", "a"),
        ("818", "820", 48150, "302", "a"), ("820", "822", 13740, "302", "a"),
        ("816", "824", 10210, "301", "abc"), ("824", "826", 3030, "303", "b"),
        ("824", "828", 840, "301", "abc"), ("828", "830", 20440, "301", "abc"),
        ("830", "854", 520, "301", "abc"), ("854", "856", 23330, "303", "b"),
        ("854", "832", 36840, "301", "abc"), ("832", "858", 4900, "301", "abc"),
        ("832", "888", 500, "300", "abc"), ("888", "890", 10560, "300", "abc"),
        ("858", "864", 1620, "302", "a"), ("858", "834", 5830, "301", "abc"),
        ("834", "842", 280, "301", "abc"), ("842", "844", 1350, "301", "abc"),
        ("844", "846", 3640, "301", "abc"), ("846", "848", 530, "301", "abc"),
        ("834", "860", 2020, "301", "abc"), ("860", "836", 2680, "301", "abc"),
        ("836", "840", 860, "301", "abc"), ("836", "862", 280, "301", "abc"),
        ("862", "838", 4860, "304", "b"),
    ]
    phases = {"800": "abc"}
    for f, t, _, _, ph in lines:
        phases[t] = ph
    # kW / kvar per phase (a, b, c), spot plus lumped distributed loads
    loads = {
        "806": ([0, 30, 25], [0, 15, 14]), "810": ([0, 16, 0], [0, 8, 0]),
        "820": ([34, 0, 0], [17, 0, 0]), "822": ([135, 0, 0], [70, 0, 0]),
        "824": ([0, 5, 0], [0, 2, 0]), "826": ([0, 40, 0], [0, 20, 0]),
        "828": ([0, 0, 4], [0, 0, 2]), "830": ([17, 10, 25], [8, 5, 10]),
        "856": ([0, 4, 0], [0, 2, 0]), "858": ([7, 2, 6], [3, 1, 3]),
        "864": ([2, 0, 0], [1, 0, 0]), "834": ([4, 15, 13], [2, 8, 7]),
        "860": ([36, 40, 130], [24, 26, 71]), "836": ([30, 10, 42], [15, 6, 22]),
        "840": ([27, 31, 9], [16, 18, 7]), "838": ([0, 28, 0], [0, 14, 0]),
        "844": ([144, 135, 135], [110, 105, 105]), "846": ([0, 25, 20], [0, 12, 11]),
        "848": ([20, 43, 20], [16, 27, 16]), "890": ([150, 150, 150], [75, 75, 75]),
    }
    dgs = {"848": ([60, 60, 60], [0, 0, 0]), "822": ([40, 0, 0], [0, 0, 0]), "890": ([50, 50, 50], [10, 10, 10])}
    pmus = {"800": ["800-802"], "812": ["808-812", "812-814"], "828": ["824-828", "828-830"],
            "832": ["854-832", "832-858", "832-888"], "840": ["836-840"]}
    return document("feeder34", 24.9, 2.5, 1.05, "800", phases, [branch(*l) for l in lines], loads, dgs, pmus)


def document(name, kv, mva, v_slack, slack, phases, branches, loads, dgs, pmus):
    def inj(d):
        return [{"node": n, "p_w": [1e3 * v for v in p], "q_var": [1e3 * v for v in q]} for n, (p, q) in d.items()]
    return {
        "name": name, "base": {"kv_ll": kv, "mva": mva}, "slack": slack, "slack_voltage_pu": v_slack,
        "nodes": [{"id": n, "phases": ph} for n, ph in phases.items()],
        "branches": branches, "loads": inj(loads), "dgs": inj(dgs),
        "pmus": [{"node": n, "branches": b} for n, b in pmus.items()],
    }


def feeder123(seed=123):
    rng = np.random.default_rng(seed)
    CONFIGS["601"] = ([[0.3465, 0.1560, 0.1580], [0.1560, 0.3375, 0.1535], [0.1580, 0.1535, 0.3414]],
                      [[1.0179, 0.5017, 0.4236], [0.5017, 1.0478, 0.3849], [0.4236, 0.3849, 1.0348]])
    CONFIGS["605"] = 1.3292 + 1.3475j
    n_trunk = 33
    trunk = ["1"] + [str(i) for i in range(2, n_trunk + 1)]
    phases = {"1": "abc"}
    lines, loads, dgs = [], {}, {}
    for f, t in zip(trunk, trunk[1:]):
        phases[t] = "abc"
        lines.append((f, t, float(rng.uniform(300, 900)), "601", "abc"))
    next_id = n_trunk + 1
    pmu_nodes = [trunk[i] for i in (0, 4, 8, 12, 16, 20, 24, 28, 32)]
    # laterals hang off non-PMU trunk nodes until the node count reaches 123
    candidates = [n for n in trunk[1:] if n not in pmu_nodes]
    while next_id <= 123:
        at = candidates[int(rng.integers(len(candidates)))]
        three = rng.random() < 0.35
        ph = "abc" if three else "abc"[int(rng.integers(3))]
        depth = int(rng.integers(1, 5))
        prev = at
        for _ in range(depth):
            if next_id > 123:
                break
            node = str(next_id)
            next_id += 1
            phases[node] = ph
            lines.append((prev, node, float(rng.uniform(150, 600)), "601" if three else "605", ph))
            prev = node
    for n, ph in phases.items():
        if n == "1":
            continue
        p = [float(rng.uniform(2, 8)) if c in ph else 0.0 for c in "abc"]
        loads[n] = (np.round(p, 1).tolist(), np.round([0.5 * v for v in p], 1).tolist())
    for n in ("7", "15", "23", "31"):
        dgs[n] = ([30.0, 30.0, 30.0], [0.0, 0.0, 0.0])
    pmus = {}
    ids = {(f, t): f"{f}-{t}" for f, t, *_ in lines}
    for n in pmu_nodes:
        inc = [ids[(f, t)] for f, t, *_ in lines if n in (f, t) and phases[f] == "abc" and phases[t] == "abc"
               and (f in trunk and t in trunk)]
        inc += [ids[(f, t)] for f, t, *_ in lines if f == n and t not in trunk]
        pmus[n] = inc
    return document("feeder123", 4.16, 5.0, 1.0, "1", phases, [branch(*l) for l in lines], loads, dgs, pmus)


if __name__ == "__main__":
    OUT.mkdir(parents=True, exist_ok=True)
    for doc in (feeder34(), feeder123()):
        (OUT / f"{doc['name']}.json").write_text(json.dumps(doc, indent=1) + "\n")
        print("wrote", doc["name"], len(doc["nodes"]), "nodes")

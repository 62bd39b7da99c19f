#!/usr/bin/env python3
"""Independent oracle for the golden fixtures.

Rebuilds canonical JSON, SHA-256 addressing, the synthetic dataset, the
standardisation, the fixed-order exp and gradient descent from first
principles (no Rust code involved) and writes tests/fixtures/golden.json.

    python3 tests/oracles/golden.py > tests/fixtures/golden.json
"""

import hashlib
import json
import math
import struct
import sys

MASK = (1 << 64) - 1


# ---------------------------------------------------------------- canonical

def fmt_float(x):
    """Shortest round-trip digits, laid out the way serde_json prints them."""
    if x == 0.0:
        return "-0.0" if math.copysign(1.0, x) < 0 else "0.0"
    sign = "-" if x < 0 else ""
    r = repr(abs(x))
    if "e" in r:
        mant, exp = r.split("e")
        exp = int(exp)
    else:
        mant, exp = r, 0
    if "." in mant:
        ip, fp = mant.split(".")
    else:
        ip, fp = mant, ""
    digits = (ip + fp).lstrip("0")
    point = len(ip) + exp  # decimal point position relative to ip+fp
    lead = len(ip + fp) - len((ip + fp).lstrip("0"))
    point -= lead
    digits = digits.rstrip("0") or "0"
    n = len(digits)
    k = point - n  # value = digits * 10^k
    kk = point
    if 0 <= k and kk <= 16:
        out = digits + "0" * k + ".0"
    elif 0 < kk <= 16:
        out = digits[:kk] + "." + digits[kk:]
    elif -5 < kk <= 0:
        out = "0." + "0" * (-kk) + digits
    elif n == 1:
        out = digits + "e" + exponent(kk - 1)
    else:
        out = digits[0] + "." + digits[1:] + "e" + exponent(kk - 1)
    return sign + out


def exponent(e):
    return ("+" if e > 0 else "") + str(e)


def fmt_str(s):
    out = ['"']
    for ch in s:
        c = ord(ch)
        if ch == '"':
            out.append('\\"')
        elif ch == "\\":
            out.append("\\\\")
        elif ch == "\n":
            out.append("\\n")
        elif ch == "\r":
            out.append("\\r")
        elif ch == "\t":
            out.append("\\t")
        elif ch == "\b":
            out.append("\\b")
        elif ch == "\f":
            out.append("\\f")
        elif c < 0x20:
            out.append("\\u%04x" % c)
        else:
            out.append(ch)
    out.append('"')
    return "".join(out)


def canon(v):
    if v is None:
        return "null"
    if v is True:
        return "true"
    if v is False:
        return "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return fmt_float(v)
    if isinstance(v, str):
        return fmt_str(v)
    if isinstance(v, list):
        return "[" + ",".join(canon(x) for x in v) + "]"
    if isinstance(v, dict):
        keys = sorted(v, key=lambda k: k.encode("utf-8"))
        return "{" + ",".join(fmt_str(k) + ":" + canon(v[k]) for k in keys) + "}"
    raise TypeError(type(v))


def canon_bytes(v):
    return canon(v).encode("utf-8")


def sha(b):
    return hashlib.sha256(b).hexdigest()


# ---------------------------------------------------------------- numerics

LOG2_E = 1.4426950408889634
LN2_HI = 6.93147180369123816490e-01
LN2_LO = 1.90821492927058770002e-10


def exp_fixed(x):
    k = math.floor(x * LOG2_E + 0.5)
    r = (x - k * LN2_HI) - k * LN2_LO
    s = 1.0
    for n in range(18, 0, -1):
        s = 1.0 + r * s / float(n)
    return s * struct.unpack("<d", struct.pack("<Q", (k + 1023) << 52))[0]


def sigmoid(z):
    z = max(-30.0, min(30.0, z))
    return 1.0 / (1.0 + exp_fixed(-z))


def score(w, b, x):
    acc = 0.0
    for j in range(4):
        acc += w[j] * x[j]
    return acc + b


def descend(w, b, rows, lr):
    gw = [0.0] * 4
    gb = 0.0
    for x, y in rows:
        err = sigmoid(score(w, b, x)) - float(y)
        for j in range(4):
            gw[j] += err * x[j]
        gb += err
    m = float(len(rows))
    gw = [g / m for g in gw]
    gb = gb / m
    return [w[j] - lr * gw[j] for j in range(4)], b - lr * gb


def bits(x):
    return "%016x" % struct.unpack("<Q", struct.pack("<d", x))[0]


# ---------------------------------------------------------------- workload

CENTRES = [1.0, 0.5, -0.75, 0.25]
NOISE = 0.9


class SplitMix64:
    def __init__(self, seed):
        self.state = seed & MASK

    def next_u64(self):
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
        return z ^ (z >> 31)

    def next_unit(self):
        return float(self.next_u64() >> 11) * (1.0 / 9007199254740992.0)


def generate(seed, n):
    rng = SplitMix64(seed)
    rows = []
    for _ in range(n):
        label = rng.next_u64() >> 63
        sign = 1.0 if label == 1 else -1.0
        feats = [sign * CENTRES[j] + (2.0 * rng.next_unit() - 1.0) * NOISE for j in range(4)]
        rows.append((feats, label))
    return rows


def dataset_json(seed, rows):
    return {"rows": [{"features": f, "label": y} for f, y in rows], "seed": seed}


def column_stats(col):
    n = float(len(col))
    mean = 0.0
    for v in col:
        mean += v
    mean /= n
    var = 0.0
    for v in col:
        var += (v - mean) * (v - mean)
    var /= n
    return {"max": max(col), "mean": mean, "min": min(col), "std": math.sqrt(var)}


def stats(rows):
    return [column_stats([f[j] for f, _ in rows]) for j in range(4)]


def standardize(rows):
    st = stats(rows)
    out = []
    for f, y in rows:
        g = [(f[j] - st[j]["mean"]) / st[j]["std"] if st[j]["std"] > 0.0 else f[j] for j in range(4)]
        out.append((g, y))
    return out


def train(rows, lr, until, w=None, b=0.0, done=0):
    w = list(w) if w else [0.0] * 4
    train_rows = rows[: len(rows) * 4 // 5]
    while done < until:
        w, b = descend(w, b, train_rows, lr)
        done += 1
    return w, b, done


def evaluate(rows, w, b):
    test = rows[len(rows) * 4 // 5:]
    correct = sum(1 for f, y in test if (1 if sigmoid(score(w, b, f)) >= 0.5 else 0) == y)
    n = len(test)
    return {"accuracy": correct / n if n else 0.0, "correct": correct, "n_test": n}


# ---------------------------------------------------------------- fixtures

def train_action():
    return {
        "effects": [{"produces": "model"}],
        "id": "a3",
        "inputs": {"dataset": {"symbolic": "@node:a2/output:dataset_std"}},
        "metadata": {
            "environment_id": "local",
            "logical_timestamp": 6,
            "planner_config": {"planner": "golden"},
            "seeds": {"seed": 42},
        },
        "parameters": {"iterations": 200, "learning_rate": 0.1, "seed": 42},
        "preconditions": [{"artifact_exists": "dataset_std"}],
        "type": "train",
    }


def awkward_action():
    return {
        "effects": [],
        "id": "a0",
        "inputs": {"blob": {"inline": {"z": [1, -0.0, 2.5], "é": True}}},
        "metadata": {
            "environment_id": "",
            "logical_timestamp": 0,
            "planner_config": {},
            "seeds": {},
        },
        "parameters": {
            "big": 1e16,
            "note": "tab\tquote\"back\\slash\u0001\u007fé\U0001f600",
            "small": 1e-7,
            "third": 0.1 + 0.2,
        },
        "preconditions": [{"param_equals": ["note", "x"]}, {"artifact_absent": "model"}],
        "type": "analyze",
    }


def environment(engine_version):
    names = ["analyze", "evaluate", "load_data", "preprocess", "train"]
    return {
        "adapter_versions": {n: "1.0.0" for n in names},
        "engine_version": engine_version,
        "environment_id": "local",
        "seed_policy": {"prng": "splitmix64", "source": "action.metadata.seeds"},
    }


TABLE = [
    ("ScriptBased", 1.0, 0.0, 1.0, 0.0),
    ("NaiveLAM", 0.0, 0.0, 1.0, 1.0),
    ("RLAMConstrained", 1.0, 1.0, 1.0, 0.0),
]


def main():
    seed, n_rows, lr, iters = 42, 200, 0.1, 200
    raw = generate(seed, n_rows)
    std_rows = standardize(raw)
    w, b, _ = train(std_rows, lr, iters)
    cw, cb, cdone = train(std_rows, lr, iters // 2)
    rw, rb, _ = train(std_rows, lr, iters, cw, cb, cdone)
    assert (rw, rb) == (w, b), "resumed training diverged"
    report = evaluate(std_rows, w, b)

    artifacts = {
        "dataset": canon_bytes(dataset_json(seed, raw)),
        "stats": canon_bytes({"features": stats(raw), "n_rows": n_rows}),
        "dataset_std": canon_bytes(dataset_json(seed, std_rows)),
        "checkpoint": canon_bytes({"bias": cb, "completed_iterations": cdone, "weights": cw}),
        "model": canon_bytes({"bias": b, "iterations": iters, "learning_rate": lr, "weights": w}),
        "report": canon_bytes(report),
    }
    report_doc = {
        "rows": [
            {"failure": f, "pipeline": p, "replay": r, "trace": t, "variance": v}
            for p, r, t, f, v in TABLE
        ],
        "table": "execution_correctness",
    }
    golden = {
        "actions": {
            "train": canon(train_action()),
            "awkward": canon(awkward_action()),
        },
        "environment": {
            "engine_version": "0.1.0",
            "bytes": canon(environment("0.1.0")),
            "env_hash": sha(canon_bytes(environment("0.1.0"))),
        },
        "artifact_hashes": {k: sha(v) for k, v in artifacts.items()},
        "report": report,
        "model_bits": {"weights": [bits(x) for x in w], "bias": bits(b)},
        "checkpoint_bits": {"weights": [bits(x) for x in cw], "bias": bits(cb), "completed_iterations": cdone},
        "exp_fixed_bits": {repr(x): bits(exp_fixed(x)) for x in [-30.0, -2.5, -0.1, 0.0, 0.5, 1.0, 3.75, 30.0]},
        "splitmix64_seed42": ["%016x" % v for v in (lambda r: [r.next_u64() for _ in range(4)])(SplitMix64(42))],
        "metrics_report": canon(report_doc) + "\n",
    }
    json.dump(golden, sys.stdout, indent=2, sort_keys=True, ensure_ascii=True)
    sys.stdout.write("\n")


if __name__ == "__main__":
    main()

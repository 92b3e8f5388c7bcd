"""Regenerates the synthetic evolution fixtures and their expected traces.

The expected traces come from reference_sim.py, an independent NumPy
re-implementation of the selection loops. Run from this directory:

    python3 make_fixtures.py
"""
import json
import os
import struct

import numpy as np

from reference_sim import Run

SHAPES = {"layer.0.weight": (2, 3), "layer.1.bias": (4,)}
TASKS = ("t1", "t2", "t3")
FOUNDATIONS = ("alpha", "beta", "gamma")
HERE = os.path.dirname(os.path.abspath(__file__))
ROOT = os.path.dirname(HERE)


def mk(rng, scale, base=None):
    out = {}
    for name, shape in SHAPES.items():
        v = rng.normal(0, scale, size=int(np.prod(shape))).astype(np.float32)
        if base is not None:
            v = (base[name].astype(np.float64) + v).astype(np.float32)
        out[name] = v
    return out


def build(seed):
    rng = np.random.default_rng(seed)
    base = mk(rng, 1.0)
    found = [(n, mk(rng, 1.0, base)) for n in FOUNDATIONS]
    noise = [0.3, 0.5, 0.7][seed % 3]
    targets = []
    for j in range(3):
        t = {
            k: (found[j][1][k].astype(np.float64)
                + rng.normal(0, noise, found[j][1][k].shape)).astype(np.float32)
            for k in SHAPES
        }
        targets.append((t, float(rng.uniform(2.0, 4.0))))
    return base, found, targets


def write_safetensors(path, tensors):
    header = {}
    offset = 0
    blobs = []
    for name in sorted(tensors):
        data = tensors[name].astype("<f4").tobytes()
        header[name] = {
            "dtype": "F32",
            "shape": list(SHAPES[name]),
            "data_offsets": [offset, offset + len(data)],
        }
        offset += len(data)
        blobs.append(data)
    raw = json.dumps(header, separators=(",", ":"), sort_keys=True).encode()
    raw += b" " * ((8 - len(raw) % 8) % 8)
    with open(path, "wb") as f:
        f.write(struct.pack("<Q", len(raw)))
        f.write(raw)
        for b in blobs:
            f.write(b)


def trace(events):
    lines = []
    for e in events:
        kind = e[0]
        if kind == "generation_started":
            obj = {"event": kind, "generation": e[1]}
        elif kind == "foundation":
            obj = {"event": "foundation_added", "id": e[1]}
        elif kind == "evaluated":
            obj = {"event": kind, "id": e[1], "atp": e[2]}
        elif kind == "pair_selected":
            obj = {"event": kind, "generation": e[1], "parents": [e[2], e[3]]}
        elif kind == "merged":
            obj = {"event": kind, "generation": e[1], "child": e[2], "parents": [e[3], e[4]]}
        elif kind == "exploration_merge":
            obj = {"event": kind, "generation": e[1], "best": e[2], "partner": e[3], "kinship": e[4]}
        elif kind == "topk_updated":
            obj = {"event": kind, "generation": e[1], "ids": list(e[2])}
        elif kind == "stopped":
            obj = {"event": kind, "generation": e[1], "reason": e[2]}
        elif kind == "warning":
            obj = {"event": kind, "generation": e[1]}
        else:
            raise ValueError(kind)
        lines.append(json.dumps(obj, sort_keys=True))
    return "\n".join(lines) + "\n"


def config(strategy, k=3, stop="topk_stable", max_generations=10, seed=0):
    return {
        "base": {"id": "base", "path": "base.safetensors"},
        "foundations": [{"id": n, "path": f"{n}.safetensors"} for n in FOUNDATIONS],
        "strategy": {
            "kind": strategy,
            "k": k,
            "metric": "pcc",
            "merge": {"operator": "slerp", "params": {"t": 0.5}},
            "stop": {"kind": stop, "kinship_threshold": 0.9},
            "max_generations": max_generations,
            "rng_seed": seed,
        },
        "evaluator": {"kind": "synthetic", "tasks": []},
        "output_dir": f"out/{strategy}",
        "workers": 2,
    }


def emit(name, seed, runs):
    d = os.path.join(ROOT, name)
    os.makedirs(d, exist_ok=True)
    base, found, targets = build(seed)
    write_safetensors(os.path.join(d, "base.safetensors"), base)
    for n, m in found:
        write_safetensors(os.path.join(d, f"{n}.safetensors"), m)
    tasks = []
    for (t, sigma), tname in zip(targets, TASKS):
        write_safetensors(os.path.join(d, f"target-{tname}.safetensors"), t)
        tasks.append({"name": tname, "target": f"target-{tname}.safetensors", "sigma": sigma})
    for label, kw, cfg_kw in runs:
        r = Run(base, found, targets, 3, **kw).run()
        with open(os.path.join(d, f"expected-{label}.jsonl"), "w") as f:
            f.write(trace(r.events))
        cfg = config(**cfg_kw)
        cfg["evaluator"]["tasks"] = tasks
        cfg["output_dir"] = f"out/{label}"
        with open(os.path.join(d, f"run-{label}.json"), "w") as f:
            json.dump(cfg, f, indent=2)
            f.write("\n")


if __name__ == "__main__":
    emit("escape", 6914, [
        ("greedy", {"strategy": "topk_greedy"}, {"strategy": "topk_greedy"}),
        ("kinship", {"strategy": "topk_greedy_kinship"}, {"strategy": "topk_greedy_kinship"}),
        ("random",
         {"strategy": "random", "seed": 42, "max_gen": 4, "stop": "max_generations"},
         {"strategy": "random", "seed": 42, "max_generations": 4, "stop": "max_generations"}),
    ])
    emit("stall", 6406, [
        ("greedy", {"strategy": "topk_greedy"}, {"strategy": "topk_greedy"}),
    ])

"""NumPy re-implementation of the greedy, kinship-guided and random merge
loops, used to produce the expected event traces of the synthetic fixtures.

Models are dicts of name -> float32 array; merges are SLERP at t=0.5 and the
evaluator is the Gaussian synthetic score 100 * exp(-||theta - target||^2 / sigma^2).
"""
import itertools
import math

import numpy as np

M64 = (1 << 64) - 1


class SplitMix64:
    def __init__(self, seed):
        self.s = seed & M64

    def next(self):
        self.s = (self.s + 0x9E3779B97F4A7C15) & M64
        z = self.s
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & M64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & M64
        return z ^ (z >> 31)

    def below(self, n):
        return (self.next() * n) >> 64


def slerp_tensor(a, b, t):
    if t == 0.0:
        return a.copy()
    if t == 1.0:
        return b.copy()
    a64 = a.astype(np.float64)
    b64 = b.astype(np.float64)
    na = math.sqrt(float(np.dot(a64, a64)))
    nb = math.sqrt(float(np.dot(b64, b64)))
    if na == 0 or nb == 0:
        return ((1 - t) * a64 + t * b64).astype(np.float32)
    c = max(-1.0, min(1.0, float(np.dot(a64, b64)) / (na * nb)))
    om = math.acos(c)
    so = math.sin(om)
    if abs(so) < 1e-8:
        return ((1 - t) * a64 + t * b64).astype(np.float32)
    ca = math.sin((1 - t) * om) / so
    cb = math.sin(t * om) / so
    return (ca * a64 + cb * b64).astype(np.float32)


def slerp(a, b, t):
    return {k: slerp_tensor(a[k], b[k], t) for k in sorted(a)}


def flat(m):
    return np.concatenate([m[k].astype(np.float64) for k in sorted(m)])


def sim(d1, d2, metric):
    if metric == "pcc":
        if d1.min() == d1.max() or d2.min() == d2.max():
            raise ValueError("constant delta")
        x = d1 - d1.mean()
        y = d2 - d2.mean()
        return float(np.dot(x, y) / math.sqrt(np.dot(x, x) * np.dot(y, y)))
    if metric == "cs":
        return float(np.dot(d1, d2) / math.sqrt(np.dot(d1, d1) * np.dot(d2, d2)))
    return float(math.sqrt(np.dot(d1 - d2, d1 - d2)))


class Run:
    def __init__(self, base, foundations, tasks, k, metric="pcc", strategy="topk_greedy",
                 max_gen=10, seed=0, stop="topk_stable"):
        self.base = base
        self.tasks = tasks
        self.k = k
        self.metric = metric
        self.strategy = strategy
        self.max_gen = max_gen
        self.stop = stop
        self.rng = SplitMix64(seed)
        self.models = {}
        self.order = []
        self.atp = {}
        self.gen = {}
        self.parents = {}
        self.events = [("generation_started", 0)]
        for fid, fm in foundations:
            self.models[fid] = fm
            self.order.append(fid)
            self.gen[fid] = 0
            self.parents[fid] = []
            self.events.append(("foundation", fid))
        for fid, _ in foundations:
            self.evaluate(fid)

    def score(self, m):
        th = flat(self.models[m])
        out = []
        for target, sigma in self.tasks:
            dd = th - flat(target)
            s = 100.0 * math.exp(-float(np.dot(dd, dd)) / (sigma * sigma))
            out.append(min(100.0, max(0.0, s)))
        return out

    def evaluate(self, m):
        s = self.score(m)
        a = sum(s) / len(s)
        self.atp[m] = a
        self.events.append(("evaluated", m, a))

    def ranked(self):
        return sorted(self.order, key=lambda m: (-self.atp[m], m))

    def topk(self):
        return self.ranked()[: self.k]

    def delta(self, m):
        return flat(self.models[m]) - flat(self.base)

    def merge(self, g, ordinal, a, b):
        cid = f"model-{g}-{ordinal}"
        self.models[cid] = slerp(self.models[a], self.models[b], 0.5)
        self.order.append(cid)
        self.gen[cid] = g
        self.parents[cid] = [a, b]
        return cid

    def merge_pairs(self, g, pairs):
        kids = []
        for i, (a, b) in enumerate(pairs):
            self.events.append(("pair_selected", g, a, b))
            kids.append(self.merge(g, i + 1, a, b))
            self.events.append(("merged", g, kids[-1], a, b))
        return kids

    def explore(self, g, s_prev, last_gen, kids):
        best = s_prev[0]
        cands = sorted(c for c in last_gen if c not in s_prev)
        if not cands:
            self.events.append(("warning", g))
            return
        db = self.delta(best)
        scored = [(sim(db, self.delta(c), self.metric), c) for c in cands]
        if self.metric == "ed":
            value, partner = sorted(scored, key=lambda x: (-x[0], x[1]))[0]
        else:
            value, partner = sorted(scored, key=lambda x: (x[0], x[1]))[0]
        self.events.append(("exploration_merge", g, best, partner, value))
        kids.append(self.merge(g, len(kids) + 1, best, partner))
        self.events.append(("merged", g, kids[-1], best, partner))

    def run(self):
        g = 1
        self.events.append(("generation_started", 1))
        if self.strategy == "random":
            pairs = self.random_pairs(self.order)
        else:
            pairs = list(itertools.combinations(self.ranked(), 2))
        kids = self.merge_pairs(g, pairs)
        for c in kids:
            self.evaluate(c)
        s = self.topk()
        self.events.append(("topk_updated", g, tuple(s)))
        s_prev = None
        last_gen = kids
        while True:
            if self.stop != "max_generations" and s_prev is not None and s == s_prev:
                self.events.append(("stopped", g, "topk_stable"))
                break
            if g >= self.max_gen:
                self.events.append(("stopped", g, "max_generations"))
                break
            g += 1
            s_prev = s
            self.events.append(("generation_started", g))
            if self.strategy == "random":
                pairs = self.random_pairs(self.order)
            else:
                pairs = list(itertools.combinations(s, 2))
            kids = self.merge_pairs(g, pairs)
            if self.strategy == "topk_greedy_kinship":
                self.explore(g, s_prev, last_gen, kids)
            for c in kids:
                self.evaluate(c)
            last_gen = kids
            s = self.topk()
            self.events.append(("topk_updated", g, tuple(s)))
        return self

    def random_pairs(self, order):
        allp = list(itertools.combinations(order, 2))
        idx = list(range(len(allp)))
        sel = []
        for m in range(min(self.k, len(allp))):
            j = m + self.rng.below(len(allp) - m)
            idx[m], idx[j] = idx[j], idx[m]
            sel.append(allp[idx[m]])
        return sel

    def best(self):
        return max(self.atp.values())

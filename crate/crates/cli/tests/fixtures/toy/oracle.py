"""Brute-force reference for the toy fixture.

Recomputes the report bundle from the raw inputs with numpy/scipy in float64
and compares it against the files produced by `analogylab report`:

    python3 oracle.py input/ golden/
"""

import csv
import json
import math
import sys
from collections import OrderedDict, defaultdict

import numpy as np
from scipy import stats

TOL = 1e-6
TAUS = [0.01, 0.1, 1.0, 10.0, 100.0]
FLOOR = 1e-9
RULES = ["parallelogram", "cd", "nn"]


def load(inp):
    words, rows = [], []
    with open(f"{inp}/embeddings.txt") as f:
        for line in f:
            parts = line.split()
            words.append(parts[0])
            rows.append([float(x) for x in parts[1:]])
    m = np.array(rows, dtype=np.float64)
    m /= np.linalg.norm(m, axis=1, keepdims=True)
    vec = {w: m[i] for i, w in enumerate(words)}
    with open(f"{inp}/stems.csv") as f:
        stems = list(csv.DictReader(f))
    dists = OrderedDict()
    with open(f"{inp}/responses.csv") as f:
        for r in csv.DictReader(f):
            n = int(r["count"])
            if n >= 2:
                dists.setdefault((r["stem_id"], r["system"]), []).append((r["d_term"], n))
    ratings = defaultdict(list)
    with open(f"{inp}/ratings.csv") as f:
        for r in csv.DictReader(f):
            ratings[(r["stem_id"], r["d_term"])].append(float(r["rating"]))
    ratings = {k: sum(v) / len(v) for k, v in ratings.items()}
    freq = {}
    with open(f"{inp}/wordfreq.tsv") as f:
        next(f)
        for line in f:
            w, x = line.split("\t")
            freq[w] = float(x)
    return words, m, vec, stems, dists, ratings, freq


def unit(v):
    return v / np.linalg.norm(v)


def cos(a, b):
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


def query(rule, vec, a, b, c):
    if rule == "parallelogram":
        return unit(vec[b] - vec[a] + vec[c]), None
    if rule == "cd":
        return vec[c], None
    target = c if cos(vec[a], vec[b]) > cos(vec[a], vec[c]) else b
    return vec[target], target


def brute_rank(words, m, q, target, excluded):
    scores = m @ q
    order = sorted(
        (i for i, w in enumerate(words) if w not in excluded),
        key=lambda i: (-scores[i], i),
    )
    return 1 + [words[i] for i in order].index(target), len(order)


def close(x, y, what):
    if isinstance(x, float) or isinstance(y, float):
        assert abs(float(x) - float(y)) <= TOL, f"{what}: {x} vs {y}"
    else:
        assert x == y, f"{what}: {x!r} vs {y!r}"


def read_csv(path):
    with open(path) as f:
        lines = [l for l in f if not l.startswith("#")]
    return list(csv.DictReader(lines))


def num(s):
    return float(s) if s != "" else None


def main(inp, out):
    words, m, vec, stems, dists, ratings, freq = load(inp)
    stem_by_id = {s["stem_id"]: s for s in stems}

    # Ranks and CPR.
    got = [json.loads(l) for l in open(f"{out}/ranks.jsonl")][1:]
    expected, groups = [], defaultdict(list)
    for s in stems:
        a, b, c = s["a"], s["b"], s["c"]
        for rule in RULES:
            q, nn_target = query(rule, vec, a, b, c)
            for (sid, system), entries in dists.items():
                if sid != s["stem_id"]:
                    continue
                for excl in (False, True):
                    ex = {a, b, c} if excl else set()
                    for d, n in entries:
                        if d not in vec or d in ex:
                            continue
                        rank, v = brute_rank(words, m, q, d, ex)
                        rec = dict(stem_id=sid, system=system, rule=rule, d_term=d,
                                   count=n, rank=rank, v_effective=v, exclude_stem=excl)
                        expected.append((rec, 100.0 * rank / v, nn_target))
                        groups[(rule, system, excl)].append((100.0 * rank / v, n))
    key = lambda r: (r["stem_id"], r["rule"], r["system"], r["exclude_stem"], r["d_term"])
    got_by = {key(r): r for r in got}
    assert len(got_by) == len(expected), (len(got_by), len(expected))
    for rec, pct, nn_target in expected:
        g = got_by[key(rec)]
        for k, v in rec.items():
            close(g[k], v, f"ranks {key(rec)} {k}")
        close(g["percentile"], pct, "percentile")
        close(g.get("nn_target"), nn_target, "nn_target")

    for r in read_csv(f"{out}/cpr.csv"):
        items = groups[(r["rule"], r["system"], r["exclude_stem"] == "true")]
        total = sum(n for _, n in items)
        hit = sum(n for p, n in items if p <= float(r["tau"]))
        close(float(r["proportion"]), hit / total, f"cpr {r}")
        close(int(r["n_responses"]), total, "cpr n")

    # Centroids.
    def centroid(entries):
        used = [(d, n) for d, n in entries if d in vec]
        tot = sum(n for _, n in used)
        return sum(vec[d] * (n / tot) for d, n in used)

    for r in read_csv(f"{out}/centroids.csv"):
        h = centroid(dists[(r["stem_id"], "human")])
        l = centroid(dists[(r["stem_id"], r["system"])])
        close(float(r["convergence"]), cos(h, l), f"centroid {r['stem_id']}")

    # Predictors.
    def preds(s, d):
        a, b, c = (vec[s[k]] for k in "abc")
        if d not in vec:
            return "oov", None
        rel, dc = b - a, vec[d] - c
        if np.linalg.norm(dc) < 1e-10:
            return "degenerate", None
        cd = cos(c, vec[d])
        nn = cd if cos(a, b) > cos(a, c) else cos(b, vec[d])
        return "ok", [cos(rel, dc), cd, nn, math.log(freq.get(d, FLOOR))]

    for r in read_csv(f"{out}/predictors.csv"):
        status, p = preds(stem_by_id[r["stem_id"]], r["d_term"])
        close(r["status"], status, f"status {r['d_term']}")
        if p:
            for name, v in zip(["parallelogram", "cd", "nn", "log_freq"], p):
                close(float(r[name]), v, f"{name} {r['stem_id']} {r['d_term']}")
        close(num(r["rating"]), ratings.get((r["stem_id"], r["d_term"])), "rating")

    # Deltas.
    def side(s, entries):
        rated = [(ratings[(s["stem_id"], d)], n) for d, n in entries if (s["stem_id"], d) in ratings]
        wr = sum(x * n for x, n in rated) / sum(n for _, n in rated)
        ok = [(preds(s, d)[1], n) for d, n in entries if preds(s, d)[0] == "ok"]
        tot = sum(n for _, n in ok)
        return wr, [sum(p[i] * n for p, n in ok) / tot for i in range(4)]

    deltas = read_csv(f"{out}/deltas.csv")
    assert len(deltas) == len(stems)
    for r in deltas:
        s = stem_by_id[r["stem_id"]]
        hr, hp = side(s, dists[(s["stem_id"], "human")])
        lr, lp = side(s, dists[(s["stem_id"], r["system"])])
        close(float(r["rating_human"]), hr, "rating_human")
        close(float(r["rating_llm"]), lr, "rating_llm")
        close(float(r["delta_rating"]), lr - hr, "delta_rating")
        for i, name in enumerate(["parallelogram", "cd", "nn", "log_freq"]):
            close(float(r[f"delta_{name}"]), lp[i] - hp[i], f"delta_{name}")

    # Paired t-test.
    x = [float(r["rating_llm"]) for r in deltas]
    y = [float(r["rating_human"]) for r in deltas]
    t = stats.ttest_rel(x, y)
    res = json.load(open(f"{out}/ttests.json"))["tests"][0]["outcome"]["result"]
    close(res["t_stat"], float(t.statistic), "t")
    close(res["p_two_sided"], float(t.pvalue), "p")
    ci = t.confidence_interval(0.95)
    close(res["ci_low"], float(ci.low), "ci_low")
    close(res["ci_high"], float(ci.high), "ci_high")

    # Single-predictor custom regression: beta equals Pearson r.
    custom = f"{out}/regress_custom.json"
    reg = json.load(open(custom))["models"][0]["outcome"]["result"]
    dp = [float(r["delta_parallelogram"]) for r in deltas]
    dr = [float(r["delta_rating"]) for r in deltas]
    pr = stats.pearsonr(dp, dr)
    close(reg["coefficients"][0]["beta_standardized"], float(pr.statistic), "beta")
    close(reg["coefficients"][0]["p_two_sided"], float(pr.pvalue), "beta p")
    close(reg["r_squared"], float(pr.statistic) ** 2, "r2")
    print("oracle: all checks passed")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])

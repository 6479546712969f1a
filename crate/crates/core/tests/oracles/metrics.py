"""Regression and classification metrics on seeded random pairs, in mpmath.

Writes ../fixtures/metrics.json: a list of cases with pred, y and the expected
rmse, r2, confusion counts, balanced accuracy and MCC (cutoff 0.5, responder
means value <= cutoff).
"""
import json
import os
import random

from mpmath import mp, mpf, sqrt

mp.dps = 50


def case(rng, n):
    y = [rng.random() for _ in range(n)]
    pred = [min(1.0, max(0.0, v + rng.gauss(0, 0.3))) for v in y]
    P = [mpf(v) for v in pred]
    Y = [mpf(v) for v in y]
    sse = sum((p - t) ** 2 for p, t in zip(P, Y))
    mean = sum(Y) / n
    sst = sum((t - mean) ** 2 for t in Y)
    tp = sum(1 for p, t in zip(pred, y) if p <= 0.5 and t <= 0.5)
    fp = sum(1 for p, t in zip(pred, y) if p <= 0.5 and t > 0.5)
    tn = sum(1 for p, t in zip(pred, y) if p > 0.5 and t > 0.5)
    fn = sum(1 for p, t in zip(pred, y) if p > 0.5 and t <= 0.5)
    tpr = mpf(tp) / (tp + fn)
    tnr = mpf(tn) / (tn + fp)
    mcc = (mpf(tp) * tn - mpf(fp) * fn) / sqrt(mpf(tp + fp) * (tp + fn) * (tn + fp) * (tn + fn))
    return {
        "pred": pred,
        "y": y,
        "rmse": float(sqrt(sse / n)),
        "r2": float(1 - sse / sst),
        "confusion": [tp, fp, tn, fn],
        "balanced_accuracy": float((tpr + tnr) / 2),
        "mcc": float(mcc),
    }


rng = random.Random(20240611)
cases = [case(rng, 1000) for _ in range(5)] + [case(rng, 17) for _ in range(20)]
here = os.path.dirname(os.path.abspath(__file__))
with open(os.path.join(here, "..", "fixtures", "metrics.json"), "w") as f:
    json.dump(cases, f)

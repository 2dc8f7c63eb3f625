"""Naive reference computations, written as plain loops over tuples.

These never call into ``costrel.metrics``; they take ``(image, subject,
object, predicate[, score])`` tuples so a shared bug cannot hide.
"""

from __future__ import annotations


def _key(rec):
    return (rec[0], rec[1], rec[2])


def per_class_recall(pred, gt):
    pred_map = {}
    for r in pred:
        pred_map[_key(r)] = r[3]
    classes = sorted({g[3] for g in gt})
    out = {}
    for j in classes:
        members = [g for g in gt if g[3] == j]
        hit = 0
        for g in members:
            if pred_map.get(_key(g), 0) == j:
                hit += 1
        out[j] = hit / len(members)
    return out


def mpcr(pred, gt):
    rec = per_class_recall(pred, gt)
    return sum(rec.values()) / len(rec)


def recall_at_k(ranked, gt, k):
    kept = []
    for image in ranked:
        kept.extend(ranked[image][:k])
    found = 0
    for g in gt:
        for p in kept:
            if _key(p) == _key(g) and p[3] == g[3]:
                found += 1
                break
    return found / len(gt)


def precision_recall_f1(retained, gt):
    retained = [p for p in retained if p[3] != 0]
    matched = 0
    for p in retained:
        for g in gt:
            if _key(p) == _key(g) and p[3] == g[3]:
                matched += 1
                break
    precision = matched / len(retained) if retained else 0.0
    recall = matched / len(gt)
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return precision, recall, f1


def ece(scores, correct, bins):
    n = len(scores)
    total = 0.0
    for m in range(bins):
        lo, hi = m / bins, (m + 1) / bins
        members = [i for i in range(n) if (lo < scores[i] <= hi) or (m == 0 and scores[i] == 0.0)]
        if not members:
            continue
        conf = sum(scores[i] for i in members) / len(members)
        acc = sum(1.0 for i in members if correct[i]) / len(members)
        total += len(members) / n * abs(acc - conf)
    return total


def zero_recall_fraction(pred, gt):
    rec = per_class_recall(pred, gt)
    return sum(1 for r in rec.values() if r == 0) / len(rec)

"""Detection metrics and evaluation reports.

Scores follow the convention "larger means more in-distribution". The
operating threshold gamma is the largest value that still classifies at
least the target fraction of ID samples as ID (scores equal to gamma
count as ID), FPR is the OOD fraction at or above gamma, and AUROC is
the exact rank statistic P(ID > OOD) + 0.5 * P(tie).
"""

import csv
import json
import math

import numpy as np

from . import __version__


def _scores(values, name):
    out = np.asarray(values, dtype=float)
    if out.ndim != 1 or out.size == 0:
        raise ValueError("%s must be a non-empty 1-D collection" % name)
    if not np.isfinite(out).all():
        raise ValueError("%s contains non-finite entries" % name)
    return out


def calibrate_gamma(id_scores, tpr_target=0.95):
    """Largest threshold keeping at least tpr_target of ID scores at or above it.

    With n scores this is the t-th largest where t = ceil(tpr_target * n);
    the small subtraction guards against the product landing a hair above
    an integer it equals in exact arithmetic.
    """
    scores = _scores(id_scores, "id_scores")
    if not 0.0 < tpr_target <= 1.0:
        raise ValueError("tpr_target must be in (0, 1], got %r" % (tpr_target,))
    n = scores.size
    t = max(1, int(math.ceil(tpr_target * n - 1e-9)))
    return float(np.sort(scores)[::-1][t - 1])


def fpr_at_tpr(id_scores, ood_scores, tpr_target=0.95):
    """Fraction of OOD scores at or above the calibrated threshold."""
    gamma = calibrate_gamma(id_scores, tpr_target)
    ood = _scores(ood_scores, "ood_scores")
    return float(np.count_nonzero(ood >= gamma)) / ood.size


def auroc(id_scores, ood_scores):
    """Probability a random ID score outranks a random OOD score, ties half.

    Computed from the Mann-Whitney rank sum with average ranks on ties,
    which matches the pairwise count exactly.
    """
    pos = _scores(id_scores, "id_scores")
    neg = _scores(ood_scores, "ood_scores")
    combined = np.concatenate([pos, neg])
    order = np.argsort(combined, kind="mergesort")
    sorted_vals = combined[order]
    ranks = np.empty(combined.size)
    i = 0
    while i < combined.size:
        j = i
        while j + 1 < combined.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0  # 1-based average rank
        i = j + 1
    rank_sum = float(ranks[:pos.size].sum())
    u = rank_sum - pos.size * (pos.size + 1) / 2.0
    return u / (pos.size * neg.size)


def evaluate_detector(id_scores, ood_scores, tpr_target=0.95):
    """Gamma, FPR at the TPR target, and AUROC in one dict."""
    return {
        "gamma": calibrate_gamma(id_scores, tpr_target),
        "fpr_at_tpr": fpr_at_tpr(id_scores, ood_scores, tpr_target),
        "auroc": auroc(id_scores, ood_scores),
        "tpr_target": float(tpr_target),
        "n_id": int(np.asarray(id_scores).size),
        "n_ood": int(np.asarray(ood_scores).size),
    }


def mean_and_variance(values):
    """Arithmetic mean and population variance of per-seed metric values."""
    arr = _scores(values, "values")
    mean = float(arr.mean())
    return mean, float(((arr - mean) ** 2).mean())


_METRIC_KEYS = ("fpr_at_tpr", "auroc", "gamma")
_GROUP_KEYS = ("variant", "norm_order", "n_per_class")


def aggregate_rows(rows):
    """Collapse per-seed result rows into mean/variance summary rows.

    Rows sharing (variant, norm_order, n_per_class) are grouped and each
    metric is reduced to its arithmetic mean and population variance
    across the group's seeds.
    """
    groups = {}
    for row in rows:
        key = tuple(row.get(k) for k in _GROUP_KEYS)
        groups.setdefault(key, []).append(row)
    summary = []
    for key, members in sorted(groups.items(), key=lambda kv: repr(kv[0])):
        entry = {k: v for k, v in zip(_GROUP_KEYS, key) if v is not None}
        entry["seeds"] = sorted(m["seed"] for m in members)
        for metric in _METRIC_KEYS:
            mean, var = mean_and_variance([m[metric] for m in members])
            entry[metric + "_mean"] = mean
            entry[metric + "_var"] = var
        summary.append(entry)
    return summary


def build_report(config, rows):
    """Assemble the full evaluation report.

    The report embeds the configuration snapshot and the tool version
    and contains nothing run-dependent beyond the results, so repeated
    runs serialize byte-identically.
    """
    return {
        "tool": "gradorth",
        "version": __version__,
        "config": dict(config),
        "per_seed": list(rows),
        "summary": aggregate_rows(rows),
    }


def _jsonable(value):
    # strict JSON has no Infinity literal, so inf norm orders become "inf"
    if isinstance(value, float) and not math.isfinite(value):
        return repr(value)
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def save_report(report, path):
    with open(path, "w", encoding="ascii") as fh:
        json.dump(_jsonable(report), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def save_report_csv(report, path):
    """Flat summary table: one row per group, FPR at the target TPR then AUROC."""
    with open(path, "w", encoding="ascii", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "p", "n_per_class", "fpr_at_tpr_mean",
                         "fpr_at_tpr_var", "auroc_mean", "auroc_var"])
        for entry in report["summary"]:
            writer.writerow([entry["variant"], repr(entry["norm_order"]),
                             entry.get("n_per_class", ""),
                             repr(entry["fpr_at_tpr_mean"]), repr(entry["fpr_at_tpr_var"]),
                             repr(entry["auroc_mean"]), repr(entry["auroc_var"])])

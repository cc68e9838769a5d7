"""Detection scores: projected-gradient norms and the baselines.

The core score projects the last-layer loss gradient G (rows indexed by
output unit, columns by representation coordinate) onto an
in-distribution subspace with orthonormal basis S, then takes an
entrywise norm:

    score = || G S S^T ||_p

In-distribution inputs leave most of their gradient inside the span of
the training representations, so larger scores mean more ID. Labels are
unknown at test time, so the gradient is taken against a pseudo-target
(uniform by default).
"""

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .linalg import as_matrix
from .model import _error_vector, _forward_full, all_layer_gradients, one_hot, softmax_probs

NORM_ORDERS = (0.3, 1.0, 2.0, 3.0, 4.0, math.inf)
VARIANTS = ("last_layer", "all_layers", "no_svd", "msp", "energy")
PSEUDO_LABELS = ("uniform", "predicted_onehot", "mse_zero")

THREADS_ENV = "GRADORTH_THREADS"


@dataclass(frozen=True)
class ScoreConfig:
    norm_order: float = 2.0
    variant: str = "last_layer"
    pseudo_label: str = "uniform"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError("unknown variant %r, expected one of: %s"
                             % (self.variant, ", ".join(VARIANTS)))
        if self.pseudo_label not in PSEUDO_LABELS:
            raise ValueError("unknown pseudo label %r, expected one of: %s"
                             % (self.pseudo_label, ", ".join(PSEUDO_LABELS)))
        if not (self.norm_order == math.inf or self.norm_order > 0):
            raise ValueError("norm order must be positive or inf, got %r" % (self.norm_order,))


@dataclass(frozen=True)
class ScoredSample:
    sample_id: int
    score: float
    variant: str
    norm_order: float
    subspace_seed: int


def lp_norm(a, p):
    """Entrywise p-norm of a matrix or vector; p=2 is Frobenius, p=inf is max-abs."""
    flat = np.abs(np.asarray(a, dtype=float)).ravel()
    if flat.size == 0:
        return 0.0
    if p == math.inf:
        return float(flat.max())
    if not p > 0:
        raise ValueError("norm order must be positive or inf, got %r" % (p,))
    return float((flat ** p).sum() ** (1.0 / p))


def project(grad, sub):
    """Project each gradient row onto the subspace span: G S S^T."""
    grad = as_matrix(grad, "gradient")
    if grad.shape[1] != sub.basis.shape[0]:
        raise ValueError(
            "gradient has %d columns but subspace lives in dimension %d"
            % (grad.shape[1], sub.basis.shape[0])
        )
    return grad @ sub.basis @ sub.basis.T


def ood_score(grad, sub, p=2.0):
    """Entrywise p-norm of the projected gradient; larger means more ID."""
    return lp_norm(project(grad, sub), p)


def detect(score, gamma):
    """Threshold decision; the boundary score counts as in-distribution."""
    return "ID" if score >= gamma else "OOD"


def _pseudo_target(net, logits, pseudo_label):
    m = net.out_dim
    if pseudo_label == "uniform":
        return np.full(m, 1.0 / m), net.loss
    if pseudo_label == "predicted_onehot":
        return one_hot([int(np.argmax(softmax_probs(logits)))], m)[0], net.loss
    return np.zeros(m), "mse"  # mse_zero


def _oriented(grad, spec):
    # conv gradients are (patch_dim, out_channels); put the representation
    # coordinate on the columns so projection applies uniformly
    if spec.kind == "conv":
        return grad.T
    return grad


def _subspace_map(subspaces, net, variant):
    if subspaces is None:
        subspaces = []
    elif not isinstance(subspaces, (list, tuple)):
        subspaces = [subspaces]
    by_layer = {}
    for sub in subspaces:
        by_layer[sub.layer_index] = sub
    last = len(net.layers) - 1
    if variant == "last_layer":
        if last not in by_layer:
            raise ValueError("last_layer scoring needs a subspace for layer %d" % last)
    elif variant == "all_layers":
        missing = [l for l in range(len(net.layers)) if l not in by_layer]
        if missing:
            raise ValueError("all_layers scoring is missing subspaces for layers %s" % missing)
    return by_layer


def _score_one(net, x, cfg, by_layer):
    logits, reps, _ = _forward_full(net, x)
    if cfg.variant == "msp":
        return float(softmax_probs(logits).max())
    if cfg.variant == "energy":
        z = logits - logits.max()
        return float(logits.max() + math.log(float(np.exp(z).sum())))
    y, loss = _pseudo_target(net, logits, cfg.pseudo_label)
    last = len(net.layers) - 1
    if cfg.variant in ("last_layer", "no_svd"):
        grad = np.outer(_error_vector(logits, y, loss), reps[last])
        if cfg.variant == "no_svd":
            score = lp_norm(grad, cfg.norm_order)
        else:
            score = ood_score(grad, by_layer[last], cfg.norm_order)
    else:  # all_layers: mean of per-layer projected norms
        record = all_layer_gradients(net, x, y, loss=loss)
        per_layer = []
        for li, grad in enumerate(record.gradients):
            oriented = _oriented(grad, net.layers[li])
            per_layer.append(ood_score(oriented, by_layer[li], cfg.norm_order))
        score = float(np.mean(per_layer))
    if not (math.isfinite(score) and score >= 0.0):
        raise ValueError("gradient score must be finite and non-negative, got %r" % (score,))
    return score


def score_batch(net, subspaces, inputs, cfg=ScoreConfig()):
    """Score every row of `inputs`; order is preserved.

    Args:
        net: a frozen Network.
        subspaces: a Subspace, a list of them (keyed by layer_index), or
            None for the subspace-free variants.
        inputs: (n, in_dim) matrix of raw inputs.
        cfg: ScoreConfig.

    The GRADORTH_THREADS environment variable (default 1) fans the
    per-sample work out over a thread pool; results are returned in
    input order either way.
    """
    if not net.frozen:
        raise ValueError("network must be frozen before scoring")
    inputs = as_matrix(inputs, "inputs")
    by_layer = _subspace_map(subspaces, net, cfg.variant)
    seed = -1
    for sub in by_layer.values():
        seed = sub.seed
        break

    def job(i):
        score = _score_one(net, inputs[i], cfg, by_layer)
        return ScoredSample(sample_id=i, score=score, variant=cfg.variant,
                            norm_order=cfg.norm_order, subspace_seed=seed)

    workers = int(os.environ.get(THREADS_ENV, "1") or "1")
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(job, range(inputs.shape[0])))
    return [job(i) for i in range(inputs.shape[0])]


def write_scores_csv(records, path):
    with open(path, "w", encoding="ascii") as fh:
        fh.write("sample_id,variant,p,subspace_seed,score\n")
        for rec in records:
            fh.write("%d,%s,%r,%d,%r\n" % (rec.sample_id, rec.variant, rec.norm_order,
                                           rec.subspace_seed, rec.score))


def read_scores_csv(path):
    records = []
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip()
        if header != "sample_id,variant,p,subspace_seed,score":
            raise ValueError("unexpected scores header %r in %s" % (header, path))
        for line in fh:
            line = line.strip()
            if not line:
                continue
            sid, variant, p, seed, score = line.split(",")
            records.append(ScoredSample(sample_id=int(sid), score=float(score),
                                        variant=variant, norm_order=float(p),
                                        subspace_seed=int(seed)))
    return records

"""Synthetic datasets with controlled subspace structure.

Two generators:

* gen_planted_subspace puts every in-distribution sample exactly inside
  a k-dimensional subspace of R^d and gives out-of-distribution samples
  a chosen energy fraction in the orthogonal complement, so detection
  quality has a known geometric ground truth.
* gen_gaussian_blobs is a conventional classification mixture (one
  axis-aligned mean per class) with OOD drawn from a shifted blob.

All randomness comes from SplitMix64 (see rng module for the pinned
algorithm), so outputs are bit-identical for a given seed.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import io
from .rng import SplitMix64


@dataclass
class DatasetSplit:
    """Inputs, integer labels, a role tag, and generator provenance.

    role is one of "train", "id_test", "ood_test". Labels of an
    ood_test split are placeholders (zeros) and never enter scoring.
    """

    inputs: np.ndarray
    labels: np.ndarray
    role: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        if self.inputs.ndim != 2:
            raise ValueError("inputs must be 2-D, got shape %s" % (self.inputs.shape,))
        if self.labels.shape != (self.inputs.shape[0],):
            raise ValueError("labels must align with inputs rows")
        if self.role not in ("train", "id_test", "ood_test"):
            raise ValueError("unknown role %r" % (self.role,))


def _orthonormal_frame(rng, d):
    """Random orthonormal basis of R^d from Gaussian draws, Gram-Schmidt twice."""
    frame = np.empty((d, d))
    for j in range(d):
        v = np.array(rng.normals(d))
        for _ in range(2):
            v = v - frame[:, :j] @ (frame[:, :j].T @ v)
        norm = math.sqrt(float(v @ v))
        if norm < 1e-8:
            raise RuntimeError("degenerate Gaussian draw while building a frame")
        frame[:, j] = v / norm
    return frame


def _unit(v):
    return v / math.sqrt(float(v @ v))


def gen_planted_subspace(d, k, n_train, n_id, n_ood, ood_energy, seed):
    """Two-class data planted in a k-dimensional subspace of R^d.

    ID samples are unit vectors U c with coefficients c uniform in
    [-1, 1]^k, except the first coefficient is pushed away from zero
    (magnitude in [0.5, 1]) with its sign encoding the class, so the
    classes are linearly separable through the origin. OOD samples are
    unit vectors with an ood_energy fraction of squared norm in the
    orthogonal complement of U.

    Args:
        d: ambient dimension (>= 2).
        k: planted dimension, 1 <= k < d.
        n_train, n_id, n_ood: split sizes.
        ood_energy: orthogonal energy fraction in (0, 1]. Zero is
            rejected: such samples would be in-distribution by
            construction.
        seed: SplitMix64 seed.

    Returns:
        (train, id_test, ood_test) DatasetSplit triple.
    """
    if d < 2 or not 1 <= k < d:
        raise ValueError("need d >= 2 and 1 <= k < d, got d=%r k=%r" % (d, k))
    if min(n_train, n_id, n_ood) < 1:
        raise ValueError("all split sizes must be positive")
    if not 0.0 < ood_energy <= 1.0:
        raise ValueError(
            "ood_energy must be in (0, 1], got %r; zero orthogonal energy "
            "makes the samples in-distribution" % (ood_energy,)
        )
    rng = SplitMix64(seed)
    frame = _orthonormal_frame(rng, d)
    planted = frame[:, :k]
    complement = frame[:, k:]
    meta = {"generator": "planted_subspace", "seed": seed, "d": d, "k": k,
            "ood_energy": ood_energy}

    def id_sample(label):
        coeff = np.array([2.0 * rng.next_float() - 1.0 for _ in range(k)])
        magnitude = 0.5 + 0.5 * rng.next_float()
        coeff[0] = magnitude if label == 0 else -magnitude
        return _unit(planted @ coeff)

    def ood_sample():
        coeff = np.array([2.0 * rng.next_float() - 1.0 for _ in range(k)])
        ortho = np.array([2.0 * rng.next_float() - 1.0 for _ in range(d - k)])
        in_plane = _unit(planted @ coeff) if float(coeff @ coeff) > 0 else planted[:, 0]
        out_plane = _unit(complement @ ortho) if float(ortho @ ortho) > 0 else complement[:, 0]
        return math.sqrt(1.0 - ood_energy) * in_plane + math.sqrt(ood_energy) * out_plane

    train_labels = np.array([i % 2 for i in range(n_train)])
    train_inputs = np.vstack([id_sample(lbl) for lbl in train_labels])
    id_labels = np.array([i % 2 for i in range(n_id)])
    id_inputs = np.vstack([id_sample(lbl) for lbl in id_labels])
    ood_inputs = np.vstack([ood_sample() for _ in range(n_ood)])

    return (
        DatasetSplit(train_inputs, train_labels, "train", dict(meta, role="train")),
        DatasetSplit(id_inputs, id_labels, "id_test", dict(meta, role="id_test")),
        DatasetSplit(ood_inputs, np.zeros(n_ood, dtype=int), "ood_test",
                     dict(meta, role="ood_test")),
    )


def gen_gaussian_blobs(classes, d, spread, shift_ood, n_train, n_id, n_ood, seed):
    """Axis-aligned Gaussian class blobs with a shifted OOD blob.

    Class c is N(4 * spread * e_c, spread^2 I); labels cycle through the
    classes. OOD samples are N(mean_0 + shift_ood, spread^2 I).

    Args:
        classes: number of classes, 2 <= classes <= d.
        d: input dimension.
        spread: per-coordinate standard deviation, > 0.
        shift_ood: length-d displacement of the OOD blob from class 0.
        n_train, n_id, n_ood: split sizes.
        seed: SplitMix64 seed.
    """
    if not 2 <= classes <= d:
        raise ValueError("need 2 <= classes <= d, got classes=%r d=%r" % (classes, d))
    if not spread > 0:
        raise ValueError("spread must be positive, got %r" % (spread,))
    shift = np.asarray(shift_ood, dtype=float).ravel()
    if shift.shape[0] != d:
        raise ValueError("shift_ood must have length %d, got %d" % (d, shift.shape[0]))
    if min(n_train, n_id, n_ood) < 1:
        raise ValueError("all split sizes must be positive")
    rng = SplitMix64(seed)
    means = np.zeros((classes, d))
    for c in range(classes):
        means[c, c] = 4.0 * spread
    meta = {"generator": "gaussian_blobs", "seed": seed, "d": d, "classes": classes,
            "spread": spread, "shift_ood": shift.tolist()}

    def blob(mean, count):
        return np.vstack([mean + spread * np.array(rng.normals(d)) for _ in range(count)])

    train_labels = np.array([i % classes for i in range(n_train)])
    train_inputs = np.vstack([means[lbl] + spread * np.array(rng.normals(d))
                              for lbl in train_labels])
    id_labels = np.array([i % classes for i in range(n_id)])
    id_inputs = np.vstack([means[lbl] + spread * np.array(rng.normals(d))
                           for lbl in id_labels])
    ood_inputs = blob(means[0] + shift, n_ood)

    return (
        DatasetSplit(train_inputs, train_labels, "train", dict(meta, role="train")),
        DatasetSplit(id_inputs, id_labels, "id_test", dict(meta, role="id_test")),
        DatasetSplit(ood_inputs, np.zeros(n_ood, dtype=int), "ood_test",
                     dict(meta, role="ood_test")),
    )


def save_dataset(split, prefix):
    """Write <prefix>.gomx, <prefix>.labels.csv, <prefix>.meta.json."""
    io.write_gomx(prefix + ".gomx", split.inputs)
    with open(prefix + ".labels.csv", "w", encoding="ascii") as fh:
        fh.write("sample_id,label\n")
        for i, label in enumerate(split.labels):
            fh.write("%d,%d\n" % (i, label))
    with open(prefix + ".meta.json", "w", encoding="ascii") as fh:
        json.dump(dict(split.meta, role=split.role), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_dataset(prefix):
    inputs = io.read_gomx(prefix + ".gomx")
    table = io.read_matrix_csv(prefix + ".labels.csv", has_header=True)
    labels = table[:, 1].astype(int)
    if table.shape[0] != inputs.shape[0]:
        raise ValueError("label count %d does not match %d inputs"
                         % (table.shape[0], inputs.shape[0]))
    with open(prefix + ".meta.json", "r", encoding="ascii") as fh:
        meta = json.load(fh)
    role = meta.get("role", "train")
    return DatasetSplit(inputs, labels, role, meta)

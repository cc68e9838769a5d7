"""Low-rank subspaces of in-distribution layer representations.

A subspace is built from a frozen network and a handful of training
samples: stack the layer's input representations as columns, take the
thin SVD, and keep the smallest number of leading left singular vectors
whose energy share reaches eps_th.
"""

from dataclasses import dataclass

import numpy as np

from . import io
from .linalg import rank_select, svd_thin
from .model import _forward_full
from .rng import SplitMix64

DEFAULT_EPS_TH = 0.97


@dataclass(frozen=True)
class Subspace:
    """Orthonormal basis (one column per direction) plus provenance."""

    basis: np.ndarray
    layer_index: int
    eps_th: float
    k: int
    sample_ids: tuple
    seed: int

    @property
    def dim(self):
        return self.basis.shape[0]


def sample_per_class(data, n_per_class, seed):
    """Pick n_per_class sample indices from every class, deterministically.

    Classes are visited in sorted label order; within a class, indices
    are drawn without replacement by SplitMix64(seed). The returned list
    is class-major.

    Raises:
        ValueError: if any class has fewer than n_per_class samples,
            naming the class.
    """
    if n_per_class < 1:
        raise ValueError("n_per_class must be positive, got %r" % (n_per_class,))
    labels = np.asarray(data.labels, dtype=int)
    rng = SplitMix64(seed)
    chosen = []
    for cls in sorted(set(labels.tolist())):
        members = np.flatnonzero(labels == cls).tolist()
        if len(members) < n_per_class:
            raise ValueError(
                "class %d has only %d samples, need %d" % (cls, len(members), n_per_class)
            )
        chosen.extend(sorted(rng.sample_without_replacement(members, n_per_class)))
    return chosen


def build_representation_matrix(net, data, ids, layer):
    """Stack layer input representations of the chosen samples as columns.

    For a dense layer the result is (rep_dim, len(ids)). For a conv
    layer each sample contributes one column per output position (its
    im2col patches transposed), so the result is
    (patch_dim, len(ids) * out_positions).

    Raises:
        ValueError: if the network is not frozen (representations must
            come from fixed weights) or the layer index is out of range.
    """
    if not net.frozen:
        raise ValueError("network must be frozen before building representations")
    if not 0 <= layer < len(net.layers):
        raise ValueError("layer index %d out of range for %d layers" % (layer, len(net.layers)))
    inputs = np.asarray(data.inputs, dtype=float)
    columns = []
    for idx in ids:
        if not 0 <= idx < inputs.shape[0]:
            raise ValueError("sample id %d out of range for %d samples" % (idx, inputs.shape[0]))
        _, reps, _ = _forward_full(net, inputs[idx])
        rep = reps[layer]
        if rep.ndim == 1:
            columns.append(rep[:, None])
        else:
            columns.append(rep.T)
    return np.hstack(columns)


def compute_subspace(rep, eps_th=DEFAULT_EPS_TH, layer_index=0, sample_ids=(), seed=0):
    """SVD the representation matrix and keep the eps_th-energy basis.

    Raises:
        ValueError: for eps_th out of (0, 1] or a zero representation
            matrix.
    """
    result = svd_thin(rep)
    k = rank_select(result, eps_th)
    return Subspace(basis=result.u[:, :k].copy(), layer_index=layer_index,
                    eps_th=eps_th, k=k, sample_ids=tuple(int(i) for i in sample_ids),
                    seed=seed)


def subspace_for_layer(net, data, layer, n_per_class=10, seed=0, eps_th=DEFAULT_EPS_TH):
    """Sample, stack, and decompose in one step."""
    ids = sample_per_class(data, n_per_class, seed)
    rep = build_representation_matrix(net, data, ids, layer)
    return compute_subspace(rep, eps_th=eps_th, layer_index=layer,
                            sample_ids=ids, seed=seed)


_SUBSPACE_MAGIC = "GOSUB 1"


def save_subspace(sub, path):
    fields = [
        ("layer", str(sub.layer_index)),
        ("eps_th", repr(float(sub.eps_th))),
        ("k", str(sub.k)),
        ("seed", str(sub.seed)),
        ("sample_ids", ",".join(str(i) for i in sub.sample_ids)),
    ]
    io.write_container(path, _SUBSPACE_MAGIC, fields, [io.encode_matrix(sub.basis)])


def load_subspace(path):
    fields, matrices = io.read_container(path, _SUBSPACE_MAGIC)
    if len(matrices) != 1:
        raise ValueError("subspace file %s must hold exactly one basis matrix" % path)
    basis = matrices[0]
    k = int(fields["k"])
    if basis.shape[1] != k:
        raise ValueError("basis in %s has %d columns, header says k=%d" % (path, basis.shape[1], k))
    ids = tuple(int(s) for s in fields["sample_ids"].split(",") if s)
    return Subspace(basis=basis, layer_index=int(fields["layer"]),
                    eps_th=float(fields["eps_th"]), k=k, sample_ids=ids,
                    seed=int(fields["seed"]))

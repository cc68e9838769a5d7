"""Shared pinned configurations and expensive fixtures."""

import math

import numpy as np
import pytest

from gradorth import Network, dense, gen_gaussian_blobs, gen_planted_subspace, train_sgd

# planted setting: ID data lies exactly in a known 3-dim subspace of R^16;
# the net is bias-free so no constant coordinate leaks into the subspace
PLANTED = dict(d=16, k=3, n_train=120, n_id=60, n_ood=60, seed=11)
PLANTED_TRAIN = dict(lr=0.5, epochs=120, batch=16, seed=0)

# blob demo: three Gaussian classes, OOD blob displaced by exactly
# 10 * spread into the negative orthant of the class axes
BLOB_D = 8
BLOB_SPREAD = 1.0
BLOB_SHIFT = tuple((-10.0 / math.sqrt(3.0)) if i < 3 else 0.0 for i in range(BLOB_D))
BLOB = dict(classes=3, d=BLOB_D, spread=BLOB_SPREAD, shift_ood=BLOB_SHIFT,
            n_train=150, n_id=90, n_ood=90, seed=7)
BLOB_TRAIN = dict(lr=0.05, epochs=150, batch=16, seed=0)


def make_planted(ood_energy=1.0):
    return gen_planted_subspace(ood_energy=ood_energy, **PLANTED)


def train_planted(train_split):
    net = Network(layers=[dense(PLANTED["d"], 2, has_bias=False)],
                  loss="cross_entropy", seed=0)
    return train_sgd(net, train_split, **PLANTED_TRAIN)


def make_blobs():
    return gen_gaussian_blobs(**BLOB)


def train_blobs(train_split):
    net = Network(layers=[dense(BLOB_D, 8, "relu"), dense(8, 3)],
                  loss="cross_entropy", seed=0)
    return train_sgd(net, train_split, **BLOB_TRAIN)


@pytest.fixture(scope="session")
def planted_pipeline():
    train, id_test, ood_test = make_planted(1.0)
    return train, id_test, ood_test, train_planted(train)


@pytest.fixture(scope="session")
def planted_half_energy():
    train, id_test, ood_test = make_planted(0.5)
    return train, id_test, ood_test, train_planted(train)


@pytest.fixture(scope="session")
def blob_pipeline():
    train, id_test, ood_test = make_blobs()
    return train, id_test, ood_test, train_blobs(train)

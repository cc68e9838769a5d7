"""Scikit-learn style wrapper around the full detection pipeline."""

import numpy as np
from sklearn.base import BaseEstimator, OutlierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .metrics import calibrate_gamma
from .model import Network, dense, train_sgd
from .scorer import ScoreConfig, score_batch
from .subspace import DEFAULT_EPS_TH, subspace_for_layer
from .synth import DatasetSplit


class GradOrthDetector(BaseEstimator, OutlierMixin):
    """Out-of-distribution detector scoring projected loss gradients.

    fit() trains a small dense classifier on the in-distribution data,
    builds one representation subspace per entry of subspace_seeds, and
    calibrates the decision threshold so at least tpr_target of the
    training samples count as in-distribution. predict() follows the
    scikit-learn outlier convention: +1 for inliers, -1 for outliers.

    Parameters mirror the pipeline: hidden_dims sizes the classifier,
    eps_th and n_per_class shape the subspace, norm_order / variant /
    pseudo_label select the score.

    Example:
        >>> det = GradOrthDetector(n_per_class=5, epochs=50)
        >>> det.fit(X_train, y_train)                    # doctest: +SKIP
        >>> det.predict(X_test)                          # doctest: +SKIP
    """

    def __init__(self, hidden_dims=(), activation="relu", loss="cross_entropy",
                 has_bias=True, lr=0.1, epochs=100, batch=16, train_seed=0,
                 eps_th=DEFAULT_EPS_TH, n_per_class=10, subspace_seeds=(0,),
                 norm_order=2.0, variant="last_layer", pseudo_label="uniform",
                 tpr_target=0.95):
        self.hidden_dims = hidden_dims
        self.activation = activation
        self.loss = loss
        self.has_bias = has_bias
        self.lr = lr
        self.epochs = epochs
        self.batch = batch
        self.train_seed = train_seed
        self.eps_th = eps_th
        self.n_per_class = n_per_class
        self.subspace_seeds = subspace_seeds
        self.norm_order = norm_order
        self.variant = variant
        self.pseudo_label = pseudo_label
        self.tpr_target = tpr_target

    def _score_config(self):
        return ScoreConfig(norm_order=self.norm_order, variant=self.variant,
                           pseudo_label=self.pseudo_label)

    def fit(self, X, y):
        """Train the classifier, build subspaces, calibrate the threshold."""
        X, y = check_X_y(X, y)
        cfg = self._score_config()
        if not tuple(self.subspace_seeds):
            raise ValueError("subspace_seeds must not be empty")
        self.classes_, labels = np.unique(y, return_inverse=True)
        if self.classes_.shape[0] < 2:
            raise ValueError("need at least two classes, got %d" % self.classes_.shape[0])
        self.n_features_in_ = X.shape[1]
        dims = [self.n_features_in_, *self.hidden_dims, self.classes_.shape[0]]
        layers = []
        for i in range(len(dims) - 1):
            act = self.activation if i < len(dims) - 2 else "identity"
            layers.append(dense(dims[i], dims[i + 1], act, self.has_bias))
        net = Network(layers=layers, loss=self.loss, seed=self.train_seed)
        data = DatasetSplit(X, labels, "train")
        self.network_ = train_sgd(net, data, lr=self.lr, epochs=self.epochs,
                                  batch=self.batch, seed=self.train_seed)
        if cfg.variant == "all_layers":
            wanted = range(len(self.network_.layers))
        elif cfg.variant in ("msp", "energy", "no_svd"):
            wanted = ()
        else:
            wanted = (len(self.network_.layers) - 1,)
        self.subspaces_ = {
            seed: [subspace_for_layer(self.network_, data, layer,
                                      n_per_class=self.n_per_class, seed=seed,
                                      eps_th=self.eps_th)
                   for layer in wanted]
            for seed in self.subspace_seeds
        }
        self.gamma_ = float(calibrate_gamma(self.score_samples(X), self.tpr_target))
        return self

    def score_samples(self, X):
        """Detection score per row, averaged over subspace seeds; higher is more ID."""
        check_is_fitted(self, "network_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError("X has %d features, expected %d" % (X.shape[1], self.n_features_in_))
        cfg = self._score_config()
        per_seed = []
        for seed in self.subspace_seeds:
            records = score_batch(self.network_, self.subspaces_.get(seed, []), X, cfg)
            per_seed.append([rec.score for rec in records])
        return np.asarray(per_seed).mean(axis=0)

    def decision_function(self, X):
        """Positive inside the in-distribution region, negative outside."""
        check_is_fitted(self, "gamma_")
        return self.score_samples(X) - self.gamma_

    def predict(self, X):
        """+1 for in-distribution, -1 for out-of-distribution."""
        return np.where(self.decision_function(X) >= 0.0, 1, -1)

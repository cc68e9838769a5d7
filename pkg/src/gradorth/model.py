"""Small feed-forward networks with explicit per-layer gradients.

The scoring pipeline needs the exact input representation x^l seen by
each layer and the closed-form loss gradient of each weight matrix, so
forward and backward passes are written out here instead of delegated.

Conventions:

* Biases are folded into the weights as one extra column; the layer
  input gets a trailing constant 1 so every gradient is literally an
  outer product of the error signal with the stored representation.
* The final layer is always dense with identity activation; its outputs
  are the logits.
* A conv layer may appear only at position 0. Its input representation
  is the im2col patch matrix (one row per output position), its weight
  matrix has shape (in_channels*k*k [+1], out_channels), and its output
  is flattened channel-major.
* MSE loss is 0.5*||logits - y||^2, so d(loss)/d(logits) = logits - y.
  Cross-entropy is -sum(y * log softmax(logits)), so the error signal is
  softmax(logits) - y.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import io
from .linalg import NumericError
from .rng import SplitMix64

log = logging.getLogger(__name__)

ACTIVATIONS = ("identity", "relu")
LOSSES = ("mse", "cross_entropy")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    activation: str = "identity"
    has_bias: bool = True
    in_dim: int = 0
    out_dim: int = 0
    in_channels: int = 0
    out_channels: int = 0
    kernel: int = 0
    in_h: int = 0
    in_w: int = 0

    def __post_init__(self):
        if self.kind not in ("dense", "conv"):
            raise ValueError("unknown layer kind %r" % (self.kind,))
        if self.activation not in ACTIVATIONS:
            raise ValueError("unknown activation %r" % (self.activation,))
        if self.kind == "dense":
            if self.in_dim < 1 or self.out_dim < 1:
                raise ValueError("dense layer needs positive in_dim and out_dim")
        else:
            if min(self.in_channels, self.out_channels, self.kernel, self.in_h, self.in_w) < 1:
                raise ValueError("conv layer needs positive channel, kernel and grid sizes")
            if self.kernel > self.in_h or self.kernel > self.in_w:
                raise ValueError(
                    "kernel %d does not fit a %dx%d input" % (self.kernel, self.in_h, self.in_w)
                )

    @property
    def out_h(self):
        return self.in_h - self.kernel + 1

    @property
    def out_w(self):
        return self.in_w - self.kernel + 1

    @property
    def input_size(self):
        if self.kind == "dense":
            return self.in_dim
        return self.in_channels * self.in_h * self.in_w

    @property
    def output_size(self):
        if self.kind == "dense":
            return self.out_dim
        return self.out_channels * self.out_h * self.out_w

    @property
    def rep_dim(self):
        """Length of the stored input representation (patch dim for conv)."""
        if self.kind == "dense":
            return self.in_dim + int(self.has_bias)
        return self.in_channels * self.kernel * self.kernel + int(self.has_bias)

    @property
    def weight_shape(self):
        if self.kind == "dense":
            return (self.out_dim, self.rep_dim)
        return (self.rep_dim, self.out_channels)


def dense(in_dim, out_dim, activation="identity", has_bias=True):
    return LayerSpec(kind="dense", activation=activation, has_bias=has_bias,
                     in_dim=in_dim, out_dim=out_dim)


def conv(in_channels, out_channels, kernel, in_h, in_w, activation="identity", has_bias=True):
    return LayerSpec(kind="conv", activation=activation, has_bias=has_bias,
                     in_channels=in_channels, out_channels=out_channels,
                     kernel=kernel, in_h=in_h, in_w=in_w)


@dataclass
class Network:
    """Layer specs plus their weight matrices; freezable for provenance.

    Weights default to SplitMix64(seed) normal init scaled by
    1/sqrt(fan_in), drawn layer by layer in row-major entry order.
    """

    layers: list
    loss: str
    seed: int = 0
    weights: list = field(default=None)
    frozen: bool = field(default=False)

    def __post_init__(self):
        if not self.layers:
            raise ValueError("network needs at least one layer")
        if self.loss not in LOSSES:
            raise ValueError("unknown loss %r" % (self.loss,))
        for i, spec in enumerate(self.layers):
            if spec.kind == "conv" and i != 0:
                raise ValueError("conv layers are only supported at position 0")
            if i > 0 and spec.input_size != self.layers[i - 1].output_size:
                raise ValueError(
                    "layer %d expects input size %d but layer %d produces %d"
                    % (i, spec.input_size, i - 1, self.layers[i - 1].output_size)
                )
        last = self.layers[-1]
        if last.kind != "dense" or last.activation != "identity":
            raise ValueError("final layer must be dense with identity activation")
        if self.weights is None:
            self.weights = self._init_weights()
        for i, (spec, w) in enumerate(zip(self.layers, self.weights)):
            w = np.asarray(w, dtype=float)
            if w.shape != spec.weight_shape:
                raise ValueError(
                    "layer %d weight shape %s does not match spec %s"
                    % (i, w.shape, spec.weight_shape)
                )
            self.weights[i] = w
        if self.frozen:
            self.freeze()

    def _init_weights(self):
        rng = SplitMix64(self.seed)
        weights = []
        for spec in self.layers:
            rows, cols = spec.weight_shape
            fan_in = spec.rep_dim
            scale = 1.0 / math.sqrt(fan_in)
            w = np.array(rng.normals(rows * cols), dtype=float).reshape(rows, cols)
            weights.append(w * scale)
        return weights

    @property
    def in_dim(self):
        return self.layers[0].input_size

    @property
    def out_dim(self):
        return self.layers[-1].out_dim

    def freeze(self):
        for w in self.weights:
            w.setflags(write=False)
        self.frozen = True
        return self

    def copy_unfrozen(self):
        clone = Network(layers=list(self.layers), loss=self.loss, seed=self.seed,
                        weights=[w.copy() for w in self.weights])
        return clone


def _activate(z, kind):
    if kind == "relu":
        return np.maximum(z, 0.0)
    return z


def _activate_deriv(z, kind):
    if kind == "relu":
        return (z > 0.0).astype(float)  # derivative at the kink pinned to 0
    return np.ones_like(z)


def im2col(x, kernel):
    """Unfold (channels, h, w) into patch rows for a valid stride-1 conv.

    Row i*out_w + j holds the patch at output position (i, j), flattened
    channel-major, then kernel row, then kernel column.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 3:
        raise ValueError("im2col expects a (channels, h, w) tensor, got shape %s" % (x.shape,))
    channels, h, w = x.shape
    if kernel < 1 or kernel > h or kernel > w:
        raise ValueError("kernel %d does not fit a %dx%d input" % (kernel, h, w))
    out_h = h - kernel + 1
    out_w = w - kernel + 1
    cols = np.empty((out_h * out_w, channels * kernel * kernel))
    for i in range(out_h):
        for j in range(out_w):
            cols[i * out_w + j] = x[:, i:i + kernel, j:j + kernel].ravel()
    return cols


def _forward_full(net, x):
    x = np.asarray(x, dtype=float).ravel()
    if x.shape[0] != net.in_dim:
        raise ValueError("input length %d does not match network input %d" % (x.shape[0], net.in_dim))
    if not np.isfinite(x).all():
        raise ValueError("input contains non-finite entries")
    reps = []
    preacts = []
    cur = x
    for spec, w in zip(net.layers, net.weights):
        if spec.kind == "dense":
            inp = np.append(cur, 1.0) if spec.has_bias else cur
            reps.append(inp)
            z = w @ inp
        else:
            tensor = cur.reshape(spec.in_channels, spec.in_h, spec.in_w)
            cols = im2col(tensor, spec.kernel)
            if spec.has_bias:
                cols = np.hstack([cols, np.ones((cols.shape[0], 1))])
            reps.append(cols)
            z = (cols @ w).T.ravel()  # channel-major flatten
        preacts.append(z)
        cur = _activate(z, spec.activation)
    return cur, reps, preacts


def forward(net, x):
    """Run the network on one input.

    Returns:
        (logits, reps) where reps[l] is the input representation of
        layer l: a vector (with trailing 1 when biased) for dense
        layers, the im2col patch matrix for a conv layer.
    """
    logits, reps, _ = _forward_full(net, x)
    return logits, reps


def softmax_probs(logits):
    z = np.asarray(logits, dtype=float)
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def _log_softmax(logits):
    z = np.asarray(logits, dtype=float)
    z = z - z.max()
    return z - math.log(float(np.exp(z).sum()))


def one_hot(labels, num_classes):
    labels = np.asarray(labels, dtype=int)
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= num_classes:
        raise ValueError("labels out of range for %d classes" % num_classes)
    out = np.zeros((labels.shape[0], num_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def _check_target(y, m, loss):
    y = np.asarray(y, dtype=float).ravel()
    if y.shape[0] != m:
        raise ValueError("target length %d does not match %d outputs" % (y.shape[0], m))
    if loss == "cross_entropy":
        if (y < 0).any() or abs(float(y.sum()) - 1.0) > 1e-9:
            raise ValueError("cross-entropy target must be a probability vector")
    return y


def _error_vector(logits, y, loss):
    if loss == "cross_entropy":
        return softmax_probs(logits) - y
    return logits - y


def loss_value(net, x, y, loss=None):
    """Scalar loss for one sample; `loss` overrides the network's own."""
    loss = net.loss if loss is None else loss
    logits, _, _ = _forward_full(net, x)
    y = _check_target(y, net.out_dim, loss)
    if loss == "cross_entropy":
        return float(-(y * _log_softmax(logits)).sum())
    diff = logits - y
    return 0.5 * float((diff * diff).sum())


def last_layer_gradient(net, x, y, loss=None):
    """Gradient of the loss w.r.t. the final weight matrix, shape (m, d).

    This is the outer product of the output error signal with the final
    layer's input representation (trailing 1 included when biased).
    """
    loss = net.loss if loss is None else loss
    logits, reps, _ = _forward_full(net, x)
    y = _check_target(y, net.out_dim, loss)
    err = _error_vector(logits, y, loss)
    return np.outer(err, reps[-1])


@dataclass(frozen=True)
class GradientRecord:
    gradients: list
    reps: list
    logits: np.ndarray


def all_layer_gradients(net, x, y, loss=None):
    """Backprop through every layer; gradients[l] matches weights[l] in shape."""
    loss = net.loss if loss is None else loss
    logits, reps, preacts = _forward_full(net, x)
    y = _check_target(y, net.out_dim, loss)
    delta = _error_vector(logits, y, loss)  # d(loss)/d(z) at the final layer
    grads = [None] * len(net.layers)
    for li in range(len(net.layers) - 1, -1, -1):
        spec = net.layers[li]
        w = net.weights[li]
        if spec.kind == "dense":
            grads[li] = np.outer(delta, reps[li])
            if li > 0:
                back = w.T @ delta
                if spec.has_bias:
                    back = back[:-1]
                delta = back * _activate_deriv(preacts[li - 1], net.layers[li - 1].activation)
        else:
            omega = delta.reshape(spec.out_channels, spec.out_h * spec.out_w).T
            grads[li] = conv_layer_gradient(reps[li], omega)
    return GradientRecord(gradients=grads, reps=reps, logits=logits)


def conv_layer_gradient(x_col, omega):
    """Conv weight gradient x_col.T @ omega, shape (patch_dim, out_channels)."""
    x_col = np.asarray(x_col, dtype=float)
    omega = np.asarray(omega, dtype=float)
    if x_col.ndim != 2 or omega.ndim != 2 or x_col.shape[0] != omega.shape[0]:
        raise ValueError(
            "patch matrix %s and error matrix %s must share their row count"
            % (x_col.shape, omega.shape)
        )
    return x_col.T @ omega


def _as_training_pairs(net, data):
    if hasattr(data, "inputs") and hasattr(data, "labels"):
        inputs = np.asarray(data.inputs, dtype=float)
        targets = one_hot(data.labels, net.out_dim)
    else:
        inputs, targets = data
        inputs = np.asarray(inputs, dtype=float)
        targets = np.asarray(targets, dtype=float)
    if inputs.ndim != 2 or targets.ndim != 2 or inputs.shape[0] != targets.shape[0]:
        raise ValueError("inputs and targets must be aligned 2-D arrays")
    return inputs, targets


def train_sgd(net, data, lr=0.1, epochs=100, batch=16, seed=0):
    """Minibatch SGD; returns a frozen copy, the input network is untouched.

    Shuffling draws from SplitMix64(seed), one generator across all
    epochs. Each update subtracts lr times the batch-mean gradient.

    Raises:
        NumericError: if the loss goes non-finite, with epoch and batch.
        ValueError: if the network is already frozen or batch/lr invalid.
    """
    if net.frozen:
        raise ValueError("cannot train a frozen network")
    if batch < 1:
        raise ValueError("batch size must be positive, got %r" % (batch,))
    if not lr > 0.0:
        raise ValueError("learning rate must be positive, got %r" % (lr,))
    if epochs < 0:
        raise ValueError("epochs must be non-negative, got %r" % (epochs,))
    trained = net.copy_unfrozen()
    inputs, targets = _as_training_pairs(trained, data)
    n = inputs.shape[0]
    rng = SplitMix64(seed)
    previous = None
    for epoch in range(epochs):
        order = list(range(n))
        rng.shuffle(order)
        total = 0.0
        for start in range(0, n, batch):
            chunk = order[start:start + batch]
            sums = [np.zeros(w.shape) for w in trained.weights]
            for idx in chunk:
                record = all_layer_gradients(trained, inputs[idx], targets[idx])
                for g, s in zip(record.gradients, sums):
                    s += g
                total += loss_value(trained, inputs[idx], targets[idx])
            if not math.isfinite(total):
                raise NumericError(
                    "non-finite loss at epoch %d batch %d" % (epoch, start // batch)
                )
            for w, s in zip(trained.weights, sums):
                w -= lr * (s / len(chunk))
        mean_loss = total / n
        if previous is not None and mean_loss > previous:
            log.warning("epoch %d mean loss rose from %.6g to %.6g", epoch, previous, mean_loss)
        else:
            log.debug("epoch %d mean loss %.6g", epoch, mean_loss)
        previous = mean_loss
    return trained.freeze()


def accuracy(net, data):
    inputs, targets = _as_training_pairs(net, data)
    hits = 0
    for x, y in zip(inputs, targets):
        logits, _, _ = _forward_full(net, x)
        hits += int(np.argmax(logits) == np.argmax(y))
    return hits / inputs.shape[0]


def mean_loss(net, data):
    inputs, targets = _as_training_pairs(net, data)
    return sum(loss_value(net, x, y) for x, y in zip(inputs, targets)) / inputs.shape[0]


_NETWORK_MAGIC = "GONET 1"


def save_network(net, path):
    fields = [("loss", net.loss), ("seed", str(net.seed)),
              ("frozen", "true" if net.frozen else "false"),
              ("layers", str(len(net.layers)))]
    for i, spec in enumerate(net.layers):
        bias = "bias" if spec.has_bias else "nobias"
        if spec.kind == "dense":
            desc = "dense %d %d %s %s" % (spec.in_dim, spec.out_dim, spec.activation, bias)
        else:
            desc = "conv %d %d %d %d %d %s %s" % (
                spec.in_channels, spec.out_channels, spec.kernel,
                spec.in_h, spec.in_w, spec.activation, bias)
        fields.append(("layer%d" % i, desc))
    blobs = [io.encode_matrix(w) for w in net.weights]
    io.write_container(path, _NETWORK_MAGIC, fields, blobs)


def parse_layer_text(desc):
    """Parse a layer description like "dense 16 8 relu bias"."""
    parts = desc.split()
    bias = parts[-1]
    if bias not in ("bias", "nobias"):
        raise ValueError("bad layer description %r" % desc)
    has_bias = bias == "bias"
    if parts[0] == "dense" and len(parts) == 5:
        return dense(int(parts[1]), int(parts[2]), parts[3], has_bias)
    if parts[0] == "conv" and len(parts) == 8:
        return conv(int(parts[1]), int(parts[2]), int(parts[3]),
                    int(parts[4]), int(parts[5]), parts[6], has_bias)
    raise ValueError("bad layer description %r" % desc)


def load_network(path):
    fields, matrices = io.read_container(path, _NETWORK_MAGIC)
    count = int(fields["layers"])
    if len(matrices) != count:
        raise ValueError("network file %s has %d weight blobs, header says %d"
                         % (path, len(matrices), count))
    layers = [parse_layer_text(fields["layer%d" % i]) for i in range(count)]
    net = Network(layers=layers, loss=fields["loss"], seed=int(fields["seed"]),
                  weights=matrices)
    if fields.get("frozen") == "true":
        net.freeze()
    return net

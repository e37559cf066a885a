"""Small fully-connected networks with hand-written reverse-mode gradients.

Everything downstream (critics, actors, expectile value nets) is an MLP with
ReLU between hidden layers and a linear output, so a single class with an
explicit forward/backward pair is all the autodiff we need.  Parameters are
plain numpy arrays; optimizer and target-tracking utilities operate on the
flat parameter lists the networks expose.
"""

from __future__ import annotations

import struct

import numpy as np


class MLP:
    """Multilayer perceptron: linear layers with ReLU in between, linear output.

    Weights and biases are initialized uniformly in +-1/sqrt(fan_in).
    ``forward`` caches layer inputs and pre-activations so that ``backward``
    can return parameter gradients and the gradient with respect to the input.
    """

    def __init__(self, dims, rng=None, dtype=np.float32):
        if len(dims) < 2:
            raise ValueError("need at least input and output dims")
        if any(d <= 0 for d in dims):
            raise ValueError(f"layer dims must be positive, got {dims}")
        if rng is None:
            rng = np.random.default_rng()
        self.dims = tuple(int(d) for d in dims)
        self.dtype = np.dtype(dtype)
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(self.dims[:-1], self.dims[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.weights.append(
                rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(self.dtype)
            )
            self.biases.append(
                rng.uniform(-bound, bound, size=fan_out).astype(self.dtype)
            )
        self._cache = None

    @property
    def n_layers(self):
        return len(self.weights)

    @property
    def params(self):
        """Flat parameter list, alternating weight and bias per layer."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def set_params(self, params):
        if len(params) != 2 * self.n_layers:
            raise ValueError("parameter count mismatch")
        for i in range(self.n_layers):
            w, b = params[2 * i], params[2 * i + 1]
            if w.shape != self.weights[i].shape or b.shape != self.biases[i].shape:
                raise ValueError(f"parameter shape mismatch at layer {i}")
            self.weights[i][...] = w
            self.biases[i][...] = b

    def forward(self, x):
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim != 2:
            raise ValueError(f"expected 2-D input (batch, features), got shape {x.shape}")
        if x.shape[1] != self.dims[0]:
            raise ValueError(
                f"input dim {x.shape[1]} does not match network input dim {self.dims[0]}"
            )
        inputs = []   # input to each linear layer
        preacts = []  # pre-activation of each hidden layer
        h = x
        for i in range(self.n_layers):
            inputs.append(h)
            z = h @ self.weights[i] + self.biases[i]
            if i < self.n_layers - 1:
                preacts.append(z)
                h = np.maximum(z, 0.0)
            else:
                h = z
        self._cache = (inputs, preacts)
        return h

    __call__ = forward

    def backward(self, grad_out):
        """Backpropagate ``grad_out`` (dL/doutput) through the cached forward pass.

        Returns (param_grads, grad_input) where param_grads matches ``params``
        in order and shape.
        """
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        inputs, preacts = self._cache
        grad_out = np.asarray(grad_out, dtype=self.dtype)
        if grad_out.shape != (inputs[0].shape[0], self.dims[-1]):
            raise ValueError(
                f"upstream gradient shape {grad_out.shape} does not match output "
                f"({inputs[0].shape[0]}, {self.dims[-1]})"
            )
        grads_w = [None] * self.n_layers
        grads_b = [None] * self.n_layers
        g = grad_out
        for i in range(self.n_layers - 1, -1, -1):
            grads_w[i] = inputs[i].T @ g
            grads_b[i] = g.sum(axis=0)
            g = g @ self.weights[i].T
            if i > 0:
                g = g * (preacts[i - 1] > 0)
        param_grads = []
        for gw, gb in zip(grads_w, grads_b):
            param_grads.append(gw)
            param_grads.append(gb)
        return param_grads, g

    def copy(self):
        dup = MLP.__new__(MLP)
        dup.dims = self.dims
        dup.dtype = self.dtype
        dup.weights = [w.copy() for w in self.weights]
        dup.biases = [b.copy() for b in self.biases]
        dup._cache = None
        return dup


class Adam:
    """Adaptive-moment optimizer with bias correction.

    beta1=0.9, beta2=0.999, eps=1e-8; one instance owns the moment state for
    one network's parameter list.
    """

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.lr = float(lr)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params, grads):
        """Update ``params`` in place from ``grads`` (same order and shapes)."""
        if len(params) != len(self.m) or len(grads) != len(self.m):
            raise ValueError("parameter/gradient count mismatch")
        for i, g in enumerate(grads):
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient in parameter {i}")
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for i, (p, g) in enumerate(zip(params, grads)):
            m = self.m[i]
            v = self.v[i]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            p -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)


def soft_update(target_params, source_params, eta):
    """Blend every target parameter toward its source: eta*source + (1-eta)*target."""
    if not 0.0 < eta < 1.0:
        raise ValueError(f"eta must be in (0,1), got {eta}")
    if len(target_params) != len(source_params):
        raise ValueError("parameter count mismatch")
    for tp, sp in zip(target_params, source_params):
        if tp.shape != sp.shape:
            raise ValueError(f"parameter shape mismatch: {tp.shape} vs {sp.shape}")
        tp *= 1.0 - eta
        tp += np.asarray(eta * sp, dtype=tp.dtype)


def save_net(net, path):
    """Binary checkpoint: uint32 dim-count header, uint32 layer dims, then all
    parameters flattened as little-endian float32 in layer order (W then b)."""
    with open(path, "wb") as f:
        f.write(struct.pack("<I", len(net.dims)))
        f.write(np.asarray(net.dims, dtype="<u4").tobytes())
        for p in net.params:
            f.write(p.astype("<f4").tobytes())


def load_net(path, dtype=np.float32):
    with open(path, "rb") as f:
        (n_dims,) = struct.unpack("<I", f.read(4))
        dims = np.frombuffer(f.read(4 * n_dims), dtype="<u4").astype(int)
        net = MLP(dims, rng=np.random.default_rng(0), dtype=dtype)
        for i in range(net.n_layers):
            for attr, shape in ((net.weights, net.weights[i].shape), (net.biases, net.biases[i].shape)):
                n = int(np.prod(shape))
                flat = np.frombuffer(f.read(4 * n), dtype="<f4")
                if flat.size != n:
                    raise ValueError("checkpoint truncated")
                attr[i] = flat.reshape(shape).astype(dtype)
    return net


def flatten_params(params):
    return np.concatenate([p.ravel() for p in params])


def unflatten_like(vector, params):
    out = []
    i = 0
    for p in params:
        n = p.size
        out.append(np.asarray(vector[i : i + n], dtype=p.dtype).reshape(p.shape))
        i += n
    if i != vector.size:
        raise ValueError("vector length does not match parameter sizes")
    return out

"""MLPs over the autodiff core, the Adam optimizer, and parameter checkpoints."""
import numpy as np

from .autodiff import Tensor

__all__ = ["glorot_uniform", "MLP", "Adam", "save_checkpoint", "load_checkpoint"]


def glorot_uniform(fan_in, fan_out, rng):
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_in, fan_out))


class MLP:
    """Fully connected net: ReLU (or tanh) hidden layers, identity output.

    Weights are Glorot-uniform, biases zero, drawn from the supplied rng.
    """

    def __init__(self, sizes, rng, hidden="relu"):
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        if hidden not in ("relu", "tanh"):
            raise ValueError(f"unsupported hidden activation {hidden!r}")
        self.sizes = list(sizes)
        self.hidden = hidden
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            self.weights.append(Tensor(glorot_uniform(fan_in, fan_out, rng),
                                       requires_grad=True))
            self.biases.append(Tensor(np.zeros(fan_out), requires_grad=True))

    def forward(self, x):
        if not isinstance(x, Tensor):
            x = Tensor(x)
        if x.data.ndim != 2 or x.data.shape[1] != self.sizes[0]:
            raise ValueError(
                f"expected input (batch, {self.sizes[0]}), got {x.data.shape}")
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = h.relu() if self.hidden == "relu" else h.tanh()
        return h

    def params(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def named_params(self):
        out = []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out.append((f"w{i}", w.data))
            out.append((f"b{i}", b.data))
        return out

    def load_state(self, items):
        named = {n: a for n, a in items}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            w.data[...] = named[f"w{i}"]
            b.data[...] = named[f"b{i}"]

    def zero_grad(self):
        for p in self.params():
            p.zero_grad()


class Adam:
    """Adam with bias correction; updates parameters in place from their .grad."""

    def __init__(self, params, lr, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self._s1 = [np.empty_like(p.data) for p in self.params]
        self._s2 = [np.empty_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, m, v, s1, s2 in zip(self.params, self.m, self.v, self._s1, self._s2):
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise ValueError("non-finite gradient: training diverged")
            m *= self.b1
            np.multiply(g, 1.0 - self.b1, out=s1)
            m += s1
            v *= self.b2
            np.multiply(g, g, out=s1)
            s1 *= 1.0 - self.b2
            v += s1
            np.divide(m, c1, out=s1)
            s1 *= self.lr
            np.divide(v, c2, out=s2)
            np.sqrt(s2, out=s2)
            s2 += self.eps
            s1 /= s2
            p.data -= s1

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


def save_checkpoint(path, named_arrays):
    """Write an ordered (name, array) list; float64 bytes survive exactly."""
    names = [n for n, _ in named_arrays]
    payload = {f"arr_{i}": np.asarray(a, dtype=np.float64)
               for i, (_, a) in enumerate(named_arrays)}
    payload["names"] = np.array(names)
    np.savez(path, **payload)


def load_checkpoint(path):
    with np.load(path) as z:
        names = [str(n) for n in z["names"]]
        return [(n, z[f"arr_{i}"]) for i, n in enumerate(names)]

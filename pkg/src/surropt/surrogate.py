"""Local surrogate machinery: trust-region LHS acquisition, history buffer,
ensemble training, the uncertainty feature, and surrogate objective gradients.
"""
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, concat
from .nets import MLP, Adam
from .problems import muon_objective, sample_x, simulate

__all__ = [
    "TrustRegion", "Dataset", "HistoryBuffer", "SurrogateEnsemble",
    "lhs_sample_psi", "acquire_data", "filter_history", "warm_start_dataset",
    "train_ensemble", "uncertainty_sigma", "surrogate_objective_gradient",
]

Z_DIM = 100


@dataclass
class TrustRegion:
    """Box |psi_j - center| <= epsilon per coordinate."""
    center: np.ndarray
    epsilon: float

    def contains(self, points):
        pts = np.atleast_2d(points)
        return np.all(np.abs(pts - self.center) <= self.epsilon, axis=1)


@dataclass
class Dataset:
    psis: np.ndarray  # (rows, psi_dim)
    xs: np.ndarray    # (rows, x_dim)
    ys: np.ndarray    # (rows, y_dim)

    def __len__(self):
        return len(self.xs)


@dataclass
class _CallBlock:
    psi_pts: np.ndarray  # (M, psi_dim)
    xs: np.ndarray       # (M, N, x_dim)
    ys: np.ndarray       # (M, N, y_dim)
    episode_index: int
    call_index: int


class HistoryBuffer:
    """Per-call blocks of (psi_j, x, y) records; append-only within an episode.

    max_calls, when set, evicts the oldest call blocks FIFO; the global call
    counter keeps increasing so warm-start recency stays well defined.
    """

    def __init__(self, max_calls=None):
        self.blocks = []
        self.max_calls = max_calls
        self._calls_ever = 0

    def append_call(self, psi_pts, xs, ys, episode_index, call_index=None):
        if call_index is None:
            call_index = self._calls_ever
        self.blocks.append(_CallBlock(np.asarray(psi_pts, dtype=np.float64),
                                      np.asarray(xs, dtype=np.float64),
                                      np.asarray(ys, dtype=np.float64),
                                      episode_index, call_index))
        self._calls_ever = max(self._calls_ever + 1, call_index + 1)
        if self.max_calls is not None:
            while len(self.blocks) > self.max_calls:
                self.blocks.pop(0)

    @property
    def n_calls(self):
        return len(self.blocks)

    @property
    def next_call_index(self):
        return self._calls_ever

    @property
    def n_records(self):
        return sum(b.xs.shape[0] * b.xs.shape[1] for b in self.blocks)


def lhs_sample_psi(region, m, rng):
    """Standard per-dimension stratified LHS: m points, one per stratum."""
    if m < 1:
        raise ValueError("need m >= 1 sample points")
    center = np.asarray(region.center, dtype=np.float64)
    d = len(center)
    lo = center - region.epsilon
    width = 2.0 * region.epsilon / m
    u = rng.random((m, d))
    pts = np.empty((m, d))
    for j in range(d):
        order = rng.permutation(m)
        pts[:, j] = lo[j] + (order + u[:, j]) * width
    return pts


def acquire_data(problem, region, xdist, buffer, rng, episode_index=0):
    """One simulator call: M LHS psi points x N x-draws, appended to the buffer."""
    psi_pts = lhs_sample_psi(region, problem.M, rng)
    xs = np.empty((problem.M, problem.N, problem.x_dim))
    ys = np.empty((problem.M, problem.N, problem.y_dim))
    for j, pj in enumerate(psi_pts):
        xs[j] = sample_x(problem, xdist, problem.N, rng)
        ys[j] = simulate(problem, pj, xs[j], rng)
    call_index = buffer.next_call_index
    buffer.append_call(psi_pts, xs, ys, episode_index, call_index)
    return _block_dataset(buffer.blocks[-1], np.ones(problem.M, dtype=bool))


def _block_dataset(block, mask):
    m, n, x_dim = block.xs.shape
    y_dim = block.ys.shape[2]
    psi_rep = np.repeat(block.psi_pts[mask], n, axis=0)
    return Dataset(psis=psi_rep,
                   xs=block.xs[mask].reshape(-1, x_dim),
                   ys=block.ys[mask].reshape(-1, y_dim))


def _empty_dataset(buffer):
    if buffer.blocks:
        b = buffer.blocks[0]
        return Dataset(np.empty((0, b.psi_pts.shape[1])),
                       np.empty((0, b.xs.shape[2])), np.empty((0, b.ys.shape[2])))
    return Dataset(np.empty((0, 0)), np.empty((0, 0)), np.empty((0, 0)))


def filter_history(buffer, region):
    """All buffer records whose psi_j lies in the region, any episode."""
    parts = []
    for block in buffer.blocks:
        mask = region.contains(block.psi_pts)
        if mask.any():
            parts.append(_block_dataset(block, mask))
    if not parts:
        return _empty_dataset(buffer)
    return Dataset(psis=np.concatenate([p.psis for p in parts]),
                   xs=np.concatenate([p.xs for p in parts]),
                   ys=np.concatenate([p.ys for p in parts]))


def warm_start_dataset(buffer, region, current_call_index, rng):
    """In-region records, geometrically thinned with recency: the current
    retraining step keeps everything, a step k back keeps floor(n * 2^-k),
    subsampled uniformly without replacement."""
    parts = []
    for block in buffer.blocks:
        k = current_call_index - block.call_index
        if k < 0:
            continue
        mask = region.contains(block.psi_pts)
        if not mask.any():
            continue
        ds = _block_dataset(block, mask)
        keep = int(np.floor(len(ds) * 2.0 ** (-k)))
        if keep == 0:
            continue
        if keep < len(ds):
            idx = rng.choice(len(ds), size=keep, replace=False)
            ds = Dataset(ds.psis[idx], ds.xs[idx], ds.ys[idx])
        parts.append(ds)
    if not parts:
        return _empty_dataset(buffer)
    return Dataset(psis=np.concatenate([p.psis for p in parts]),
                   xs=np.concatenate([p.xs for p in parts]),
                   ys=np.concatenate([p.ys for p in parts]))


# ---- ensemble ----

def _member_arrays(member):
    return [w.data for w in member.weights], [b.data for b in member.biases]


def _forward_np(Ws, bs, X):
    """Plain forward pass; identical arithmetic to MLP.forward without the tape."""
    h = X
    last = len(Ws) - 1
    for i, (w, b) in enumerate(zip(Ws, bs)):
        h = h @ w + b
        if i < last:
            h = h * (h > 0.0)
    return h


def _forward_cached(Ws, bs, X):
    """Forward pass keeping layer inputs and ReLU masks for a backward pass."""
    acts = [X]
    masks = []
    h = X
    last = len(Ws) - 1
    for i, (w, b) in enumerate(zip(Ws, bs)):
        h = h @ w + b
        if i < last:
            mask = h > 0.0
            h = h * mask
            masks.append(mask)
            acts.append(h)
    return h, acts, masks


def _param_grads(Ws, acts, masks, g):
    """Reverse pass for weight/bias gradients, layer order preserved."""
    grads = [None] * len(Ws)
    for i in range(len(Ws) - 1, -1, -1):
        grads[i] = (acts[i].T @ g, g.sum(axis=0))
        if i > 0:
            g = (g @ Ws[i].T) * masks[i - 1]
    return grads


def _input_grad(Ws, masks, g):
    """Reverse pass for the gradient w.r.t. the network input only."""
    for i in range(len(Ws) - 1, 0, -1):
        g = (g @ Ws[i].T) * masks[i - 1]
    return g @ Ws[0].T


def _objective_output_grad(problem, out):
    """d(objective)/d(out) for the closed-form objectives; None if unsupported."""
    n = out.size
    if problem.objective == "hump":
        gm = 1.0 / n
        sig = lambda v: np.exp(-np.logaddexp(0.0, -v))
        s1 = sig(out - 10.0)
        s0 = sig(out)
        return (gm * s1) * (1.0 - s1) + ((-gm) * s0) * (1.0 - s0)
    if problem.objective == "mean_y":
        return np.full(out.shape, 1.0 / n)
    return None


def _np_objective(problem, ys):
    y = ys.ravel()
    if problem.objective == "hump":
        sig = lambda v: np.exp(-np.logaddexp(0.0, -v))
        return float(np.mean(sig(y - 10.0) - sig(y)))
    if problem.objective == "mean_y":
        return float(np.mean(y))
    if problem.objective == "muon":
        a1, a2 = problem.muon_alpha
        return muon_objective(y, np.ones(len(y)), a1, a2)
    raise ValueError(f"no surrogate objective for {problem.objective!r}")


def _tape_objective(problem, out):
    if problem.objective == "hump":
        return ((out - 10.0).sigmoid() - out.sigmoid()).mean()
    if problem.objective == "mean_y":
        return out.mean()
    if problem.objective == "muon":
        a1, a2 = problem.muon_alpha
        rad = ((out + a2) * (-1.0 / a1) + 1.0).maximum(1e-12)
        return rad.sqrt().sum()
    raise ValueError(f"no surrogate objective for {problem.objective!r}")


class SurrogateEnsemble:
    """Ensemble of MLPs on (psi, x, z); members differ only by init seed."""

    def __init__(self, problem, member_seeds, members=None, hidden=(256, 256)):
        if members is not None:
            member_seeds = list(member_seeds)[:members]
        self.problem = problem
        self.member_seeds = [int(s) for s in member_seeds]
        self.sizes = [problem.psi_dim + problem.x_dim + Z_DIM, *hidden, problem.y_dim]
        self.trained = False
        self.reinit()

    @property
    def n_members(self):
        return len(self.member_seeds)

    def reinit(self):
        self.members = [MLP(self.sizes, rng=np.random.default_rng(seed))
                        for seed in self.member_seeds]
        self.trained = False

    def member_out(self, i, X):
        Ws, bs = _member_arrays(self.members[i])
        return _forward_np(Ws, bs, X)

    def train(self, dataset, rng, epochs=2, batch_size=512, lr=1e-3):
        if len(dataset) == 0:
            raise ValueError("cannot train on an empty dataset")
        if not np.all(np.isfinite(dataset.ys)):
            raise ValueError("non-finite targets: training rejected")
        self.reinit()
        base = np.concatenate([dataset.psis, dataset.xs], axis=1)
        ys = dataset.ys
        opts = [Adam(m.params(), lr=lr) for m in self.members]
        arrays = [_member_arrays(m) for m in self.members]
        rows = len(dataset)
        for _ in range(epochs):
            perm = rng.permutation(rows)
            for start in range(0, rows, batch_size):
                idx = perm[start:start + batch_size]
                zb = rng.standard_normal((len(idx), Z_DIM))
                xb = np.concatenate([base[idx], zb], axis=1)
                yb = ys[idx]
                for member, opt, (Ws, bs) in zip(self.members, opts, arrays):
                    out, acts, masks = _forward_cached(Ws, bs, xb)
                    diff = out - yb
                    g_out = ((1.0 / diff.size) * 2.0) * diff
                    grads = _param_grads(Ws, acts, masks, g_out)
                    for (w, b), (gw, gb) in zip(zip(member.weights, member.biases),
                                                grads):
                        w.grad = gw
                        b.grad = gb
                    opt.step()
        self.trained = True

    def mse_on(self, dataset, rng):
        zs = rng.standard_normal((len(dataset), Z_DIM))
        X = np.concatenate([dataset.psis, dataset.xs, zs], axis=1)
        losses = [float(np.mean((self.member_out(i, X) - dataset.ys) ** 2))
                  for i in range(self.n_members)]
        return float(np.mean(losses))

    def sample_objective(self, psi, xs, zs, problem, mode="mean_of_grads"):
        n = len(xs)
        X = np.concatenate([np.broadcast_to(psi, (n, len(psi))), xs, zs], axis=1)
        outs = [self.member_out(i, X) for i in range(self.n_members)]
        if mode == "grad_of_mean":
            return _np_objective(problem, np.mean(outs, axis=0))
        return float(np.mean([_np_objective(problem, o) for o in outs]))

    def objective_gradient_at(self, psi, xs, zs, problem, mode="mean_of_grads"):
        """Gradient of the sampled surrogate objective w.r.t. psi, fixed samples."""
        if mode not in ("grad_of_mean", "mean_of_grads"):
            raise ValueError(f"unknown gradient mode {mode!r}")
        psi = np.asarray(psi, dtype=np.float64)
        grad = self._closed_form_gradient(psi, xs, zs, problem, mode)
        if grad is None:
            grad = self._tape_gradient(psi, xs, zs, problem, mode)
        if not np.all(np.isfinite(grad)):
            raise ValueError("non-finite surrogate gradient")
        return grad

    def _closed_form_gradient(self, psi, xs, zs, problem, mode):
        """Fast path for the closed-form objectives; backpropagates only to psi."""
        n = len(xs)
        d = len(psi)
        X = np.concatenate([np.broadcast_to(psi, (n, d)), xs, zs], axis=1)
        cached = []
        for member in self.members:
            Ws, bs = _member_arrays(member)
            out, _, masks = _forward_cached(Ws, bs, X)
            cached.append((Ws, masks, out))
        if mode == "grad_of_mean":
            total = None
            for _, _, out in cached:
                total = out if total is None else total + out
            g_out = _objective_output_grad(problem, total * (1.0 / self.n_members))
            if g_out is None:
                return None
            g_shared = g_out * (1.0 / self.n_members)
            acc = np.zeros_like(psi)
            for Ws, masks, _ in cached:
                acc += _input_grad(Ws, masks, g_shared)[:, :d].sum(axis=0)
            return acc
        acc = np.zeros_like(psi)
        for Ws, masks, out in cached:
            g_out = _objective_output_grad(problem, out)
            if g_out is None:
                return None
            acc += _input_grad(Ws, masks, g_out)[:, :d].sum(axis=0)
        return acc / self.n_members

    def _tape_gradient(self, psi, xs, zs, problem, mode):
        n = len(xs)
        psi_t = Tensor(psi, requires_grad=True)
        rep = psi_t.reshape((1, len(psi))).broadcast_to((n, len(psi)))
        X = concat([rep, Tensor(np.concatenate([xs, zs], axis=1))], axis=1)
        if mode == "grad_of_mean":
            total = None
            for member in self.members:
                out = member.forward(X)
                total = out if total is None else total + out
            obj = _tape_objective(problem, total * (1.0 / self.n_members))
            obj.backward()
            return psi_t.grad.copy()
        acc = np.zeros_like(psi)
        for member in self.members:
            out = member.forward(X)
            obj = _tape_objective(problem, out)
            psi_t.zero_grad()
            obj.backward()
            acc += psi_t.grad
        return acc / self.n_members


def train_ensemble(ensemble, dataset, rng):
    ensemble.train(dataset, rng)
    return ensemble


def uncertainty_sigma(ensemble, psi, xdist, D, rng):
    """Population std across member mean predictions on D shared (x, z) draws."""
    if D < 1:
        raise ValueError("need D >= 1 samples")
    problem = ensemble.problem
    xs = sample_x(problem, xdist, D, rng)
    zs = rng.standard_normal((D, Z_DIM))
    X = np.concatenate([np.broadcast_to(psi, (D, len(psi))), xs, zs], axis=1)
    means = [float(np.mean(ensemble.member_out(i, X)))
             for i in range(ensemble.n_members)]
    return float(np.std(means))


def surrogate_objective_gradient(ensemble, psi, xdist, problem, n_grad, rng,
                                 mode="mean_of_grads"):
    """Monte-Carlo objective gradient: fresh x and z draws, z shared across members."""
    if n_grad < 1:
        raise ValueError("need n_grad >= 1 samples")
    xs = sample_x(problem, xdist, n_grad, rng)
    zs = rng.standard_normal((n_grad, Z_DIM))
    return ensemble.objective_gradient_at(psi, xs, zs, problem, mode=mode)

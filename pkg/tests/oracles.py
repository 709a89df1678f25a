"""Independent reference implementations the tests compare against.

Nothing here goes through the message transport or the cut-layer split.
"""

from __future__ import annotations

import numpy as np

from feddct.data import batch_indices, generate_views
from feddct.losses import cluster_objective_op
from feddct.nn import NesterovSGD, Sequential, Tensor
from feddct.orchestration.config import batch_stream, step_stream


def naive_conv2d(x, w, b=None, stride=1, padding=0, groups=1):
    """Seven nested loops, no vectorisation."""
    n, c_in, h, wd = x.shape
    c_out, cpg, kh, kw = w.shape
    xp = np.zeros((n, c_in, h + 2 * padding, wd + 2 * padding))
    xp[:, :, padding : padding + h, padding : padding + wd] = x
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((n, c_out, ho, wo))
    opg = c_out // groups
    for i in range(n):
        for o in range(c_out):
            g = o // opg
            for r in range(ho):
                for c in range(wo):
                    acc = 0.0
                    for ci in range(cpg):
                        for u in range(kh):
                            for v in range(kw):
                                acc += w[o, ci, u, v] * xp[i, g * cpg + ci, r * stride + u, c * stride + v]
                    out[i, o, r, c] = acc + (b[o] if b is not None else 0.0)
    return out


def central_difference(f, arrays, h=1e-4):
    """Numerical gradient of scalar ``f()`` w.r.t. each array, perturbed in place."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + h
            fp = f()
            arr[idx] = orig - h
            fm = f()
            arr[idx] = orig
            g[idx] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


def max_relative_error(analytic, numeric, floor=1e-6):
    """``max |a - n| / max(|a| + |n|, floor)`` elementwise."""
    a, n = np.asarray(analytic), np.asarray(numeric)
    return float(np.max(np.abs(a - n) / np.maximum(np.abs(a) + np.abs(n), floor)))


def unrolled_nesterov(w0, grad_fn, lr, momentum, steps):
    """PyTorch-form Nesterov written out by hand."""
    w, v = float(w0), 0.0
    for _ in range(steps):
        g = grad_fn(w)
        v = momentum * v + g
        w = w - lr * (g + momentum * v)
    return w


def scalar_weighted_mean(values, weights):
    total = sum(weights)
    return sum(w * x for w, x in zip(weights, values)) / total


class MonolithicCoTraining:
    """A single process co-training ``S`` whole sub-models on one cluster's data.

    Every step computes the summed cross-entropies plus the weighted
    co-training term on full (unsplit) models and updates all parameters.
    Optimizer bookkeeping mirrors what the devices own: upper-portion momentum
    lives for the whole round, lower-portion momentum restarts whenever the
    main client changes (the buffers do not travel with the weights).
    """

    def __init__(self, models: list[Sequential], cut: int, cfg, members: list[int], shards: dict, reshape):
        self.models, self.cut, self.cfg = models, cut, cfg
        self.members, self.shards, self.reshape = members, shards, reshape

    def _optimizers(self, lower: bool, lr: float):
        opts = []
        for m in self.models:
            params = m.split(self.cut)[0 if lower else 1].parameters()
            opts.append(NesterovSGD(params, lr, self.cfg.momentum, self.cfg.weight_decay))
        return opts

    def train_round(self, rnd: int, order=None, on_phase_end=None):
        cfg, S = self.cfg, len(self.models)
        lr = cfg.lr(rnd)
        for m in self.models:
            for p in m.parameters():
                p.momentum_buffer = np.zeros_like(p.data)
        upper_opts = self._optimizers(False, lr)
        holder, lower_opts = None, None
        for epoch in range(cfg.local_epochs):
            for main in (order or self.members):
                if main != holder:
                    for m in self.models:
                        for p in m.split(self.cut)[0].parameters():
                            p.momentum_buffer = np.zeros_like(p.data)
                    lower_opts = self._optimizers(True, lr)
                    holder = main
                X, y = self.shards[main]
                for b, idx in enumerate(batch_indices(len(y), cfg.batch_size, batch_stream(cfg.seed, rnd, main, epoch))):
                    step = step_stream(cfg.seed, rnd, main, epoch, b)
                    views = generate_views(X[idx], S, [step.child("view", k) for k in range(S)], cfg.augment)
                    logits = [self.models[k](Tensor(self.reshape(views[k])), step.child("dropout", k)) for k in range(S)]
                    loss = cluster_objective_op(logits, y[idx], cfg.lambda_cot)
                    loss.backward()
                    for opt in upper_opts + lower_opts:
                        opt.step()
                if on_phase_end is not None:
                    on_phase_end(epoch, main, [m.state_dict() for m in self.models])
        return [m.state_dict() for m in self.models]

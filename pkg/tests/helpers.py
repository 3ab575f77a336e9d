"""Shared oracles and gradient-check utilities for the test suite."""

from __future__ import annotations

import numpy as np

from attentab.autodiff import Parameter, Tape

FD_H = 1e-5
REL_FLOOR = 1e-6


def rel_err(a: float, b: float, floor: float = REL_FLOOR) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def grad_check(build_loss, params, rng, samples=5, h=FD_H, floor=REL_FLOOR):
    """Compare tape gradients of every parameter against central finite
    differences of the scalar loss. ``build_loss(tape)`` must rebuild the
    loss from current parameter values; returns the worst relative error.
    """
    tape = Tape()
    loss = build_loss(tape)
    for p in params:
        p.zero_grad()
    tape.backward(loss)
    worst = 0.0
    for p in params:
        flat = p.data.ravel()
        gflat = p.grad.ravel()
        count = min(samples, flat.size)
        for i in rng.choice(flat.size, size=count, replace=False):
            orig = flat[i]
            flat[i] = orig + h
            up = build_loss(None).item()
            flat[i] = orig - h
            down = build_loss(None).item()
            flat[i] = orig
            fd = (up - down) / (2.0 * h)
            worst = max(worst, rel_err(fd, float(gflat[i]), floor))
    return worst


def weighted_sum_loss(op, x: Parameter, weights: np.ndarray):
    """Loss builder reducing an op's output to a scalar via fixed weights,
    so finite differences probe every output entry."""
    from attentab.autodiff import Tensor, mul, reduce_sum

    w = np.asarray(weights, dtype=np.float64)

    def build(tape):
        out = op(tape, x)
        assert out.data.shape == w.shape
        return reduce_sum(tape, mul(tape, out, Tensor(w)))

    return build


# ------------------------------------------------------------ sparsemax oracles


def sparsemax_rowloop(z: np.ndarray) -> np.ndarray:
    """Naive per-row oracle: try every support size k, keep the one whose
    threshold is consistent. Independent of the vectorized implementation."""
    z = np.asarray(z, dtype=np.float64)
    out = np.zeros_like(z)
    for b in range(z.shape[0]):
        row = np.sort(z[b])[::-1]
        k_star = 1
        for k in range(1, row.size + 1):
            if 1.0 + k * row[k - 1] > row[:k].sum():
                k_star = k
        tau = (row[:k_star].sum() - 1.0) / k_star
        out[b] = np.maximum(z[b] - tau, 0.0)
    return out


def sparsemax_bisect(z: np.ndarray, iters: int = 200) -> np.ndarray:
    """Second oracle: find tau by bisection on sum(max(z - tau, 0)) = 1,
    a different algorithm entirely (no sorting)."""
    z = np.asarray(z, dtype=np.float64)
    out = np.zeros_like(z)
    for b in range(z.shape[0]):
        row = z[b]
        lo, hi = row.min() - 1.0, row.max()
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            if np.maximum(row - mid, 0.0).sum() > 1.0:
                lo = mid
            else:
                hi = mid
        out[b] = np.maximum(row - 0.5 * (lo + hi), 0.0)
    return out


def sparsemax_margin(z: np.ndarray) -> float:
    """Distance of the closest coordinate to its row's support boundary;
    inputs this close to a kink make finite differences invalid."""
    from attentab.autodiff import sparsemax as _sm
    from attentab.autodiff import Tensor

    out = _sm(None, Tensor(z)).data
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=1, keepdims=True)
    margin = np.inf
    for b in range(z.shape[0]):
        support = out[b] > 0
        tau = (shifted[b][support].sum() - 1.0) / support.sum()
        margin = min(margin, np.abs(shifted[b] - tau).min())
    return float(margin)


# --------------------------------------------------- per-op FD case registry


def _away_from(rng, shape, kink, clearance=2e-3):
    """Normal draw resampled until no entry sits within `clearance` of the
    kink location(s), keeping central differences on one smooth branch."""
    kinks = np.atleast_1d(np.asarray(kink, dtype=np.float64))
    while True:
        x = rng.normal(size=shape)
        dist = np.min(np.abs(x[..., None] - kinks), axis=-1)
        if dist.min() > clearance:
            return x


def _sparsemax_safe(rng, shape, clearance=2e-3):
    while True:
        z = rng.normal(scale=2.0, size=shape)
        if sparsemax_margin(z) > clearance:
            return z


def op_fd_cases(rng):
    """One kink-safe random FD case per differentiable primitive.

    Returns a list of (name, build_loss, params); build_loss(tape) rebuilds
    the scalar loss from current parameter values.
    """
    from attentab import autodiff as ad

    B, F = 3, 4
    cases = []

    def add_case(name, op, x_data, out_shape=None):
        x = ad.Parameter(x_data)
        w = rng.normal(size=out_shape if out_shape is not None else x_data.shape)
        cases.append((name, weighted_sum_loss(op, x, w), [x]))

    x0 = ad.Parameter(rng.normal(size=(B, F)))
    w0 = ad.Parameter(rng.normal(size=(F, 2)))
    b0 = ad.Parameter(rng.normal(size=2))
    wsum = ad.Tensor(rng.normal(size=(B, 2)))

    def linear_loss(tape):
        return ad.reduce_sum(tape, ad.mul(tape, ad.linear(tape, x0, w0, b0), wsum))

    cases.append(("linear", linear_loss, [x0, w0, b0]))

    add_case("relu", ad.relu, _away_from(rng, (B, F), 0.0))
    add_case("glu", ad.glu, rng.normal(size=(B, 2 * F)), out_shape=(B, F))
    add_case("sparsemax", ad.sparsemax, _sparsemax_safe(rng, (B, F)))
    add_case("softmax_logprob", ad.softmax_logprob, rng.normal(size=(B, F)))

    y0 = ad.Parameter(rng.normal(size=(B, F)))
    y1 = ad.Parameter(rng.normal(size=(B, F)))
    wpair = ad.Tensor(rng.normal(size=(B, F)))
    for name, op2 in (("add", ad.add), ("sub", ad.sub), ("mul", ad.mul)):
        def pair_loss(tape, op2=op2):
            return ad.reduce_sum(tape, ad.mul(tape, op2(tape, y0, y1), wpair))

        cases.append((name, pair_loss, [y0, y1]))

    add_case("scale", lambda t, x: ad.scale(t, x, -1.7), rng.normal(size=(B, F)))
    add_case("add_const", lambda t, x: ad.add_const(t, x, 0.3), rng.normal(size=(B, F)))
    add_case("exp", ad.exp, rng.normal(size=(B, F)))
    add_case("log", ad.log, 0.1 + np.abs(rng.normal(size=(B, F))))
    add_case(
        "pow_const",
        lambda t, x: ad.pow_const(t, x, 1.7),
        0.05 + np.abs(rng.normal(size=(B, F))),
    )
    add_case(
        "maximum_const",
        lambda t, x: ad.maximum_const(t, x, 0.2),
        _away_from(rng, (B, F), 0.2),
    )
    keep = rng.random((B, F)) > 0.4
    add_case("mask_fill", lambda t, x: ad.mask_fill(t, x, keep, -3.0), rng.normal(size=(B, F)))

    for name, red in (("reduce_sum_all", ad.reduce_sum), ("reduce_mean_all", ad.reduce_mean)):
        xr = ad.Parameter(rng.normal(size=(B, F)))
        cr = float(rng.normal())

        def red_loss(tape, red=red, xr=xr, cr=cr):
            return ad.scale(tape, red(tape, xr), cr)

        cases.append((name, red_loss, [xr]))

    add_case("reduce_sum_rows", lambda t, x: ad.reduce_sum(t, x, axis=0), rng.normal(size=(B, F)), out_shape=(F,))
    add_case("reduce_mean_cols", lambda t, x: ad.reduce_mean(t, x, axis=1), rng.normal(size=(B, F)), out_shape=(B,))

    idx = rng.integers(0, F, size=B)
    add_case("gather_rows", lambda t, x: ad.gather_rows(t, x, idx), rng.normal(size=(B, F)), out_shape=(B,))

    codes = rng.integers(0, 5, size=B)
    codes[1] = codes[0]  # force a duplicate so scatter-add accumulation is probed
    add_case("embedding", lambda t, x: ad.embedding(t, x, codes), rng.normal(size=(5, 2)), out_shape=(B, 2))

    p0 = ad.Parameter(rng.normal(size=(B, 2)))
    p1 = ad.Parameter(rng.normal(size=(B, 3)))
    wcat = ad.Tensor(rng.normal(size=(B, 5)))

    def concat_loss(tape):
        return ad.reduce_sum(tape, ad.mul(tape, ad.concat_cols(tape, [p0, p1]), wcat))

    cases.append(("concat_cols", concat_loss, [p0, p1]))

    add_case("slice_cols", lambda t, x: ad.slice_cols(t, x, 1, 3), rng.normal(size=(B, F)), out_shape=(B, 2))

    for mode, training in (("train", True), ("eval", False)):
        bn = ad.BatchNorm(F, name=f"fd_bn_{mode}")
        bn.running_mean[...] = rng.normal(size=F)
        bn.running_var[...] = 0.5 + rng.random(F)
        xbn = ad.Parameter(rng.normal(size=(6, F)))
        wbn = ad.Tensor(rng.normal(size=(6, F)))

        def bn_loss(tape, bn=bn, xbn=xbn, wbn=wbn, training=training):
            return ad.reduce_sum(tape, ad.mul(tape, bn(tape, xbn, training), wbn))

        cases.append((f"batch_norm_{mode}", bn_loss, [xbn, bn.gamma, bn.beta]))

    return cases


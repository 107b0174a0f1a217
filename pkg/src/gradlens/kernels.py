"""Hot numeric kernels, JIT-compiled with numba when available.

Every kernel exists twice: a loop-style version that numba compiles, and a
vectorized pure-numpy fallback. The active set is chosen once at import time
from the ``GRADLENS_BACKEND`` environment variable:

    GRADLENS_BACKEND=auto    use numba if importable, else numpy (default)
    GRADLENS_BACKEND=numba   require numba, fail loudly if missing
    GRADLENS_BACKEND=numpy   force the fallback path

Both backends implement identical arithmetic up to floating-point reduction
order; ``benchmarks/bench_backends.py`` times them against each other and the
test suite checks they agree to 1e-12. All kernels take and return float64
arrays and are safe to call concurrently.
"""

from __future__ import annotations

import os

import numpy as np

from gradlens.errors import ConfigError

_REQUESTED = os.environ.get("GRADLENS_BACKEND", "auto").strip().lower() or "auto"
if _REQUESTED not in ("auto", "numba", "numpy"):
    raise ConfigError(
        f"GRADLENS_BACKEND must be auto|numba|numpy, got {_REQUESTED!r}"
    )

_HAVE_NUMBA = False
if _REQUESTED != "numpy":
    try:
        from numba import njit  # noqa: F401

        _HAVE_NUMBA = True
    except ImportError:
        if _REQUESTED == "numba":
            raise ConfigError("GRADLENS_BACKEND=numba but numba is not importable")

USING_NUMBA = _HAVE_NUMBA


def backend_name() -> str:
    return "numba" if USING_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# Pure-numpy implementations (fallback path, also the reference semantics).
# ---------------------------------------------------------------------------


def _np_logsumexp(v):
    m = np.max(v)
    return m + np.log(np.sum(np.exp(v - m)))


def _np_log_softmax(v):
    m = np.max(v)
    shifted = v - m
    return shifted - np.log(np.sum(np.exp(shifted)))


def _np_softmax(v):
    m = np.max(v)
    e = np.exp(v - m)
    return e / np.sum(e)


def _np_weighted_dlogits(probs, actions, coeffs):
    # d/dlogits of sum_i coeffs[i] * log softmax(logits)[actions[i]]
    out = -np.sum(coeffs) * probs
    np.add.at(out, actions, coeffs)
    return out


def _np_entropy_dlogits(probs, log_probs):
    # d/dlogits of H(softmax(logits)) = -sum_k p_k log p_k
    ent = -np.sum(probs * log_probs)
    return -probs * (log_probs + ent)


def _np_kl_dlogits(probs, log_probs, ref_log_probs):
    # d/dlogits of KL(softmax(logits) || ref); ref is constant
    diff = log_probs - ref_log_probs
    kl = np.sum(probs * diff)
    return probs * (diff - kl)


def _np_mlp_forward(w1, b1, w2, b2, x):
    h = np.tanh(w1 @ x + b1)
    return h, w2 @ h + b2


def _np_mlp_backward(dlogits, h, x, w2):
    dw2 = np.outer(dlogits, h)
    db2 = dlogits.copy()
    dpre = (w2.T @ dlogits) * (1.0 - h * h)
    dw1 = np.outer(dpre, x)
    return dw1, dpre, dw2, db2


def _np_normalize_advantages(rewards, eps):
    # all-equal groups return exact zeros; a mean/std test would leave
    # O(eps_machine / eps) residue because the float mean is inexact
    if np.all(rewards == rewards[0]):
        return np.zeros_like(rewards)
    mu = np.mean(rewards)
    centered = rewards - mu
    sigma = np.sqrt(np.mean(centered * centered))
    return centered / (sigma + eps)


def _np_ema_series(values, coeff):
    out = np.empty_like(values)
    if values.shape[0] == 0:
        return out
    acc = values[0]
    out[0] = acc
    for t in range(1, values.shape[0]):
        acc = coeff * acc + (1.0 - coeff) * values[t]
        out[t] = acc
    return out


def _np_categorical_draws(cdf, uniforms):
    idx = np.searchsorted(cdf, uniforms, side="right")
    return np.minimum(idx, cdf.shape[0] - 1).astype(np.int64)


def _np_quadratic_descent(eigs, delta0, step_size, steps):
    # Gradient descent on f(x) = 0.5 (x-x*)' diag(eigs) (x-x*), tracked in
    # the shifted coordinate delta = x - x*. Returns steps+1 samples.
    subopt = np.empty(steps + 1)
    sqnorm = np.empty(steps + 1)
    delta = delta0.copy()
    for t in range(steps + 1):
        g = eigs * delta
        subopt[t] = 0.5 * np.sum(g * delta)
        sqnorm[t] = np.sum(g * g)
        if t < steps:
            delta = delta - step_size * g
    return subopt, sqnorm


def _np_cross_and_naive(samples):
    # samples: (n_batches, B, dim). Per batch: split in half, form the two
    # half means, return their inner product and the squared norm of the
    # full-batch mean.
    half = samples.shape[1] // 2
    g1 = samples[:, :half, :].mean(axis=1)
    g2 = samples[:, half:, :].mean(axis=1)
    full = samples.mean(axis=1)
    cross = np.einsum("nd,nd->n", g1, g2)
    naive = np.einsum("nd,nd->n", full, full)
    return cross, naive


# ---------------------------------------------------------------------------
# Loop implementations compiled by numba.
# ---------------------------------------------------------------------------


def _loop_logsumexp(v):
    m = v[0]
    for i in range(1, v.shape[0]):
        if v[i] > m:
            m = v[i]
    s = 0.0
    for i in range(v.shape[0]):
        s += np.exp(v[i] - m)
    return m + np.log(s)


def _loop_log_softmax(v):
    m = v[0]
    for i in range(1, v.shape[0]):
        if v[i] > m:
            m = v[i]
    s = 0.0
    for i in range(v.shape[0]):
        s += np.exp(v[i] - m)
    logz = np.log(s)
    out = np.empty_like(v)
    for i in range(v.shape[0]):
        out[i] = v[i] - m - logz
    return out


def _loop_softmax(v):
    m = v[0]
    for i in range(1, v.shape[0]):
        if v[i] > m:
            m = v[i]
    out = np.empty_like(v)
    s = 0.0
    for i in range(v.shape[0]):
        e = np.exp(v[i] - m)
        out[i] = e
        s += e
    for i in range(v.shape[0]):
        out[i] /= s
    return out


def _loop_weighted_dlogits(probs, actions, coeffs):
    k = probs.shape[0]
    out = np.zeros(k)
    total = 0.0
    for i in range(coeffs.shape[0]):
        total += coeffs[i]
        out[actions[i]] += coeffs[i]
    for j in range(k):
        out[j] -= total * probs[j]
    return out


def _loop_entropy_dlogits(probs, log_probs):
    ent = 0.0
    for j in range(probs.shape[0]):
        ent -= probs[j] * log_probs[j]
    out = np.empty_like(probs)
    for j in range(probs.shape[0]):
        out[j] = -probs[j] * (log_probs[j] + ent)
    return out


def _loop_kl_dlogits(probs, log_probs, ref_log_probs):
    kl = 0.0
    for j in range(probs.shape[0]):
        kl += probs[j] * (log_probs[j] - ref_log_probs[j])
    out = np.empty_like(probs)
    for j in range(probs.shape[0]):
        out[j] = probs[j] * (log_probs[j] - ref_log_probs[j] - kl)
    return out


def _loop_mlp_forward(w1, b1, w2, b2, x):
    hdim = w1.shape[0]
    k = w2.shape[0]
    h = np.empty(hdim)
    for i in range(hdim):
        acc = b1[i]
        for j in range(x.shape[0]):
            acc += w1[i, j] * x[j]
        h[i] = np.tanh(acc)
    logits = np.empty(k)
    for i in range(k):
        acc = b2[i]
        for j in range(hdim):
            acc += w2[i, j] * h[j]
        logits[i] = acc
    return h, logits


def _loop_mlp_backward(dlogits, h, x, w2):
    k = dlogits.shape[0]
    hdim = h.shape[0]
    d = x.shape[0]
    dw2 = np.empty((k, hdim))
    db2 = np.empty(k)
    for i in range(k):
        db2[i] = dlogits[i]
        for j in range(hdim):
            dw2[i, j] = dlogits[i] * h[j]
    dpre = np.empty(hdim)
    for j in range(hdim):
        acc = 0.0
        for i in range(k):
            acc += w2[i, j] * dlogits[i]
        dpre[j] = acc * (1.0 - h[j] * h[j])
    dw1 = np.empty((hdim, d))
    for i in range(hdim):
        for j in range(d):
            dw1[i, j] = dpre[i] * x[j]
    return dw1, dpre, dw2, db2


def _loop_normalize_advantages(rewards, eps):
    n = rewards.shape[0]
    out = np.empty_like(rewards)
    all_equal = True
    for i in range(1, n):
        if rewards[i] != rewards[0]:
            all_equal = False
            break
    if all_equal:
        for i in range(n):
            out[i] = 0.0
        return out
    mu = 0.0
    for i in range(n):
        mu += rewards[i]
    mu /= n
    var = 0.0
    for i in range(n):
        dev = rewards[i] - mu
        var += dev * dev
    sigma = np.sqrt(var / n)
    for i in range(n):
        out[i] = (rewards[i] - mu) / (sigma + eps)
    return out


def _loop_ema_series(values, coeff):
    out = np.empty_like(values)
    if values.shape[0] == 0:
        return out
    acc = values[0]
    out[0] = acc
    for t in range(1, values.shape[0]):
        acc = coeff * acc + (1.0 - coeff) * values[t]
        out[t] = acc
    return out


def _loop_categorical_draws(cdf, uniforms):
    k = cdf.shape[0]
    out = np.empty(uniforms.shape[0], dtype=np.int64)
    for i in range(uniforms.shape[0]):
        u = uniforms[i]
        j = 0
        while j < k - 1 and u >= cdf[j]:
            j += 1
        out[i] = j
    return out


def _loop_quadratic_descent(eigs, delta0, step_size, steps):
    d = delta0.shape[0]
    subopt = np.empty(steps + 1)
    sqnorm = np.empty(steps + 1)
    delta = delta0.copy()
    for t in range(steps + 1):
        s = 0.0
        q = 0.0
        for j in range(d):
            g = eigs[j] * delta[j]
            s += 0.5 * g * delta[j]
            q += g * g
        subopt[t] = s
        sqnorm[t] = q
        if t < steps:
            for j in range(d):
                delta[j] -= step_size * eigs[j] * delta[j]
    return subopt, sqnorm


def _loop_cross_and_naive(samples):
    n, b, dim = samples.shape
    half = b // 2
    cross = np.empty(n)
    naive = np.empty(n)
    for i in range(n):
        c = 0.0
        v = 0.0
        for j in range(dim):
            s1 = 0.0
            for t in range(half):
                s1 += samples[i, t, j]
            s2 = 0.0
            for t in range(half, b):
                s2 += samples[i, t, j]
            g1 = s1 / half
            g2 = s2 / (b - half)
            full = (s1 + s2) / b
            c += g1 * g2
            v += full * full
        cross[i] = c
        naive[i] = v
    return cross, naive


# ---------------------------------------------------------------------------
# Backend selection.
# ---------------------------------------------------------------------------

_NUMPY_IMPLS = {
    "logsumexp": _np_logsumexp,
    "log_softmax": _np_log_softmax,
    "softmax": _np_softmax,
    "weighted_dlogits": _np_weighted_dlogits,
    "entropy_dlogits": _np_entropy_dlogits,
    "kl_dlogits": _np_kl_dlogits,
    "mlp_forward": _np_mlp_forward,
    "mlp_backward": _np_mlp_backward,
    "normalize_advantages": _np_normalize_advantages,
    "ema_series": _np_ema_series,
    "categorical_draws": _np_categorical_draws,
    "quadratic_descent": _np_quadratic_descent,
    "cross_and_naive": _np_cross_and_naive,
}

_LOOP_IMPLS = {
    "logsumexp": _loop_logsumexp,
    "log_softmax": _loop_log_softmax,
    "softmax": _loop_softmax,
    "weighted_dlogits": _loop_weighted_dlogits,
    "entropy_dlogits": _loop_entropy_dlogits,
    "kl_dlogits": _loop_kl_dlogits,
    "mlp_forward": _loop_mlp_forward,
    "mlp_backward": _loop_mlp_backward,
    "normalize_advantages": _loop_normalize_advantages,
    "ema_series": _loop_ema_series,
    "categorical_draws": _loop_categorical_draws,
    "quadratic_descent": _loop_quadratic_descent,
    "cross_and_naive": _loop_cross_and_naive,
}


def _compile_numba_impls():
    compiled = {}
    for name, fn in _LOOP_IMPLS.items():
        compiled[name] = njit(cache=True)(fn)
    return compiled


if USING_NUMBA:
    _ACTIVE = _compile_numba_impls()
else:
    _ACTIVE = _NUMPY_IMPLS

logsumexp = _ACTIVE["logsumexp"]
log_softmax = _ACTIVE["log_softmax"]
softmax = _ACTIVE["softmax"]
weighted_dlogits = _ACTIVE["weighted_dlogits"]
entropy_dlogits = _ACTIVE["entropy_dlogits"]
kl_dlogits = _ACTIVE["kl_dlogits"]
mlp_forward = _ACTIVE["mlp_forward"]
mlp_backward = _ACTIVE["mlp_backward"]
normalize_advantages = _ACTIVE["normalize_advantages"]
ema_series = _ACTIVE["ema_series"]
categorical_draws = _ACTIVE["categorical_draws"]
quadratic_descent = _ACTIVE["quadratic_descent"]
cross_and_naive = _ACTIVE["cross_and_naive"]

numpy_impls = dict(_NUMPY_IMPLS)


def warmup() -> None:
    """Trigger JIT compilation of every kernel on tiny inputs.

    Call before timing anything; a no-op cost on the numpy backend, a
    one-time (cached) compile cost on the numba backend.
    """
    v = np.array([0.1, -0.2, 0.3])
    p = softmax(v)
    logsumexp(v)
    lp = log_softmax(v)
    weighted_dlogits(p, np.array([0, 2], dtype=np.int64), np.array([0.5, -0.5]))
    entropy_dlogits(p, lp)
    kl_dlogits(p, lp, lp)
    w1 = np.ones((2, 3))
    b1 = np.zeros(2)
    w2 = np.ones((3, 2))
    b2 = np.zeros(3)
    x = np.array([0.1, 0.2, 0.3])
    h, _ = mlp_forward(w1, b1, w2, b2, x)
    mlp_backward(np.array([0.1, 0.2, -0.3]), h, x, w2)
    normalize_advantages(np.array([1.0, 0.0]), 1e-8)
    ema_series(np.array([1.0, 2.0, 3.0]), 0.5)
    categorical_draws(np.array([0.5, 1.0]), np.array([0.1, 0.9]))
    quadratic_descent(np.array([1.0]), np.array([1.0]), 0.1, 2)
    cross_and_naive(np.zeros((2, 4, 2)))

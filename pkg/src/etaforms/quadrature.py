"""Quadrature helpers shared across the package.

The one nonstandard ingredient is ``simplex_exp_integral``: the iterated
Duhamel integrals over the standard simplex,

    I_l(a_0, ..., a_l) = int_{t_i >= 0, sum t_i = 1} exp(-sum_i t_i a_i) dt,

which equal divided differences of exp(-z).  They are evaluated with a
sorted Taylor/recursion hybrid so that clustered arguments do not lose
precision to cancellation.
"""

import numpy as np

_TAYLOR_TERMS = 14
_SPLIT_SPREAD = 0.5


def _sinhc(x):
    """sinh(x)/x with a series fallback near zero."""
    out = np.ones_like(x)
    small = np.abs(x) < 1e-4
    xs = x[small]
    out[small] = 1.0 + xs * xs / 6.0 * (1.0 + xs * xs / 20.0)
    xl = x[~small]
    out[~small] = np.sinh(xl) / xl
    return out


def _dd_pair(a, b):
    # exact two-point formula, stable for any gap
    m = 0.5 * (a + b)
    d = 0.5 * (b - a)
    return np.exp(-m) * _sinhc(d)


def _phi1(x):
    """(1 - e^-x)/x, stable via expm1; phi1(0) = 1."""
    safe = np.where(np.abs(x) < 1e-14, 1.0, x)
    return np.where(np.abs(x) < 1e-14, 1.0 - 0.5 * x, -np.expm1(-safe) / safe)


def _phi2(x):
    """(1 - (1+x) e^-x)/x^2 = -phi1'(x); series below x = 1e-3."""
    small = np.abs(x) < 1e-3
    safe = np.where(small, 1.0, x)
    main = (-np.expm1(-safe) - safe * np.exp(-safe)) / (safe * safe)
    series = 0.5 - x / 3.0 + x * x / 8.0 - x ** 3 / 30.0
    return np.where(small, series, main)


def _dd_triple_sorted(a, b, c):
    """I_2 on sorted arguments, branch-free: e^-a psi(b-a, c-a)."""
    u = b - a
    v = c - a
    delta = v - u
    safe = np.where(delta < 1e-4, 1.0, delta)
    straight = (_phi1(u) - _phi1(v)) / safe
    mid = _phi2(0.5 * (u + v))
    return np.exp(-a) * np.where(delta < 1e-4, mid, straight)


def _complete_homogeneous_sum(x, l):
    """sum_k h_k(x)/(k+l)! for shifted arguments x (..., l+1)."""
    m = x.shape[-1]
    batch = x.shape[:-1]
    hk = np.empty((_TAYLOR_TERMS + 1,) + batch)
    hk[0] = 1.0
    hk[1:] = 0.0
    for j in range(m):
        xj = x[..., j]
        for k in range(1, _TAYLOR_TERMS + 1):
            hk[k] += xj * hk[k - 1]
    fact = 1.0
    for i in range(1, l + 1):
        fact *= i
    total = np.zeros(batch)
    for k in range(_TAYLOR_TERMS + 1):
        total += hk[k] / fact
        fact *= (k + l + 1)
    return total


def _dd_sorted(a):
    """Divided-difference value on sorted arguments, shape (..., l+1)."""
    m = a.shape[-1]
    if m == 1:
        return np.exp(-a[..., 0])
    if m == 2:
        return _dd_pair(a[..., 0], a[..., 1])
    if m == 3:
        return _dd_triple_sorted(a[..., 0], a[..., 1], a[..., 2])
    spread = a[..., -1] - a[..., 0]
    out = np.empty(a.shape[:-1])
    small = spread <= _SPLIT_SPREAD
    if np.any(small):
        asub = a[small]
        mu = asub.mean(axis=-1)
        out[small] = np.exp(-mu) * _complete_homogeneous_sum(
            -(asub - mu[..., None]), m - 1)
    big = ~small
    if np.any(big):
        asub = a[big]
        num = _dd_sorted(asub[..., :-1]) - _dd_sorted(asub[..., 1:])
        out[big] = num / (asub[..., -1] - asub[..., 0])
    return out


def simplex_exp_integral(args, assume_sorted=False):
    """I_l at ``args`` of shape (..., l+1); real arguments, symmetric."""
    a = np.asarray(args, dtype=float)
    if not assume_sorted:
        a = np.sort(a, axis=-1)
    return _dd_sorted(a)


def simpson_weights(n, h):
    """Composite Simpson weights for n samples at spacing h.

    For even n the last interval block uses the 3/8 rule, keeping the full
    rule at fourth order.
    """
    if n < 2:
        raise ValueError("need at least two samples")
    w = np.zeros(n)
    if n == 2:
        return np.array([0.5, 0.5]) * h
    if n % 2 == 1:
        w[0] = w[-1] = 1.0
        w[1:-1:2] = 4.0
        w[2:-1:2] = 2.0
        return w * h / 3.0
    if n == 4:
        return np.array([1.0, 3.0, 3.0, 1.0]) * 3.0 * h / 8.0
    w[: n - 3] = simpson_weights(n - 3, h) / h * 3.0
    w[n - 4:] += np.array([1.0, 3.0, 3.0, 1.0]) * 9.0 / 8.0
    return w * h / 3.0


def gauss_legendre(npts, a=0.0, b=1.0):
    """Nodes and weights on [a, b]."""
    x, w = np.polynomial.legendre.leggauss(npts)
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    return mid + half * x, half * w


def log_trapezoid(f, s_lo, s_hi, tol, n0=33, max_doublings=7):
    """Integrate f over [s_lo, s_hi] by trapezoid in u = log s with doubling.

    f maps an array of s-values to an array with the s-axis first; the
    integrand is assumed smooth with decaying tails in u, for which the
    trapezoid rule converges rapidly.  Returns (value, error_estimate).
    """
    u0, u1 = np.log(s_lo), np.log(s_hi)
    u = np.linspace(u0, u1, n0)
    vals = np.asarray(f(np.exp(u)))
    sfac = np.exp(u).reshape((-1,) + (1,) * (vals.ndim - 1))
    vals = vals * sfac
    h = (u1 - u0) / (n0 - 1)
    total = h * (vals.sum(axis=0) - 0.5 * (vals[0] + vals[-1]))
    prev = None
    for _ in range(max_doublings):
        um = 0.5 * (u[:-1] + u[1:])
        vm = np.asarray(f(np.exp(um)))
        vm = vm * np.exp(um).reshape((-1,) + (1,) * (vm.ndim - 1))
        new_total = 0.5 * total + 0.5 * h * vm.sum(axis=0)
        err = np.max(np.abs(new_total - total))
        u = np.sort(np.concatenate([u, um]))
        h *= 0.5
        prev, total = total, new_total
        if err < tol:
            break
    return total, (np.max(np.abs(total - prev)) if prev is not None else np.inf)


def richardson_pair(coarse, fine, order=2.0):
    """Eliminate the leading O(h^order) error from (I_h, I_{h/2})."""
    fac = 2.0 ** order
    return (fac * fine - coarse) / (fac - 1.0)


def observed_order(i1, i2, i3):
    """Convergence order from three dyadic refinements (may be nan)."""
    d1, d2 = abs(i2 - i1), abs(i3 - i2)
    if d2 == 0.0 or d1 == 0.0:
        return float("inf")
    return float(np.log2(d1 / d2))

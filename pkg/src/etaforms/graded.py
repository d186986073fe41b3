"""Matrix-valued elements of a truncated exterior algebra with an odd flag.

An element is stored as a dictionary mapping keys ``(I, f)`` to complex
matrices, where ``I`` is a strictly increasing tuple of axis indices
(``dx^I``) and ``f`` in {0, 1} counts odd generators mod 2, in the canonical
order  dx^I . sigma^f . M.  The flag plays two roles with the same Koszul
sign rule (-1)^(f1 * |I2|):

  * the formal odd variable sigma with sigma^2 = 1 (odd operator families);
  * the End-parity of the matrix part for Z2-graded bundles.

Coefficient arrays may carry leading batch axes (grid nodes, probe points),
so every operation here is vectorized over those axes.
"""

import numpy as np

from .quadrature import simplex_exp_integral

EMPTY = ()


def shuffle_sign(I, J):
    """Sign of merging dx^I dx^J into increasing order; None on collision."""
    if not I or not J:
        return 1, tuple(I) + tuple(J)
    merged = I + J
    if len(set(merged)) != len(merged):
        return None, None
    sign = 1
    items = list(merged)
    # insertion sort, counting swaps
    for i in range(1, len(items)):
        j = i
        while j > 0 and items[j - 1] > items[j]:
            items[j - 1], items[j] = items[j], items[j - 1]
            sign = -sign
            j -= 1
    return sign, tuple(items)


def mul_key(k1, k2):
    """Product of basis keys; returns (sign, key) or (None, None)."""
    (i1, f1), (i2, f2) = k1, k2
    sgn, merged = shuffle_sign(i1, i2)
    if sgn is None:
        return None, None
    if f1 and (len(i2) % 2):
        sgn = -sgn
    return sgn, (merged, (f1 + f2) % 2)


def key_parity(key):
    return (len(key[0]) + key[1]) % 2


class GradedElement:
    """One (possibly batched) element of the superalgebra."""

    __slots__ = ("base_dim", "matrix_dim", "coeffs")

    def __init__(self, base_dim, matrix_dim, coeffs=None):
        self.base_dim = int(base_dim)
        self.matrix_dim = int(matrix_dim)
        self.coeffs = {}
        if coeffs:
            for key, mat in coeffs.items():
                self.set(key, mat)

    def set(self, key, mat):
        I, f = key
        I = tuple(int(i) for i in I)
        if any(i < 0 or i >= self.base_dim for i in I):
            raise ValueError("axis index out of range for base_dim=%d" % self.base_dim)
        if list(I) != sorted(set(I)):
            raise ValueError("multi-index must be strictly increasing")
        mat = np.asarray(mat, dtype=complex)
        if mat.shape[-2:] != (self.matrix_dim, self.matrix_dim):
            raise ValueError("matrix block must be %d x %d" % (self.matrix_dim, self.matrix_dim))
        self.coeffs[(I, int(f) & 1)] = mat
        return self

    def get(self, key):
        return self.coeffs.get((tuple(key[0]), int(key[1]) & 1))

    def copy(self):
        out = GradedElement(self.base_dim, self.matrix_dim)
        out.coeffs = {k: v.copy() for k, v in self.coeffs.items()}
        return out

    def prune(self, tol=0.0):
        self.coeffs = {k: v for k, v in self.coeffs.items()
                       if np.max(np.abs(v)) > tol}
        return self

    def parities(self):
        return {key_parity(k) for k in self.coeffs}

    def is_even(self):
        return self.parities() <= {0}

    def __add__(self, other):
        self._check_compatible(other)
        out = self.copy()
        for k, v in other.coeffs.items():
            out.coeffs[k] = out.coeffs[k] + v if k in out.coeffs else v.copy()
        return out

    def __sub__(self, other):
        return self + other.scale(-1.0)

    def scale(self, c):
        out = GradedElement(self.base_dim, self.matrix_dim)
        out.coeffs = {k: c * v for k, v in self.coeffs.items()}
        return out

    def _check_compatible(self, other):
        if (self.base_dim, self.matrix_dim) != (other.base_dim, other.matrix_dim):
            raise ValueError("mismatched base_dim or matrix_dim")

    def max_abs(self):
        return max((float(np.max(np.abs(v))) for v in self.coeffs.values()), default=0.0)


def identity_element(base_dim, matrix_dim, batch_shape=()):
    eye = np.broadcast_to(np.eye(matrix_dim, dtype=complex),
                          tuple(batch_shape) + (matrix_dim, matrix_dim)).copy()
    return GradedElement(base_dim, matrix_dim, {(EMPTY, 0): eye})


def graded_mul(a, b):
    """Bilinear product with the Koszul sign (-1)^(f_a * |I_b|)."""
    a._check_compatible(b)
    out = GradedElement(a.base_dim, a.matrix_dim)
    for k1, m1 in a.coeffs.items():
        for k2, m2 in b.coeffs.items():
            if len(k1[0]) + len(k2[0]) > a.base_dim:
                continue
            sgn, key = mul_key(k1, k2)
            if sgn is None:
                continue
            prod = sgn * (m1 @ m2)
            if key in out.coeffs:
                out.coeffs[key] = out.coeffs[key] + prod
            else:
                out.coeffs[key] = prod
    return out


def tr_sigma(x):
    """Form-valued coefficient-of-sigma trace: Tr_sigma(a + sigma b) = Tr b.

    Returns a dict multi-index -> complex array (batched scalars).
    """
    out = {}
    for (I, f), mat in x.coeffs.items():
        if f == 1:
            out[I] = np.trace(mat, axis1=-2, axis2=-1)
    return out


def tr_super(x, grading):
    """Supertrace Tr(grading . x) per form coefficient.

    ``grading`` must be a Hermitian involution; flag-1 coefficients are
    included (they vanish identically for parity-clean input).
    """
    g = np.asarray(grading, dtype=complex)
    if not np.allclose(g @ g, np.eye(g.shape[-1]), atol=1e-12):
        raise ValueError("grading is not an involution")
    if not np.allclose(g, np.swapaxes(g.conj(), -1, -2), atol=1e-12):
        raise ValueError("grading is not Hermitian")
    out = {}
    for (I, f), mat in x.coeffs.items():
        val = np.trace(g @ mat, axis1=-2, axis2=-1)
        out[I] = out.get(I, 0.0) + val
    return out


def _unique_tuple_maps(n, m, _cache={}):
    """Index maps for symmetric (..., n^m) -> unique multisets of size m."""
    if (n, m) in _cache:
        return _cache[(n, m)]
    grids = np.meshgrid(*([np.arange(n)] * m), indexing="ij")
    idx = np.stack([g.ravel() for g in grids], axis=-1)          # (n^m, m)
    key = np.sort(idx, axis=-1)
    uniq, inv = np.unique(key, axis=0, return_inverse=True)
    inv = inv.reshape((n,) * m)
    _cache[(n, m)] = (uniq, inv)
    return uniq, inv


def _phi_tensor(w, order, w_sorted=False):
    """Duhamel kernel Phi[..., i0..i_order] = I_order(w_i0, ..., w_i_order).

    When the weights are ascending along the last axis the per-tuple sort
    is skipped (the unique index tuples are already sorted).
    """
    n = w.shape[-1]
    uniq, inv = _unique_tuple_maps(n, order + 1)
    args = w[..., uniq]                  # (..., U, order+1)
    vals = simplex_exp_integral(args, assume_sorted=w_sorted)
    return vals[..., inv]


_CONTRACTIONS = {
    1: "...ab,...ab->...ab",
    2: "...ab,...bc,...abc->...ac",
    3: "...ab,...bc,...cd,...abcd->...ad",
    4: "...ab,...bc,...cd,...de,...abcde->...ae",
}


def duhamel_exp_diag(base_dim, w, ytil, max_degree=None, w_sorted=False):
    """exp(-(diag(w) + y)) in the eigenbasis of the degree-0 part.

    ``w``: real eigenvalues (..., n); ``ytil``: dict of keys (|I| >= 1) to
    matrices in that basis.  The Duhamel series terminates because every
    y-key carries form degree.  Returns a key -> matrix dict.
    """
    if max_degree is None:
        max_degree = base_dim
    n = w.shape[-1]
    out = {}
    ew = np.exp(-w)
    diag = np.zeros(w.shape + (n,), dtype=complex)
    idx = np.arange(n)
    diag[..., idx, idx] = ew
    out[(EMPTY, 0)] = diag

    keys = [k for k in ytil if len(k[0]) >= 1]
    if not keys:
        return out
    phis = {}

    def phi(order):
        if order not in phis:
            phis[order] = _phi_tensor(w, order, w_sorted=w_sorted)
        return phis[order]

    # iterative product over ordered key tuples, pruned by total degree
    stack = [((k,), len(k[0])) for k in keys if len(k[0]) <= max_degree]
    while stack:
        tup, deg = stack.pop()
        # accumulate this tuple's contribution
        sgn_total, key_total = 1, tup[0]
        ok = True
        for k in tup[1:]:
            sgn, key_total = mul_key(key_total, k)
            if sgn is None:
                ok = False
                break
            sgn_total *= sgn
        if ok:
            order = len(tup)
            if order == 1:
                term = ytil[tup[0]] * phi(1)
            else:
                mats = [ytil[k] for k in tup]
                term = np.einsum(_CONTRACTIONS[order], *mats, phi(order),
                                 optimize=True)
            term = ((-1) ** order * sgn_total) * term
            if key_total in out:
                out[key_total] = out[key_total] + term
            else:
                out[key_total] = term
        if len(tup) < 4:
            for k in keys:
                nd = deg + len(k[0])
                if nd <= max_degree:
                    stack.append((tup + (k,), nd))
    return out


def _exp_series(x, max_degree):
    """Scaling-and-squaring exp(-x) with a graded Taylor base case."""
    norm = x.max_abs()
    j = max(0, int(np.ceil(np.log2(max(norm, 1e-30) / 0.25))))
    y = x.scale(-(0.5 ** j))
    term = identity_element(x.base_dim, x.matrix_dim,
                            next(iter(x.coeffs.values())).shape[:-2] if x.coeffs else ())
    acc = term.copy()
    for k in range(1, 40):
        term = graded_mul(term, y).scale(1.0 / k)
        acc = acc + term
        if term.max_abs() < 1e-18:
            break
    for _ in range(j):
        acc = graded_mul(acc, acc)
    if max_degree < x.base_dim:
        acc.coeffs = {k: v for k, v in acc.coeffs.items() if len(k[0]) <= max_degree}
    return acc


def graded_exp(x, max_degree=None, eig=None):
    """exp(-x) for an even element.

    The degree-0 part is exponentiated exactly (eigendecomposition when it is
    Hermitian, else scaling-and-squaring); the rest enters through a finite
    Duhamel series, exact because form degree beyond base_dim vanishes.
    """
    if not x.is_even():
        raise ValueError("graded_exp requires an even element")
    if max_degree is None:
        max_degree = x.base_dim
    x0 = x.get((EMPTY, 0))
    rest = {k: v for k, v in x.coeffs.items() if k != (EMPTY, 0)}
    if x0 is None:
        batch = next(iter(rest.values())).shape[:-2] if rest else ()
        x0 = np.zeros(tuple(batch) + (x.matrix_dim, x.matrix_dim), dtype=complex)
    hermitian = np.allclose(x0, np.swapaxes(x0.conj(), -1, -2), atol=1e-11)
    if not hermitian and eig is None:
        return _exp_series(x, max_degree)
    if eig is None:
        w, u = np.linalg.eigh(x0)
    else:
        w, u = eig
    uh = np.swapaxes(u.conj(), -1, -2)
    ytil = {k: uh @ v @ u for k, v in rest.items()}
    tilde = duhamel_exp_diag(x.base_dim, w, ytil, max_degree=max_degree)
    out = GradedElement(x.base_dim, x.matrix_dim)
    for k, v in tilde.items():
        out.coeffs[k] = u @ v @ uh
    return out

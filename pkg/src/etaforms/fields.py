"""Sampled differential forms on one chart: a box grid in R^d carrying
scalar- or matrix-valued coefficients per multi-index.

Exterior derivative is second-order finite differences (central inside,
one-sided at the box faces); integration is tensor-product Simpson, with an
optional partition-of-unity weight so chart integrals patch to manifold
integrals.
"""

import numpy as np
from scipy import ndimage

from .graded import shuffle_sign
from .quadrature import simpson_weights


class ChartGrid:
    """Uniform tensor grid on a closed box."""

    def __init__(self, box, shape):
        self.box = np.asarray(box, dtype=float).reshape(-1, 2)
        self.shape = tuple(int(s) for s in shape)
        if len(self.shape) != len(self.box):
            raise ValueError("box/shape rank mismatch")
        if any(s < 2 for s in self.shape):
            raise ValueError("need at least two samples per axis")
        self.dim = len(self.shape)
        self.spacing = np.array([(hi - lo) / (n - 1)
                                 for (lo, hi), n in zip(self.box, self.shape)])
        self.axes = [np.linspace(lo, hi, n)
                     for (lo, hi), n in zip(self.box, self.shape)]

    def meshgrid(self):
        return np.meshgrid(*self.axes, indexing="ij")

    def points(self):
        """All nodes as an array (*shape, dim)."""
        return np.stack(self.meshgrid(), axis=-1)

    def index_coords(self, x):
        """Map points (..., dim) to fractional index coordinates."""
        x = np.asarray(x, dtype=float)
        return (x - self.box[:, 0]) / self.spacing

    def __eq__(self, other):
        return (isinstance(other, ChartGrid) and self.shape == other.shape
                and np.allclose(self.box, other.box))


def _diff_axis(values, axis, h):
    """Second-order d/dx along one axis; one-sided stencils at the faces."""
    out = np.empty_like(values)
    sl = [slice(None)] * values.ndim

    def at(i):
        s = sl.copy()
        s[axis] = i
        return tuple(s)

    out[at(slice(1, -1))] = (values[at(slice(2, None))]
                             - values[at(slice(0, -2))]) / (2.0 * h)
    out[at(0)] = (-3.0 * values[at(0)] + 4.0 * values[at(1)]
                  - values[at(2)]) / (2.0 * h)
    out[at(-1)] = (3.0 * values[at(-1)] - 4.0 * values[at(-2)]
                   + values[at(-3)]) / (2.0 * h)
    return out


class FormField:
    """Degree-p form sampled on a ChartGrid.

    comps maps a strictly increasing index tuple (length p) to an array of
    shape grid.shape (scalar-valued) or grid.shape + (n, n) (matrix-valued).
    """

    def __init__(self, grid, degree, comps=None, matrix_dim=0):
        self.grid = grid
        self.degree = int(degree)
        self.matrix_dim = int(matrix_dim)
        self.comps = {}
        if comps:
            for I, v in comps.items():
                self.set(I, v)

    def set(self, I, values):
        I = tuple(int(i) for i in I)
        if len(I) != self.degree or list(I) != sorted(set(I)):
            raise ValueError("bad multi-index %r for degree %d" % (I, self.degree))
        values = np.asarray(values, dtype=complex)
        want = self.grid.shape + ((self.matrix_dim, self.matrix_dim)
                                  if self.matrix_dim else ())
        if values.shape != want:
            raise ValueError("component shape %r, expected %r" % (values.shape, want))
        self.comps[I] = values
        return self

    def get(self, I, default=0.0):
        I = tuple(I)
        if I in self.comps:
            return self.comps[I]
        shape = self.grid.shape + ((self.matrix_dim, self.matrix_dim)
                                   if self.matrix_dim else ())
        return np.full(shape, default, dtype=complex)

    def copy(self):
        out = FormField(self.grid, self.degree, matrix_dim=self.matrix_dim)
        out.comps = {k: v.copy() for k, v in self.comps.items()}
        return out

    def __add__(self, other):
        if self.degree != other.degree:
            raise ValueError("degree mismatch")
        out = self.copy()
        for k, v in other.comps.items():
            out.comps[k] = out.comps.get(k, 0.0) + v
        return out

    def __sub__(self, other):
        return self + other.scale(-1.0)

    def scale(self, c):
        out = FormField(self.grid, self.degree, matrix_dim=self.matrix_dim)
        out.comps = {k: c * v for k, v in self.comps.items()}
        return out

    def max_abs(self):
        return max((float(np.max(np.abs(v))) for v in self.comps.values()),
                   default=0.0)

    def trace(self):
        if not self.matrix_dim:
            return self
        out = FormField(self.grid, self.degree)
        out.comps = {k: np.trace(v, axis1=-2, axis2=-1)
                     for k, v in self.comps.items()}
        return out

    def finite(self):
        return all(np.all(np.isfinite(v)) for v in self.comps.values())


def d_field(f):
    """Exterior derivative by finite differences; degree must stay <= dim."""
    if f.degree >= f.grid.dim:
        raise ValueError("cannot raise degree beyond the chart dimension")
    out = FormField(f.grid, f.degree + 1, matrix_dim=f.matrix_dim)
    for I, vals in f.comps.items():
        for a in range(f.grid.dim):
            if a in I:
                continue
            sgn, J = shuffle_sign((a,), I)
            dv = _diff_axis(vals, a, f.grid.spacing[a])
            out.comps[J] = out.comps.get(J, 0.0) + sgn * dv
    return out


def wedge_field(a, b):
    """Pointwise wedge; matrix blocks compose when both are matrix-valued."""
    if a.grid != b.grid:
        raise ValueError("wedge requires a shared grid")
    deg = a.degree + b.degree
    mdim = max(a.matrix_dim, b.matrix_dim)
    if deg > a.grid.dim:
        # identically zero beyond top degree; keep an empty top-degree field
        return FormField(a.grid, a.grid.dim, matrix_dim=mdim)
    out = FormField(a.grid, deg, matrix_dim=mdim)
    for I, va in a.comps.items():
        for J, vb in b.comps.items():
            sgn, K = shuffle_sign(I, J)
            if sgn is None:
                continue
            if a.matrix_dim and b.matrix_dim:
                prod = va @ vb
            elif a.matrix_dim or b.matrix_dim:
                prod = (va[..., None, None] * vb) if not a.matrix_dim else (va * vb[..., None, None])
            else:
                prod = va * vb
            out.comps[K] = out.comps.get(K, 0.0) + sgn * prod
    return out


def commutator_field(a, b):
    """a wedge b - (-1)^(|a||b|) b wedge a for matrix-valued forms."""
    sign = (-1.0) ** (a.degree * b.degree)
    return wedge_field(a, b) - wedge_field(b, a).scale(sign)


def grid_quadrature_weights(grid):
    """Tensor-product Simpson weights, shape grid.shape."""
    w = np.array([1.0])
    for n, h in zip(grid.shape, grid.spacing):
        w = np.multiply.outer(w, simpson_weights(n, h))
    return w.reshape(grid.shape)


def integrate_chart(f, weight=None):
    """Integral of a top-degree form over the chart box.

    ``weight`` is an optional array on the grid (partition-of-unity samples);
    the quadrature itself is tensor-product Simpson.
    """
    if f.degree != f.grid.dim:
        raise ValueError("integrate_chart needs a top-degree form")
    top = tuple(range(f.grid.dim))
    vals = f.get(top)
    if f.matrix_dim:
        vals = np.trace(vals, axis1=-2, axis2=-1)
    qw = grid_quadrature_weights(f.grid)
    if weight is not None:
        qw = qw * weight
    return complex(np.sum(qw * vals))


def resample_values(values, grid, points, order=3):
    """Cubic interpolation of grid samples at chart-coordinate points.

    values: array grid.shape (+ trailing matrix axes); points: (..., dim).
    """
    pts = grid.index_coords(points)
    flat = pts.reshape(-1, grid.dim).T
    head = values.shape[:len(grid.shape)]
    tail = values.shape[len(grid.shape):]
    vflat = values.reshape(head + (-1,)) if tail else values[..., None]
    cols = []
    for j in range(vflat.shape[-1]):
        comp = vflat[..., j]
        re = ndimage.map_coordinates(comp.real, flat, order=order, mode="nearest")
        im = ndimage.map_coordinates(comp.imag, flat, order=order, mode="nearest")
        cols.append(re + 1j * im)
    out = np.stack(cols, axis=-1).reshape(points.shape[:-1] + tail + ((1,) if not tail else ()))
    if not tail:
        out = out[..., 0]
    return out


def resample_field(f, points, order=3):
    """Interpolate every component of a FormField at the given points."""
    return {I: resample_values(v, f.grid, points, order=order)
            for I, v in f.comps.items()}

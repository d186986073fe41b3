"""Base manifolds as atlases of box charts with closed-form embeddings.

Built-in geometries: circle (3 arcs), torus2 (4 boxes, optional fifth),
sphere2 (4 tetrahedral caps), sphere3 (4 caps around ambient tetrahedral
centers).  Every cover is hard-coded so that the needed intersections exist
by construction; the constructor cross-checks coverage and the expected
nerve against a dense deterministic sample.

A CoverAtlas also carries a global probe cloud: sample points of the
manifold with per-chart coordinates and membership flags.  Overlap-level
verification code evaluates fields at these probes and differentiates with
tiny-step stencils in the anchor chart's coordinates.
"""

import numpy as np

from .fields import ChartGrid

_MACHINE_STEP = 1e-5


def smooth_step(t):
    """C-infinity monotone step: 0 for t<=0, 1 for t>=1."""
    t = np.asarray(t, dtype=float)
    def f(u):
        out = np.zeros_like(u)
        pos = u > 0
        out[pos] = np.exp(-1.0 / u[pos])
        return out
    a = f(t)
    b = f(1.0 - t)
    return a / (a + b)


def bump_profile(u, plateau=0.6):
    """C-infinity bump on [-1, 1]: 1 on |u|<=plateau, 0 beyond |u|=1."""
    u = np.abs(np.asarray(u, dtype=float))
    t = (u - plateau) / (1.0 - plateau)
    return 1.0 - smooth_step(t)


def _cos_sqrt(u):
    """cos(sqrt(u)) as an entire function of u (complex-step safe)."""
    u = np.asarray(u)
    small = np.abs(u) < 1e-8
    out = np.where(small, 1.0 - u / 2.0 + u * u / 24.0,
                   np.cos(np.sqrt(np.where(small, 1.0, u))))
    return out


def _sinc_sqrt(u):
    """sin(sqrt(u))/sqrt(u), entire in u."""
    u = np.asarray(u)
    small = np.abs(u) < 1e-8
    r = np.sqrt(np.where(small, 1.0, u))
    return np.where(small, 1.0 - u / 6.0 + u * u / 120.0, np.sin(r) / r)


class Chart:
    """One box chart: coordinates in a box, a closed-form embedding, and a
    compactly supported bump used for the partition of unity."""

    def __init__(self, name, box, shape, embed, inverse, bump_plateau=0.6,
                 support=0.97):
        self.name = name
        self.grid = ChartGrid(box, shape)
        self.box = self.grid.box
        self._embed = embed
        self._inverse = inverse
        self.bump_plateau = bump_plateau
        self.support = support
        self.halfwidth = 0.5 * (self.box[:, 1] - self.box[:, 0])
        self.center = 0.5 * (self.box[:, 1] + self.box[:, 0])

    def embed(self, x):
        return self._embed(np.asarray(x))

    def coords(self, p):
        return self._inverse(np.asarray(p, dtype=float))

    def jacobian(self, x):
        """d(embed)/dx by complex step, shape (..., ambient_dim, d)."""
        x = np.asarray(x, dtype=float)
        d = x.shape[-1]
        cols = []
        for a in range(d):
            xa = x.astype(complex).copy()
            xa[..., a] += 1e-150j
            cols.append(self.embed(xa).imag / 1e-150)
        return np.stack(cols, axis=-1)

    def rel_coords(self, x):
        return (np.asarray(x) - self.center) / (self.halfwidth * self.support)

    def bump(self, x):
        """Partition-of-unity weight in chart coordinates (0 off support)."""
        u = self.rel_coords(x)
        vals = bump_profile(u, self.bump_plateau)
        return np.prod(vals, axis=-1)

    def contains(self, x, margin=0.0):
        u = np.abs(self.rel_coords(x))
        return np.all(u <= 1.0 - margin, axis=-1)


def _orthonormal_frame(center, hints):
    """Deterministic orthonormal frame orthogonal to ``center``."""
    frame = []
    for h in hints:
        v = h - np.dot(h, center) * center
        for u in frame:
            v = v - np.dot(v, u) * u
        nv = np.linalg.norm(v)
        if nv < 1e-9:
            continue
        frame.append(v / nv)
    return np.stack(frame, axis=0)


class CoverAtlas:
    def __init__(self, name, charts, ambient_dim, sampler, expected_nerve=None,
                 probe_seed=7, n_probe=4096):
        self.name = name
        self.charts = charts
        self.ambient_dim = ambient_dim
        self._sampler = sampler
        self.points = sampler(n_probe, probe_seed)
        self._build_membership()
        self._build_nerve(expected_nerve)
        self._check_partition_of_unity()

    # -- membership / nerve ------------------------------------------------

    def _build_membership(self):
        P = len(self.points)
        nch = len(self.charts)
        self.probe_coords = []
        member = np.zeros((P, nch), dtype=bool)
        interior = np.zeros((P, nch), dtype=bool)
        for i, ch in enumerate(self.charts):
            x = ch.coords(self.points)
            self.probe_coords.append(x)
            w = ch.bump(x)
            inside = np.all(np.abs(ch.rel_coords(x)) < 1.0, axis=-1)
            member[:, i] = inside & (w > 0.0)
            interior[:, i] = inside & (w > 1e-3)
        self.member = member
        self.interior = interior

    def _build_nerve(self, expected):
        patterns = {}
        for flags in self.interior:
            idx = tuple(int(i) for i in np.nonzero(flags)[0])
            if idx:
                patterns[idx] = patterns.get(idx, 0) + 1
        simplices = set()
        for pat, count in patterns.items():
            if count < 3:
                continue
            # downward closure
            from itertools import combinations
            for r in range(1, len(pat) + 1):
                for sub in combinations(pat, r):
                    simplices.add(sub)
        self.nerve = {}
        for s in simplices:
            self.nerve.setdefault(len(s) - 1, []).append(s)
        for lvl in self.nerve:
            self.nerve[lvl].sort()
        if expected is not None:
            got = {lvl: set(sims) for lvl, sims in self.nerve.items()}
            want = {lvl: set(sims) for lvl, sims in expected.items()}
            if got != want:
                raise RuntimeError("nerve of %s differs from the hard-coded cover: %r vs %r"
                                   % (self.name, got, want))

    def simplices(self, level=None):
        if level is None:
            return {lvl: list(s) for lvl, s in self.nerve.items()}
        return list(self.nerve.get(level, []))

    # -- partition of unity --------------------------------------------------

    def bump_sum(self, points):
        total = np.zeros(points.shape[:-1])
        for ch in self.charts:
            x = ch.coords(points)
            inside = np.all(np.abs(ch.rel_coords(x)) < 1.0, axis=-1)
            total = total + np.where(inside, ch.bump(x), 0.0)
        return total

    def _check_partition_of_unity(self):
        total = self.bump_sum(self.points)
        if np.min(total) <= 1e-12:
            raise RuntimeError("cover of %s does not cover: bump sum min %.3e"
                               % (self.name, float(np.min(total))))

    def pou_weights(self, chart_idx, points_in_chart=None):
        """rho_alpha at the chart's grid nodes (or given chart points)."""
        ch = self.charts[chart_idx]
        if points_in_chart is None:
            points_in_chart = ch.grid.points()
        p = ch.embed(points_in_chart)
        total = self.bump_sum(p)
        return ch.bump(points_in_chart) / total

    # -- global integration rig ----------------------------------------------

    def integration_rig(self, n):
        """Quadrature for top-degree forms over the whole manifold.

        Returns (chart_idx, coords, weights): the manifold integral of a
        d-form with chart components f is sum_i w_i * f_top(chart_i, x_i),
        the parameter-jacobian being folded into w.  Periodic directions use
        the trapezoid rule (spectral accuracy), polar ones Gauss-Legendre.
        """
        params, wts = self._rig_params(n)
        pts = self._rig_embed(params)
        # owning chart: the deepest one
        best = None
        depth = None
        for k, ch in enumerate(self.charts):
            x = ch.coords(pts)
            m = np.max(np.abs(ch.rel_coords(x)), axis=-1)
            if best is None:
                best, depth = np.full(len(pts), k), m
            else:
                upd = m < depth
                best[upd] = k
                depth = np.minimum(depth, m)
        coords = np.empty((len(pts), len(self.charts[0].box)))
        jac = np.empty(len(pts))
        for k, ch in enumerate(self.charts):
            sel = best == k
            if not np.any(sel):
                continue
            fn = lambda u: ch.coords(self._rig_embed(u))
            x, J = eval_with_stencil(fn, params[sel], h=1e-6)
            coords[sel] = x
            jac[sel] = np.linalg.det(np.swapaxes(J, -1, -2))
        return best, coords, wts * jac

    def integrate_form(self, top_fn, n=48):
        """Integrate a top-degree form given by top_fn(chart, coords) -> values."""
        chart_idx, coords, w = self.integration_rig(n)
        total = 0.0 + 0.0j
        for k in range(len(self.charts)):
            sel = chart_idx == k
            if np.any(sel):
                total += np.sum(w[sel] * top_fn(k, coords[sel]))
        return total

    # -- overlap probes ------------------------------------------------------

    def transition(self, i, j, x_j):
        """Coordinates in chart i of the chart-j points x_j."""
        return self.charts[i].coords(self.charts[j].embed(x_j))

    def simplex_probe_indices(self, simplex, margin=0.08, limit=16):
        """Indices of well-interior probes lying in every chart of ``simplex``."""
        mask = np.ones(len(self.points), dtype=bool)
        for i in simplex:
            x = self.probe_coords[i]
            mask &= np.all(np.abs(self.charts[i].rel_coords(x)) < 1.0 - margin, axis=-1)
        idx = np.nonzero(mask)[0]
        if len(idx) == 0:
            raise RuntimeError("no interior probes for simplex %r" % (simplex,))
        if len(idx) <= limit:
            return idx
        # greedy max-min spread, deterministic
        pts = self.points[idx]
        chosen = [0]
        dists = np.linalg.norm(pts - pts[0], axis=-1)
        for _ in range(limit - 1):
            k = int(np.argmax(dists))
            chosen.append(k)
            dists = np.minimum(dists, np.linalg.norm(pts - pts[k], axis=-1))
        return idx[np.array(sorted(set(chosen)))]

    def probe_chart_coords(self, simplex, probe_idx, anchor=None):
        """Coordinates of the selected probes in the anchor chart."""
        if anchor is None:
            anchor = simplex[0]
        return self.probe_coords[anchor][probe_idx]


def stencil_points(x, h=_MACHINE_STEP):
    """x plus +-h offsets along each axis: shape (..., 2d+1, d); center first."""
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    offs = [np.zeros(d)]
    for a in range(d):
        e = np.zeros(d)
        e[a] = h
        offs.extend([e, -e])
    offs = np.stack(offs, axis=0)
    return x[..., None, :] + offs


def eval_with_stencil(fn, x, h=_MACHINE_STEP):
    """Value and first derivatives of fn at points x by central differences.

    fn maps (..., d) -> (..., *tail).  Returns (value, deriv) with deriv of
    shape (..., d, *tail).  The step is tiny; closures built from smooth
    closed forms lose nothing to truncation at this scale.
    """
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    axis = x.ndim - 1
    vals = np.asarray(fn(stencil_points(x, h)))   # (..., 2d+1, *tail)
    center = np.take(vals, 0, axis=axis)
    derivs = []
    for a in range(d):
        vp = np.take(vals, 1 + 2 * a, axis=axis)
        vm = np.take(vals, 2 + 2 * a, axis=axis)
        derivs.append((vp - vm) / (2.0 * h))
    return center, np.stack(derivs, axis=axis)


# --------------------------------------------------------------------------
# built-in geometries
# --------------------------------------------------------------------------

def _wrap_angle(t, center=0.0):
    return np.mod(t - center + np.pi, 2.0 * np.pi) - np.pi + center


def _circle_atlas(resolution):
    width = np.pi / 3.0 + 0.15
    charts = []
    for k in range(3):
        c = 2.0 * np.pi * k / 3.0

        def embed(x, c=c):
            t = c + x[..., 0]
            return np.stack([np.cos(t), np.sin(t)], axis=-1)

        def inverse(p, c=c):
            t = np.arctan2(p[..., 1], p[..., 0])
            return _wrap_angle(t, c)[..., None] - c

        charts.append(Chart("arc%d" % k, [[-width, width]], [resolution],
                            embed, inverse))

    def sampler(n, seed):
        t = (np.arange(n) + 0.5) / n * 2.0 * np.pi
        return np.stack([np.cos(t), np.sin(t)], axis=-1)

    expected = {0: [(0,), (1,), (2,)], 1: [(0, 1), (0, 2), (1, 2)]}
    at = CoverAtlas("circle", charts, 2, sampler, expected)

    def rig_params(n):
        t = np.arange(n) / n * 2.0 * np.pi
        return t[:, None], np.full(n, 2.0 * np.pi / n)

    at._rig_params = rig_params
    at._rig_embed = lambda u: np.stack([np.cos(u[..., 0]), np.sin(u[..., 0])], axis=-1)
    return at


def _torus_atlas(resolution, five=False):
    delta = 0.25
    half = np.pi / 2.0 + delta
    centers = [(np.pi / 2, np.pi / 2), (3 * np.pi / 2, np.pi / 2),
               (np.pi / 2, 3 * np.pi / 2), (3 * np.pi / 2, 3 * np.pi / 2)]
    names = ["box00", "box10", "box01", "box11"]
    halves = [half] * 4
    if five:
        centers.append((np.pi, np.pi))
        names.append("core")
        halves.append(0.8)
    charts = []
    for name, (c0, c1), hw in zip(names, centers, halves):

        def embed(x, c0=c0, c1=c1):
            t = c0 + x[..., 0]
            p = c1 + x[..., 1]
            return np.stack([np.cos(t), np.sin(t), np.cos(p), np.sin(p)], axis=-1)

        def inverse(pt, c0=c0, c1=c1):
            t = np.arctan2(pt[..., 1], pt[..., 0])
            p = np.arctan2(pt[..., 3], pt[..., 2])
            return np.stack([_wrap_angle(t, c0) - c0, _wrap_angle(p, c1) - c1], axis=-1)

        charts.append(Chart(name, [[-hw, hw]] * 2, [resolution] * 2,
                            embed, inverse))

    def sampler(n, seed):
        rng = np.random.default_rng(seed)
        tp = rng.uniform(0.0, 2.0 * np.pi, size=(n, 2))
        return np.stack([np.cos(tp[:, 0]), np.sin(tp[:, 0]),
                         np.cos(tp[:, 1]), np.sin(tp[:, 1])], axis=-1)

    name = "torus2x5" if five else "torus2"
    at = CoverAtlas(name, charts, 4, sampler, expected_nerve=None)

    def rig_params(n):
        t = np.arange(n) / n * 2.0 * np.pi
        u = np.stack(np.meshgrid(t, t, indexing="ij"), axis=-1).reshape(-1, 2)
        return u, np.full(len(u), (2.0 * np.pi / n) ** 2)

    at._rig_params = rig_params
    at._rig_embed = lambda u: np.stack(
        [np.cos(u[..., 0]), np.sin(u[..., 0]),
         np.cos(u[..., 1]), np.sin(u[..., 1])], axis=-1)
    return at


def _normal_chart(name, center, frame, halfw, resolution, dim, support=0.97):
    """Geodesic normal coordinates around ``center`` with rows of ``frame``
    as tangent axes; works on any round sphere."""
    center = np.asarray(center, dtype=float)
    frame = np.asarray(frame, dtype=float)

    def embed(x):
        u = np.sum(np.asarray(x) ** 2, axis=-1)
        tang = np.tensordot(np.asarray(x), frame, axes=([-1], [0]))
        return _cos_sqrt(u)[..., None] * center + _sinc_sqrt(u)[..., None] * tang

    def inverse(p):
        p = np.asarray(p, dtype=float)
        c = np.clip(np.tensordot(p, center, axes=([-1], [0])), -1.0, 1.0)
        r = np.arccos(c)
        tang = p - c[..., None] * center
        nt = np.linalg.norm(tang, axis=-1)
        scale = np.where(nt > 1e-14, r / np.where(nt > 1e-14, nt, 1.0), 0.0)
        return np.tensordot(tang * scale[..., None], frame, axes=([-1], [1]))

    return Chart(name, [[-halfw, halfw]] * dim, [resolution] * dim,
                 embed, inverse, support=support)


def _cross_polytope_centers(dim):
    """Chart centers +-e_i of the unit sphere in R^dim, plus axis labels."""
    centers = []
    for i in range(dim):
        for sgn in (1.0, -1.0):
            v = np.zeros(dim)
            v[i] = sgn
            centers.append(v)
    return centers


def _cross_polytope_nerve(dim):
    """Simplices of the boundary cross-polytope on centers +-e_i."""
    from itertools import combinations
    ncharts = 2 * dim
    def compatible(sub):
        axes = [k // 2 for k in sub]
        return len(set(axes)) == len(axes)
    nerve = {}
    for r in range(1, dim + 1):
        nerve[r - 1] = sorted(s for s in combinations(range(ncharts), r)
                              if compatible(s))
    return nerve


def _cross_polytope_atlas(name, dim, resolution, halfw):
    """Sphere S^(dim-1) covered by 2*dim caps centered at the +-axes.

    Voronoi-cell vertices of this configuration point along box diagonals,
    so every top intersection keeps a comfortable interior margin; opposite
    caps never meet, hence the nerve is exactly the boundary cross-polytope.
    """
    charts = []
    centers = _cross_polytope_centers(dim)
    for k, v in enumerate(centers):
        axis = k // 2
        others = [np.eye(dim)[j] for j in range(dim) if j != axis]
        frame = _orthonormal_frame(v, others)
        # orient every chart the same way: tangent frame + outward normal
        if np.linalg.det(np.vstack([frame, v[None, :]])) < 0:
            frame = frame[[1, 0] + list(range(2, dim - 1))]
        label = "cap" if dim == 3 else "ball"
        sgn = "p" if k % 2 == 0 else "m"
        charts.append(_normal_chart("%s%s%d" % (label, sgn, axis), v, frame,
                                    halfw, resolution, dim - 1))

    def sampler(n, seed):
        rng = np.random.default_rng(seed)
        p = rng.normal(size=(n, dim))
        return p / np.linalg.norm(p, axis=-1, keepdims=True)

    at = CoverAtlas(name, charts, dim, sampler, _cross_polytope_nerve(dim))

    if dim == 3:
        def rig_params(n):
            th, wth = np.polynomial.legendre.leggauss(n)
            th = 0.5 * np.pi * (th + 1.0)
            wth = 0.5 * np.pi * wth
            ph = np.arange(2 * n) / (2 * n) * 2.0 * np.pi
            wph = 2.0 * np.pi / (2 * n)
            T, P = np.meshgrid(th, ph, indexing="ij")
            W = np.multiply.outer(wth, np.full(2 * n, wph))
            return np.stack([T.ravel(), P.ravel()], axis=-1), W.ravel()

        def rig_embed(u):
            th, ph = u[..., 0], u[..., 1]
            return np.stack([np.sin(th) * np.cos(ph),
                             np.sin(th) * np.sin(ph), np.cos(th)], axis=-1)
    else:
        def rig_params(n):
            g, wg = np.polynomial.legendre.leggauss(n)
            ang = 0.5 * np.pi * (g + 1.0)
            wang = 0.5 * np.pi * wg
            ph = np.arange(2 * n) / (2 * n) * 2.0 * np.pi
            wph = 2.0 * np.pi / (2 * n)
            A, B, C = np.meshgrid(ang, ang, ph, indexing="ij")
            W = np.einsum("i,j,k->ijk", wang, wang, np.full(2 * n, wph))
            return np.stack([A.ravel(), B.ravel(), C.ravel()], axis=-1), W.ravel()

        def rig_embed(u):
            ps, th, ph = u[..., 0], u[..., 1], u[..., 2]
            return np.stack([np.sin(ps) * np.sin(th) * np.cos(ph),
                             np.sin(ps) * np.sin(th) * np.sin(ph),
                             np.sin(ps) * np.cos(th),
                             np.cos(ps)], axis=-1)

    at._rig_params = rig_params
    at._rig_embed = rig_embed
    return at


def _sphere2_atlas(resolution):
    return _cross_polytope_atlas("sphere2", 3, resolution, halfw=0.95)


def _sphere3_atlas(resolution):
    return _cross_polytope_atlas("sphere3", 4, resolution, halfw=0.88)


_BUILDERS = {
    "circle": _circle_atlas,
    "torus2": lambda r: _torus_atlas(r, five=False),
    "torus2x5": lambda r: _torus_atlas(r, five=True),
    "sphere2": _sphere2_atlas,
    "sphere3": _sphere3_atlas,
}


def build_atlas(name, resolution):
    """Construct a built-in cover; resolution is the per-axis sample count."""
    if resolution < 8:
        raise ValueError("resolution must be at least 8 per axis")
    if name not in _BUILDERS:
        raise KeyError("unknown geometry %r (have %s)" % (name, sorted(_BUILDERS)))
    return _BUILDERS[name](int(resolution))


# --------------------------------------------------------------------------
# simplicial homology oracle (exact integer ranks, tiny complexes)
# --------------------------------------------------------------------------

def _rank_int(rows):
    """Exact rank of a small integer matrix by fraction-free elimination."""
    m = [list(r) for r in rows]
    rank = 0
    cols = len(m[0]) if m else 0
    row = 0
    for col in range(cols):
        piv = None
        for r in range(row, len(m)):
            if m[r][col] != 0:
                piv = r
                break
        if piv is None:
            continue
        m[row], m[piv] = m[piv], m[row]
        for r in range(row + 1, len(m)):
            if m[r][col] != 0:
                a, b = m[row][col], m[r][col]
                m[r] = [a * x - b * y for x, y in zip(m[r], m[row])]
        row += 1
        rank += 1
        if row == len(m):
            break
    return rank


def betti_numbers(nerve):
    """Betti numbers of a simplicial complex given as {dim: [simplices]}."""
    maxdim = max(nerve) if nerve else -1
    index = {d: {s: i for i, s in enumerate(sorted(nerve.get(d, [])))}
             for d in range(maxdim + 1)}
    ranks = {}
    for d in range(1, maxdim + 1):
        rows = []
        for s in sorted(nerve.get(d, [])):
            row = [0] * len(index[d - 1])
            for m in range(len(s)):
                face = s[:m] + s[m + 1:]
                row[index[d - 1][face]] = (-1) ** m
            rows.append(row)
        ranks[d] = _rank_int(rows) if rows and index[d - 1] else 0
    betti = []
    for d in range(maxdim + 1):
        dim_cd = len(index[d])
        rank_in = ranks.get(d + 1, 0)
        rank_out = ranks.get(d, 0)
        betti.append(dim_cd - rank_out - rank_in)
    return betti

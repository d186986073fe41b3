"""Named generators for operator families and connections.

Everything here is a closed-form closure over chart coordinates so that
tiny-step stencils see smooth data: trigonometric matrix fields on angle
coordinates, Pauli / Clifford families on spheres, and the block families
with prescribed kernel behaviour used by the stabilization scenarios.
"""

import numpy as np

from .bundles import trivial_bundle
from .eta import OperatorFamily

SIGMA = np.array([[[0.0, 1.0], [1.0, 0.0]],
                  [[0.0, -1.0j], [1.0j, 0.0]],
                  [[1.0, 0.0], [0.0, -1.0]]], dtype=complex)


def _dirac_gammas():
    """Four anticommuting Hermitian 4x4 matrices."""
    s1, s2, s3 = SIGMA
    eye = np.eye(2, dtype=complex)
    return np.array([np.kron(s1, s1), np.kron(s1, s2),
                     np.kron(s1, s3), np.kron(s2, eye)])


GAMMA4 = _dirac_gammas()


def random_hermitian(rng, n):
    m = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return 0.5 * (m + m.conj().T)


def trig_matrix_field(rng, n, n_modes=2, scale=1.0, hermitian=True, dim=2):
    """Random smooth matrix field of the angle variables, few Fourier modes."""
    mats = []
    waves = []
    for _ in range(2 * n_modes + 1):
        m = random_hermitian(rng, n) if hermitian else (
            rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n)))
        mats.append(m)
    coeffs = rng.integers(-2, 3, size=(2 * n_modes, dim))
    phases = rng.uniform(0, 2 * np.pi, size=2 * n_modes)

    def field(angles):
        angles = np.asarray(angles, dtype=float)
        out = np.broadcast_to(mats[0], angles.shape[:-1] + (n, n)).copy()
        for k in range(2 * n_modes):
            w = np.cos(angles @ coeffs[k].astype(float) + phases[k])
            out = out + w[..., None, None] * mats[k + 1]
        return scale * out / np.sqrt(1 + 2 * n_modes)

    return field


def cayley_unitary(H):
    """(1 - iH)(1 + iH)^{-1}: smooth unitary from a Hermitian field."""
    n = H.shape[-1]
    eye = np.eye(n, dtype=complex)
    return np.linalg.solve(eye + 1j * H, eye - 1j * H)


def _angles_of(atlas, chart, x):
    """Angle coordinates of chart points on the torus / circle covers."""
    p = atlas.charts[chart].embed(np.asarray(x, dtype=float))
    if atlas.ambient_dim == 2:
        return np.arctan2(p[..., 1], p[..., 0])[..., None]
    return np.stack([np.arctan2(p[..., 1], p[..., 0]),
                     np.arctan2(p[..., 3], p[..., 2])], axis=-1)


def random_invertible_family(atlas, n, seed, gap=0.35, spread=1.0,
                             signs=None, n_modes=2):
    """Smooth family with eigenvalues pinned away from zero.

    D = U diag(lambda) U^dag with U a Cayley unitary of a random trig field
    and lambda_i = s_i (gap + spread * softplus-like positive field).
    """
    rng = np.random.default_rng(seed)
    dim = 1 if atlas.ambient_dim == 2 else 2
    Hfield = trig_matrix_field(rng, n, n_modes=n_modes, scale=0.8, dim=dim)
    lamfield = trig_matrix_field(rng, n, n_modes=n_modes, scale=0.5,
                                 hermitian=True, dim=dim)
    if signs is None:
        signs = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    signs = np.asarray(signs, dtype=float)

    def op(chart, x):
        ang = _angles_of(atlas, chart, x)
        U = cayley_unitary(Hfield(ang))
        raw = np.real(np.einsum("...ii->...i", lamfield(ang)))
        lam = signs * (gap + spread * np.log1p(np.exp(raw)))
        return np.einsum("...ik,...k,...jk->...ij", U, lam.astype(complex),
                         np.conj(U))

    return OperatorFamily(atlas, n, op, name="random-invertible-%d" % seed)


def random_torus_bundle(atlas, n, seed, scale=0.4, n_modes=2):
    """Trivial rank-n bundle with a random smooth anti-Hermitian trig form."""
    rng = np.random.default_rng(seed)
    dim = 1 if atlas.ambient_dim == 2 else 2
    comp = [trig_matrix_field(rng, n, n_modes=n_modes, scale=scale, dim=dim)
            for _ in range(dim)]

    def conn(chart, x):
        ang = _angles_of(atlas, chart, x)
        A = np.stack([1j * comp[a](ang) for a in range(dim)], axis=-3)
        return A

    from .bundles import BundleWithConnection
    return BundleWithConnection(atlas, n, conn, None,
                                name="random-conn-%d" % seed)


def commuting_pair(atlas, n, seed, scale=0.3):
    """(family, bundle) with [nabla, D] = 0: constant diagonal D, diagonal A."""
    rng = np.random.default_rng(seed)
    lam = np.sort(rng.uniform(0.5, 2.5, size=n)) * np.where(
        np.arange(n) % 2 == 0, 1.0, -1.0)
    dim = 1 if atlas.ambient_dim == 2 else 2
    diag_fields = [[trig_matrix_field(rng, 1, n_modes=2, scale=scale, dim=dim)
                    for _ in range(n)] for _ in range(dim)]

    def op(chart, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1] + (n, n), dtype=complex)
        idx = np.arange(n)
        out[..., idx, idx] = lam
        return out

    def conn(chart, x):
        ang = _angles_of(atlas, chart, x)
        A = np.zeros(ang.shape[:-1] + (dim, n, n), dtype=complex)
        for a in range(dim):
            for i in range(n):
                A[..., a, i, i] = 1j * diag_fields[a][i](ang)[..., 0, 0]
        return A

    from .bundles import BundleWithConnection
    fam = OperatorFamily(atlas, n, op, name="commuting-%d" % seed)
    return fam, BundleWithConnection(atlas, n, conn, None, name="diag-conn")


def pauli_sphere_family(atlas, extra_dim=0):
    """b -> b . sigma over the 2-sphere; eigenvalues exactly +-1."""
    n = 2 + extra_dim

    def op(chart, x):
        p = atlas.charts[chart].embed(np.asarray(x, dtype=float))
        D = np.einsum("k...,kij->...ij", np.moveaxis(p, -1, 0), SIGMA)
        if extra_dim:
            full = np.zeros(p.shape[:-1] + (n, n), dtype=complex)
            full[..., :2, :2] = D
            idx = np.arange(extra_dim)
            full[..., 2 + idx, 2 + idx] = 1.5
            return full
        return D

    return OperatorFamily(atlas, n, op, name="pauli-sphere")


def clifford_s3_family(atlas):
    """p -> p . Gamma over the 3-sphere; eigenvalues exactly +-1."""
    def op(chart, x):
        p = atlas.charts[chart].embed(np.asarray(x, dtype=float))
        return np.einsum("k...,kij->...ij", np.moveaxis(p, -1, 0), GAMMA4)

    return OperatorFamily(atlas, 4, op, name="clifford-s3")


def ambient_rotation_bundle(atlas, n, seed, scale=0.15):
    """Trivial bundle with a global ambient 1-form sum c_munu (p_mu dp_nu -
    p_nu dp_mu) H_munu; smooth on any embedded sphere."""
    rng = np.random.default_rng(seed)
    E = atlas.ambient_dim
    hmats = {}
    for mu in range(E):
        for nu in range(mu + 1, E):
            hmats[(mu, nu)] = 1j * random_hermitian(rng, n) * scale

    def ambient(p):
        out = np.zeros(p.shape[:-1] + (E, n, n), dtype=complex)
        for (mu, nu), h in hmats.items():
            out[..., nu, :, :] += p[..., mu, None, None] * h
            out[..., mu, :, :] -= p[..., nu, None, None] * h
        return out

    return trivial_bundle(atlas, n, ambient_conn=ambient,
                          name="ambient-rot-%d" % seed)


def graded_block_family(atlas, m, seed, kernel_profile=None, gap=0.8):
    """Z2-graded family on C^m + C^m with odd D; optionally a prescribed
    scalar profile f(b) in the (0,0) block so the kernel rank jumps where
    f vanishes.  Grading: diag(+1 m, -1 m)."""
    rng = np.random.default_rng(seed)
    n = 2 * m
    grading = np.diag(np.r_[np.ones(m), -np.ones(m)]).astype(complex)
    dim = 1 if atlas.ambient_dim == 2 else 2
    Tfield = trig_matrix_field(rng, m, n_modes=2, scale=0.35, hermitian=False,
                               dim=dim)

    def op(chart, x):
        ang = _angles_of(atlas, chart, x)
        Dplus = Tfield(ang) + gap * np.eye(m)
        if kernel_profile is not None:
            prof = kernel_profile(ang)
            Dplus = Dplus.copy()
            Dplus[..., 0, :] = 0.0
            Dplus[..., :, 0] = 0.0
            Dplus[..., 0, 0] = prof
        out = np.zeros(ang.shape[:-1] + (n, n), dtype=complex)
        out[..., :m, m:] = np.swapaxes(Dplus.conj(), -1, -2)
        out[..., m:, :m] = Dplus
        return out

    return OperatorFamily(atlas, n, op, grading=grading,
                          name="block-%s" % ("jump" if kernel_profile else "gapped"))

"""Independent sampling oracles for ellipsoid geometry."""
import numpy as np
from scipy.stats import special_ortho_group

from redpg.ellipsoid import Ellipsoid, boxplus


def random_spd(rng, n, lo=0.1, hi=2.0):
    R = special_ortho_group.rvs(n, random_state=rng) if n > 1 else np.eye(1)
    return R @ np.diag(rng.uniform(lo, hi, n)) @ R.T


def sample_ball(rng, count, n):
    z = rng.standard_normal((count, n))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    return z * rng.random((count, 1)) ** (1.0 / n)


def sample_interior(rng, E, count):
    return E.center + sample_ball(rng, count, E.dim) @ np.linalg.cholesky(E.shape).T


def sample_boundary(rng, Q, count):
    z = rng.standard_normal((count, Q.shape[0]))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    return z @ np.linalg.cholesky(Q).T


def sampling_overlap(rng, E1, E2, count=1_000_000, chunk=250_000):
    Binv = np.linalg.inv(E2.shape)
    for _ in range(count // chunk):
        d = sample_interior(rng, E1, chunk) - E2.center
        if np.any(np.einsum("si,ij,sj->s", d, Binv, d) <= 1.0):
            return True
    return False


def moderate_pair(rng):
    n = int(rng.integers(2, 4))
    A, B = random_spd(rng, n, 0.5, 1.5), random_spd(rng, n, 0.5, 1.5)
    c1 = rng.normal(size=n)
    S = boxplus([A, B])
    # centre distance drawn so that the boxplus quadratic form lands in [0.2, 3]
    u = rng.normal(size=n)
    u /= np.sqrt(u @ np.linalg.solve(S, u))
    return Ellipsoid(c1, A), Ellipsoid(c1 + np.sqrt(rng.uniform(0.2, 3.0)) * u, B)

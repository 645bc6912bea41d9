"""Hidden-scene recovery: pseudo-inverse and TV-regularized ADMM.

The ADMM solver minimizes ``||i - T l||^2 + reg_weight * TV(l)`` subject to
``0 <= l <= 1`` with anisotropic total variation.
"""
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from polnlos.transport import TransportMatrix


@dataclass(frozen=True)
class AdmmParams:
    reg_weight: float = 1e-2
    penalty: float = 1.0
    max_iters: int = 500
    tol_primal: float = 1e-5
    tol_dual: float = 1e-5

    def __post_init__(self):
        if not self.reg_weight >= 0:
            raise ValueError("reg_weight must be >= 0")
        if not self.penalty > 0:
            raise ValueError("penalty must be > 0")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ValueError("max_iters must be a positive integer")
        if not (self.tol_primal > 0 and self.tol_dual > 0):
            raise ValueError("tolerances must be > 0")


@dataclass
class ReconResult:
    estimate: np.ndarray
    iterations: int
    primal_residual: float
    dual_residual: float
    objective: float
    converged: bool


class PinvResult(NamedTuple):
    estimate: np.ndarray
    out_of_box: bool


def _as_arrays(T, obs):
    data = T.data if isinstance(T, TransportMatrix) else np.asarray(T, dtype=np.float64)
    obs = np.asarray(obs, dtype=np.float64).ravel()
    if data.ndim != 2 or data.shape[0] != obs.shape[0]:
        raise ValueError(f"dimension mismatch: transport is {data.shape[0]}x{data.shape[1]}, "
                         f"observation has {obs.shape[0]} entries")
    return data, obs


def default_penalty(T, scale=0.01):
    """ADMM penalty proportional to the squared spectral norm of ``T``.

    A fixed penalty converges slowly when the data term is many orders of
    magnitude larger or smaller than the TV and box terms; tying it to
    ``||T||_2^2`` keeps the iteration count roughly scale-free.
    """
    data = T.data if isinstance(T, TransportMatrix) else np.asarray(T, dtype=np.float64)
    smax = np.linalg.norm(data, 2)
    if not smax > 0:
        raise ValueError("transport matrix is zero")
    return float(scale * smax**2)


def pinv_solve(T, obs):
    """Minimum-norm least-squares estimate; not clipped to [0, 1]."""
    data, obs = _as_arrays(T, obs)
    est = np.linalg.pinv(data, rcond=1e-12) @ obs
    return PinvResult(est, bool(np.any(est < 0) or np.any(est > 1)))


def difference_operator(width, height):
    """Sparse forward-difference operator (horizontal rows, then vertical).

    The last column/row has no forward neighbour, so those differences are
    dropped (equivalent to replicate boundary).
    """
    def d1(n):
        return sp.diags([-np.ones(n - 1), np.ones(n - 1)], [0, 1], shape=(n - 1, n))
    dx = sp.kron(sp.identity(height), d1(width))
    dy = sp.kron(d1(height), sp.identity(width))
    return sp.vstack([dx, dy]).tocsr()


def tv_2d(image, width, height):
    """Anisotropic total variation of a row-major ``height x width`` image."""
    l = np.asarray(image, dtype=np.float64).ravel()
    if l.size != width * height:
        raise ValueError(f"dimension mismatch: {l.size} values for a {width}x{height} image")
    img = l.reshape(height, width)
    return float(np.abs(np.diff(img, axis=1)).sum() + np.abs(np.diff(img, axis=0)).sum())


def objective(T, obs, estimate, reg_weight, width, height):
    data, obs = _as_arrays(T, obs)
    r = obs - data @ estimate
    return float(r @ r + reg_weight * tv_2d(estimate, width, height))


def _grid_shape(T, shape):
    if shape is not None:
        return shape
    if isinstance(T, TransportMatrix):
        dims = T.scene_shape
        if len(dims) == 2:
            return dims[1], dims[0]
        raise ValueError("TV regularization needs a 2-D scene grid")
    n = np.asarray(T).shape[1]
    return n, 1


def admm_tv_box(T, obs, params=AdmmParams(), shape=None):
    """Solve the box-constrained TV problem by two-block ADMM.

    Parameters
    ----------
    T : TransportMatrix or ndarray
    obs : array_like
        Observation vector.
    params : AdmmParams
    shape : (width, height), optional
        Scene grid shape; read from ``T.col_meta`` when omitted.

    Returns
    -------
    ReconResult
        ``estimate`` is the box-projected split variable, so it lies in
        [0, 1] exactly.
    """
    data, obs = _as_arrays(T, obs)
    if not np.all(np.isfinite(obs)):
        raise ValueError("observation contains non-finite entries")
    width, height = _grid_shape(T, shape)
    n = data.shape[1]
    if width * height != n:
        raise ValueError(f"scene shape {width}x{height} does not match {n} columns")
    D = difference_operator(width, height)
    rho = params.penalty
    lam = params.reg_weight

    # the data term carries no 1/2, hence the factor 2 on T^T T and T^T i
    DtD = (D.T @ D).toarray()
    system = 2.0 * data.T @ data + rho * (DtD + np.eye(n))
    factor = scipy.linalg.cho_factor(system)
    rhs_data = 2.0 * data.T @ obs

    l = np.clip(pinv_solve(data, obs).estimate, 0.0, 1.0)
    z1, z2 = D @ l, l.copy()
    u1, u2 = np.zeros_like(z1), np.zeros_like(z2)
    thresh = lam / rho
    scale = np.sqrt(n)
    r_norm = s_norm = np.inf
    converged = False
    it = 0
    for it in range(1, params.max_iters + 1):
        l = scipy.linalg.cho_solve(factor, rhs_data + rho * (D.T @ (z1 - u1)) + rho * (z2 - u2))
        Dl = D @ l
        v = Dl + u1
        z1_old, z2_old = z1, z2
        z1 = np.sign(v) * np.maximum(np.abs(v) - thresh, 0.0)
        z2 = np.clip(l + u2, 0.0, 1.0)
        r1, r2 = Dl - z1, l - z2
        u1 = u1 + r1
        u2 = u2 + r2
        r_norm = np.sqrt(r1 @ r1 + r2 @ r2)
        dz = D.T @ (z1 - z1_old) + (z2 - z2_old)
        s_norm = rho * np.sqrt(dz @ dz)
        if r_norm < params.tol_primal * scale and s_norm < params.tol_dual * scale:
            converged = True
            break
    return ReconResult(estimate=z2, iterations=it, primal_residual=float(r_norm),
                       dual_residual=float(s_norm),
                       objective=objective(data, obs, z2, lam, width, height),
                       converged=converged)

"""Linear-Gaussian motion and measurement models with Kalman primitives.

The scalar-density functions (`kalman_predict`, `predicted_measurement`,
`kalman_update`) operate on one `GaussianDensity`; the ``*_batch`` variants
take stacked means ``(N, n)`` and covariances ``(N, n, n)`` and are what the
filter uses internally.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .rfs import GaussianDensity, symmetrize

MAX_CONDITION = 1e12


class NumericalError(ArithmeticError):
    pass


@dataclass(frozen=True, eq=False)
class MotionModel:
    F: np.ndarray
    Q: np.ndarray
    p_s: float = 0.99

    def __post_init__(self):
        F = np.asarray(self.F, dtype=float)
        Q = np.asarray(self.Q, dtype=float)
        if F.shape != Q.shape or F.shape[0] != F.shape[1]:
            raise ValueError("F and Q must be square matrices of equal size")
        if not np.allclose(Q, Q.T):
            raise ValueError("Q must be symmetric")
        if not 0.0 <= self.p_s <= 1.0:
            raise ValueError("survival probability outside [0, 1]")
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "Q", Q)

    @classmethod
    def constant_velocity(cls, q: float, T: float = 1.0, p_s: float = 0.99, axes: int = 2) -> "MotionModel":
        """Nearly-constant-velocity model with state [p_x, v_x, p_y, v_y, ...]."""
        F = np.kron(np.eye(axes), np.array([[1.0, T], [0.0, 1.0]]))
        Q = q * np.kron(np.eye(axes), np.array([[T**3 / 3, T**2 / 2], [T**2 / 2, T]]))
        return cls(F, Q, p_s)

    @property
    def dim(self) -> int:
        return self.F.shape[0]


@dataclass(frozen=True, eq=False)
class MeasurementModel:
    H: np.ndarray
    R: np.ndarray
    p_d: float = 0.9
    clutter_rate: float = 0.0
    clutter_density: float = 0.0

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        if R.shape != (H.shape[0], H.shape[0]):
            raise ValueError("R must be n_z x n_z")
        if not np.allclose(R, R.T) or np.any(np.linalg.eigvalsh(R) <= 0):
            raise ValueError("R must be symmetric positive definite")
        if not 0.0 <= self.p_d <= 1.0:
            raise ValueError("detection probability outside [0, 1]")
        if self.clutter_rate < 0:
            raise ValueError("clutter rate must be nonnegative")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "R", R)

    @classmethod
    def position(cls, p_d: float = 0.9, clutter_rate: float = 0.0, area: float = 1.0,
                 r: float = 1.0, axes: int = 2) -> "MeasurementModel":
        """Position-only sensor for the constant-velocity state with uniform clutter."""
        H = np.kron(np.eye(axes), np.array([[1.0, 0.0]]))
        return cls(H, r * np.eye(axes), p_d, clutter_rate, 1.0 / area)

    @property
    def dim(self) -> int:
        return self.H.shape[0]

    @property
    def clutter_intensity(self) -> float:
        return self.clutter_rate * self.clutter_density


def _check_dims(d: GaussianDensity, M: np.ndarray) -> None:
    if d.dim != M.shape[1]:
        raise ValueError(f"state dimension {d.dim} does not match model dimension {M.shape[1]}")


def kalman_predict(d: GaussianDensity, m: MotionModel) -> GaussianDensity:
    _check_dims(d, m.F)
    return GaussianDensity(m.F @ d.mean, symmetrize(m.F @ d.cov @ m.F.T + m.Q))


def predicted_measurement(d: GaussianDensity, m: MeasurementModel):
    """Predicted measurement, innovation covariance and Kalman gain."""
    _check_dims(d, m.H)
    zhat = m.H @ d.mean
    S = symmetrize(m.H @ d.cov @ m.H.T + m.R)
    if np.linalg.cond(S) > MAX_CONDITION:
        raise NumericalError("innovation covariance is numerically singular")
    # K = P H^T S^-1 via a solve against S (S symmetric)
    K = np.linalg.solve(S, m.H @ d.cov).T
    return zhat, S, K


def kalman_update(d: GaussianDensity, z, m: MeasurementModel):
    """Joseph-form Kalman update; returns the posterior and the likelihood of z."""
    z = np.asarray(z, dtype=float).reshape(-1)
    zhat, S, K = predicted_measurement(d, m)
    if z.size != zhat.size:
        raise ValueError("measurement dimension mismatch")
    nu = z - zhat
    A = np.eye(d.dim) - K @ m.H
    P = symmetrize(A @ d.cov @ A.T + K @ m.R @ K.T)
    chol = np.linalg.cholesky(S)
    y = np.linalg.solve(chol, nu)
    loglik = -0.5 * y @ y - np.log(np.diag(chol)).sum() - 0.5 * nu.size * math.log(2 * math.pi)
    return GaussianDensity(d.mean + K @ nu, P), math.exp(loglik)


def predict_batch(means: np.ndarray, covs: np.ndarray, m: MotionModel):
    return means @ m.F.T, symmetrize(m.F @ covs @ m.F.T + m.Q)


def innovation_batch(means: np.ndarray, covs: np.ndarray, m: MeasurementModel):
    """Stacked zhat (N, nz), S (N, nz, nz), Cholesky factors of S and gains (N, n, nz)."""
    zhat = means @ m.H.T
    PHt = covs @ m.H.T
    S = symmetrize(m.H @ PHt + m.R)
    chol = np.linalg.cholesky(S)
    K = np.swapaxes(np.linalg.solve(S, np.swapaxes(PHt, -1, -2)), -1, -2)
    return zhat, S, chol, K


def joseph_covariance(covs: np.ndarray, K: np.ndarray, m: MeasurementModel) -> np.ndarray:
    A = np.eye(covs.shape[-1]) - K @ m.H
    return symmetrize(A @ covs @ np.swapaxes(A, -1, -2) + K @ m.R @ np.swapaxes(K, -1, -2))


def log_likelihood_batch(nu: np.ndarray, chol: np.ndarray) -> np.ndarray:
    """log N(nu; 0, S) for innovations ``nu`` (..., nz) given Cholesky factors of S."""
    y = np.linalg.solve(chol, nu[..., None])[..., 0]
    logdet = np.log(np.diagonal(chol, axis1=-2, axis2=-1)).sum(-1)
    return -0.5 * np.einsum("...i,...i->...", y, y) - logdet - 0.5 * nu.shape[-1] * math.log(2 * math.pi)

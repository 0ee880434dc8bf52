"""Gaussian particle flow for measurement updates.

Particles drawn from a Gaussian prior are migrated through a pseudo-time
grid toward the posterior induced by a (possibly nonlinear) measurement
with additive Gaussian noise.  The migration integrates an affine velocity
field whose coefficients are available in closed form for linearized
measurement models; nonlinearity is handled by re-linearizing at an
auxiliary mean that is propagated through the same field.  Because every
Euler step applies an affine map, the flow is invertible and the product
of the per-step Jacobian determinants (the mapping factor) is cheap to
accumulate, which makes the migrated particle set usable as an
importance-sampling proposal with exact weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .errors import FlowInvertibilityError, SingularityError

# Determinant magnitudes below this abort the flow: the step map could not
# be inverted reliably, so importance weights would be meaningless.
DET_FLOOR = 1e-12

# Relative eigenvalue floor applied when a prior covariance is regularized.
REL_EIG_FLOOR = 1e-9
ABS_EIG_FLOOR = 1e-12


@dataclass(frozen=True)
class FlowSchedule:
    """Ordered pseudo-time grid 0 = lambda_0 < lambda_1 < ... < lambda_N = 1."""

    lambdas: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.lambdas, dtype=float)
        object.__setattr__(self, "lambdas", lam)
        if lam.ndim != 1 or lam.size < 2:
            raise ValueError("pseudo-time grid needs at least two points")
        if lam[0] != 0.0 or lam[-1] != 1.0:
            raise ValueError("pseudo-time grid must start at 0 and end at 1")
        if np.any(np.diff(lam) <= 0.0):
            raise ValueError("pseudo-time grid must be strictly increasing")

    @property
    def n_steps(self) -> int:
        return self.lambdas.size - 1

    @property
    def steps(self) -> np.ndarray:
        """Step lengths delta_l = lambda_l - lambda_{l-1}."""
        return np.diff(self.lambdas)

    @classmethod
    def uniform(cls, n_steps: int) -> "FlowSchedule":
        if n_steps < 1:
            raise ValueError("n_steps must be at least 1")
        return cls(np.linspace(0.0, 1.0, n_steps + 1))


def make_geometric_schedule(n_steps: int, first_step: float = 1e-3,
                            ratio: float = 1.2) -> FlowSchedule:
    """Build a geometrically growing pseudo-time grid.

    Step lengths grow by `ratio` from one step to the next, starting at
    `first_step`, and the whole grid is rescaled so the final point lands
    exactly on 1.  Short early steps keep the integration accurate where
    the velocity field changes fastest.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be at least 1")
    if first_step <= 0.0:
        raise ValueError("first_step must be positive")
    if ratio <= 1.0:
        raise ValueError("ratio must exceed 1")
    idx = np.arange(n_steps + 1, dtype=float)
    raw = first_step * (ratio ** idx - 1.0) / (ratio - 1.0)
    lam = raw / raw[-1]
    lam[0] = 0.0
    lam[-1] = 1.0
    return FlowSchedule(lam)


@dataclass(frozen=True)
class GaussianSummary:
    """Mean and covariance of a Gaussian approximation to a particle set."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        cov = np.asarray(self.cov, dtype=float)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        if mean.ndim != 1:
            raise ValueError("mean must be a vector")
        d = mean.size
        if cov.shape != (d, d):
            raise ValueError("covariance shape does not match the mean")
        scale = float(np.max(np.abs(cov))) if cov.size else 0.0
        if scale > 0.0 and np.max(np.abs(cov - cov.T)) > 1e-12 * scale:
            raise ValueError("covariance must be symmetric")
        eigs = np.linalg.eigvalsh(0.5 * (cov + cov.T))
        trace = float(np.trace(cov))
        if eigs.size and eigs[0] < -1e-10 * max(trace, 0.0):
            raise ValueError("covariance must be positive semidefinite")

    @property
    def dim(self) -> int:
        return self.mean.size


def regularize_covariance(cov: np.ndarray) -> np.ndarray:
    """Return a symmetric positive definite version of `cov`.

    Eigenvalues below a small fraction of the average eigenvalue are
    clamped up, so nearly rank-deficient particle covariances (common
    right after a resampling collapse) stay invertible.
    """
    cov = np.asarray(cov, dtype=float)
    sym = 0.5 * (cov + cov.T)
    w, v = np.linalg.eigh(sym)
    trace = float(np.trace(sym))
    floor = max(REL_EIG_FLOOR * max(trace, 0.0) / sym.shape[0], ABS_EIG_FLOOR)
    w = np.maximum(w, floor)
    return (v * w) @ v.T


def gaussian_log_density(summary: GaussianSummary, x: np.ndarray) -> np.ndarray:
    """Log density of N(mean, cov) at each row of `x` (cov must be PD)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    chol = np.linalg.cholesky(summary.cov)
    diff = x - summary.mean
    sol = solve_triangular(chol, diff.T, lower=True)
    maha = np.einsum("ij,ij->j", sol, sol)
    log_det = 2.0 * np.sum(np.log(np.diag(chol)))
    d = summary.dim
    return -0.5 * (maha + log_det + d * np.log(2.0 * np.pi))


@dataclass(frozen=True)
class LinearizedMeasurement:
    """Affine measurement model z = H x + v, v ~ N(0, R), with the
    effective measurement already shifted for the linearization point."""

    H: np.ndarray
    R: np.ndarray
    z_eff: np.ndarray

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        z = np.atleast_1d(np.asarray(self.z_eff, dtype=float))
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "z_eff", z)
        m = H.shape[0]
        if R.shape != (m, m):
            raise ValueError("noise covariance shape does not match H")
        if z.shape != (m,):
            raise ValueError("effective measurement length does not match H")
        scale = float(np.max(np.abs(R))) if R.size else 0.0
        if scale > 0.0 and np.max(np.abs(R - R.T)) > 1e-12 * scale:
            raise ValueError("noise covariance must be symmetric")


def linearize(model, x_star: np.ndarray, z: np.ndarray) -> LinearizedMeasurement:
    """Linearize `model` about `x_star` for measurement `z`.

    The effective measurement z_eff = z - h(x_star) + H x_star makes the
    affine model exact at the linearization point.  For a linear model
    this reduces to z_eff = z.
    """
    x_star = np.asarray(x_star, dtype=float)
    H = np.atleast_2d(np.asarray(model.jacobian(x_star), dtype=float))
    hx = np.atleast_1d(np.asarray(model.h(x_star), dtype=float))
    z = np.atleast_1d(np.asarray(z, dtype=float))
    return LinearizedMeasurement(H=H, R=model.noise_cov, z_eff=z - hx + H @ x_star)


def edh_coefficients(prior: GaussianSummary, lin: LinearizedMeasurement,
                     lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Affine velocity-field coefficients at pseudo-time `lam`.

    Returns (A, b) such that the flow velocity is A x + b.  Requires the
    prior covariance and the noise covariance to be invertible; a singular
    system raises SingularityError.
    """
    P = prior.cov
    H, R, z = lin.H, lin.R, lin.z_eff
    PHt = P @ H.T
    S = lam * (H @ PHt) + R
    try:
        SinvH = np.linalg.solve(S, H)
        Rinvz = np.linalg.solve(R, z)
    except np.linalg.LinAlgError as exc:
        raise SingularityError(
            f"flow system matrix is singular at pseudo-time {lam:.6g}") from exc
    A = -0.5 * PHt @ SinvH
    eye = np.eye(A.shape[0])
    b = (eye + 2.0 * lam * A) @ ((eye + lam * A) @ (PHt @ Rinvz) + A @ prior.mean)
    return A, b


@dataclass(frozen=True)
class FlowResult:
    """Migrated particles, migrated auxiliary mean, and the accumulated
    absolute Jacobian determinant of the composed flow map."""

    particles_out: np.ndarray
    aux_mean_out: np.ndarray
    theta: float


def run_flow(particles_in: np.ndarray, aux_mean_in: np.ndarray,
             prior: GaussianSummary, model, z: np.ndarray,
             schedule: FlowSchedule) -> FlowResult:
    """Migrate a particle set from the prior toward the measurement posterior.

    Every Euler step re-linearizes the measurement model at the current
    auxiliary mean, evaluates the affine velocity field at the end of the
    step interval, and applies the resulting affine map to all particles
    and to the auxiliary mean itself.  The mapping factor theta is the
    product of the per-step |det(I + delta_l A_l)| and equals the absolute
    Jacobian determinant of the composed map, so

        w_out = N(x_out; prior) * theta / N(x_in; prior) * w_in

    turns prior-weighted input particles into posterior-targeting
    importance weights.

    Parameters
    ----------
    particles_in : (N, d) array of input particles.
    aux_mean_in : (d,) linearization point for the first step.
    prior : Gaussian prior summary; its covariance is regularized before use.
    model : measurement model providing h, jacobian, and noise_cov.
    z : measurement vector.
    schedule : pseudo-time grid.
    """
    x = np.array(particles_in, dtype=float)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("particles_in must be a nonempty (N, d) array")
    mean = np.array(aux_mean_in, dtype=float)
    P = regularize_covariance(prior.cov)
    prior_mean = np.asarray(prior.mean, dtype=float)
    R = np.atleast_2d(np.asarray(model.noise_cov, dtype=float))
    z_vec = np.atleast_1d(np.asarray(z, dtype=float))
    # The noise covariance never changes across pseudo-time steps, so its
    # solve is hoisted: a diagonal R (the common case) reduces to division.
    r_diag = np.diag(R).copy()
    diagonal_r = bool(np.all(R == np.diag(r_diag)) and np.all(r_diag > 0.0))
    eye = np.eye(x.shape[1])
    lambdas = schedule.lambdas
    theta = 1.0
    for step_no in range(1, lambdas.size):
        lam = lambdas[step_no]
        delta = lam - lambdas[step_no - 1]
        H = np.atleast_2d(np.asarray(model.jacobian(mean), dtype=float))
        hx = np.atleast_1d(np.asarray(model.h(mean), dtype=float))
        z_eff = z_vec - hx + H @ mean
        PHt = P @ H.T
        S = lam * (H @ PHt) + R
        try:
            SinvH = np.linalg.solve(S, H)
            Rinvz = z_eff / r_diag if diagonal_r else np.linalg.solve(R, z_eff)
        except np.linalg.LinAlgError as exc:
            raise SingularityError(
                f"flow system matrix is singular at pseudo-time "
                f"{lam:.6g}") from exc
        A = -0.5 * PHt @ SinvH
        b = (eye + 2.0 * lam * A) @ ((eye + lam * A) @ (PHt @ Rinvz)
                                     + A @ prior_mean)
        M = eye + delta * A
        det = abs(float(np.linalg.det(M)))
        if det < DET_FLOOR:
            raise FlowInvertibilityError(
                f"flow step {step_no} at pseudo-time {lam:.6g} is not "
                f"invertible (|det| = {det:.3e})")
        theta *= det
        shift = delta * b
        x = x @ M.T + shift
        mean = M @ mean + shift
    return FlowResult(particles_out=x, aux_mean_out=mean, theta=float(theta))

"""Motion, measurement, clutter, and birth models.

State vectors stack position before velocity, [p; v], with matching
dimensions, so a 3-D constant-velocity state is
[x, y, z, vx, vy, vz].  Measurement models expose a common duck-typed
surface (h, h_many, jacobian, noise_cov, loglik_many, clutter_logpdf,
sample_clutter plus the detection and clutter-rate parameters) that the
tracker and the particle flow consume.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import SingularityError
from .flow import GaussianSummary

# Distances below this to a receiver make the TDOA Jacobian undefined.
COINCIDENCE_TOL = 1e-9

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class MeasurementFrame:
    """All measurement vectors of one time step.

    `z` has shape (m_k, meas_dim); m_k may be zero.
    """

    k: int
    z: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        if z.ndim != 2:
            raise ValueError("frame measurements must be a 2-D array")
        object.__setattr__(self, "z", z)
        if self.k < 0:
            raise ValueError("time index must be nonnegative")

    @property
    def n_meas(self) -> int:
        return self.z.shape[0]


@dataclass(frozen=True)
class CvMotionModel:
    """Nearly constant-velocity motion with white-acceleration driving noise.

    The per-axis discretized noise covariance is
    drive_var * [[dt^4/4, dt^3/2], [dt^3/2, dt^2]]; draws are generated by
    sampling one acceleration per axis and pushing it through the
    integrator, which reproduces that covariance exactly despite its rank
    deficiency.
    """

    dt: float = 1.0
    drive_var: float = 0.01
    survival_prob: float = 0.999

    def __post_init__(self):
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")
        if self.drive_var < 0.0:
            raise ValueError("drive_var must be nonnegative")
        if not 0.0 <= self.survival_prob <= 1.0:
            raise ValueError("survival_prob must lie in [0, 1]")

    def transition_matrix(self, state_dim: int) -> np.ndarray:
        d = _half_dim(state_dim)
        f = np.eye(state_dim)
        f[:d, d:] = self.dt * np.eye(d)
        return f

    def noise_cov(self, state_dim: int) -> np.ndarray:
        d = _half_dim(state_dim)
        g = np.zeros((state_dim, d))
        g[:d] = 0.5 * self.dt ** 2 * np.eye(d)
        g[d:] = self.dt * np.eye(d)
        return self.drive_var * (g @ g.T)

    def predict(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Propagate states one step; accepts a single state or an (N, 2d) set."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        states = np.atleast_2d(x)
        d = _half_dim(states.shape[1])
        out = states.copy()
        out[:, :d] += self.dt * states[:, d:]
        if self.drive_var > 0.0:
            accel = rng.normal(size=(states.shape[0], d)) * np.sqrt(self.drive_var)
            out[:, :d] += 0.5 * self.dt ** 2 * accel
            out[:, d:] += self.dt * accel
        return out[0] if single else out


def _half_dim(state_dim: int) -> int:
    if state_dim % 2 != 0 or state_dim == 0:
        raise ValueError("state dimension must be even and positive")
    return state_dim // 2


@dataclass(frozen=True)
class TdoaModel:
    """Time-difference-of-arrival sensing over fixed receiver pairs.

    Component l of the measurement is
    (||p - r_s(l)|| - ||p - r_t(l)||) / c for the receiver pair
    (s(l), t(l)), with additive white Gaussian noise of standard deviation
    sigma_v on every component.  Clutter measurements are uniform per
    component over the physically reachable interval
    [-||r_s - r_t||/c, +||r_s - r_t||/c].
    """

    receivers: np.ndarray
    pairs: np.ndarray
    c: float = 1500.0
    sigma_v: float = 3e-6
    p_d: float = 0.9
    clutter_mean: float = 1.0

    def __post_init__(self):
        recv = np.asarray(self.receivers, dtype=float)
        pairs = np.asarray(self.pairs, dtype=int)
        object.__setattr__(self, "receivers", recv)
        object.__setattr__(self, "pairs", pairs)
        if recv.ndim != 2 or recv.shape[1] != 3:
            raise ValueError("receivers must be an (n, 3) array")
        if pairs.ndim != 2 or pairs.shape[1] != 2 or pairs.shape[0] == 0:
            raise ValueError("pairs must be a nonempty (m, 2) index array")
        if pairs.min() < 0 or pairs.max() >= recv.shape[0]:
            raise ValueError("pair indices out of range")
        if np.any(pairs[:, 0] == pairs[:, 1]):
            raise ValueError("a pair cannot use one receiver twice")
        if self.c <= 0.0:
            raise ValueError("propagation speed must be positive")
        if self.sigma_v <= 0.0:
            raise ValueError("sigma_v must be positive")
        if not 0.0 <= self.p_d <= 1.0:
            raise ValueError("p_d must lie in [0, 1]")
        if self.clutter_mean < 0.0:
            raise ValueError("clutter_mean must be nonnegative")

    @property
    def meas_dim(self) -> int:
        return self.pairs.shape[0]

    @cached_property
    def noise_cov(self) -> np.ndarray:
        return self.sigma_v ** 2 * np.eye(self.meas_dim)

    @cached_property
    def tdoa_bounds(self) -> np.ndarray:
        """Per-component bound ||r_s - r_t|| / c on the noise-free TDOA."""
        sep = self.receivers[self.pairs[:, 0]] - self.receivers[self.pairs[:, 1]]
        dist = np.linalg.norm(sep, axis=1)
        if np.any(dist <= 0.0):
            raise ValueError("paired receivers must not coincide")
        return dist / self.c

    @cached_property
    def clutter_log_density(self) -> float:
        """Log density of the uniform clutter distribution on its support."""
        return float(-np.sum(np.log(2.0 * self.tdoa_bounds)))

    @cached_property
    def _receiver_sq(self) -> np.ndarray:
        return np.einsum("ij,ij->i", self.receivers, self.receivers)

    @cached_property
    def _pair_matrix(self) -> np.ndarray:
        """Maps per-receiver distances to TDOA components in one product."""
        d = np.zeros((self.receivers.shape[0], self.meas_dim))
        d[self.pairs[:, 0], np.arange(self.meas_dim)] = 1.0 / self.c
        d[self.pairs[:, 1], np.arange(self.meas_dim)] = -1.0 / self.c
        return d

    def _distances(self, positions: np.ndarray) -> np.ndarray:
        if positions.shape[0] <= 4096:
            diff = positions[:, None, :] - self.receivers[None, :, :]
            return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        # Large batches: the expanded norm runs on matrix products instead
        # of an (N, n_recv, 3) temporary.  Its absolute error (micrometers
        # at these coordinates) only matters within a whisker of a
        # receiver, a region the small-batch path of h() screens.
        sq = (self._receiver_sq[None, :]
              - 2.0 * (positions @ self.receivers.T)
              + np.einsum("ij,ij->i", positions, positions)[:, None])
        return np.sqrt(np.maximum(sq, 0.0))

    def h(self, x: np.ndarray) -> np.ndarray:
        """Noise-free TDOA vector for one state."""
        x = np.asarray(x, dtype=float)
        dist = self._distances(x[None, :3])
        if np.any(dist < COINCIDENCE_TOL):
            raise SingularityError("state coincides with a receiver")
        return (dist[0, self.pairs[:, 0]] - dist[0, self.pairs[:, 1]]) / self.c

    def h_many(self, x: np.ndarray) -> np.ndarray:
        """Noise-free TDOA vectors for an (N, d) state array."""
        x = np.asarray(x, dtype=float)
        return self._distances(x[:, :3]) @ self._pair_matrix

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        """Measurement Jacobian at one state, (meas_dim, state_dim)."""
        x = np.asarray(x, dtype=float)
        pos = x[:3]
        diff = pos - self.receivers
        dist = np.linalg.norm(diff, axis=1)
        if np.any(dist < COINCIDENCE_TOL):
            raise SingularityError("state coincides with a receiver")
        units = diff / dist[:, None]
        jac = np.zeros((self.meas_dim, x.size))
        jac[:, :3] = (units[self.pairs[:, 0]] - units[self.pairs[:, 1]]) / self.c
        return jac

    def loglik_many(self, z: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Log likelihood of measurement `z` under each row of `x`."""
        z = np.asarray(z, dtype=float)
        resid = z - self.h_many(x)
        m = self.meas_dim
        const = -0.5 * m * LOG_2PI - m * np.log(self.sigma_v)
        return const - 0.5 * np.einsum("ij,ij->i", resid, resid) / self.sigma_v ** 2

    def clutter_logpdf(self, z: np.ndarray) -> float:
        """Log clutter density; -inf outside the per-component bounds."""
        z = np.asarray(z, dtype=float)
        if np.any(np.abs(z) > self.tdoa_bounds):
            return -np.inf
        return self.clutter_log_density

    def sample_clutter(self, rng: np.random.Generator, n: int = 1) -> np.ndarray:
        b = self.tdoa_bounds
        return rng.uniform(-b, b, size=(n, self.meas_dim))


def build_two_array_geometry(centers, arm: float = 10.0):
    """Receiver layout used by the default scenario: one center receiver
    plus four outriggers at +-arm along x and y for every array center.

    Pairs per array: the center against each outrigger, and the two
    opposite outrigger pairs, giving six TDOA components per array.
    """
    offsets = np.array([
        [0.0, 0.0, 0.0],
        [arm, 0.0, 0.0],
        [-arm, 0.0, 0.0],
        [0.0, arm, 0.0],
        [0.0, -arm, 0.0],
    ])
    local_pairs = np.array([[0, 1], [0, 2], [0, 3], [0, 4], [1, 2], [3, 4]])
    receivers = []
    pairs = []
    for a, center in enumerate(np.asarray(centers, dtype=float)):
        receivers.append(center + offsets)
        pairs.append(local_pairs + 5 * a)
    return np.vstack(receivers), np.vstack(pairs)


@dataclass(frozen=True)
class LinearMeasurementModel:
    """Linear-Gaussian measurement model, used by tests and toy problems."""

    H: np.ndarray
    R: np.ndarray
    p_d: float = 1.0
    clutter_mean: float = 0.0
    clutter_box: np.ndarray | None = None

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "R", R)
        if R.shape != (H.shape[0], H.shape[0]):
            raise ValueError("noise covariance shape does not match H")
        if self.clutter_box is not None:
            box = np.asarray(self.clutter_box, dtype=float)
            if box.shape != (H.shape[0], 2) or np.any(box[:, 1] <= box[:, 0]):
                raise ValueError("clutter box must be (m, 2) with positive widths")
            object.__setattr__(self, "clutter_box", box)
        if not 0.0 <= self.p_d <= 1.0:
            raise ValueError("p_d must lie in [0, 1]")
        if self.clutter_mean < 0.0:
            raise ValueError("clutter_mean must be nonnegative")

    @property
    def meas_dim(self) -> int:
        return self.H.shape[0]

    @property
    def noise_cov(self) -> np.ndarray:
        return self.R

    @cached_property
    def _chol_R(self) -> np.ndarray:
        return np.linalg.cholesky(self.R)

    def h(self, x: np.ndarray) -> np.ndarray:
        return self.H @ np.asarray(x, dtype=float)

    def h_many(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.H.T

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        return self.H

    def loglik_many(self, z: np.ndarray, x: np.ndarray) -> np.ndarray:
        from scipy.linalg import solve_triangular

        resid = (np.asarray(z, dtype=float) - self.h_many(x)).T
        sol = solve_triangular(self._chol_R, resid, lower=True)
        maha = np.einsum("ij,ij->j", sol, sol)
        log_det = 2.0 * np.sum(np.log(np.diag(self._chol_R)))
        return -0.5 * (maha + log_det + self.meas_dim * LOG_2PI)

    def clutter_logpdf(self, z: np.ndarray) -> float:
        if self.clutter_box is None:
            raise ValueError("model has no clutter box")
        z = np.asarray(z, dtype=float)
        box = self.clutter_box
        if np.any(z < box[:, 0]) or np.any(z > box[:, 1]):
            return -np.inf
        return self.clutter_log_density

    @cached_property
    def clutter_log_density(self) -> float:
        if self.clutter_box is None:
            raise ValueError("model has no clutter box")
        return float(-np.sum(np.log(self.clutter_box[:, 1] - self.clutter_box[:, 0])))

    def sample_clutter(self, rng: np.random.Generator, n: int = 1) -> np.ndarray:
        if self.clutter_box is None:
            raise ValueError("model has no clutter box")
        box = self.clutter_box
        return rng.uniform(box[:, 0], box[:, 1], size=(n, self.meas_dim))


@dataclass(frozen=True)
class BirthModel:
    """Uniform birth density over a position box times a velocity box,
    with a Poisson mean number of births per step."""

    mean_births: float
    position_box: np.ndarray
    velocity_box: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.position_box, dtype=float)
        vel = np.asarray(self.velocity_box, dtype=float)
        object.__setattr__(self, "position_box", pos)
        object.__setattr__(self, "velocity_box", vel)
        for box in (pos, vel):
            if box.ndim != 2 or box.shape[1] != 2:
                raise ValueError("boxes must be (d, 2) arrays")
            if box.shape[0] and np.any(box[:, 1] <= box[:, 0]):
                raise ValueError("box widths must be positive")
        if self.mean_births < 0.0:
            raise ValueError("mean_births must be nonnegative")

    @cached_property
    def state_box(self) -> np.ndarray:
        return np.vstack([self.position_box, self.velocity_box])

    @property
    def dim(self) -> int:
        return self.state_box.shape[0]

    @cached_property
    def log_density(self) -> float:
        """Log density inside the support (uniform, integrates to 1)."""
        widths = self.state_box[:, 1] - self.state_box[:, 0]
        return float(-np.sum(np.log(widths)))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        box = self.state_box
        return rng.uniform(box[:, 0], box[:, 1], size=(n, self.dim))

    def contains(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        box = self.state_box
        return np.all((x >= box[:, 0]) & (x <= box[:, 1]), axis=1)

    def logpdf(self, x: np.ndarray) -> np.ndarray:
        inside = self.contains(x)
        out = np.full(inside.shape, -np.inf)
        out[inside] = self.log_density
        return out

    def moment_gaussian(self) -> GaussianSummary:
        """Gaussian with the mean and covariance of the uniform density."""
        box = self.state_box
        mean = 0.5 * (box[:, 0] + box[:, 1])
        var = (box[:, 1] - box[:, 0]) ** 2 / 12.0
        return GaussianSummary(mean, np.diag(var))

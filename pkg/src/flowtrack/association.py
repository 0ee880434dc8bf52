"""Iterative probabilistic data association by message passing.

The association problem couples object-side variables (which measurement,
if any, each potential object generated) with measurement-side variables
(which object, if any, generated each measurement) through pairwise
consistency factors.  Running sum-product messages on that loopy bipartite
graph gives approximate marginal association probabilities at a cost
linear in objects times measurements per sweep, instead of the exponential
cost of exact marginalization.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateRowError, NumericalError


@dataclass
class AssociationTables:
    """Inputs and outputs of one data-association round.

    beta[j, 0] carries every non-detection hypothesis mass for object j and
    beta[j, m] (m >= 1) the mass for pairing object j with measurement m.
    xi0[m] is the mass for measurement m being clutter or a newly appearing
    object; the paired hypothesis masses on the measurement side are
    identically one by construction and are not stored.

    After the sweep, kappa[j] holds [1, nu_1->j, ..., nu_M->j] and
    iota[m] holds [1, phi_1->m, ..., phi_P->m].
    """

    beta: np.ndarray
    xi0: np.ndarray
    kappa: np.ndarray | None = None
    iota: np.ndarray | None = None
    converged: bool = False
    iterations: int = 0

    def __post_init__(self):
        beta = np.atleast_2d(np.asarray(self.beta, dtype=float))
        xi0 = np.asarray(self.xi0, dtype=float).reshape(-1)
        self.beta = beta
        self.xi0 = xi0
        n_m = xi0.size
        if beta.size and beta.shape[1] != n_m + 1:
            raise ValueError("beta must have one column per measurement plus one")
        if not np.all(np.isfinite(beta)) or np.any(beta < 0.0):
            raise ValueError("beta entries must be finite and nonnegative")
        if not np.all(np.isfinite(xi0)) or np.any(xi0 < 0.0):
            raise ValueError("xi0 entries must be finite and nonnegative")
        if beta.size and np.any(beta[:, 0] <= 0.0):
            raise ValueError("beta[:, 0] must be positive")

    @property
    def n_objects(self) -> int:
        return self.beta.shape[0] if self.beta.size else 0

    @property
    def n_meas(self) -> int:
        return self.xi0.size


def run_spa_da(tables: AssociationTables, max_iters: int = 200,
               tol: float = 1e-6) -> AssociationTables:
    """Run the message sweep until the sup-norm change drops below `tol`.

    Messages nu (measurement to object) start at one.  Each iteration
    computes the object-to-measurement messages

        phi[j, m] = beta[j, m] / (beta[j, 0] + sum_{m' != m} beta[j, m'] nu[j, m'])

    and then the return messages

        nu[j, m] = 1 / (xi0[m] + sum_{j' != j} phi[j', m]).

    On a cycle-free problem (a single object or a single measurement) one
    iteration is exact and the sweep stops immediately.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be at least 1")
    if tol <= 0.0:
        raise ValueError("tol must be positive")
    beta, xi0 = tables.beta, tables.xi0
    n_p, n_m = tables.n_objects, tables.n_meas
    out = AssociationTables(beta=beta.copy(), xi0=xi0.copy())
    if n_p == 0 or n_m == 0:
        out.kappa = np.ones((n_p, n_m + 1))
        out.iota = np.hstack([np.ones((n_m, 1)), np.zeros((n_m, n_p))])
        out.converged = True
        return out

    b0 = beta[:, :1]
    b = beta[:, 1:]
    nu = np.ones((n_p, n_m))
    phi = np.zeros((n_p, n_m))
    # Leave-one-out sums via hollow ones matrices: summing the kept entries
    # directly stays exact for nonnegative messages, whereas subtracting an
    # entry from the total cancels catastrophically once that entry dominates
    # the sum (hypothesis masses routinely span hundreds of orders of
    # magnitude here).
    hollow_m = 1.0 - np.eye(n_m)
    hollow_p = 1.0 - np.eye(n_p)
    converged = False
    iterations = 0
    for it in range(1, max_iters + 1):
        weighted = b * nu
        denom_obj = b0 + weighted @ hollow_m
        phi_new = b / denom_obj
        denom_meas = xi0[None, :] + hollow_p @ phi_new
        nu_new = 1.0 / denom_meas
        if not (np.all(np.isfinite(phi_new)) and np.all(np.isfinite(nu_new))):
            raise NumericalError(
                f"association messages left the finite range at iteration {it}")
        delta = max(np.max(np.abs(phi_new - phi)), np.max(np.abs(nu_new - nu)))
        phi, nu = phi_new, nu_new
        iterations = it
        if delta < tol:
            converged = True
            break

    out.kappa = np.hstack([np.ones((n_p, 1)), nu])
    out.iota = np.hstack([np.ones((n_m, 1)), phi.T])
    out.converged = converged
    out.iterations = iterations
    return out


def association_marginals(tables: AssociationTables) -> np.ndarray:
    """Per-object association probabilities from a finished sweep.

    Row j is proportional to beta[j] * kappa[j] and normalized to one;
    column 0 is the probability that object j was not detected.
    """
    if tables.kappa is None:
        raise ValueError("run the message sweep before asking for marginals")
    prod = tables.beta * tables.kappa
    if prod.size == 0:
        return prod.reshape(tables.n_objects, tables.n_meas + 1)
    sums = prod.sum(axis=1)
    bad = ~np.isfinite(sums) | (sums <= 0.0)
    if np.any(bad):
        raise DegenerateRowError(
            f"association row {int(np.flatnonzero(bad)[0])} has no mass")
    return prod / sums[:, None]

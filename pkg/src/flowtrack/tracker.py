"""Multiobject tracking recursion with existence reasoning.

Every potential object carries a label, a particle set, and an existence
probability.  One time step runs:

  1. prediction of every legacy potential object through the motion model,
  2. measurement evaluation: per measurement, migrate the predicted
     particles through a Gaussian particle flow (or reuse them unchanged in
     bootstrap mode) and reduce the reweighted set to a single association
     mass, plus the same construction from the birth density for potential
     objects newly introduced by each measurement,
  3. iterative probabilistic data association over those masses,
  4. measurement update: combine the association output with the evaluated
     particle blocks into posterior existence and a resampled particle set,
  5. state estimation for likely objects, pruning of unlikely ones.

All randomness is drawn from named streams keyed by (seed, step, stage,
label), so results are reproducible and independent of evaluation order.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chi2

from .association import AssociationTables, run_spa_da
from .errors import DegenerateWeightsError, FlowInvertibilityError, SingularityError
from .flow import (FlowSchedule, GaussianSummary, gaussian_log_density,
                   make_geometric_schedule, regularize_covariance, run_flow)
from .models import MeasurementFrame

log = logging.getLogger(__name__)

PROPOSAL_FLOW = "flow"
PROPOSAL_BOOTSTRAP = "bootstrap"

_STAGE_PREDICT = 1
_STAGE_NEW = 2
_STAGE_UPDATE_LEGACY = 3
_STAGE_UPDATE_NEW = 4


@dataclass(frozen=True)
class TrackerConfig:
    """Knobs of the tracking recursion.

    proposal_mode selects how measurement-conditioned particle sets are
    produced: "flow" migrates particles through the Gaussian flow and
    reweights them with the exact proposal density, "bootstrap" keeps the
    predicted (or freshly born) particles and relies on likelihood
    weighting alone.

    The pseudo-time grid must start early enough to resolve the onset of
    the flow's contraction, roughly where lambda times the measurement
    information reaches the noise level.  Birth clouds spanning hundreds
    of meters against millimeter-grade time differences put that onset
    near 1e-10, hence the default first step of 1e-11 with 120
    geometrically growing steps; coarser grids under-contract and leave
    migrated particles far from the region the measurement supports.

    flow_min_ess is the smallest effective sample size
    (measured on the likelihood times proposal-correction weights) a
    migrated block may keep, and flow_mass_band the largest factor by
    which a migrated block's weight sum may exceed the predicted mass; a
    block violating either falls back to the unmigrated particles.  Only
    the excess side is guarded: an accurate transport can leave the
    realized sum far below the predicted mass (the deficit sits in
    prior-tail samples no finite cloud contains), but pushing it far
    above requires migrated particles in higher summary density than
    where they started, the signature of a summary that misfits the
    cloud.
    """

    n_particles: int = 100
    new_po_factor: int = 20
    detect_threshold: float = 0.5
    prune_threshold: float = 1e-4
    flow_steps: int = 120
    flow_first_step: float = 1e-11
    flow_ratio: float = 1.2
    flow_min_ess: float = 4.0
    flow_mass_band: float = 100.0
    gate_prob: float | None = None
    da_tol: float = 1e-6
    da_max_iters: int = 200
    proposal_mode: str = PROPOSAL_FLOW
    max_potential_objects: int = 200

    def __post_init__(self):
        if self.n_particles < 1:
            raise ValueError("n_particles must be at least 1")
        if self.new_po_factor < 1:
            raise ValueError("new_po_factor must be at least 1")
        if not 0.0 < self.prune_threshold < self.detect_threshold < 1.0:
            raise ValueError("need 0 < prune_threshold < detect_threshold < 1")
        if self.flow_min_ess < 1.0:
            raise ValueError("flow_min_ess must be at least 1")
        if not self.flow_mass_band > 1.0:
            raise ValueError("flow_mass_band must exceed 1")
        if self.gate_prob is not None and not 0.0 < self.gate_prob < 1.0:
            raise ValueError("gate_prob must lie in (0, 1) or be None")
        if self.proposal_mode not in (PROPOSAL_FLOW, PROPOSAL_BOOTSTRAP):
            raise ValueError(f"unknown proposal_mode {self.proposal_mode!r}")
        if self.max_potential_objects < 1:
            raise ValueError("max_potential_objects must be at least 1")

    def schedule(self) -> FlowSchedule:
        return make_geometric_schedule(self.flow_steps, self.flow_first_step,
                                       self.flow_ratio)


@dataclass
class LabeledBelief:
    """Posterior of one potential object.

    `weights` sum to `existence`, so the particle set represents the joint
    density over state and existence; `mmse` caches the state estimate
    taken before resampling flattened the weights.
    """

    label: tuple[int, int]
    particles: np.ndarray
    weights: np.ndarray
    existence: float
    mmse: np.ndarray | None = None

    def __post_init__(self):
        self.particles = np.asarray(self.particles, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.particles.ndim != 2 or self.particles.shape[0] == 0:
            raise ValueError("particles must be a nonempty (N, d) array")
        if self.weights.shape != (self.particles.shape[0],):
            raise ValueError("weights must match the particle count")
        if not np.all(np.isfinite(self.weights)) or np.any(self.weights < 0.0):
            raise ValueError("weights must be finite and nonnegative")
        if not 0.0 <= self.existence <= 1.0:
            raise ValueError("existence must lie in [0, 1]")
        if abs(self.weights.sum() - self.existence) > 1e-9 * max(1.0, self.existence):
            raise ValueError("weights must sum to the existence probability")


@dataclass(frozen=True)
class PredictedMessage:
    """Prediction of one legacy potential object.

    `weights` sum to alpha_e, the mass of the hypothesis that the object
    existed and survived; `gaussian` summarizes the weighted particle set
    and serves as the flow prior.
    """

    particles: np.ndarray
    weights: np.ndarray
    alpha_e: float
    gaussian: GaussianSummary

    @property
    def alpha_n(self) -> float:
        return 1.0 - self.alpha_e


@dataclass
class ExtendedParticleSet:
    """Measurement-conditioned particle blocks of one legacy potential object.

    Block 0 holds the predicted particles and weights unchanged; block m
    (1-based) holds the set migrated toward measurement m together with its
    proposal-corrected weights.  Every block represents the same predicted
    message under a different proposal, so each block's weight sum is an
    unbiased estimate of the predicted mass alpha_e.  The realized sums
    are kept in `raw_masses` for diagnostics; under a strong contraction
    they concentrate far below alpha_e (near the mapping-factor scale,
    with the missing mass hiding in prior-tail samples no finite set
    contains), which is expected and harmless because every consumer
    pairs the weights with densities evaluated at the migrated locations.
    When all blocks coincide
    (bootstrap mode, or no measurements) a single shared block is stored.
    `q_mats[a][i, m]` is the detection pseudo-likelihood of measurement m
    at particle i of block a, and `thetas[a]` the mapping factor of block
    a's flow.
    """

    particles: np.ndarray
    weights: np.ndarray
    thetas: np.ndarray
    q_mats: np.ndarray
    n_blocks: int
    raw_masses: np.ndarray | None = None

    def __post_init__(self):
        stored = self.particles.shape[0]
        if stored not in (1, self.n_blocks):
            raise ValueError("block storage must cover one or all blocks")
        if self.weights.shape[0] != stored or self.q_mats.shape[0] != stored:
            raise ValueError("inconsistent block storage")
        if self.thetas.shape != (self.n_blocks,) or self.thetas[0] != 1.0:
            raise ValueError("thetas must have one unit entry per block 0")
        if self.raw_masses is not None and self.raw_masses.shape != (self.n_blocks,):
            raise ValueError("raw_masses must hold one sum per block")

    @property
    def shared(self) -> bool:
        return self.particles.shape[0] == 1

    def block_particles(self, a: int) -> np.ndarray:
        return self.particles[0 if self.shared else a]

    def block_weights(self, a: int) -> np.ndarray:
        return self.weights[0 if self.shared else a]

    def block_q(self, a: int) -> np.ndarray:
        return self.q_mats[0 if self.shared else a]


@dataclass(frozen=True)
class NewObjectEvaluation:
    """Particles and masses for the potential object behind one measurement.

    `weight_terms[i]` is the posterior weight summand of particle i under
    the hypothesis that the measurement came from a newly appeared object;
    xi0 = 1 + sum(weight_terms) bundles that mass with the unit clutter
    hypothesis for the association sweep.
    """

    particles: np.ndarray
    weight_terms: np.ndarray
    xi0: float


@dataclass
class StepDiagnostics:
    alpha_e: np.ndarray
    beta: np.ndarray
    xi0: np.ndarray
    kappa: np.ndarray | None = None
    iota: np.ndarray | None = None
    da_iterations: int = 0
    da_converged: bool = True
    n_evicted: int = 0


@dataclass
class StepResult:
    beliefs: list[LabeledBelief]
    estimates: list[tuple[tuple[int, int], np.ndarray, float]]
    diagnostics: StepDiagnostics


def _stream(seed, k: int, stage: int, label=()) -> np.random.Generator:
    if isinstance(seed, (int, np.integer)):
        ent = (int(seed),)
    else:
        ent = tuple(int(s) for s in seed)
    ent = ent + (int(k), int(stage)) + tuple(int(v) for v in label)
    return np.random.default_rng(np.random.SeedSequence(ent))


def predict(belief: LabeledBelief, motion, rng: np.random.Generator) -> PredictedMessage:
    """Propagate a belief one step and summarize it for the flow prior.

    The survival factor scales every weight, so the weights keep summing
    to the predicted existence mass alpha_e.  The Gaussian summary uses
    the weighted mean and covariance of the propagated set (uniform
    weights if the belief carries no mass) with a regularized covariance.
    """
    particles = motion.predict(belief.particles, rng)
    weights = motion.survival_prob * belief.weights
    alpha_e = motion.survival_prob * belief.existence
    total = weights.sum()
    if total > 0.0:
        wn = weights / total
    else:
        wn = np.full(len(weights), 1.0 / len(weights))
    mean = wn @ particles
    diff = particles - mean
    cov = regularize_covariance((wn[:, None] * diff).T @ diff)
    return PredictedMessage(particles=particles, weights=weights,
                            alpha_e=float(alpha_e),
                            gaussian=GaussianSummary(mean, cov))


def _clutter_logpdf_guarded(sensor, z: np.ndarray) -> float:
    val = sensor.clutter_logpdf(z)
    if val == -np.inf:
        # Noise can push an object-born measurement marginally outside the
        # clutter support; treat it as boundary-density clutter instead of
        # dividing by zero.
        log.warning("measurement outside the clutter support, "
                    "using the interior clutter density")
        return sensor.clutter_log_density
    return float(val)


def _q_factors(sensor, frame: MeasurementFrame, particles: np.ndarray) -> np.ndarray:
    """Detection pseudo-likelihood p_d f(z_m | x) / (mu_c f_c(z_m)) for
    every particle (rows) and measurement (columns)."""
    m_k = frame.n_meas
    out = np.empty((particles.shape[0], m_k))
    log_pd_over_mu = np.log(sensor.p_d) - np.log(sensor.clutter_mean)
    for m in range(m_k):
        z = frame.z[m]
        log_q = (log_pd_over_mu - _clutter_logpdf_guarded(sensor, z)
                 + sensor.loglik_many(z, particles))
        out[:, m] = np.exp(log_q)
    return out


def _gate_mask(pred: PredictedMessage, sensor, frame: MeasurementFrame,
               gate_prob: float) -> np.ndarray:
    """True for measurements whose innovation passes the chi-square gate."""
    mean = pred.gaussian.mean
    H = np.atleast_2d(np.asarray(sensor.jacobian(mean), dtype=float))
    S = H @ pred.gaussian.cov @ H.T + sensor.noise_cov
    hx = np.atleast_1d(np.asarray(sensor.h(mean), dtype=float))
    resid = frame.z - hx
    sol = np.linalg.solve(S, resid.T)
    maha = np.einsum("ij,ji->i", resid, sol)
    return maha <= chi2.ppf(gate_prob, frame.z.shape[1])


def measurement_evaluation(pred: PredictedMessage, sensor,
                           frame: MeasurementFrame,
                           cfg: TrackerConfig) -> tuple[ExtendedParticleSet, np.ndarray]:
    """Build the measurement-conditioned blocks and association masses
    for one legacy potential object.

    Returns (extended set, beta) where beta[0] is the combined mass of
    the non-detection hypotheses, exactly
    (1 - p_d) alpha_e + (1 - alpha_e) by construction, and beta[m] the
    mass for pairing the object with measurement m.  In flow mode each
    measurement block is migrated by the particle flow and reweighted by
    the flow's proposal correction, so the block keeps representing the
    predicted density alpha_e N(x; mean, cov) from a measurement-adapted
    proposal.  The correction is reliable only where the Gaussian summary
    fits the particle cloud; a migrated block is therefore kept only when
    its weights are finite, its total mass does not exceed the predicted
    mass alpha_e by more than a factor flow_mass_band (a far-tail
    particle under a misfit summary can inflate the block mass, and with
    it the posterior existence, by orders of magnitude; a mass far below
    alpha_e carries no such risk and is the normal outcome of a strong
    contraction), and the combined likelihood-times-correction weights
    retain at least flow_min_ess effective particles (below that the
    association mass would be a lottery over a handful of tail
    particles).  A block violating any of these degrades to the
    unmigrated particles, as it also does when the flow itself fails
    (non-invertible step or singular system).  Gated-out measurements
    keep unmigrated blocks and get zero mass.  raw_masses records the
    realized block sums for every migration attempt, including discarded
    ones.
    """
    m_k = frame.n_meas
    n = pred.particles.shape[0]
    beta = np.empty(m_k + 1)
    beta[0] = (1.0 - sensor.p_d) * pred.alpha_e + pred.alpha_n
    keep = np.ones(m_k, dtype=bool)
    if cfg.gate_prob is not None and m_k:
        keep = _gate_mask(pred, sensor, frame, cfg.gate_prob)
    use_flow = cfg.proposal_mode == PROPOSAL_FLOW and m_k and bool(keep.any())
    raw_masses = np.full(m_k + 1, pred.alpha_e)
    if not use_flow:
        particles = pred.particles[None]
        weights = pred.weights[None]
        thetas = np.ones(m_k + 1)
        q_mats = _q_factors(sensor, frame, pred.particles)[None] if m_k \
            else np.zeros((1, n, 0))
    else:
        dim = pred.particles.shape[1]
        particles = np.empty((m_k + 1, n, dim))
        weights = np.empty((m_k + 1, n))
        thetas = np.ones(m_k + 1)
        particles[0] = pred.particles
        weights[0] = pred.weights
        schedule = cfg.schedule()
        log_dens0 = gaussian_log_density(pred.gaussian, pred.particles)
        for m in range(1, m_k + 1):
            if not keep[m - 1]:
                particles[m] = pred.particles
                weights[m] = pred.weights
                continue
            try:
                res = run_flow(pred.particles, pred.gaussian.mean,
                               pred.gaussian, sensor, frame.z[m - 1], schedule)
            except (FlowInvertibilityError, SingularityError) as exc:
                log.warning("flow failed for measurement %d (%s); "
                            "falling back to unmigrated particles", m, exc)
                particles[m] = pred.particles
                weights[m] = pred.weights
                continue
            log_dens1 = gaussian_log_density(pred.gaussian, res.particles_out)
            with np.errstate(divide="ignore"):
                log_corr = (np.log(pred.weights) + log_dens1 - log_dens0
                            + np.log(res.theta))
            shift = float(np.max(log_corr))
            if not np.isfinite(shift):
                particles[m] = pred.particles
                weights[m] = pred.weights
                continue
            corr = np.exp(log_corr - shift)
            with np.errstate(over="ignore"):
                mass = float(np.exp(shift) * corr.sum())
            raw_masses[m] = mass
            if not (np.isfinite(mass) and mass > 0.0):
                particles[m] = pred.particles
                weights[m] = pred.weights
                continue
            if mass > pred.alpha_e * cfg.flow_mass_band:
                log.debug("flow block for measurement %d carries mass %.3g "
                          "against predicted %.3g; using unmigrated "
                          "particles", m, mass, pred.alpha_e)
                particles[m] = pred.particles
                weights[m] = pred.weights
                continue
            log_prod = log_corr + sensor.loglik_many(frame.z[m - 1],
                                                     res.particles_out)
            peak = float(np.max(log_prod))
            ess = 0.0
            if np.isfinite(peak):
                prod = np.exp(log_prod - peak)
                ess = float(prod.sum() ** 2 / (prod @ prod))
            if ess < cfg.flow_min_ess:
                log.debug("flow proposal for measurement %d kept %.1f "
                          "effective particles; using unmigrated particles",
                          m, ess)
                particles[m] = pred.particles
                weights[m] = pred.weights
                continue
            particles[m] = res.particles_out
            weights[m] = np.exp(log_corr)
            thetas[m] = res.theta
        q_mats = np.empty((m_k + 1, n, m_k))
        for a in range(m_k + 1):
            q_mats[a] = _q_factors(sensor, frame, particles[a])
    if m_k:
        q_mats[..., ~keep] = 0.0
        for m in range(1, m_k + 1):
            q = q_mats[0 if q_mats.shape[0] == 1 else m]
            w = weights[0 if weights.shape[0] == 1 else m]
            beta[m] = float(q[:, m - 1] @ w)
    ext = ExtendedParticleSet(particles=particles, weights=weights,
                              thetas=thetas, q_mats=q_mats, n_blocks=m_k + 1,
                              raw_masses=raw_masses)
    return ext, beta


def new_po_evaluation(frame: MeasurementFrame, sensor, birth,
                      cfg: TrackerConfig,
                      rng: np.random.Generator) -> list[NewObjectEvaluation]:
    """Evaluate the potential object introduced by each measurement.

    Particles are drawn from the birth density (new_po_factor times the
    tracker's particle count, since a single measurement must localize an
    object from scratch) and, in flow mode, migrated toward the
    measurement with the birth density's moment-matched Gaussian as the
    flow prior.  The returned weight terms are the products of the
    new-object pseudo-likelihood with the proposal-corrected particle
    weights; their total plus one (the clutter hypothesis) is xi0.
    """
    m_k = frame.n_meas
    if m_k == 0:
        return []
    n_new = cfg.n_particles * cfg.new_po_factor
    prior = birth.moment_gaussian()
    schedule = cfg.schedule() if cfg.proposal_mode == PROPOSAL_FLOW else None
    log_mu_ratio = (np.log(sensor.p_d) + np.log(birth.mean_births)
                    - np.log(sensor.clutter_mean)) if birth.mean_births > 0 else None
    streams = rng.spawn(m_k)
    out = []
    for m in range(m_k):
        z = frame.z[m]
        x0 = birth.sample(n_new, streams[m])
        w0 = np.full(n_new, 1.0 / n_new)
        if schedule is None:
            x1, w1 = x0, w0
        else:
            try:
                res = run_flow(x0, prior.mean, prior, sensor, z, schedule)
            except (FlowInvertibilityError, SingularityError) as exc:
                log.warning("birth flow failed for measurement %d (%s); "
                            "falling back to unmigrated particles", m + 1, exc)
                x1, w1 = x0, w0
            else:
                x1 = res.particles_out
                # Uniform birth density: the proposal correction reduces to
                # the mapping factor, zeroed outside the birth support.
                w1 = np.where(birth.contains(x1), res.theta / n_new, 0.0)
        if log_mu_ratio is None:
            terms = np.zeros(n_new)
        else:
            log_v = (log_mu_ratio - _clutter_logpdf_guarded(sensor, z)
                     + sensor.loglik_many(z, x1))
            terms = np.exp(log_v) * w1
        out.append(NewObjectEvaluation(particles=x1, weight_terms=terms,
                                       xi0=float(1.0 + terms.sum())))
    return out


def measurement_update_legacy(ext: ExtendedParticleSet, pred: PredictedMessage,
                              kappa_row: np.ndarray, sensor,
                              cfg: TrackerConfig, rng: np.random.Generator,
                              label: tuple[int, int]) -> LabeledBelief:
    """Fuse the association output into one legacy potential object.

    Every block particle receives the association-weighted update factor
    (1 - p_d) kappa[0] + sum_m q[m] kappa[m].  The predicted block and the
    block with the largest updated mass (smallest index on ties) are
    merged half-half as the proposal for the posterior; the non-existence
    mass alpha_n kappa[0] closes the normalization, giving the posterior
    existence as the normalized particle mass.  The merged set is then
    resampled back to the tracker's particle count.
    """
    m_k = ext.n_blocks - 1
    k0 = kappa_row[0]
    km = kappa_row[1:]
    sums = np.empty(m_k + 1)
    factors = []
    for a in range(m_k + 1):
        gamma = (1.0 - sensor.p_d) * k0 + (ext.block_q(a) @ km if m_k else 0.0)
        wa = gamma * ext.block_weights(a)
        factors.append(wa)
        sums[a] = wa.sum()
    a_star = int(np.argmax(sums))
    union_x = np.vstack([ext.block_particles(0), ext.block_particles(a_star)])
    union_w = 0.5 * np.concatenate([factors[0], factors[a_star]])
    existent_mass = float(union_w.sum())
    total = existent_mass + pred.alpha_n * k0
    if not (existent_mass > 0.0 and total > 0.0):
        n = cfg.n_particles
        return LabeledBelief(label=label, particles=pred.particles[:n].copy(),
                             weights=np.zeros(n), existence=0.0)
    existence = existent_mass / total
    probs = union_w / existent_mass
    mmse = probs @ union_x
    idx = _systematic_indices(probs, cfg.n_particles, rng)
    return LabeledBelief(label=label, particles=union_x[idx],
                         weights=np.full(cfg.n_particles,
                                         existence / cfg.n_particles),
                         existence=existence, mmse=mmse)


def measurement_update_new(ev: NewObjectEvaluation, iota_row: np.ndarray,
                           label: tuple[int, int], n_out: int,
                           rng: np.random.Generator) -> LabeledBelief:
    """Fuse the association output into the potential object behind one
    measurement.

    The new-object hypothesis carries mass sum(weight_terms) * iota[0];
    it competes with the clutter hypothesis and with every legacy object
    claiming the measurement, whose combined mass is sum(iota).  The
    particle set is resampled down to the tracker's particle count.
    """
    e_mass = float(ev.weight_terms.sum()) * float(iota_row[0])
    total = e_mass + float(iota_row.sum())
    if not (e_mass > 0.0):
        return LabeledBelief(label=label, particles=ev.particles[:n_out].copy(),
                             weights=np.zeros(n_out), existence=0.0)
    existence = e_mass / total
    probs = ev.weight_terms / ev.weight_terms.sum()
    mmse = probs @ ev.particles
    idx = _systematic_indices(probs, n_out, rng)
    return LabeledBelief(label=label, particles=ev.particles[idx],
                         weights=np.full(n_out, existence / n_out),
                         existence=existence, mmse=mmse)


def detect_and_estimate(beliefs, threshold: float = 0.5):
    """State estimates of beliefs whose existence exceeds the threshold."""
    out = []
    for b in beliefs:
        if b.existence > threshold:
            if b.mmse is not None:
                est = b.mmse
            else:
                est = b.weights @ b.particles / b.existence
            out.append((b.label, est, b.existence))
    return out


def prune(beliefs, threshold: float = 1e-4):
    """Drop beliefs whose existence fell below the threshold."""
    return [b for b in beliefs if b.existence >= threshold]


def resample(particles: np.ndarray, weights: np.ndarray, n_out: int,
             rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Systematic resampling to `n_out` particles with equal weights.

    The returned weights preserve the total mass of the input weights.
    """
    particles = np.asarray(particles)
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.shape[0] != particles.shape[0]:
        raise ValueError("weights must match the particle count")
    if n_out < 1:
        raise ValueError("n_out must be at least 1")
    if not np.all(np.isfinite(w)) or np.any(w < 0.0):
        raise DegenerateWeightsError("weights must be finite and nonnegative")
    total = w.sum()
    if not total > 0.0:
        raise DegenerateWeightsError("total weight is zero")
    idx = _systematic_indices(w / total, n_out, rng)
    return particles[idx], np.full(n_out, total / n_out)


def _systematic_indices(probs: np.ndarray, n_out: int,
                        rng: np.random.Generator) -> np.ndarray:
    grid = (rng.random() + np.arange(n_out)) / n_out
    cum = np.cumsum(probs)
    cum[-1] = 1.0
    return np.searchsorted(cum, grid, side="left")


def step(beliefs, frame: MeasurementFrame, sensor, birth, motion,
         cfg: TrackerConfig, seed) -> StepResult:
    """Advance the whole multiobject posterior by one time step.

    `seed` is an integer (or tuple prefix, e.g. (seed, run)) from which
    all per-stage random streams are derived, so a step is reproducible
    regardless of how the per-object work is scheduled.
    """
    if not sensor.clutter_mean > 0.0:
        raise ValueError("the tracker needs a positive clutter rate")
    k = frame.k
    m_k = frame.n_meas
    preds = []
    exts = []
    beta = np.zeros((len(beliefs), m_k + 1))
    for j, bel in enumerate(beliefs):
        rng = _stream(seed, k, _STAGE_PREDICT, bel.label)
        pred = predict(bel, motion, rng)
        ext, row = measurement_evaluation(pred, sensor, frame, cfg)
        preds.append(pred)
        exts.append(ext)
        beta[j] = row
    new_evals = new_po_evaluation(frame, sensor, birth, cfg,
                                  _stream(seed, k, _STAGE_NEW))
    tables = AssociationTables(beta=beta if len(beliefs) else np.zeros((0, m_k + 1)),
                               xi0=np.array([ev.xi0 for ev in new_evals]))
    tables = run_spa_da(tables, max_iters=cfg.da_max_iters, tol=cfg.da_tol)
    if not tables.converged:
        log.warning("association messages did not converge at step %d "
                    "(%d iterations)", k, tables.iterations)
    updated = []
    for j, bel in enumerate(beliefs):
        rng = _stream(seed, k, _STAGE_UPDATE_LEGACY, bel.label)
        updated.append(measurement_update_legacy(exts[j], preds[j],
                                                 tables.kappa[j], sensor, cfg,
                                                 rng, bel.label))
    for m in range(1, m_k + 1):
        rng = _stream(seed, k, _STAGE_UPDATE_NEW, (m,))
        updated.append(measurement_update_new(new_evals[m - 1],
                                              tables.iota[m - 1], (k, m),
                                              cfg.n_particles, rng))
    estimates = detect_and_estimate(updated, cfg.detect_threshold)
    kept = prune(updated, cfg.prune_threshold)
    n_evicted = 0
    if len(kept) > cfg.max_potential_objects:
        ranked = sorted(kept, key=lambda b: (-b.existence, b.label))
        keep_labels = {b.label for b in ranked[:cfg.max_potential_objects]}
        n_evicted = len(kept) - len(keep_labels)
        log.warning("potential-object cap hit at step %d, evicting %d "
                    "lowest-existence beliefs", k, n_evicted)
        kept = [b for b in kept if b.label in keep_labels]
    diag = StepDiagnostics(alpha_e=np.array([p.alpha_e for p in preds]),
                           beta=beta,
                           xi0=np.array([ev.xi0 for ev in new_evals]),
                           kappa=tables.kappa, iota=tables.iota,
                           da_iterations=tables.iterations,
                           da_converged=tables.converged,
                           n_evicted=n_evicted)
    return StepResult(beliefs=kept, estimates=estimates, diagnostics=diag)


@dataclass
class TrackOutput:
    """Everything one tracking pass produces: per-step estimate rows
    (step, label, state, existence), wall-clock seconds per step, and the
    number of potential objects alive after each step."""

    estimate_rows: list
    step_seconds: np.ndarray
    n_beliefs: np.ndarray


def run_tracker(frames, sensor, birth, motion, cfg: TrackerConfig,
                seed) -> TrackOutput:
    """Run the recursion over a full measurement sequence."""
    beliefs: list[LabeledBelief] = []
    rows = []
    seconds = []
    counts = []
    for frame in frames:
        t0 = time.perf_counter()
        result = step(beliefs, frame, sensor, birth, motion, cfg, seed)
        seconds.append(time.perf_counter() - t0)
        beliefs = result.beliefs
        for label, state, existence in result.estimates:
            rows.append((frame.k, label, state, existence))
        counts.append(len(beliefs))
    return TrackOutput(estimate_rows=rows, step_seconds=np.asarray(seconds),
                       n_beliefs=np.asarray(counts))

"""Parameter-update rules for the stochastic ground-state search.

Plain gradient descent, covariance-preconditioned descent in three
regularized flavors, its batch-sized dual form, the momentum-corrected
variant of that dual form, and the warm-started low-rank scheme that
averages the preconditioner across steps with a decaying weight.  The
low-rank scheme never forms the parameter-square covariance; it keeps a
thin factorization refreshed by subspace iteration (or a random sketch)
and applies the inverse through two projections.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import NotPositiveDefinite, RankCollapse, SingularMatrix
from .estimators import s_matrix, t_matrix
from .linalg import qr_orthonormalize, spd_factorize
from .svdengine import (
    SsiReport,
    exact_truncated_svd,
    randomized_svd,
    ssi_svd,
    subspace_drift,
)

DEFAULT_LEARNING_RATE = 0.015
DEFAULT_RATE_DECAY = 1000.0
DEFAULT_TIKHONOV_EPS = 1e-3
DEFAULT_MOMENTUM = 0.99
DEFAULT_AVERAGING_WEIGHT = 0.95
DEFAULT_SIGMA_FLOOR = 1e-3
DEFAULT_RANK_CUTOFF = 1e-6
DEFAULT_RANK_GROWTH = 0.1
DEFAULT_RANK_INIT = 400
DEFAULT_SSI_MAX_ITERS = 3
SR_REG_MODES = ("diagonal_shift", "diagonal_scale", "pseudo_inverse")
SVD_BACKENDS = ("ssi", "randomized", "exact")

# Relative eigenvalue cutoff for the unshifted dual solve; the dual matrix
# is singular whenever the batch outnumbers the parameter count.
PSEUDO_SOLVE_RTOL = 1e-12


@dataclass(frozen=True)
class LearningRateSchedule:
    """Hyperbolic decay: rate(k) = alpha / (1 + k / beta)."""

    alpha: float = DEFAULT_LEARNING_RATE
    beta: float = DEFAULT_RATE_DECAY

    def __post_init__(self):
        if not (self.alpha > 0.0 and self.beta > 0.0):
            raise ValueError("schedule constants must be positive")

    def eta(self, step):
        if step < 0:
            raise ValueError("step index must be nonnegative")
        return self.alpha / (1.0 + step / self.beta)


def sgd_update(theta, bundle, eta):
    """theta - eta * gradient."""
    return np.asarray(theta, dtype=np.float64) - eta * bundle.gradient


def _pseudo_inverse_apply(matrix, rhs, rel_tol):
    """matrix^+ @ rhs for a symmetric matrix, inverting only the
    eigenvalues with |lam| >= rel_tol * |lam_max| and zeroing the rest."""
    eigvals, eigvecs = np.linalg.eigh(matrix)
    lam_max = float(np.max(np.abs(eigvals))) if eigvals.size else 0.0
    if lam_max == 0.0:
        return np.zeros_like(rhs)
    inv = np.where(np.abs(eigvals) >= rel_tol * lam_max, 1.0, 0.0)
    inv = np.divide(inv, eigvals, out=np.zeros_like(eigvals), where=inv > 0.0)
    return eigvecs @ (inv * (eigvecs.T @ rhs))


def full_sr_update(theta, bundle, eta, reg_mode="diagonal_shift",
                   reg_eps=DEFAULT_TIKHONOV_EPS):
    """Covariance-preconditioned step on the parameter-square matrix.

    Reference path for small parameter counts: forms S explicitly and
    solves S_reg x = gradient.  reg_mode picks the regularization:
    'diagonal_shift' adds reg_eps * I, 'diagonal_scale' multiplies the
    diagonal by (1 + reg_eps), 'pseudo_inverse' inverts only eigenvalues
    at least reg_eps * |lam_max| in magnitude and zeroes the rest.

    Raises:
      SingularMatrix: a diagonal-mode factorization failed.
      ValueError: unknown reg_mode.
    """
    if reg_mode not in SR_REG_MODES:
        raise ValueError(f"reg_mode must be one of {SR_REG_MODES}, got {reg_mode!r}")
    theta = np.asarray(theta, dtype=np.float64)
    s = s_matrix(bundle)
    g = bundle.gradient

    if reg_mode == "pseudo_inverse":
        direction = _pseudo_inverse_apply(s, g, reg_eps)
    else:
        if reg_mode == "diagonal_shift":
            s_reg = s + reg_eps * np.eye(s.shape[0])
        else:
            s_reg = s.copy()
            s_reg[np.diag_indices_from(s_reg)] *= 1.0 + reg_eps
        try:
            direction = spd_factorize(s_reg).solve(g)
        except NotPositiveDefinite as exc:
            raise SingularMatrix(
                f"regularized covariance is not positive definite ({reg_mode}, "
                f"eps={reg_eps:g})"
            ) from exc
    return theta - eta * direction


def _dual_solve(t, shift, rhs):
    """(T + shift I)^-1 rhs, falling back to an eigenvalue pseudo-solve
    when shift = 0 (T is singular whenever the batch exceeds the rank)."""
    if shift > 0.0:
        return spd_factorize(t, shift).solve(rhs)
    return _pseudo_inverse_apply(t, rhs, PSEUDO_SOLVE_RTOL)


def minsr_update(theta, bundle, eta, tikhonov_eps=DEFAULT_TIKHONOV_EPS):
    """Dual-form preconditioned step: 2 O (T + eps I)^-1 L.

    Solves in the batch dimension instead of the parameter dimension;
    with eps = 0 the pseudo-solve reproduces the full covariance step on
    full-rank instances.

    Raises:
      NotPositiveDefinite: the shifted dual factorization failed.
    """
    if tikhonov_eps < 0.0:
        raise ValueError("tikhonov_eps must be nonnegative")
    theta = np.asarray(theta, dtype=np.float64)
    x = _dual_solve(t_matrix(bundle), tikhonov_eps, bundle.l_vector)
    return theta - eta * 2.0 * (bundle.o_matrix @ x)


@dataclass(frozen=True)
class SpringState:
    """Carry-over for the momentum-corrected dual update."""

    prev_update: np.ndarray
    mu: float = DEFAULT_MOMENTUM
    tikhonov_eps: float = DEFAULT_TIKHONOV_EPS

    def __post_init__(self):
        if not 0.0 <= self.mu < 1.0:
            raise ValueError("momentum decay must lie in [0, 1)")
        if self.tikhonov_eps < 0.0:
            raise ValueError("tikhonov_eps must be nonnegative")

    @classmethod
    def initial(cls, n_params, mu=DEFAULT_MOMENTUM,
                tikhonov_eps=DEFAULT_TIKHONOV_EPS):
        return cls(prev_update=np.zeros(n_params), mu=mu,
                   tikhonov_eps=tikhonov_eps)


def spring_update(theta, bundle, eta, state):
    """Dual step with the previous update recycled as momentum.

    The residual target removes the part of the momentum already
    explained by the current batch: Ltilde = L - mu * O^T prev_update.
    The dual matrix gets the Tikhonov shift plus a constant 1/batch in
    every entry, and the step is phi + mu * prev_update with
    phi = -eta * 2 O (T_reg)^-1 Ltilde; the factor 2 matches the
    gradient convention of the dual step, so mu = 0 recovers it exactly.

    Returns:
      (theta', state') with state'.prev_update = theta' - theta.
    """
    theta = np.asarray(theta, dtype=np.float64)
    o = bundle.o_matrix
    n = bundle.batch_size
    ltilde = bundle.l_vector - state.mu * (o.T @ state.prev_update)
    t_reg = t_matrix(bundle) + np.full((n, n), 1.0 / n)
    x = _dual_solve(t_reg, state.tikhonov_eps, ltilde)
    phi = -eta * 2.0 * (o @ x)
    delta = phi + state.mu * state.prev_update
    return theta + delta, replace(state, prev_update=delta)


@dataclass(frozen=True)
class WssrState:
    """Carry-over for the warm-started low-rank scheme.

    obar is the thin factor U * sigma of the averaged matrix kept from
    the previous step (parameter count x effective rank; zero columns
    before the first step), lbar the matching residual history, u_prev
    the left vectors used to warm-start the next factorization.  r_max
    is the rank requested from the factorizer; it only ever grows.
    """

    obar: np.ndarray
    lbar: np.ndarray
    u_prev: np.ndarray
    r_max: int
    delta: float = DEFAULT_AVERAGING_WEIGHT
    sigma_floor: float = DEFAULT_SIGMA_FLOOR
    sigma_floor_relative: bool = False
    r_reg: float = DEFAULT_RANK_CUTOFF
    eps_grow: float = DEFAULT_RANK_GROWTH
    step: int = 0

    def __post_init__(self):
        if self.obar.ndim != 2 or self.u_prev.ndim != 2 or self.lbar.ndim != 1:
            raise ValueError("malformed history shapes")
        if self.obar.shape[1] != self.lbar.shape[0]:
            raise ValueError("history rank mismatch between obar and lbar")
        if self.r_max < 1:
            raise ValueError("r_max must be at least 1")
        if not 0.0 <= self.delta < 1.0:
            raise ValueError("averaging weight must lie in [0, 1)")
        if self.sigma_floor <= 0.0:
            raise ValueError("sigma_floor must be positive")
        if not 0.0 < self.r_reg < 1.0:
            raise ValueError("rank cutoff must lie in (0, 1)")
        if self.eps_grow < 0.0:
            raise ValueError("rank growth factor must be nonnegative")

    @property
    def history_rank(self):
        return self.obar.shape[1]

    @classmethod
    def initial(cls, n_params, rank_init=DEFAULT_RANK_INIT,
                delta=DEFAULT_AVERAGING_WEIGHT,
                sigma_floor=DEFAULT_SIGMA_FLOOR,
                sigma_floor_relative=False,
                r_reg=DEFAULT_RANK_CUTOFF,
                eps_grow=DEFAULT_RANK_GROWTH):
        return cls(
            obar=np.zeros((n_params, 0)),
            lbar=np.zeros(0),
            u_prev=np.zeros((n_params, 0)),
            r_max=int(rank_init),
            delta=delta,
            sigma_floor=sigma_floor,
            sigma_floor_relative=sigma_floor_relative,
            r_reg=r_reg,
            eps_grow=eps_grow,
        )


@dataclass(frozen=True)
class WssrDiagnostics:
    """Per-step telemetry mirrored into the trace file."""

    ssi: SsiReport
    effective_rank: int
    r_max: int
    sigma_drift: float
    projector_drift: float


@dataclass(frozen=True)
class _PrevFactors:
    """Duck-typed factor pair for drift comparison against the last step."""

    u: np.ndarray
    sigma: np.ndarray

    @property
    def rank(self):
        return self.sigma.shape[0]


def _per_step_seed(rng_seed, step):
    return int(np.random.SeedSequence((int(rng_seed), int(step))).generate_state(1)[0])


def _prepare_warm_start(u_prev, requested, n_rows, seed):
    """Previous left vectors widened (or cut) to the requested block size.

    Missing columns are filled with seeded Gaussian directions and the
    whole block re-orthonormalized, so a rank grown since the last step
    still warm-starts from everything already known.
    """
    if u_prev.shape[1] >= requested:
        return np.ascontiguousarray(u_prev[:, :requested])
    rng = np.random.default_rng(seed)
    extra = rng.standard_normal((n_rows, requested - u_prev.shape[1]))
    q, _ = qr_orthonormalize(np.concatenate([u_prev, extra], axis=1))
    return q


def wssr_step(theta, bundle, eta, state, svd_backend="ssi",
              ssi_max_iters=DEFAULT_SSI_MAX_ITERS, ssi_residual_tol=1e-10,
              rng_seed=0):
    """One step of the warm-started low-rank preconditioned descent.

    The current batch columns are appended to the carried history with
    sqrt(delta) / sqrt(1 - delta) weights, the stacked matrix is
    factorized to the working rank (dense on the very first step, the
    chosen backend afterwards), the kept rank is cut where the squared
    spectrum falls below r_reg relative to its top, and the update
    applies the inverse through the kept subspace while the orthogonal
    complement is scaled by the floor:

        theta' = theta - eta * (U sigma^-2 U^T + floor^-1 (I - U U^T)) gbar

    with gbar built from the stacked matrices before truncation.  The
    working rank grows by eps_grow for the next step whenever the cut
    was binding at r_max (never beyond the parameter count).

    Returns:
      (theta', state', WssrDiagnostics).
    """
    if svd_backend not in SVD_BACKENDS:
        raise ValueError(
            f"svd_backend must be one of {SVD_BACKENDS}, got {svd_backend!r}"
        )
    theta = np.asarray(theta, dtype=np.float64)
    o = bundle.o_matrix
    m = o.shape[0]
    sq_old = math.sqrt(state.delta)
    sq_new = math.sqrt(1.0 - state.delta)
    ohat = np.concatenate([sq_old * state.obar, sq_new * o], axis=1)
    lhat = np.concatenate([sq_old * state.lbar, sq_new * bundle.l_vector])

    requested = min(state.r_max, m, ohat.shape[1])
    if state.step == 0 or svd_backend == "exact":
        factors = exact_truncated_svd(ohat, requested)
        report = SsiReport(iterations_used=0, subspace_residual=0.0,
                           warm_started=False)
    elif svd_backend == "randomized":
        room = min(ohat.shape) - requested
        factors = randomized_svd(
            ohat, requested, oversample=min(10, max(0, room)),
            rng_seed=_per_step_seed(rng_seed, state.step),
        )
        report = SsiReport(iterations_used=0, subspace_residual=0.0,
                           warm_started=False)
    else:
        u_init = _prepare_warm_start(
            state.u_prev, requested, m, _per_step_seed(rng_seed, state.step)
        )
        factors, report = ssi_svd(
            ohat, requested, max_iters=ssi_max_iters, u_init=u_init,
            residual_tol=ssi_residual_tol,
        )

    top_sq = factors.sigma[0] ** 2
    r_eff = int(np.count_nonzero(factors.sigma**2 >= state.r_reg * top_sq))
    if r_eff < 1:
        raise RankCollapse("no singular value passed the relative cutoff")
    binding = factors.rank == requested == state.r_max and r_eff == state.r_max
    next_r_max = state.r_max
    if binding:
        next_r_max = min(math.ceil((1.0 + state.eps_grow) * state.r_max), m)

    u = factors.u[:, :r_eff]
    sigma = factors.sigma[:r_eff]
    gbar = ohat @ lhat

    coeffs = u.T @ gbar
    floor = state.sigma_floor * (top_sq if state.sigma_floor_relative else 1.0)
    update = u @ (coeffs / sigma**2) + (gbar - u @ coeffs) / floor
    theta_next = theta - eta * update

    if state.u_prev.shape[1] == 0:
        sigma_drift, projector_drift = 0.0, 0.0
    else:
        prev = _PrevFactors(
            u=state.u_prev, sigma=np.linalg.norm(state.obar, axis=0)
        )
        sigma_drift, projector_drift = subspace_drift(
            prev, _PrevFactors(u=u, sigma=sigma)
        )

    state_next = replace(
        state,
        obar=u * sigma,
        lbar=factors.v[:r_eff, :] @ lhat,
        u_prev=u,
        r_max=next_r_max,
        step=state.step + 1,
    )
    diagnostics = WssrDiagnostics(
        ssi=report,
        effective_rank=r_eff,
        r_max=state.r_max,
        sigma_drift=sigma_drift,
        projector_drift=projector_drift,
    )
    return theta_next, state_next, diagnostics


def rssr_step(theta, bundle, eta, state, ssi_max_iters=DEFAULT_SSI_MAX_ITERS,
              rng_seed=0):
    """Low-rank preconditioned step with a fresh random sketch each step
    instead of a warm-started iteration (same contract as wssr_step)."""
    return wssr_step(
        theta, bundle, eta, state, svd_backend="randomized",
        ssi_max_iters=ssi_max_iters, rng_seed=rng_seed,
    )

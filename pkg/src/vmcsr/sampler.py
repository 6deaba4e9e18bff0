"""Metropolis-Hastings walker ensemble over electron configurations.

All-electron Gaussian moves accepted on the squared-amplitude ratio.
Every walker owns its own counter-based RNG stream (spawned from the run
seed), so results are bitwise reproducible and independent of how walkers
would be scheduled across threads.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalAbort
from .estimators import SampleBatch
from .system import ElectronConfiguration, local_energy_batch

DEFAULT_PROPOSAL_STD = 0.5
DEFAULT_WALKERS = 2048
DEFAULT_BURN_IN = 1000
DEFAULT_THINNING = 10
TARGET_ACCEPTANCE = 0.5
ADAPT_INTERVAL = 50
PROPOSAL_STD_BOUNDS = (1e-3, 10.0)


@dataclass
class WalkerEnsemble:
    """Mutable ensemble state advanced in place by metropolis_step."""

    positions: np.ndarray        # (walkers, N, 3)
    spins: np.ndarray            # (N,)
    log_abs: np.ndarray          # (walkers,) cached log-amplitudes
    rngs: list                   # one numpy Generator per walker
    proposal_std: float = DEFAULT_PROPOSAL_STD
    accepted: np.ndarray = None  # (walkers,) counters
    proposed: np.ndarray = None
    burned_in: bool = False

    def __post_init__(self):
        w = self.positions.shape[0]
        if self.accepted is None:
            self.accepted = np.zeros(w, dtype=np.int64)
        if self.proposed is None:
            self.proposed = np.zeros(w, dtype=np.int64)

    @property
    def n_walkers(self):
        return self.positions.shape[0]

    @property
    def acceptance_rate(self):
        total = int(np.sum(self.proposed))
        if total == 0:
            return 0.0
        return float(np.sum(self.accepted)) / total

    @classmethod
    def create(cls, system, wavefunction, n_walkers, seed,
               proposal_std=DEFAULT_PROPOSAL_STD):
        """Walkers jittered around nuclei, one spawned RNG stream each.

        Electrons are parked on nuclei in charge-proportional order, then
        displaced by a unit Gaussian from the walker's own stream.
        """
        if n_walkers < 1:
            raise ValueError("need at least one walker")
        streams = np.random.SeedSequence(seed).spawn(n_walkers)
        rngs = [np.random.default_rng(s) for s in streams]

        sites = []
        for idx, z in enumerate(system.nuclear_charges):
            sites.extend([idx] * z)
        n = system.n_electrons
        anchors = np.array(
            [system.nuclear_positions[sites[i % len(sites)]] for i in range(n)]
        )
        positions = np.stack(
            [anchors + rng.standard_normal((n, 3)) for rng in rngs]
        )
        log_abs = np.asarray(wavefunction.log_abs_batch(positions), dtype=np.float64)
        if np.any(np.isnan(log_abs)):
            raise NumericalAbort("NaN log-amplitude at walker initialization")
        return cls(
            positions=positions,
            spins=system.spins,
            log_abs=log_abs,
            rngs=rngs,
            proposal_std=float(proposal_std),
        )


def metropolis_step(ensemble, wavefunction, proposal_std=None):
    """One all-electron Metropolis move per walker, in place.

    Proposals are x + std * xi with xi standard normal; acceptance uses
    min(1, exp(2 * (log|psi'| - log|psi|))). A proposal on a node
    (log-amplitude -inf) is always rejected. std = 0 is allowed for the
    degenerate limit: the move is the identity and always accepted.

    Returns the ensemble (the same, mutated, object).
    """
    std = ensemble.proposal_std if proposal_std is None else float(proposal_std)
    if std < 0.0:
        raise ValueError("proposal spread must be nonnegative")
    w = ensemble.n_walkers
    n = ensemble.positions.shape[1]

    noise = np.stack([rng.standard_normal((n, 3)) for rng in ensemble.rngs])
    uniforms = np.array([rng.random() for rng in ensemble.rngs])
    proposals = ensemble.positions + std * noise
    new_log = np.asarray(wavefunction.log_abs_batch(proposals), dtype=np.float64)
    if np.any(np.isnan(new_log)):
        raise NumericalAbort(
            f"NaN log-amplitude in proposals (step spread {std:g}); "
            f"walker positions span |x| <= {np.max(np.abs(proposals)):.3e}"
        )

    with np.errstate(divide="ignore", invalid="ignore"):
        log_ratio = 2.0 * (new_log - ensemble.log_abs)
        accept = np.log(uniforms) < log_ratio
    accept &= ~np.isnan(log_ratio)

    ensemble.positions[accept] = proposals[accept]
    ensemble.log_abs[accept] = new_log[accept]
    ensemble.proposed += 1
    ensemble.accepted += accept.astype(np.int64)
    return ensemble


def burn_in(ensemble, wavefunction, steps,
            target_acceptance=TARGET_ACCEPTANCE, adapt_interval=ADAPT_INTERVAL):
    """Equilibrate once per run, tuning the proposal spread.

    The spread is nudged multiplicatively toward the target acceptance on
    fixed windows, clamped to sane bounds, and frozen afterwards (the
    burned_in flag); later sampling never adapts again, so the chain
    kernel is fixed when measurements start.
    """
    if ensemble.burned_in or steps <= 0:
        ensemble.burned_in = True
        return ensemble
    done = 0
    while done < steps:
        chunk = min(adapt_interval, steps - done)
        before_acc = int(np.sum(ensemble.accepted))
        for _ in range(chunk):
            metropolis_step(ensemble, wavefunction)
        done += chunk
        window_rate = (int(np.sum(ensemble.accepted)) - before_acc) / (
            chunk * ensemble.n_walkers
        )
        factor = float(np.exp(window_rate - target_acceptance))
        lo, hi = PROPOSAL_STD_BOUNDS
        ensemble.proposal_std = float(np.clip(ensemble.proposal_std * factor, lo, hi))
    ensemble.burned_in = True
    return ensemble


def sample_batch(ensemble, wavefunction, system, n_samples,
                 burn_in_steps=DEFAULT_BURN_IN, thinning=DEFAULT_THINNING,
                 include_nuclear_repulsion=True):
    """Collect decorrelated samples with energies and log-derivatives.

    Burn-in runs only if the ensemble has not equilibrated yet (once per
    run); afterwards each collection round advances every walker
    `thinning` steps and takes the current states in fixed walker order.
    thinning = 0 collects the current states directly.

    Args:
      n_samples: batch size; walker count should divide it (rounds take
        whole ensembles, a final partial round takes the leading walkers).

    Returns:
      SampleBatch with raw local energies (clipping happens downstream).
    """
    burn_in(ensemble, wavefunction, burn_in_steps)

    collected = []
    remaining = int(n_samples)
    if remaining < 1:
        raise ValueError("need at least one sample")
    while remaining > 0:
        for _ in range(thinning):
            metropolis_step(ensemble, wavefunction)
        take = min(remaining, ensemble.n_walkers)
        collected.append(ensemble.positions[:take].copy())
        remaining -= take
    positions = np.concatenate(collected, axis=0)

    energies = local_energy_batch(
        system, wavefunction, positions, include_nuclear_repulsion
    )
    logderivs = wavefunction.grad_theta_batch(positions)
    configs = tuple(
        ElectronConfiguration(positions=pos, spins=ensemble.spins) for pos in positions
    )
    return SampleBatch(
        configs=configs,
        local_energies=np.asarray(energies, dtype=np.float64),
        theta_logderivs=np.asarray(logderivs, dtype=np.float64),
    )

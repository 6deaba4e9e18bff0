"""The optimization driver: sample, assemble, update, log, snapshot.

Steps are 1-indexed; step k uses the learning rate at schedule argument
k-1, so the very first step runs at the schedule's base rate. Every step
appends exactly one trace record, and the final checkpoint always lands
at the last completed step. A numerical failure mid-step aborts the run
but first re-snapshots the last good state, so a crashed run is always
resumable from where it still made sense.
"""

import os
import time
from dataclasses import dataclass

import numpy as np

from . import checkpoint as ckpt
from .errors import (
    CoalescencePoint,
    ConfigError,
    DegenerateBatch,
    DegenerateInput,
    NodeProximity,
    NotPositiveDefinite,
    NumericalAbort,
    RankCollapse,
    RankTooLarge,
    SingularMatrix,
    ZeroMatrix,
)
from .config import build_system, build_wavefunction
from .estimators import assemble
from .optimizers import (
    LearningRateSchedule,
    SpringState,
    WssrState,
    full_sr_update,
    minsr_update,
    sgd_update,
    spring_update,
    wssr_step,
)
from .sampler import WalkerEnsemble, sample_batch
from .trace import TraceRecord, TraceWriter, read_trace, rewrite_trace, smooth_trace

TRACE_FILENAME = "trace.csv"
CHECKPOINT_FILENAME = "checkpoint.bin"

# Numerical failures that abort a run (exit 3); config problems are not
# in this set and keep raising ConfigError (exit 2).
ABORT_ERRORS = (
    NumericalAbort,
    NodeProximity,
    CoalescencePoint,
    DegenerateBatch,
    DegenerateInput,
    RankCollapse,
    RankTooLarge,
    SingularMatrix,
    NotPositiveDefinite,
    ZeroMatrix,
)


@dataclass(frozen=True)
class RunResult:
    exit_code: int
    steps_completed: int
    trace_path: str
    checkpoint_path: str
    aborted: bool
    smoothed_energy: float
    message: str
    records: tuple


def _initial_optimizer_state(config, n_params):
    opt = config.optimizer
    if opt.name in ("wssr", "rssr"):
        w = opt.wssr
        return WssrState.initial(
            n_params,
            rank_init=w.rank_init,
            delta=w.delta,
            sigma_floor=w.sigma_floor,
            sigma_floor_relative=w.sigma_floor_relative,
            r_reg=w.r_reg,
            eps_grow=w.eps_grow,
        )
    if opt.name == "spring":
        return SpringState.initial(
            n_params, mu=opt.spring.mu, tikhonov_eps=opt.spring.tikhonov_eps
        )
    return None


def _apply_update(config, theta, bundle, eta, opt_state, seed):
    """One optimizer step; returns (theta_next, state_next, wssr_diag)."""
    opt = config.optimizer
    name = opt.name
    if name == "sgd":
        return sgd_update(theta, bundle, eta), None, None
    if name == "sr":
        theta_next = full_sr_update(
            theta, bundle, eta, reg_mode=opt.sr.reg_mode, reg_eps=opt.sr.reg_eps
        )
        return theta_next, None, None
    if name == "minsr":
        return minsr_update(theta, bundle, eta, tikhonov_eps=opt.minsr.tikhonov_eps), None, None
    if name == "spring":
        theta_next, state_next = spring_update(theta, bundle, eta, opt_state)
        return theta_next, state_next, None
    backend = "randomized" if name == "rssr" else opt.wssr.svd_backend
    theta_next, state_next, diag = wssr_step(
        theta,
        bundle,
        eta,
        opt_state,
        svd_backend=backend,
        ssi_max_iters=opt.wssr.ssi_max_iters,
        ssi_residual_tol=opt.wssr.ssi_residual_tol,
        rng_seed=seed,
    )
    return theta_next, state_next, diag


def _snapshot(path, step, config, seed, theta, ensemble, opt_state):
    scalars = {
        "step": step,
        "optimizer": config.optimizer.name,
        "seed": seed,
        "n_params": int(theta.shape[0]),
        "n_walkers": ensemble.n_walkers,
        "proposal_std": ensemble.proposal_std,
        "burned_in": ensemble.burned_in,
    }
    arrays = {
        "theta": theta,
        "positions": ensemble.positions,
        "spins": ensemble.spins,
        "log_abs": ensemble.log_abs,
        "accepted": ensemble.accepted,
        "proposed": ensemble.proposed,
    }
    if isinstance(opt_state, WssrState):
        scalars["wssr"] = {
            "delta": opt_state.delta,
            "sigma_floor": opt_state.sigma_floor,
            "sigma_floor_relative": opt_state.sigma_floor_relative,
            "r_reg": opt_state.r_reg,
            "eps_grow": opt_state.eps_grow,
            "r_max": opt_state.r_max,
            "step": opt_state.step,
        }
        arrays["wssr_obar"] = opt_state.obar
        arrays["wssr_lbar"] = opt_state.lbar
        arrays["wssr_u_prev"] = opt_state.u_prev
    elif isinstance(opt_state, SpringState):
        scalars["spring"] = {
            "mu": opt_state.mu,
            "tikhonov_eps": opt_state.tikhonov_eps,
        }
        arrays["spring_prev_update"] = opt_state.prev_update
    rng_states = [gen.bit_generator.state for gen in ensemble.rngs]
    ckpt.write_checkpoint(path, scalars, arrays, rng_states)


def _restore(resume_path, config, system, wavefunction):
    """Rebuild (step, theta, ensemble, opt_state, seed) from a snapshot."""
    scalars, arrays, rng_states = ckpt.read_checkpoint(resume_path)
    name = scalars["optimizer"]
    if name != config.optimizer.name:
        raise ConfigError(
            f"checkpoint was written by optimizer {name!r}, config asks for "
            f"{config.optimizer.name!r}"
        )
    theta = arrays["theta"]
    if theta.shape != (wavefunction.n_params,):
        raise ConfigError(
            f"checkpoint has {theta.shape[0]} parameters, the configured "
            f"wavefunction has {wavefunction.n_params}"
        )
    if arrays["spins"].shape[0] != system.n_electrons:
        raise ConfigError("checkpoint electron count does not match the system")

    rngs = []
    for state in rng_states:
        gen = np.random.Generator(np.random.PCG64())
        gen.bit_generator.state = state
        rngs.append(gen)
    ensemble = WalkerEnsemble(
        positions=arrays["positions"],
        spins=arrays["spins"],
        log_abs=arrays["log_abs"],
        rngs=rngs,
        proposal_std=float(scalars["proposal_std"]),
        accepted=arrays["accepted"],
        proposed=arrays["proposed"],
        burned_in=bool(scalars["burned_in"]),
    )

    opt_state = None
    if name in ("wssr", "rssr"):
        w = scalars["wssr"]
        opt_state = WssrState(
            obar=arrays["wssr_obar"],
            lbar=arrays["wssr_lbar"],
            u_prev=arrays["wssr_u_prev"],
            r_max=int(w["r_max"]),
            delta=float(w["delta"]),
            sigma_floor=float(w["sigma_floor"]),
            sigma_floor_relative=bool(w["sigma_floor_relative"]),
            r_reg=float(w["r_reg"]),
            eps_grow=float(w["eps_grow"]),
            step=int(w["step"]),
        )
    elif name == "spring":
        s = scalars["spring"]
        opt_state = SpringState(
            prev_update=arrays["spring_prev_update"],
            mu=float(s["mu"]),
            tikhonov_eps=float(s["tikhonov_eps"]),
        )
    return int(scalars["step"]), theta, ensemble, opt_state, int(scalars["seed"])


def run(config, resume_path=None):
    """Execute a configured run; artifacts land in config.run.out_dir.

    Fresh runs start the trace file over; resumed runs drop any trace
    records past the checkpointed step and continue appending, so an
    interrupted-then-resumed run leaves the same trace as an
    uninterrupted one.
    """
    out_dir = config.run.out_dir
    os.makedirs(out_dir, exist_ok=True)
    trace_path = os.path.join(out_dir, TRACE_FILENAME)
    checkpoint_path = os.path.join(out_dir, CHECKPOINT_FILENAME)

    system = build_system(config.system)
    seed = config.run.seed
    wavefunction = build_wavefunction(config.wavefunction, system, seed)

    if resume_path is not None:
        start_step, theta, ensemble, opt_state, seed = _restore(
            resume_path, config, system, wavefunction
        )
        wavefunction.set_theta(theta)
        kept = []
        if os.path.exists(trace_path):
            kept = [rec for rec in read_trace(trace_path) if rec.step <= start_step]
        rewrite_trace(trace_path, kept)
        records = kept
    else:
        start_step = 0
        theta = wavefunction.theta.copy()
        ensemble = WalkerEnsemble.create(
            system,
            wavefunction,
            config.sampler.walkers,
            seed=seed,
            proposal_std=config.sampler.proposal_std,
        )
        opt_state = _initial_optimizer_state(config, wavefunction.n_params)
        rewrite_trace(trace_path, [])
        records = []

    schedule = LearningRateSchedule(
        alpha=config.optimizer.alpha, beta=config.optimizer.beta
    )
    n_samples = config.sampler.samples_per_step or config.sampler.walkers
    k_max = config.run.steps
    every = config.run.checkpoint_every

    aborted = False
    message = ""
    step = start_step
    with TraceWriter(trace_path, append=True) as writer:
        for step in range(start_step + 1, k_max + 1):
            t0 = time.perf_counter()
            acc0 = int(np.sum(ensemble.accepted))
            prop0 = int(np.sum(ensemble.proposed))
            try:
                batch = sample_batch(
                    ensemble,
                    wavefunction,
                    system,
                    n_samples=n_samples,
                    burn_in_steps=config.sampler.burn_in,
                    thinning=config.sampler.thinning,
                )
                bundle = assemble(batch, clip_n_std=config.optimizer.clip_n_std)
                if not np.isfinite(bundle.raw_loss):
                    raise NumericalAbort(f"non-finite energy at step {step}")
                eta = schedule.eta(step - 1)
                theta_next, opt_state_next, diag = _apply_update(
                    config, theta, bundle, eta, opt_state, seed
                )
                if not np.all(np.isfinite(theta_next)):
                    raise NumericalAbort(f"non-finite parameters at step {step}")
            except ABORT_ERRORS as exc:
                # Re-snapshot the state before the failing step so the
                # run can be resumed from the last good point.
                _snapshot(
                    checkpoint_path, step - 1, config, seed, theta, ensemble, opt_state
                )
                aborted = True
                message = f"aborted at step {step}: {exc}"
                step = step - 1
                break

            theta = theta_next
            opt_state = opt_state_next
            wavefunction.set_theta(theta)
            ensemble.log_abs = np.asarray(
                wavefunction.log_abs_batch(ensemble.positions), dtype=np.float64
            )

            proposed_now = int(np.sum(ensemble.proposed)) - prop0
            accepted_now = int(np.sum(ensemble.accepted)) - acc0
            rate = accepted_now / proposed_now if proposed_now else 0.0
            if diag is not None:
                rank_fields = dict(
                    effective_rank=diag.effective_rank,
                    r_max=diag.r_max,
                    ssi_iterations=diag.ssi.iterations_used,
                    sigma_drift=diag.sigma_drift,
                    projector_drift=diag.projector_drift,
                )
            else:
                rank_fields = dict(
                    effective_rank=0,
                    r_max=0,
                    ssi_iterations=0,
                    sigma_drift=0.0,
                    projector_drift=0.0,
                )
            record = TraceRecord(
                step=step,
                raw_energy=bundle.raw_loss,
                clipped_energy=bundle.loss,
                energy_variance=float(np.var(batch.local_energies)),
                acceptance_rate=rate,
                wall_ms=(time.perf_counter() - t0) * 1e3,
                **rank_fields,
            )
            writer.write(record)
            records.append(record)

            if (every and step % every == 0) or step == k_max:
                _snapshot(checkpoint_path, step, config, seed, theta, ensemble, opt_state)

    energies = [rec.raw_energy for rec in records]
    smoothed = float("nan")
    if energies:
        smoothed = float(smooth_trace(energies, config.run.smooth_window)[-1])
    return RunResult(
        exit_code=3 if aborted else 0,
        steps_completed=step,
        trace_path=trace_path,
        checkpoint_path=checkpoint_path,
        aborted=aborted,
        smoothed_energy=smoothed,
        message=message,
        records=tuple(records),
    )

"""Molecular geometry and the local-energy functional, in Hartree atomic units.

Electrons carry a fixed spin label (all up electrons first); nuclei are
clamped point charges. The kinetic part of the local energy is evaluated
through the log-derivative identity, so any object exposing batched
log-amplitudes and their coordinate derivatives can be plugged in.
"""

from dataclasses import dataclass

import numpy as np

from .errors import CoalescencePoint, NodeProximity

COALESCENCE_GUARD = 1e-12
LOG_ABS_UNDERFLOW = -700.0

SPIN_UP = 0
SPIN_DOWN = 1


@dataclass(frozen=True)
class MolecularSystem:
    """Clamped nuclei plus electron counts per spin channel."""

    nuclear_charges: tuple
    nuclear_positions: np.ndarray  # (n_nuclei, 3), Bohr
    n_up: int
    n_down: int

    def __post_init__(self):
        charges = tuple(int(z) for z in self.nuclear_charges)
        object.__setattr__(self, "nuclear_charges", charges)
        pos = np.asarray(self.nuclear_positions, dtype=np.float64).reshape(len(charges), 3)
        object.__setattr__(self, "nuclear_positions", pos)
        if not charges or any(z < 1 for z in charges):
            raise ValueError("need at least one nucleus, every charge >= 1")
        if self.n_up < 0 or self.n_down < 0 or self.n_up + self.n_down < 1:
            raise ValueError("need at least one electron")
        if not np.all(np.isfinite(pos)):
            raise ValueError("nuclear positions must be finite")

    @property
    def n_electrons(self):
        return self.n_up + self.n_down

    @property
    def spins(self):
        """(N,) spin labels, up electrons first."""
        return np.concatenate(
            [np.full(self.n_up, SPIN_UP, dtype=np.int64),
             np.full(self.n_down, SPIN_DOWN, dtype=np.int64)]
        )

    def nuclear_repulsion(self):
        """Internuclear Coulomb constant sum_{I<J} Z_I Z_J / R_IJ."""
        total = 0.0
        z = self.nuclear_charges
        for i in range(len(z)):
            for j in range(i + 1, len(z)):
                dist = float(np.linalg.norm(self.nuclear_positions[i] - self.nuclear_positions[j]))
                if dist < COALESCENCE_GUARD:
                    raise CoalescencePoint(f"nuclei {i} and {j} coincide")
                total += z[i] * z[j] / dist
        return total


@dataclass(frozen=True)
class ElectronConfiguration:
    """One point in configuration space."""

    positions: np.ndarray  # (N, 3), Bohr
    spins: np.ndarray      # (N,), SPIN_UP/SPIN_DOWN

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        spins = np.asarray(self.spins, dtype=np.int64)
        if pos.ndim != 2 or pos.shape[1] != 3 or pos.shape[0] != spins.shape[0]:
            raise ValueError(f"inconsistent shapes {pos.shape} / {spins.shape}")
        if not np.all(np.isfinite(pos)):
            raise ValueError("positions must be finite")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "spins", spins)

    @property
    def n_electrons(self):
        return self.positions.shape[0]


def _pair_indices(n):
    return np.triu_indices(n, k=1)


def potential_energy_batch(system, positions, include_nuclear_repulsion=True):
    """Coulomb potential for a batch of configurations.

    Args:
      system: MolecularSystem.
      positions: (W, N, 3) electron coordinates.
      include_nuclear_repulsion: add the internuclear constant (on by
        default; turning it off shifts every energy by the same constant).

    Returns:
      (W,) potential energies.

    Raises:
      CoalescencePoint: any charged pair closer than 1e-12.
    """
    positions = np.asarray(positions, dtype=np.float64)
    w, n, _ = positions.shape
    charges = np.asarray(system.nuclear_charges, dtype=np.float64)

    delta = positions[:, :, None, :] - system.nuclear_positions[None, None, :, :]
    dist_en = np.sqrt(np.sum(delta * delta, axis=-1))  # (W, N, n_nuclei)
    if np.any(dist_en < COALESCENCE_GUARD):
        raise CoalescencePoint("electron on top of a nucleus")
    # terms are sorted before each reduction so electron relabeling cannot
    # change the rounding: permutation symmetry holds bitwise
    attraction = np.sort((-charges[None, None, :] / dist_en).reshape(w, -1), axis=1)
    energy = np.sum(attraction, axis=1)

    iu, ju = _pair_indices(n)
    if iu.size:
        diff = positions[:, iu, :] - positions[:, ju, :]
        dist_ee = np.sqrt(np.sum(diff * diff, axis=-1))  # (W, n_pairs)
        if np.any(dist_ee < COALESCENCE_GUARD):
            raise CoalescencePoint("two electrons coincide")
        energy += np.sum(np.sort(1.0 / dist_ee, axis=1), axis=1)

    if include_nuclear_repulsion:
        energy += system.nuclear_repulsion()
    return energy


def potential_energy(system, config, include_nuclear_repulsion=True):
    """Coulomb potential of a single configuration."""
    return float(
        potential_energy_batch(
            system, config.positions[None], include_nuclear_repulsion
        )[0]
    )


def local_energy_batch(system, wavefunction, positions, include_nuclear_repulsion=True):
    """Local energy E_L = -(1/2) sum_i [lap_i log|psi| + |grad_i log|psi||^2] + V.

    The identity evaluates the kinetic term from log-amplitude derivatives
    only, so it stays finite wherever the amplitude does. At an exact
    eigenstate the result is constant across configurations (the
    zero-variance property the tests pin down).

    Args:
      system: MolecularSystem.
      wavefunction: object with log_abs_batch(positions) -> (W,) and
        gradient_and_laplacian_batch(positions) -> ((W, N, 3), (W,)).
      positions: (W, N, 3).

    Returns:
      (W,) local energies.

    Raises:
      NodeProximity: some log-amplitude is below -700.
    """
    positions = np.asarray(positions, dtype=np.float64)
    log_abs = np.asarray(wavefunction.log_abs_batch(positions), dtype=np.float64)
    if np.any(~np.isfinite(log_abs)) or np.any(log_abs < LOG_ABS_UNDERFLOW):
        raise NodeProximity("log-amplitude underflow; derivatives unreliable near a node")
    grad, lap = wavefunction.gradient_and_laplacian_batch(positions)
    kinetic = -0.5 * (lap + np.sum(grad * grad, axis=(1, 2)))
    return kinetic + potential_energy_batch(system, positions, include_nuclear_repulsion)


def local_energy(system, wavefunction, config, include_nuclear_repulsion=True):
    """Local energy of a single configuration."""
    return float(
        local_energy_batch(
            system, wavefunction, config.positions[None], include_nuclear_repulsion
        )[0]
    )


_PRESET_TABLE = {
    "h": ((1,), [(0.0, 0.0, 0.0)], 1, 0),
    "he": ((2,), [(0.0, 0.0, 0.0)], 1, 1),
    "be": ((4,), [(0.0, 0.0, 0.0)], 2, 2),
    "o": ((8,), [(0.0, 0.0, 0.0)], 5, 3),
    "ne": ((10,), [(0.0, 0.0, 0.0)], 5, 5),
    "lih": ((3, 1), [(0.0, 0.0, 0.0), (0.0, 0.0, 3.015)], 2, 2),
    "li2": ((3, 3), [(0.0, 0.0, 0.0), (0.0, 0.0, 5.051)], 3, 3),
}


def preset_names():
    return tuple(_PRESET_TABLE)


def preset_system(name):
    """Named neutral systems with standard geometries (bond lengths in Bohr).

    Open-shell atoms use maximum-multiplicity ground-state spin counts.
    """
    key = name.strip().lower()
    if key not in _PRESET_TABLE:
        raise KeyError(f"unknown preset {name!r}; choose from {', '.join(_PRESET_TABLE)}")
    charges, sites, n_up, n_down = _PRESET_TABLE[key]
    return MolecularSystem(
        nuclear_charges=charges,
        nuclear_positions=np.asarray(sites, dtype=np.float64),
        n_up=n_up,
        n_down=n_down,
    )

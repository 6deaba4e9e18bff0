"""Pooled-backflow determinant ansatz with a pair-cusp Jastrow factor.

The trial amplitude is det(M) * exp(gamma). Row i of M belongs to electron
i; column k mixes pooled many-body features with its own coefficient
vector. A feature is a one-body Slater orbital evaluated at the
highlighted electron times a product of orbital sums over the remaining
electrons, which keeps every feature (hence the determinant's
antisymmetry) intact under permutations of the non-highlighted electrons.
Parameters enter only through the linear mixing, so the log-derivative
with respect to them is an inverse-matrix contraction.
"""

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import NodeProximity
from .system import LOG_ABS_UNDERFLOW, SPIN_DOWN, SPIN_UP

SPIN_GATES = ("up", "down", "either")
_SPIN_ORDER = {"up": 0, "down": 1, "either": 2}

# real solid harmonics of degree one, conventional order m = -1, 0, 1
_M_TO_AXIS = {-1: 1, 0: 2, 1: 0}  # y, z, x

JASTROW_OPPOSITE_SPIN = 0.5
JASTROW_SAME_SPIN = 0.25

DEFAULT_FD_STEP = 1e-4


@dataclass(frozen=True)
class SlaterOrbital:
    """One-body basis function r^n exp(-zeta r) * solid harmonic * spin gate."""

    center: int
    n: int
    ell: int
    m: int
    zeta: float
    spin: str = "either"

    def __post_init__(self):
        if self.center < 0:
            raise ValueError("center must index a nucleus")
        if self.n < 0:
            raise ValueError("radial power must be nonnegative")
        if self.ell not in (0, 1):
            raise ValueError("only s and p orbitals are supported (ell <= 1)")
        if abs(self.m) > self.ell:
            raise ValueError(f"order {self.m} invalid for degree {self.ell}")
        if not (self.zeta > 0.0 and np.isfinite(self.zeta)):
            raise ValueError("zeta must be positive and finite")
        if self.spin not in SPIN_GATES:
            raise ValueError(f"spin gate must be one of {SPIN_GATES}")

    @property
    def degree(self):
        """Polynomial degree n + ell, used by the feature-degree cap."""
        return self.n + self.ell

    def sort_key(self):
        return (self.n, self.ell, self.m, _SPIN_ORDER[self.spin], self.zeta, self.center)

    def admits(self, spin_label):
        if self.spin == "either":
            return True
        return (self.spin == "up") == (spin_label == SPIN_UP)


@dataclass(frozen=True)
class OneBodyBasisSpec:
    """Canonically ordered collection of one-body orbitals.

    The constructor sorts by (n, ell, m, spin, zeta, center) so any row
    order in a config file produces the same feature indexing.
    """

    orbitals: tuple

    def __post_init__(self):
        orbs = tuple(sorted(self.orbitals, key=SlaterOrbital.sort_key))
        if not orbs:
            raise ValueError("basis must contain at least one orbital")
        object.__setattr__(self, "orbitals", orbs)

    def __len__(self):
        return len(self.orbitals)


def default_basis(system, radial_powers=(0, 1), ell_max=1):
    """Per-center Slater set: zeta in dedup{Z, Z/2, 1}, s powers, p shell.

    Spin-gated copies are emitted only for spin channels that hold
    electrons, so single-channel systems do not carry dead columns.
    """
    orbitals = []
    gates = []
    if system.n_up:
        gates.append("up")
    if system.n_down:
        gates.append("down")
    for center, z in enumerate(system.nuclear_charges):
        zetas = sorted({float(z), float(z) / 2.0, 1.0})
        for zeta in zetas:
            for gate in gates:
                for n in radial_powers:
                    orbitals.append(SlaterOrbital(center, n, 0, 0, zeta, gate))
                if ell_max >= 1:
                    for m in (-1, 0, 1):
                        orbitals.append(SlaterOrbital(center, 0, 1, m, zeta, gate))
    return OneBodyBasisSpec(orbitals=tuple(orbitals))


def build_tuple_index(basis, correlation_order, degree_cap=None):
    """Feature index: (head orbital, sorted tail multiset) pairs.

    Tail lengths run from 0 to correlation_order - 1; tails are
    nondecreasing index tuples so each multiset appears exactly once. The
    optional cap bounds the summed polynomial degree of the whole tuple.
    Ordering is deterministic: head-major, then tail length, then
    lexicographic tail.
    """
    if correlation_order < 1:
        raise ValueError("correlation order must be at least 1")
    n_orb = len(basis)
    degrees = [orb.degree for orb in basis.orbitals]
    index = []
    for head in range(n_orb):
        for tail_len in range(correlation_order):
            for tail in itertools.combinations_with_replacement(range(n_orb), tail_len):
                if degree_cap is not None:
                    total = degrees[head] + sum(degrees[t] for t in tail)
                    if total > degree_cap:
                        continue
                index.append((head, tail))
    if not index:
        raise ValueError("degree cap removed every feature")
    return tuple(index)


def orbital_values(basis, nuclear_positions, positions, spins):
    """Evaluate every orbital at every electron.

    Args:
      basis: OneBodyBasisSpec.
      nuclear_positions: (n_nuclei, 3).
      positions: (W, N, 3).
      spins: (N,) labels gating the per-electron value.

    Returns:
      (W, N, n_orb) array.
    """
    positions = np.asarray(positions, dtype=np.float64)
    w, n, _ = positions.shape
    values = np.empty((w, n, len(basis)))

    centers = {orb.center for orb in basis.orbitals}
    center_delta = {}
    center_radius = {}
    for c in centers:
        delta = positions - nuclear_positions[c][None, None, :]
        center_delta[c] = delta
        center_radius[c] = np.sqrt(np.sum(delta * delta, axis=-1))

    up_mask = (np.asarray(spins) == SPIN_UP).astype(np.float64)
    gate_vec = {"up": up_mask, "down": 1.0 - up_mask, "either": np.ones(n)}

    for idx, orb in enumerate(basis.orbitals):
        r = center_radius[orb.center]
        val = np.exp(-orb.zeta * r)
        if orb.n:
            val = val * r**orb.n
        if orb.ell == 1:
            val = val * center_delta[orb.center][..., _M_TO_AXIS[orb.m]]
        values[:, :, idx] = val * gate_vec[orb.spin][None, :]
    return values


def jastrow_log_batch(positions, spins):
    """Pair-cusp log factor sum_{i<j} -c_ij / (1 + r_ij).

    c_ij is 1/2 for opposite spins and 1/4 for same spins, the slopes that
    cancel the electron-electron Coulomb singularities of the local
    energy at coalescence.
    """
    positions = np.asarray(positions, dtype=np.float64)
    w, n, _ = positions.shape
    iu, ju = np.triu_indices(n, k=1)
    if not iu.size:
        return np.zeros(w)
    spins = np.asarray(spins)
    coeff = np.where(spins[iu] == spins[ju], JASTROW_SAME_SPIN, JASTROW_OPPOSITE_SPIN)
    diff = positions[:, iu, :] - positions[:, ju, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    return -np.sum(coeff[None, :] / (1.0 + dist), axis=1)


@dataclass
class AceWavefunction:
    """Determinant over pooled features times a Jastrow factor.

    theta is the flat parameter vector, laid out column-major over the
    determinant: theta[k * n_features + t] weights feature t in column k.
    """

    system: object
    basis: OneBodyBasisSpec
    correlation_order: int = 2
    degree_cap: int = None
    jastrow_enabled: bool = True
    fd_step: float = DEFAULT_FD_STEP
    theta: np.ndarray = None
    feature_index: tuple = field(init=False, repr=False)

    def __post_init__(self):
        if not (self.fd_step > 0.0):
            raise ValueError("finite-difference step must be positive")
        self.feature_index = build_tuple_index(
            self.basis, self.correlation_order, self.degree_cap
        )
        self._heads = np.array([head for head, _ in self.feature_index], dtype=np.intp)
        self._tails_by_len = {}
        for length in range(1, self.correlation_order):
            slots = [i for i, (_, tail) in enumerate(self.feature_index) if len(tail) == length]
            if slots:
                self._tails_by_len[length] = (
                    np.array(slots, dtype=np.intp),
                    np.array([self.feature_index[i][1] for i in slots], dtype=np.intp),
                )
        if self.theta is None:
            self.theta = initial_theta(self.system, self.basis, self.feature_index)
        self.theta = np.ascontiguousarray(self.theta, dtype=np.float64)
        if self.theta.shape != (self.n_params,):
            raise ValueError(
                f"theta must have length {self.n_params}, got {self.theta.shape}"
            )

    @property
    def n_features(self):
        return len(self.feature_index)

    @property
    def n_params(self):
        return self.system.n_electrons * self.n_features

    @property
    def coefficients(self):
        """(N, n_features) view of theta; row k is determinant column k."""
        return self.theta.reshape(self.system.n_electrons, self.n_features)

    def set_theta(self, theta):
        theta = np.ascontiguousarray(theta, dtype=np.float64)
        if theta.shape != (self.n_params,):
            raise ValueError(f"theta must have length {self.n_params}")
        self.theta = theta

    # feature pipeline

    def pooled_features_batch(self, positions):
        """(W, N, n_features) tensor of pooled products, electron i highlighted."""
        phi = orbital_values(
            self.basis, self.system.nuclear_positions, positions, self.system.spins
        )
        pooled = np.sum(phi, axis=1, keepdims=True) - phi  # sums over j != i
        feats = phi[:, :, self._heads].copy()
        for _, (slots, tails) in self._tails_by_len.items():
            prod = pooled[:, :, tails[:, 0]]
            for pos in range(1, tails.shape[1]):
                prod = prod * pooled[:, :, tails[:, pos]]
            feats[:, :, slots] *= prod
        return feats

    def pooled_basis(self, positions, electron):
        """Feature vector of one configuration with `electron` highlighted."""
        positions = np.asarray(positions, dtype=np.float64)
        return self.pooled_features_batch(positions[None])[0, electron, :]

    def orbital_matrix_batch(self, positions):
        feats = self.pooled_features_batch(positions)
        return np.einsum("wit,kt->wik", feats, self.coefficients), feats

    # amplitudes

    def log_abs_sign_batch(self, positions):
        """Batched (log|psi|, sign). A vanishing determinant returns the
        sentinel (-inf, 0) rather than raising."""
        positions = np.asarray(positions, dtype=np.float64)
        matrix, _ = self.orbital_matrix_batch(positions)
        sign, logdet = np.linalg.slogdet(matrix)
        log_abs = logdet
        if self.jastrow_enabled:
            log_abs = log_abs + jastrow_log_batch(positions, self.system.spins)
        return log_abs, sign

    def log_abs_batch(self, positions):
        return self.log_abs_sign_batch(positions)[0]

    def log_psi(self, positions):
        """(log|psi|, sign) of a single (N, 3) configuration."""
        log_abs, sign = self.log_abs_sign_batch(np.asarray(positions)[None])
        return float(log_abs[0]), float(sign[0])

    # derivatives

    def grad_theta_batch(self, positions):
        """d log|psi| / d theta, shape (W, n_params).

        The Jastrow carries no parameters, so only the determinant
        contributes: the derivative for column k, feature t is
        sum_i inv(M)[k, i] * features[i, t].
        """
        positions = np.asarray(positions, dtype=np.float64)
        matrix, feats = self.orbital_matrix_batch(positions)
        sign, logdet = np.linalg.slogdet(matrix)
        if np.any(sign == 0.0) or np.any(logdet < LOG_ABS_UNDERFLOW):
            raise NodeProximity("parameter gradient requested on top of a node")
        inv = np.linalg.inv(matrix)
        grad = np.einsum("wki,wit->wkt", inv, feats)
        return grad.reshape(positions.shape[0], self.n_params)

    def grad_theta(self, positions):
        return self.grad_theta_batch(np.asarray(positions)[None])[0]

    def gradient_and_laplacian_batch(self, positions):
        """Electron-coordinate gradient and summed Laplacian of log|psi|."""
        return fd_gradient_and_laplacian(self.log_abs_batch, positions, self.fd_step)

    def gradient_and_laplacian(self, positions):
        positions = np.asarray(positions, dtype=np.float64)
        log_abs = self.log_abs_batch(positions[None])
        if np.any(~np.isfinite(log_abs)) or np.any(log_abs < LOG_ABS_UNDERFLOW):
            raise NodeProximity("coordinate derivatives requested near a node")
        grad, lap = self.gradient_and_laplacian_batch(positions[None])
        return grad[0], float(lap[0])


def initial_theta(system, basis, feature_index, noise_scale=1e-2, seed=0):
    """Near-Slater start: unit weight on one single-orbital feature per column.

    Column k takes the next unused orbital whose spin gate admits electron
    k (electrons ordered up-first), which keeps the determinant
    block-diagonal by spin and nonsingular at generic configurations.
    Gaussian noise of scale noise_scale covers everything else; zero noise
    gives the bare product state exactly.
    """
    n_electrons = system.n_electrons
    n_features = len(feature_index)
    rng = np.random.default_rng(seed)
    theta = noise_scale * rng.standard_normal((n_electrons, n_features))
    if noise_scale == 0.0:
        theta = np.zeros((n_electrons, n_features))

    head_slot = {}
    for slot, (head, tail) in enumerate(feature_index):
        if not tail:
            head_slot[head] = slot

    spins = system.spins
    used = set()
    for k in range(n_electrons):
        choice = None
        for orb_idx, orb in enumerate(basis.orbitals):
            if orb_idx in used or orb_idx not in head_slot:
                continue
            if orb.admits(spins[k]):
                choice = orb_idx
                break
        if choice is None:
            raise ValueError(
                f"basis has no unused orbital admitting electron {k}; add orbitals"
            )
        used.add(choice)
        theta[k, head_slot[choice]] += 1.0
    return theta.ravel()


def fd_gradient_and_laplacian(log_abs_fn, positions, step):
    """Central-difference gradient and Laplacian of a batched log-amplitude.

    All 6N + 1 stencil evaluations are stacked into one call so the
    underlying pipeline runs batched.

    Args:
      log_abs_fn: callable (B, N, 3) -> (B,).
      positions: (W, N, 3).
      step: stencil half-width in Bohr.

    Returns:
      (grad (W, N, 3), laplacian_sum (W,)).
    """
    positions = np.asarray(positions, dtype=np.float64)
    w, n, _ = positions.shape
    n_shifts = 6 * n + 1
    stacked = np.broadcast_to(positions, (n_shifts, w, n, 3)).copy()
    slot = 1
    for i in range(n):
        for axis in range(3):
            stacked[slot, :, i, axis] += step
            stacked[slot + 1, :, i, axis] -= step
            slot += 2
    values = np.asarray(log_abs_fn(stacked.reshape(-1, n, 3))).reshape(n_shifts, w)

    base = values[0]
    grad = np.empty((w, n, 3))
    lap = np.zeros(w)
    slot = 1
    for i in range(n):
        for axis in range(3):
            plus = values[slot]
            minus = values[slot + 1]
            grad[:, i, axis] = (plus - minus) / (2.0 * step)
            lap += (plus - 2.0 * base + minus) / (step * step)
            slot += 2
    return grad, lap

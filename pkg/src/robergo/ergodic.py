"""Spectral ergodic machinery: cosine basis, coefficients, and the metric.

The ergodic metric compares the time-averaged statistics of a trajectory
against a target information density through their coefficients in an
orthonormal cosine basis on a box ``M = [0, L_0] x ... x [0, L_{v-1}]``:

    E = sum_k  Lam_k * (c_k - phi_k)^2,      Lam_k = (1 + |k|^2)^(-s),

with ``s = (v + 1) / 2``.  The same quantity can be tracked differentially
through the augmented state ``z_k(t) = integral (F_k(m(tau)) - phi_k) dtau``,
which satisfies ``z_k(t_f) = (t_f - t_0) * (c_k - phi_k)`` and therefore

    E = sum_k  Lam_k * (z_k(t_f) / (t_f - t_0))^2.

Both routes agree exactly (not just in the limit) when they share the same
left-Riemann time discretization; the augmented route is what turns the
metric into a terminal-state cost usable by optimal control.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

logger = logging.getLogger(__name__)

# Composite Gauss-Legendre rule: 8 panels x 8 nodes = 64 nodes per axis.
_QUAD_PANELS = 8
_QUAD_NODES_PER_PANEL = 8


def _gauss_legendre_nodes(lo: float, hi: float) -> tuple[NDArray, NDArray]:
    """Composite Gauss-Legendre nodes/weights on [lo, hi]."""
    x, w = np.polynomial.legendre.leggauss(_QUAD_NODES_PER_PANEL)
    edges = np.linspace(lo, hi, _QUAD_PANELS + 1)
    half = np.diff(edges) / 2.0
    mid = (edges[:-1] + edges[1:]) / 2.0
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


@dataclass(frozen=True)
class ExplorationSpace:
    """The rectangular search domain ``[0, L_0] x ... x [0, L_{v-1}]``."""

    lengths: tuple[float, ...]

    def __post_init__(self):
        if len(self.lengths) < 1:
            raise ValueError("exploration space needs at least one axis")
        if any(L <= 0 for L in self.lengths):
            raise ValueError(f"axis lengths must be positive, got {self.lengths}")
        object.__setattr__(self, "lengths", tuple(float(L) for L in self.lengths))

    @property
    def dim(self) -> int:
        return len(self.lengths)

    def clip(self, m: NDArray) -> NDArray:
        """Clamp points (shape ``(..., v)``) to the box."""
        lengths = np.asarray(self.lengths)
        return np.clip(m, 0.0, lengths)


@dataclass(frozen=True)
class BasisSet:
    """Orthonormal cosine basis on an exploration space.

    ``modes`` is the full lexicographic grid ``{0..N-1}^v`` (k = 0 included,
    so the z_0 = 0 invariant stays observable downstream).  ``normalizers``
    makes each F_k unit-norm on M; ``weights`` are the Sobolev-type Lam_k.
    """

    space: ExplorationSpace
    modes_per_axis: int
    modes: NDArray = field(repr=False)          # (K, v) int
    normalizers: NDArray = field(repr=False)    # (K,)
    weights: NDArray = field(repr=False)        # (K,)

    @property
    def num_modes(self) -> int:
        return self.modes.shape[0]

    def eval(self, m: NDArray) -> NDArray:
        """Evaluate all F_k at points ``m`` of shape ``(..., v)`` -> ``(..., K)``.

        Points are clamped to the box first; a warning is logged when any
        point lies outside.
        """
        m = np.asarray(m, dtype=float)
        if m.shape[-1] != self.space.dim:
            raise ValueError(
                f"points have dim {m.shape[-1]}, space has dim {self.space.dim}"
            )
        lengths = np.asarray(self.space.lengths)
        if np.any(m < 0.0) or np.any(m > lengths):
            # routine under a soft barrier: the agent may overshoot the box
            logger.debug("basis evaluated outside the exploration box; clamping")
        mc = self.space.clip(m)
        return _cos_eval(mc, self.modes, self.normalizers, lengths)

    def eval_grad(self, m: NDArray) -> NDArray:
        """Gradients dF_k/dm at ``m``: shape ``(..., K, v)``.

        Outside the box the (clamped) basis is constant, so the gradient is
        zero there; on the boundary the interior one-sided derivative is kept.
        """
        m = np.asarray(m, dtype=float)
        lengths = np.asarray(self.space.lengths)
        inside = (m >= 0.0) & (m <= lengths)          # (..., v)
        mc = self.space.clip(m)
        ang = np.pi * self.modes / lengths            # (K, v)
        phase = mc[..., None, :] * ang                # (..., K, v)
        cosp = np.cos(phase)
        # d/dm_i of prod_j cos(phase_j) = -ang_i sin(phase_i) prod_{j!=i} cos
        grad = np.empty(phase.shape)
        for i in range(self.space.dim):
            others = np.prod(np.delete(cosp, i, axis=-1), axis=-1)
            grad[..., i] = -ang[:, i] * np.sin(phase[..., i]) * others
        grad = grad / self.normalizers[..., :, None]
        return grad * inside[..., None, :]


def _cos_eval(m: NDArray, modes: NDArray, normalizers: NDArray, lengths: NDArray) -> NDArray:
    phase = m[..., None, :] * (np.pi * modes / lengths)
    return np.prod(np.cos(phase), axis=-1) / normalizers


def build_basis(space: ExplorationSpace, modes_per_axis: int) -> BasisSet:
    """Construct the cosine basis with quadrature-derived normalizers.

    Normalizers enforce ``integral_M F_k^2 dm = 1`` (computed per axis with
    the fixed composite Gauss-Legendre rule, then multiplied across axes).
    Weights follow ``Lam_k = (1 + |k|_2^2)^(-s)`` with ``s = (v + 1) / 2``.
    """
    if modes_per_axis < 1:
        raise ValueError(f"modes_per_axis must be >= 1, got {modes_per_axis}")
    v = space.dim
    axes = [np.arange(modes_per_axis)] * v
    grids = np.meshgrid(*axes, indexing="ij")
    modes = np.stack([g.ravel() for g in grids], axis=-1)  # lexicographic

    # h_k^2 = prod_i integral_0^{L_i} cos^2(k_i pi m / L_i) dm
    per_axis = np.empty((v, modes_per_axis))
    for i, L in enumerate(space.lengths):
        nodes, w = _gauss_legendre_nodes(0.0, L)
        for k in range(modes_per_axis):
            per_axis[i, k] = np.sum(w * np.cos(k * np.pi * nodes / L) ** 2)
    h_sq = np.prod(per_axis[np.arange(v)[:, None], modes.T], axis=0)
    normalizers = np.sqrt(h_sq)

    s = (v + 1) / 2.0
    weights = (1.0 + np.sum(modes.astype(float) ** 2, axis=1)) ** (-s)
    return BasisSet(space, modes_per_axis, modes, normalizers, weights)


@dataclass(frozen=True)
class InfoDistribution:
    """Target information density phi on the exploration box.

    ``kind`` is ``"uniform"`` or ``"gaussian-mixture"``.  Mixture components
    are isotropic Gaussians (mean per axis, shared std), truncated to the box
    and renormalized numerically: ``normalization`` holds the quadrature mass
    of the raw mixture so that ``pdf`` integrates to one over M.
    """

    space: ExplorationSpace
    kind: str
    components: tuple[tuple[tuple[float, ...], float, float], ...] = ()
    normalization: float = field(default=0.0)

    def __post_init__(self):
        if self.kind not in ("uniform", "gaussian-mixture"):
            raise ValueError(f"unknown distribution kind {self.kind!r}")
        comps = tuple(
            (tuple(float(x) for x in mean), float(std), float(weight))
            for mean, std, weight in self.components
        )
        object.__setattr__(self, "components", comps)
        if self.kind == "gaussian-mixture":
            if not self.components:
                raise ValueError("gaussian-mixture needs at least one component")
            for mean, std, weight in self.components:
                if len(mean) != self.space.dim:
                    raise ValueError("component mean has wrong dimension")
                if std <= 0 or weight <= 0:
                    raise ValueError("component std and weight must be positive")
            if self.normalization <= 0.0:
                object.__setattr__(self, "normalization", self._raw_mass())

    def _raw_mass(self) -> float:
        """Quadrature mass of the untruncated mixture restricted to the box."""
        total = 0.0
        for mean, std, weight in self.components:
            axis_mass = 1.0
            for i, L in enumerate(self.space.lengths):
                nodes, w = _gauss_legendre_nodes(0.0, L)
                axis_mass *= np.sum(w * _gauss_pdf(nodes, mean[i], std))
            total += weight * axis_mass
        return float(total)

    def pdf(self, m: NDArray) -> NDArray:
        """Density values at points ``m`` of shape ``(..., v)``."""
        m = np.asarray(m, dtype=float)
        if self.kind == "uniform":
            vol = float(np.prod(self.space.lengths))
            return np.full(m.shape[:-1], 1.0 / vol)
        out = np.zeros(m.shape[:-1])
        for mean, std, weight in self.components:
            comp = np.ones(m.shape[:-1])
            for i in range(self.space.dim):
                comp = comp * _gauss_pdf(m[..., i], mean[i], std)
            out += weight * comp
        return out / self.normalization


def _gauss_pdf(x: NDArray, mean: float, std: float) -> NDArray:
    return np.exp(-0.5 * ((x - mean) / std) ** 2) / (std * np.sqrt(2.0 * np.pi))


def info_coeffs(basis: BasisSet, dist: InfoDistribution) -> NDArray:
    """Fourier coefficients phi_k of the information density.

    Uses the fixed composite Gauss-Legendre rule; the integrand factorizes
    per axis for both supported kinds, so the quadrature is a product of 1-D
    rules.  Raises if the density's self-check mass drifts from one.
    """
    space = basis.space
    v = space.dim
    K = basis.num_modes
    nodes_w = [_gauss_legendre_nodes(0.0, L) for L in space.lengths]

    if dist.kind == "uniform":
        vol = float(np.prod(space.lengths))
        per_axis = np.empty((v, basis.modes_per_axis))
        for i, (nodes, w) in enumerate(nodes_w):
            for k in range(basis.modes_per_axis):
                per_axis[i, k] = np.sum(
                    w * np.cos(k * np.pi * nodes / space.lengths[i])
                )
        raw = np.prod(per_axis[np.arange(v)[:, None], basis.modes.T], axis=0) / vol
        mass = 1.0
    else:
        raw = np.zeros(K)
        mass_total = 0.0
        for mean, std, weight in dist.components:
            axis_ints = np.empty((v, basis.modes_per_axis))
            axis_mass = np.empty(v)
            for i, (nodes, w) in enumerate(nodes_w):
                p = _gauss_pdf(nodes, mean[i], std)
                axis_mass[i] = np.sum(w * p)
                for k in range(basis.modes_per_axis):
                    axis_ints[i, k] = np.sum(
                        w * np.cos(k * np.pi * nodes / space.lengths[i]) * p
                    )
            raw += weight * np.prod(
                axis_ints[np.arange(v)[:, None], basis.modes.T], axis=0
            )
            mass_total += weight * np.prod(axis_mass)
        raw /= dist.normalization
        mass = mass_total / dist.normalization

    if abs(mass - 1.0) > 1e-4:
        raise ValueError(
            f"density quadrature self-check failed: mass {mass:.6g} != 1"
        )
    return raw / basis.normalizers


def traj_coeffs(basis: BasisSet, times: NDArray, points: NDArray) -> NDArray:
    """Trajectory coefficients ``c_k`` by left-Riemann time averaging.

    ``times`` must be uniformly spaced; ``points`` has shape ``(n, v)`` with
    the same length.  The final sample closes the interval and does not enter
    the sum, matching the explicit-Euler rollout discretization so that the
    spectral and augmented metric routes agree exactly.
    """
    times = np.asarray(times, dtype=float)
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    if times.ndim != 1 or len(times) != len(points):
        raise ValueError("times and points must have equal leading length")
    if len(times) < 2:
        raise ValueError("trajectory needs at least 2 samples")
    steps = np.diff(times)
    dt = steps[0]
    if dt <= 0 or not np.allclose(steps, dt, rtol=0.0, atol=1e-12 * max(1.0, abs(dt))):
        raise ValueError("trajectory timestamps must be uniformly increasing")
    duration = times[-1] - times[0]
    f_vals = basis.eval(points[:-1])       # (n-1, K)
    return f_vals.sum(axis=0) * dt / duration


def ergodic_metric_spectral(c: NDArray, phi_k: NDArray, basis: BasisSet) -> float:
    """``E = sum_k Lam_k (c_k - phi_k)^2``."""
    c = np.asarray(c, dtype=float)
    phi_k = np.asarray(phi_k, dtype=float)
    if c.shape != (basis.num_modes,) or phi_k.shape != (basis.num_modes,):
        raise ValueError("coefficient vectors must match the basis mode count")
    d = c - phi_k
    return float(np.sum(basis.weights * d * d))


def aug_derivative(basis: BasisSet, phi_k: NDArray, m: NDArray) -> NDArray:
    """``dz_k/dt = F_k(m) - phi_k`` for every mode, at map points ``m``."""
    return basis.eval(m) - phi_k


def ergodic_metric_from_aug(z: NDArray, duration: float, basis: BasisSet) -> float:
    """Ergodic metric from the augmented state at the end of a trajectory.

    Since ``z_k = duration * (c_k - phi_k)``, the metric is
    ``sum_k Lam_k (z_k / duration)^2`` — identical to the spectral form on a
    shared discretization.
    """
    if duration <= 0:
        raise ValueError(f"duration must be positive, got {duration}")
    z = np.asarray(z, dtype=float)
    if z.shape != (basis.num_modes,):
        raise ValueError("augmented state must match the basis mode count")
    r = z / duration
    return float(np.sum(basis.weights * r * r))

"""Synthetic scenes under the linear subspace model."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import jn_zeros, jv

from .calibrate import NoiseModel, sample_noise_field
from .core import BasisSet, GridField, gram_schmidt

__all__ = [
    "fourier_bessel_basis",
    "ObjectSpec",
    "Scene",
    "center_range",
    "min_separation",
    "place_objects",
    "sample_coefficients",
    "render_scene",
    "sigma_for_snr",
    "snr_of",
    "make_scene",
    "PlacementError",
]


class PlacementError(ValueError):
    pass


def _fb_modes(B: int) -> list[tuple[float, int]]:
    """(Bessel zero, angular order) pairs below the sampling limit, ascending."""
    R = B / 2.0
    limit = math.pi * R
    modes = []
    n = 0
    while True:
        zeros = jn_zeros(n, max(1, int(limit / math.pi) + 2))
        zeros = zeros[zeros <= limit]
        if zeros.size == 0:
            break
        modes.extend((float(z), n) for z in zeros)
        n += 1
    modes.sort()
    return modes


def fourier_bessel_basis(B: int, M: int, tol: float = 1e-8) -> BasisSet:
    """Real Fourier-Bessel functions on the disk inscribed in a ``B x B`` grid.

    Modes ``J_n(z_nk r / R) cos(n theta)`` and ``... sin(n theta)`` are taken in
    ascending order of the Bessel zero ``z_nk`` and orthonormalized on the
    pixel grid.
    """
    B, M = int(B), int(M)
    if M < 1:
        raise ValueError("M must be at least 1")
    if B < 4:
        raise ValueError("B must be at least 4")
    c = B // 2
    x = np.arange(B) - c
    X, Y = np.meshgrid(x, x, indexing="ij")
    R = B / 2.0
    rad = np.hypot(X, Y)
    theta = np.arctan2(Y, X)
    inside = rad < R

    funcs = []
    for z, n in _fb_modes(B):
        radial = np.where(inside, jv(n, z * rad / R), 0.0)
        if n == 0:
            funcs.append(radial)
        else:
            funcs.append(radial * np.cos(n * theta))
            funcs.append(radial * np.sin(n * theta))
        if len(funcs) >= M:
            break
    if len(funcs) < M:
        raise ValueError(f"only {len(funcs)} Fourier-Bessel modes fit a support of {B} pixels")
    basis = gram_schmidt(funcs[:M], tol=tol)
    if basis.M < M:
        raise ValueError(f"only {basis.M} independent modes at support {B}")
    return basis


@dataclass(frozen=True)
class ObjectSpec:
    center: tuple[int, ...]
    coefficients: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(int(c) for c in self.center))
        a = np.asarray(self.coefficients, dtype=np.float64)
        if not np.linalg.norm(a) > 0:
            raise ValueError("object coefficients must be nonzero")
        object.__setattr__(self, "coefficients", a)


def center_range(L: int, B: int) -> tuple[int, int]:
    """Inclusive range of centers whose support stays inside ``[0, L)``."""
    c = B // 2
    return c, L - B + c


def min_separation(B: int, delta: float) -> int:
    """Smallest integer inf-norm distance strictly above ``B + 3 delta / 2``."""
    return int(math.floor(B + 1.5 * delta)) + 1


@dataclass
class Scene:
    domain_side: int
    support_side: int
    objects: list[ObjectSpec]
    delta: float
    noise: NoiseModel = field(default_factory=NoiseModel)
    ndim: int = 2
    seed: int = 0
    density: float | None = None

    @property
    def N(self) -> int:
        return len(self.objects)

    @property
    def centers(self) -> np.ndarray:
        if not self.objects:
            return np.zeros((0, self.ndim), dtype=np.int64)
        return np.array([o.center for o in self.objects], dtype=np.int64)

    @property
    def coefficients(self) -> np.ndarray:
        return np.array([o.coefficients for o in self.objects])

    def violations(self) -> list[str]:
        """Human-readable list of broken scene invariants (empty when valid)."""
        out = []
        L, B = self.domain_side, self.support_side
        lo, hi = center_range(L, B)
        C = self.centers
        if C.size and (C.min() < lo or C.max() > hi):
            out.append("center too close to the boundary")
        sep = B + 1.5 * self.delta
        for i in range(len(C)):
            dist = np.max(np.abs(C[i + 1 :] - C[i]), axis=1) if i + 1 < len(C) else np.zeros(0)
            if np.any(dist <= sep):
                out.append(f"objects closer than {sep} in inf-norm")
                break
        if self.density is not None and self.N * B**self.ndim > self.density * L**self.ndim + 1e-9:
            out.append("object density above target")
        return out

    def validate(self) -> None:
        v = self.violations()
        if v:
            raise ValueError("invalid scene: " + "; ".join(v))

    def to_dict(self) -> dict:
        return {
            "L": self.domain_side,
            "B": self.support_side,
            "delta": self.delta,
            "N": self.N,
            "ndim": self.ndim,
            "sigma": self.noise.sigma,
            "noise": self.noise.to_dict(),
            "seed": self.seed,
            "density": self.density,
            "centers": self.centers.tolist(),
            "coefficients": self.coefficients.tolist(),
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "Scene":
        info = json.loads(Path(path).read_text())
        objects = [ObjectSpec(tuple(c), np.asarray(a)) for c, a in zip(info["centers"], info["coefficients"])]
        return cls(
            domain_side=int(info["L"]),
            support_side=int(info["B"]),
            objects=objects,
            delta=float(info["delta"]),
            noise=NoiseModel(**info["noise"]),
            ndim=int(info.get("ndim", 2)),
            seed=int(info.get("seed", 0)),
            density=info.get("density"),
        )


def place_objects(L: int, B: int, delta: float, density: float, rng, d: int = 2) -> np.ndarray:
    """Random centers obeying the separation and boundary constraints.

    ``N = floor(density * L**d / B**d)`` centers go into distinct nodes of a
    randomly offset lattice with ``k`` nodes per axis (``k**d >= N``), spaced as
    widely as the domain allows. Each center is jittered uniformly inside the
    part of its cell that keeps every pair of neighbors far enough apart.
    """
    if not 0.0 < density < 1.0:
        raise ValueError("density must lie in (0, 1)")
    rng = np.random.default_rng(rng)
    N = int(math.floor(density * L**d / B**d + 1e-9))
    if N == 0:
        return np.zeros((0, d), dtype=np.int64)
    lo, hi = center_range(L, B)
    span = hi - lo + 1
    if span < 1:
        raise PlacementError("placement infeasible: domain smaller than the support")
    sep = min_separation(B, delta)
    k = 1
    while k**d < N:
        k += 1
    if k == 1:
        pitch, window = 0, span
    else:
        pitch = (span - 1) // (k - 1)
        if pitch < sep:
            raise PlacementError(
                f"placement infeasible: {N} objects need spacing {sep} but only {pitch} fits"
            )
        window = min(pitch - sep + 1, span - (k - 1) * pitch)
    offset = rng.integers(0, span - (k - 1) * pitch - window + 1, size=d)
    cells = rng.choice(k**d, size=N, replace=False)
    grid = np.stack(np.unravel_index(cells, (k,) * d), axis=1)
    jitter = rng.integers(0, window, size=(N, d))
    return lo + offset + grid * pitch + jitter


def sample_coefficients(M: int, rng) -> np.ndarray:
    """Uniform draws on ``[-1, 1]^M`` rescaled to unit norm."""
    rng = np.random.default_rng(rng)
    while True:
        a = rng.uniform(-1.0, 1.0, size=int(M))
        n = np.linalg.norm(a)
        if n > 0:
            return a / n


def render_scene(scene: Scene, basis: BasisSet) -> GridField:
    """Sum of shifted, coefficient-weighted basis functions on the ``L**d`` grid."""
    B = basis.support
    if B != scene.support_side:
        raise ValueError(f"basis support {B} does not match scene support {scene.support_side}")
    if basis.ndim != scene.ndim:
        raise ValueError("basis and scene dimensions differ")
    L = scene.domain_side
    x = np.zeros((L,) * scene.ndim)
    c = basis.center
    for obj in scene.objects:
        if len(obj.coefficients) != basis.M:
            raise ValueError("coefficient count does not match basis size")
        start = [t - c for t in obj.center]
        if any(s < 0 or s + B > L for s in start):
            raise ValueError(f"object at {obj.center} does not fit in the domain")
        sl = tuple(slice(s, s + B) for s in start)
        x[sl] += np.tensordot(obj.coefficients, basis.functions, axes=1)
    return GridField(x)


def sigma_for_snr(target_snr: float, a_min_norm: float, B: int, d: int) -> float:
    """Noise level with ``||a_min||**2 / (sigma**2 B**d) = target_snr``."""
    if not target_snr > 0:
        raise ValueError("target SNR must be positive")
    return float(a_min_norm / math.sqrt(target_snr * B**d))


def snr_of(scene: Scene, sigma: float) -> float:
    a_min = min(float(np.linalg.norm(o.coefficients)) for o in scene.objects)
    return a_min**2 / (sigma**2 * scene.support_side**scene.ndim)


def make_scene(
    L: int,
    basis: BasisSet,
    delta: float,
    density: float,
    noise: NoiseModel,
    rng,
) -> Scene:
    rng = np.random.default_rng(rng)
    d = basis.ndim
    centers = place_objects(L, basis.support, delta, density, rng, d)
    objects = [ObjectSpec(tuple(c), sample_coefficients(basis.M, rng)) for c in centers]
    scene = Scene(L, basis.support, objects, float(delta), noise, d, int(noise.seed), density)
    scene.validate()
    return scene


def observe(scene: Scene, basis: BasisSet, stream_index: int = 0) -> tuple[GridField, GridField]:
    """Clean render and noisy observation ``y = x + z``."""
    x = render_scene(scene, basis)
    z = sample_noise_field(scene.noise, x.shape, stream_index)
    return x, GridField(x.data + z.data)

"""Alignment-direction angles on the unit sphere and Monte-Carlo sweeps.

Two angle diagnostics for a triple of unit vectors (an image i and two
texts t_m, t_n):

* theta: angle between the practical alignment direction t_m - t_n and the
  correct direction i - t_n. It vanishes exactly when i coincides with t_m
  (alpha = 0).
* omega: angle between the chosen text's pull t_target - i and the pull
  toward the normalized arc midpoint (t_m + t_n)/|t_m + t_n| - i. It
  vanishes exactly when the two texts coincide (gamma = 0).

The sweeps control one angle on a descending log grid and report the
scheduling-independent Monte-Carlo distribution of theta or omega per grid
point.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import AntipodalTexts, DegenerateDirection, InvalidConfig
from .numerics import Rng

DEGENERACY_EPS = 1e-12
DEFAULT_ANGLE_GRID = (1e0, 1e-1, 1e-2, 1e-3, 1e-4)

LEMMA_PRACTICAL_VS_CORRECT = "lemma1"   # controls alpha, measures theta
LEMMA_SINGLE_TARGET_BIAS = "lemma2"     # controls gamma, measures omega


@dataclass
class TripleConfig:
    """Sampling configuration for (i, t_m, t_n) triples.

    fixed_angles places the triple at exact pairwise angles (alpha, beta,
    gamma), which must satisfy the spherical triangle inequality;
    random_sphere leaves uncontrolled vectors uniform on the sphere.
    """

    dim: int = 16
    alpha: float | None = None
    beta: float | None = None
    gamma: float | None = None
    mode: str = "random_sphere"

    def validate(self) -> None:
        if self.dim < 2:
            raise InvalidConfig("dim must be >= 2")
        if self.mode not in ("fixed_angles", "random_sphere"):
            raise InvalidConfig(f"unknown sampling mode {self.mode!r}")
        if self.mode == "fixed_angles":
            for name, v in (("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)):
                if v is None or not (0.0 < v < np.pi):
                    raise InvalidConfig(f"{name} must lie in (0, pi) for fixed_angles")
            if not (abs(self.alpha - self.beta) - 1e-12 <= self.gamma
                    <= self.alpha + self.beta + 1e-12):
                raise InvalidConfig("angles violate the spherical triangle inequality")


@dataclass
class AngleSample:
    alpha: float
    beta: float
    gamma: float
    theta: float
    omega: float


@dataclass
class SweepPoint:
    controlled_angle: float
    mean: float
    p5: float
    p95: float
    n_samples: int
    seed: int


def angle_between(u: np.ndarray, v: np.ndarray) -> float:
    """Numerically stable angle between two vectors (Kahan's formula).

    Exact 0 for bitwise-identical directions, accurate near 0 and pi.
    """
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu < DEGENERACY_EPS or nv < DEGENERACY_EPS:
        raise DegenerateDirection("angle of a near-zero vector is undefined")
    a = u * nv
    b = v * nu
    return 2.0 * float(np.arctan2(np.linalg.norm(a - b), np.linalg.norm(a + b)))


def theta_angle(i: np.ndarray, t_m: np.ndarray, t_n: np.ndarray) -> float:
    """Angle between the practical pull t_m - t_n and the correct pull i - t_n."""
    practical = t_m - t_n
    correct = i - t_n
    if np.linalg.norm(practical) < DEGENERACY_EPS:
        raise DegenerateDirection("t_m and t_n coincide")
    if np.linalg.norm(correct) < DEGENERACY_EPS:
        raise DegenerateDirection("i and t_n coincide")
    return angle_between(practical, correct)


def arc_midpoint(t_m: np.ndarray, t_n: np.ndarray) -> np.ndarray:
    """Normalized midpoint of the minor arc between two unit vectors."""
    if np.array_equal(t_m, t_n):
        return t_m
    s = t_m + t_n
    norm = float(np.linalg.norm(s))
    if norm < DEGENERACY_EPS:
        raise AntipodalTexts("t_m + t_n vanishes; arc midpoint undefined")
    return s / norm


def omega_angle(i: np.ndarray, t_m: np.ndarray, t_n: np.ndarray,
                target: str = "m") -> float:
    """Angle between the single-target pull and the pull toward the arc midpoint.

    target selects which text the practical update aims at ("m" or "n").
    """
    if target == "m":
        t_target = t_m
    elif target == "n":
        t_target = t_n
    else:
        raise InvalidConfig(f"target must be 'm' or 'n', got {target!r}")
    mid = arc_midpoint(t_m, t_n)
    practical = t_target - i
    correct = mid - i
    if np.linalg.norm(practical) < DEGENERACY_EPS:
        raise DegenerateDirection("target text coincides with i")
    if np.linalg.norm(correct) < DEGENERACY_EPS:
        raise DegenerateDirection("arc midpoint coincides with i")
    return angle_between(practical, correct)


def triple_from_angles(alpha: float, beta: float, gamma: float, dim: int = 3):
    """Unit vectors (i, t_m, t_n) realizing exact pairwise angles in dim >= 3."""
    if dim < 3:
        raise InvalidConfig("need dim >= 3 to realize an arbitrary angle triple")
    if not (0.0 < gamma < np.pi):
        raise InvalidConfig("gamma must lie strictly inside (0, pi)")
    t_m = np.zeros(dim)
    t_m[0] = 1.0
    t_n = np.zeros(dim)
    t_n[0], t_n[1] = np.cos(gamma), np.sin(gamma)
    x = np.cos(alpha)
    y = (np.cos(beta) - x * np.cos(gamma)) / np.sin(gamma)
    z2 = 1.0 - x * x - y * y
    if z2 < -1e-12:
        raise InvalidConfig("angle triple is not realizable on the sphere")
    i = np.zeros(dim)
    i[0], i[1], i[2] = x, y, np.sqrt(max(z2, 0.0))
    return i, t_m, t_n


def _random_unit(gen: np.random.Generator, dim: int) -> np.ndarray:
    while True:
        v = gen.standard_normal(dim)
        norm = np.linalg.norm(v)
        if norm > 1e-8:
            return v / norm


def _unit_at_angle(base: np.ndarray, angle: float, gen: np.random.Generator) -> np.ndarray:
    """Unit vector at an exact angle from `base`, in a random 2-plane through it.

    angle = 0 returns `base` bitwise, so boundary identities hold exactly.
    """
    if angle == 0.0:
        return base
    while True:
        g = gen.standard_normal(base.size)
        p = g - (g @ base) * base
        norm = np.linalg.norm(p)
        if norm > 1e-8:
            p = p / norm
            return np.cos(angle) * base + np.sin(angle) * p


def _angle_or_nan(fn, *args) -> float:
    try:
        return fn(*args)
    except (DegenerateDirection, AntipodalTexts):
        return float("nan")


def sample_triple(cfg: TripleConfig, which: str, controlled: float,
                  gen: np.random.Generator) -> AngleSample:
    """One Monte-Carlo triple with the controlled angle placed exactly.

    Only the swept angle must be well defined (it always is at the
    controlled boundary); the other angle is NaN when its directions
    degenerate, e.g. omega at alpha = 0 where the target pull vanishes.
    """
    while True:
        if which == LEMMA_PRACTICAL_VS_CORRECT:
            t_m = _random_unit(gen, cfg.dim)
            i = _unit_at_angle(t_m, controlled, gen)
            t_n = _random_unit(gen, cfg.dim)
        elif which == LEMMA_SINGLE_TARGET_BIAS:
            t_m = _random_unit(gen, cfg.dim)
            t_n = _unit_at_angle(t_m, controlled, gen)
            i = _random_unit(gen, cfg.dim)
        else:
            raise InvalidConfig(f"unknown sweep kind {which!r}")
        try:
            if which == LEMMA_PRACTICAL_VS_CORRECT:
                theta = theta_angle(i, t_m, t_n)
                omega = _angle_or_nan(omega_angle, i, t_m, t_n, "m")
            else:
                omega = omega_angle(i, t_m, t_n, "m")
                theta = _angle_or_nan(theta_angle, i, t_m, t_n)
        except (DegenerateDirection, AntipodalTexts):
            continue
        return AngleSample(
            alpha=angle_between(i, t_m),
            beta=angle_between(i, t_n),
            gamma=angle_between(t_m, t_n),
            theta=theta,
            omega=omega,
        )


def lemma_sweep(cfg: TripleConfig, which: str, n_samples: int, rng: Rng,
                grid=DEFAULT_ANGLE_GRID) -> list[list[AngleSample]]:
    """Monte-Carlo sweep over the controlled-angle grid.

    Returns one sample list per grid point; each point draws from its own
    child stream, so results are independent of evaluation order.
    """
    cfg.validate()
    if n_samples < 1:
        raise InvalidConfig("n_samples must be >= 1")
    which_key = {LEMMA_PRACTICAL_VS_CORRECT: 1, LEMMA_SINGLE_TARGET_BIAS: 2}
    if which not in which_key:
        raise InvalidConfig(f"unknown sweep kind {which!r}")
    out = []
    for idx, controlled in enumerate(grid):
        gen = rng.spawn(which_key[which], idx).gen
        out.append([sample_triple(cfg, which, float(controlled), gen)
                    for _ in range(n_samples)])
    return out


def summarize_sweep(samples_by_point: list[list[AngleSample]], which: str,
                    grid, seed: int) -> list[SweepPoint]:
    points = []
    for controlled, samples in zip(grid, samples_by_point):
        vals = np.array([s.theta if which == LEMMA_PRACTICAL_VS_CORRECT else s.omega
                         for s in samples])
        points.append(SweepPoint(
            controlled_angle=float(controlled),
            mean=float(vals.mean()),
            p5=float(np.percentile(vals, 5)),
            p95=float(np.percentile(vals, 95)),
            n_samples=vals.size,
            seed=seed,
        ))
    return points


def write_sweep_csv(points: list[SweepPoint], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["controlled_angle_rad", "mean_rad", "p5_rad", "p95_rad",
                         "n_samples", "seed"])
        for p in points:
            writer.writerow([f"{p.controlled_angle:.12g}", f"{p.mean:.12g}",
                             f"{p.p5:.12g}", f"{p.p95:.12g}", p.n_samples, p.seed])

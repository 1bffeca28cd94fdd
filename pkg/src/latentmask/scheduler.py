"""Mask-ratio schedules and per-step random mask plans.

Three rising schemes (uniform, piecewise, cosine) map a global training
step to a mask ratio in [r_min, r_max]; a fourth constant scheme backs
the fixed-ratio ablation arm. Mask plans are seeded permutations, exact
in subset size and fully deterministic.
"""

import math
from dataclasses import dataclass, field

import numpy as np

SCHEMES = ("uniform", "piecewise", "cosine", "fixed")

# waypoint the piecewise scheme ramps to and holds before its second ramp
PIECEWISE_PLATEAU = 0.40


@dataclass(frozen=True)
class ScheduleConfig:
    scheme: str = "cosine"
    r_min: float = 0.15
    r_max: float = 0.75
    total_steps: int = 1000
    fixed_ratio: float = None  # only for scheme="fixed"

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}, expected one of {SCHEMES}")
        if not (0.0 <= self.r_min <= self.r_max <= 1.0):
            raise ValueError(f"need 0 <= r_min <= r_max <= 1, got [{self.r_min}, {self.r_max}]")
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")
        if self.scheme == "fixed" and self.fixed_ratio is None:
            raise ValueError("scheme 'fixed' requires fixed_ratio")


def ratio_at(t, cfg):
    """Mask ratio at integer step t, 0 <= t <= total_steps.

    Segment membership for the piecewise scheme is decided with integer
    arithmetic so the 0.40 plateau and the final hold are hit exactly.
    All schemes are monotone non-decreasing and clamped to [r_min, r_max].
    """
    T = cfg.total_steps
    if not (0 <= t <= T):
        raise ValueError(f"step {t} outside [0, {T}]")
    if cfg.scheme == "fixed":
        return cfg.fixed_ratio
    lo, hi = cfg.r_min, cfg.r_max
    if cfg.scheme == "uniform":
        r = lo + (hi - lo) * (t / T)
    elif cfg.scheme == "cosine":
        r = lo + (hi - lo) * (1.0 - math.cos(math.pi * t / T)) / 2.0
    else:  # piecewise
        mid = PIECEWISE_PLATEAU
        if 6 * t < T:  # first ramp, lo -> mid over [0, T/6)
            r = lo + (mid - lo) * (6 * t / T)
        elif 3 * t < T:  # plateau on [T/6, T/3)
            r = mid
        elif 3 * t < 2 * T:  # second ramp, mid -> hi over [T/3, 2T/3)
            r = mid + (hi - mid) * ((3 * t - T) / T)
        else:  # hold hi on [2T/3, T]
            r = hi
    return min(max(r, lo), hi)


def schedule_table(cfg):
    """All (step, ratio) pairs for steps 0..total_steps inclusive."""
    return [(t, ratio_at(t, cfg)) for t in range(cfg.total_steps + 1)]


@dataclass(frozen=True)
class MaskPlan:
    """Partition of patch indices into masked/unmasked for one step."""

    l: int
    masked: tuple
    unmasked: tuple
    ratio: float

    def __post_init__(self):
        assert set(self.masked) | set(self.unmasked) == set(range(self.l))
        assert not (set(self.masked) & set(self.unmasked))


def mask_count(l, ratio):
    # round half away from zero (ratio and l are non-negative here)
    return int(math.floor(ratio * l + 0.5))


def make_mask(l, ratio, seed):
    """Uniformly random mask plan of exact size round(ratio * l).

    Deterministic in (l, ratio, seed) via a dedicated PCG64 stream.
    """
    if l < 1:
        raise ValueError("sequence length must be >= 1")
    if not (0.0 <= ratio <= 1.0):
        raise ValueError(f"ratio {ratio} outside [0, 1]")
    n_masked = mask_count(l, ratio)
    perm = np.random.default_rng(seed).permutation(l)
    masked = tuple(sorted(int(i) for i in perm[:n_masked]))
    unmasked = tuple(sorted(int(i) for i in perm[n_masked:]))
    return MaskPlan(l=l, masked=masked, unmasked=unmasked, ratio=ratio)

"""Network geometry and large-scale channel statistics.

APs and UEs live in a square that wraps around at the edges (torus), so all
distances are toroidal and there are no boundary effects.  The large-scale
coefficients beta and the channel-estimate variances gamma computed here are
the only channel statistics the optimizer ever sees.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import SystemConfig

SeedLike = "int | np.random.SeedSequence | np.random.Generator"


class PlacementError(RuntimeError):
    """AP placement could not satisfy the minimum spacing constraint."""


@dataclass(frozen=True)
class NetworkGeometry:
    ap_positions: np.ndarray   # (M, 2) in meters, inside [0, area_side)^2
    ue_positions: np.ndarray   # (K, 2)
    area_side_m: float


@dataclass(frozen=True)
class LargeScale:
    """Sufficient statistics of one channel realization."""

    beta: np.ndarray    # (K, M) linear large-scale fading coefficients
    gamma: np.ndarray   # (K, M) per-antenna MMSE estimate variances

    def __post_init__(self) -> None:
        if self.beta.shape != self.gamma.shape:
            raise ValueError("beta and gamma must have identical shapes")
        if not (np.all(self.beta > 0) and np.all(np.isfinite(self.beta))):
            raise ValueError("beta must be strictly positive and finite")
        if not np.all((self.gamma > 0) & (self.gamma < self.beta)):
            raise ValueError("gamma must satisfy 0 < gamma < beta elementwise")


def toroidal_distance(p: np.ndarray, q: np.ndarray, side: float) -> np.ndarray:
    """Shortest distance between points on the wrap-around square.

    ``p`` and ``q`` are (..., 2) arrays; broadcasting applies.
    """
    delta = np.abs(np.asarray(p, dtype=float) - np.asarray(q, dtype=float))
    delta = np.minimum(delta, side - delta)
    return np.hypot(delta[..., 0], delta[..., 1])


def generate_geometry(cfg: SystemConfig, seed: SeedLike,
                      max_tries_per_ap: int = 10_000,
                      max_restarts: int = 50) -> NetworkGeometry:
    """Draw AP and UE positions uniformly on the wrap-around square.

    APs are placed by rejection sampling so that every pair keeps a toroidal
    distance of at least ``cfg.min_ap_spacing_m``.  UEs are uniform i.i.d.
    with no spacing constraint.  Deterministic for a fixed seed.
    """
    rng = np.random.default_rng(seed)
    side = cfg.area_side_m
    spacing = cfg.min_ap_spacing_m

    for _ in range(max_restarts):
        aps = np.empty((cfg.num_aps, 2))
        placed = 0
        stuck = False
        while placed < cfg.num_aps:
            for _ in range(max_tries_per_ap):
                cand = rng.uniform(0.0, side, size=2)
                if placed == 0 or np.all(
                        toroidal_distance(cand, aps[:placed], side) >= spacing):
                    aps[placed] = cand
                    placed += 1
                    break
            else:
                stuck = True
                break
        if not stuck:
            ues = rng.uniform(0.0, side, size=(cfg.num_ues, 2))
            return NetworkGeometry(ap_positions=aps, ue_positions=ues,
                                   area_side_m=side)
    raise PlacementError(
        f"could not place {cfg.num_aps} APs with {spacing} m spacing in a "
        f"{side} m square after {max_restarts} restarts")


def large_scale_fading(geom: NetworkGeometry, cfg: SystemConfig,
                       seed: SeedLike) -> np.ndarray:
    """Linear-scale large-scale coefficients beta for every UE-AP pair.

    beta[dB] = pathloss_ref_db - pathloss_slope_db * log10(d / 1 m) plus
    i.i.d. log-normal shadowing with ``cfg.shadowing_std_db`` standard
    deviation.  Distances are toroidal and clamped to
    ``cfg.min_link_distance_m``.
    """
    rng = np.random.default_rng(seed)
    d = toroidal_distance(geom.ue_positions[:, None, :],
                          geom.ap_positions[None, :, :], geom.area_side_m)
    d = np.maximum(d, cfg.min_link_distance_m)
    beta_db = cfg.pathloss_ref_db - cfg.pathloss_slope_db * np.log10(d)
    if cfg.shadowing_std_db > 0:
        beta_db = beta_db + cfg.shadowing_std_db * rng.standard_normal(d.shape)
    return 10.0 ** (beta_db / 10.0)


def estimate_quality(beta: np.ndarray, cfg: SystemConfig) -> np.ndarray:
    """Per-antenna variance of the MMSE channel estimate.

    gamma = tau_p * rho_p * beta^2 / (tau_p * rho_p * beta + 1), elementwise.
    """
    beta = np.asarray(beta, dtype=float)
    if np.any(beta <= 0):
        raise ValueError("beta must be strictly positive")
    snr = cfg.pilot_len * cfg.rho_pilot * beta
    return beta * snr / (snr + 1.0)


def draw_large_scale(cfg: SystemConfig, geometry_seed: SeedLike,
                     shadowing_seed: SeedLike) -> LargeScale:
    """Convenience wrapper: geometry, fading and estimate quality in one call."""
    geom = generate_geometry(cfg, geometry_seed)
    beta = large_scale_fading(geom, cfg, shadowing_seed)
    return LargeScale(beta=beta, gamma=estimate_quality(beta, cfg))

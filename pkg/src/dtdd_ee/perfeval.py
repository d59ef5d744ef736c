"""Closed-form link-level evaluation of one operating point.

Implements the use-and-then-forget SINR expressions for MR combining with
large-scale fading decoding (uplink) and MR precoding (downlink), the
corresponding spectral efficiencies, the network power model, and a complete
constraint audit of a candidate operating point.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import SystemConfig
from .netmodel import LargeScale

QOS_TOL = 1e-9  # absolute SE tolerance when checking QoS floors


@dataclass(frozen=True)
class OperatingPoint:
    """One candidate design: switching point, powers and decoding weights."""

    tau_a: int            # DL data samples, 0 <= tau_a <= tau_c - tau_p
    zeta: np.ndarray      # (K,) UL power coefficients in [0, 1]
    theta: np.ndarray     # (K, M) DL power coefficients, >= 0
    w: np.ndarray         # (K, M) LSFD combining weights in [0, 1]

    def validate(self, ls: LargeScale, cfg: SystemConfig,
                 tol: float = 1e-9) -> None:
        K, M = ls.beta.shape
        if self.zeta.shape != (K,) or self.theta.shape != (K, M) or self.w.shape != (K, M):
            raise ValueError("operating point dimensions do not match the network")
        if not 0 <= self.tau_a <= cfg.data_len:
            raise ValueError(f"tau_a must lie in [0, {cfg.data_len}]")
        if np.any(self.zeta < -tol) or np.any(self.zeta > 1 + tol):
            raise ValueError("zeta out of [0, 1]")
        if np.any(self.w < -tol) or np.any(self.w > 1 + tol):
            raise ValueError("w out of [0, 1]")
        if np.any(self.theta < -tol):
            raise ValueError("theta must be nonnegative")
        cap = ap_power_slacks(ls, self, cfg)
        if np.any(cap < -tol):
            raise ValueError("per-AP DL power constraint violated")


@dataclass(frozen=True)
class QosRequirements:
    """Per-UE minimum spectral efficiencies in bits/s/Hz."""

    se_ul_min: np.ndarray   # (K,)
    se_dl_min: np.ndarray   # (K,)

    def __post_init__(self) -> None:
        for arr in (self.se_ul_min, self.se_dl_min):
            if np.any(arr < 0) or not np.all(np.isfinite(arr)):
                raise ValueError("QoS floors must be nonnegative and finite")


@dataclass(frozen=True)
class PerformanceReport:
    se_ul: np.ndarray
    se_dl: np.ndarray
    sum_se: float                    # bits/s/Hz
    total_power: float               # watts
    ee: float                        # sum_se / total_power
    qos_satisfied: bool
    per_constraint_slacks: list[tuple[str, float]] = field(repr=False)

    def ee_bits_per_joule(self, bandwidth_hz: float) -> float:
        return self.ee * bandwidth_hz


# ---------------------------------------------------------------------------
# SINR and SE
# ---------------------------------------------------------------------------

def sinr_uplink_all(ls: LargeScale, pt: OperatingPoint, cfg: SystemConfig) -> np.ndarray:
    """Effective UL SINR of every UE after MR combining and LSFD.

    N * rho_u * zeta_k * (sum_m w_km gamma_km)^2 over
    rho_u * sum_k' zeta_k' * sum_m w_km^2 gamma_km beta_k'm + sum_m w_km^2 gamma_km.
    All-zero weight rows give SINR 0 (the 0/0 limit along zeta_k -> 0).
    """
    N, rho_u = cfg.antennas_per_ap, cfg.rho_ul
    num = N * rho_u * pt.zeta * np.einsum("km,km->k", pt.w, ls.gamma) ** 2
    load = pt.zeta @ ls.beta                       # (M,) sum_k' zeta_k' beta_k'm
    den = np.einsum("km,km,m->k", pt.w ** 2, ls.gamma, rho_u * load + 1.0)
    out = np.zeros_like(num)
    np.divide(num, den, out=out, where=den > 0)
    return out


def sinr_downlink_all(ls: LargeScale, pt: OperatingPoint, cfg: SystemConfig) -> np.ndarray:
    """Effective DL SINR of every UE under MR precoding.

    N^2 * rho_d * (sum_m theta_km gamma_km)^2 over
    N * rho_d * sum_k' sum_m theta_k'm^2 gamma_k'm beta_km + 1.
    """
    N, rho_d = cfg.antennas_per_ap, cfg.rho_dl
    num = N * N * rho_d * np.einsum("km,km->k", pt.theta, ls.gamma) ** 2
    radiated = np.einsum("km,km->m", pt.theta ** 2, ls.gamma)   # (M,)
    den = N * rho_d * (ls.beta @ radiated) + 1.0
    return num / den


def sinr_uplink(ls: LargeScale, pt: OperatingPoint, cfg: SystemConfig, k: int) -> float:
    return float(sinr_uplink_all(ls, pt, cfg)[k])


def sinr_downlink(ls: LargeScale, pt: OperatingPoint, cfg: SystemConfig, k: int) -> float:
    return float(sinr_downlink_all(ls, pt, cfg)[k])


def spectral_efficiencies(ls: LargeScale, pt: OperatingPoint,
                          cfg: SystemConfig) -> tuple[np.ndarray, np.ndarray]:
    """Per-UE (UL, DL) spectral efficiencies in bits/s/Hz."""
    tau_c, tau_p = cfg.coherence_len, cfg.pilot_len
    ul_frac = (tau_c - tau_p - pt.tau_a) / tau_c
    dl_frac = pt.tau_a / tau_c
    se_ul = ul_frac * np.log2(1.0 + sinr_uplink_all(ls, pt, cfg))
    se_dl = dl_frac * np.log2(1.0 + sinr_downlink_all(ls, pt, cfg))
    return se_ul, se_dl


# ---------------------------------------------------------------------------
# Power model
# ---------------------------------------------------------------------------

def total_power(ls: LargeScale, pt: OperatingPoint, cfg: SystemConfig) -> float:
    """Network power draw in watts, averaged over one coherence block."""
    tau_c, tau_p = cfg.coherence_len, cfg.pilot_len
    ul_frac = (tau_c - tau_p - pt.tau_a) / tau_c
    dl_frac = pt.tau_a / tau_c
    ul_part = cfg.xi_ul + cfg.c_ul * float(np.sum(pt.zeta))
    dl_radiated = cfg.antennas_per_ap * cfg.c_dl * float(
        np.einsum("km,km->", pt.theta ** 2, ls.gamma))
    dl_part = cfg.xi_dl + dl_radiated
    return ul_frac * ul_part + dl_frac * dl_part


def ap_power_slacks(ls: LargeScale, pt: OperatingPoint, cfg: SystemConfig) -> np.ndarray:
    """Per-AP slack of the DL power cap, 1/N - sum_k theta_km^2 gamma_km."""
    used = np.einsum("km,km->m", pt.theta ** 2, ls.gamma)
    return 1.0 / cfg.antennas_per_ap - used


# ---------------------------------------------------------------------------
# Full audit
# ---------------------------------------------------------------------------

def evaluate(ls: LargeScale, pt: OperatingPoint, cfg: SystemConfig,
             qos: QosRequirements, qos_tol: float = QOS_TOL) -> PerformanceReport:
    """Evaluate SE, power and EE and audit every design constraint."""
    se_ul, se_dl = spectral_efficiencies(ls, pt, cfg)
    sum_se = float(np.sum(se_ul) + np.sum(se_dl))
    power = total_power(ls, pt, cfg)
    ee = sum_se / power

    slacks: list[tuple[str, float]] = []
    for m, s in enumerate(ap_power_slacks(ls, pt, cfg)):
        slacks.append((f"ap_power_cap[{m}]", float(s)))
    slacks.append(("tau_a_low", float(pt.tau_a)))
    slacks.append(("tau_a_high", float(cfg.data_len - pt.tau_a)))
    K, M = ls.beta.shape
    for k in range(K):
        slacks.append((f"zeta_low[{k}]", float(pt.zeta[k])))
        slacks.append((f"zeta_high[{k}]", float(1.0 - pt.zeta[k])))
    for k in range(K):
        for m in range(M):
            slacks.append((f"w_low[{k},{m}]", float(pt.w[k, m])))
            slacks.append((f"w_high[{k},{m}]", float(1.0 - pt.w[k, m])))
            slacks.append((f"theta_low[{k},{m}]", float(pt.theta[k, m])))
    ul_slack = se_ul - qos.se_ul_min
    dl_slack = se_dl - qos.se_dl_min
    for k in range(K):
        slacks.append((f"qos_ul[{k}]", float(ul_slack[k])))
        slacks.append((f"qos_dl[{k}]", float(dl_slack[k])))

    qos_ok = bool(np.all(ul_slack >= -qos_tol) and np.all(dl_slack >= -qos_tol))
    return PerformanceReport(se_ul=se_ul, se_dl=se_dl, sum_se=sum_se,
                             total_power=power, ee=ee, qos_satisfied=qos_ok,
                             per_constraint_slacks=slacks)

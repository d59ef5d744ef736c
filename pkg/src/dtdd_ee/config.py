"""Static system parameters shared by every stage of the simulator."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

BOLTZMANN_J_PER_K = 1.381e-23
NOISE_TEMPERATURE_K = 290.0


def thermal_noise_power_w(bandwidth_hz: float = 20e6, noise_figure_db: float = 9.0) -> float:
    """Receiver noise power k_B * T0 * B * F in watts."""
    return BOLTZMANN_J_PER_K * NOISE_TEMPERATURE_K * bandwidth_hz * 10.0 ** (noise_figure_db / 10.0)


@dataclass(frozen=True)
class SystemConfig:
    """All static scalars of one network setup.

    Transmit powers are stored in watts; the normalized (noise-referenced)
    values used by the SINR formulas are exposed as ``rho_*`` properties.
    """

    num_aps: int = 40
    antennas_per_ap: int = 1
    num_ues: int = 5
    coherence_len: int = 200          # samples per coherence block
    pilot_len: int = 5                # samples spent on UL pilots

    pilot_power_w: float = 0.1        # max UE pilot power
    ue_max_power_w: float = 0.1       # max UE data power
    ap_max_power_w: float = 1.0       # max per-AP DL power

    circuit_ul_per_antenna_w: float = 0.2   # AP receive-chain power per antenna
    circuit_dl_per_antenna_w: float = 0.2   # AP transmit-chain power per antenna
    ue_tx_circuit_w: float = 0.1
    ue_rx_circuit_w: float = 0.1
    amp_eff_ue: float = 0.3           # UE power-amplifier efficiency, in (0, 1]
    amp_eff_ap: float = 0.4           # AP power-amplifier efficiency, in (0, 1]

    noise_power_w: float = field(default_factory=thermal_noise_power_w)
    bandwidth_hz: float | None = 20e6  # only used to report EE in bits/Joule

    area_side_m: float = 500.0
    min_ap_spacing_m: float = 50.0

    # Urban-microcell distance law: beta[dB] = ref - slope*log10(d/1m) + shadowing
    pathloss_ref_db: float = -30.5
    pathloss_slope_db: float = 36.7
    shadowing_std_db: float = 4.0     # 0 disables shadowing
    min_link_distance_m: float = 1.0  # clamp to avoid the d -> 0 singularity

    def __post_init__(self) -> None:
        if self.num_aps < 1 or self.num_ues < 1 or self.antennas_per_ap < 1:
            raise ValueError("num_aps, num_ues and antennas_per_ap must be positive")
        if not 0 < self.pilot_len < self.coherence_len:
            raise ValueError("need 0 < pilot_len < coherence_len")
        if self.num_ues > self.pilot_len:
            raise ValueError("num_ues must not exceed pilot_len (orthogonal pilots)")
        for name in ("pilot_power_w", "ue_max_power_w", "ap_max_power_w",
                     "noise_power_w", "area_side_m"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")
        for name in ("amp_eff_ue", "amp_eff_ap"):
            if not 0 < getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in (0, 1]")
        if self.min_ap_spacing_m < 0:
            raise ValueError("min_ap_spacing_m must be nonnegative")

    # -- normalized transmit powers ------------------------------------
    @property
    def rho_pilot(self) -> float:
        return self.pilot_power_w / self.noise_power_w

    @property
    def rho_ul(self) -> float:
        return self.ue_max_power_w / self.noise_power_w

    @property
    def rho_dl(self) -> float:
        return self.ap_max_power_w / self.noise_power_w

    # -- aggregated circuit powers (watts) -----------------------------
    @property
    def xi_ul(self) -> float:
        """Fixed power burned during UL data: UE TX circuits + AP RX chains."""
        return (self.num_ues * self.ue_tx_circuit_w
                + self.num_aps * self.antennas_per_ap * self.circuit_ul_per_antenna_w)

    @property
    def xi_dl(self) -> float:
        """Fixed power burned during DL data: AP TX chains + UE RX circuits."""
        return (self.num_aps * self.antennas_per_ap * self.circuit_dl_per_antenna_w
                + self.num_ues * self.ue_rx_circuit_w)

    # -- amplifier cost coefficients (watts per unit coefficient) ------
    @property
    def c_ul(self) -> float:
        """UE radiated-power cost: rho_ul * sigma_n^2 / chi_ue watts per unit zeta."""
        return self.ue_max_power_w / self.amp_eff_ue

    @property
    def c_dl(self) -> float:
        """AP radiated-power cost: rho_dl * sigma_n^2 / chi_ap watts per unit theta^2*gamma."""
        return self.ap_max_power_w / self.amp_eff_ap

    @property
    def data_len(self) -> int:
        """Samples available for data (UL plus DL) in one coherence block."""
        return self.coherence_len - self.pilot_len

    @property
    def pre_frac(self) -> float:
        """Fraction of the block left after pilots, 1 - tau_p / tau_c."""
        return self.data_len / self.coherence_len


def default_system(**overrides) -> SystemConfig:
    """Urban-microcell reference setup (500 m wrap-around square, 20 MHz)."""
    return SystemConfig(**overrides)

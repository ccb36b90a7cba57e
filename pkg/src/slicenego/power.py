"""Linear slice power model and the energy-saving metric."""

from __future__ import annotations

from dataclasses import dataclass

from .twin import Action


@dataclass(frozen=True)
class PowerParams:
    p_static_w: float = 5.0
    c_bw_w_per_mhz: float = 0.5
    c_cpu_w_per_ghz: float = 0.2

    def __post_init__(self) -> None:
        if min(self.p_static_w, self.c_bw_w_per_mhz, self.c_cpu_w_per_ghz) < 0:
            raise ValueError("power parameters must be >= 0")


def power_w(action: Action, params: PowerParams) -> float:
    return params.p_static_w + params.c_bw_w_per_mhz * action.bandwidth_mhz + params.c_cpu_w_per_ghz * action.cpu_ghz


def energy_saving_fraction(final: Action, baseline: Action, params: PowerParams) -> float:
    """Relative power saved by ``final`` against ``baseline``; negative if it costs more."""
    base = power_w(baseline, params)
    if not base > 0:
        raise ValueError("baseline power must be > 0")
    return (base - power_w(final, params)) / base

"""Experiment parameter containers and laboratory default values.

Conventions: every optical or mechanical rate stored here is an *amplitude*
decay rate in rad/s.  A laboratory linewidth quoted as a full width at half
maximum f_FWHM (Hz) of the intensity spectrum corresponds to
rate = 2*pi*f_FWHM/2.  Powers are in W, wavelengths in m, occupations are
dimensionless.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .errors import ConfigError

HBAR = 1.054571817e-34
K_BOLTZMANN = 1.380649e-23
C_LIGHT = 299792458.0
TWO_PI = 2.0 * math.pi


def thermal_occupation(temperature, omega_m):
    """Bath occupation k_B T / (hbar omega_m), valid for k_B T >> hbar omega_m."""
    if temperature < 0 or omega_m <= 0:
        raise ConfigError("temperature must be >= 0 and omega_m > 0")
    return K_BOLTZMANN * temperature / (HBAR * omega_m)


@dataclass(frozen=True)
class SystemParams:
    """Optical and mechanical rates, occupations, and efficiencies.

    kappa1 / kappa1_ext: pump-mode total / external amplitude decay (rad/s)
    kappa2 / kappa2_ext: anti-Stokes-mode total / external amplitude decay (rad/s)
    gamma: intrinsic mechanical amplitude decay (rad/s)
    g0: single-photon optomechanical coupling (rad/s)
    omega_m / omega_het: mechanical / heterodyne angular frequency (rad/s)
    nbar_th: mechanical bath occupation
    p_in: input pump power (W)
    wavelength: pump wavelength (m)
    eta_total: overall measurement efficiency of the mechanical state
    """

    kappa1: float
    kappa1_ext: float
    kappa2: float
    kappa2_ext: float
    gamma: float
    g0: float
    omega_m: float
    omega_het: float
    nbar_th: float
    p_in: float
    wavelength: float
    eta_total: float

    def __post_init__(self):
        for name in ("kappa1", "kappa1_ext", "kappa2", "kappa2_ext", "gamma",
                     "g0", "omega_m", "omega_het", "wavelength"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0")
        if self.kappa1_ext > self.kappa1:
            raise ConfigError("kappa1_ext must not exceed kappa1")
        if self.kappa2_ext > self.kappa2:
            raise ConfigError("kappa2_ext must not exceed kappa2")
        if self.nbar_th < 0:
            raise ConfigError("nbar_th must be >= 0")
        if self.p_in < 0:
            raise ConfigError("p_in must be >= 0")
        if not 0.0 < self.eta_total <= 1.0:
            raise ConfigError("eta_total must lie in (0, 1]")
        g = self.pump_enhanced_coupling()
        if 2.0 * g >= self.kappa2 + self.gamma:
            raise ConfigError(
                "weak-coupling condition violated: 2G = %.3e >= kappa2 + gamma = %.3e"
                % (2.0 * g, self.kappa2 + self.gamma))

    @property
    def eta_c1(self):
        """Pump-mode input coupling efficiency 2*kappa1_ext/kappa1."""
        return 2.0 * self.kappa1_ext / self.kappa1

    @property
    def omega_pump(self):
        return TWO_PI * C_LIGHT / self.wavelength

    def intracavity_photons(self):
        """Pump intracavity photon number eta_c1 * P_in / (kappa1 hbar omega)."""
        return self.eta_c1 * self.p_in / (self.kappa1 * HBAR * self.omega_pump)

    def pump_enhanced_coupling(self, n_cav=None):
        """G = g0 sqrt(N_cav); N_cav derived from the pump power unless given."""
        if n_cav is None:
            n_cav = self.intracavity_photons()
        if n_cav < 0:
            raise ConfigError("n_cav must be >= 0")
        return self.g0 * math.sqrt(n_cav)

    def with_updates(self, **kwargs):
        return replace(self, **kwargs)


@dataclass(frozen=True)
class SpadConfig:
    """Gated single-photon detector model.

    dark_rate is the intrinsic (free-running) dark rate in 1/s; the rate of
    registered dark events is dark_rate * gate_len * gate_rate.  The observed
    gated dark rate of roughly 1/s at a 50 kHz gate rate with 3.5 ns gates
    therefore corresponds to an intrinsic rate near 5.7e3/s.
    arm_efficiencies is the ordered chain (loss, split1, filters, split2)
    between the cavity output and one detector.
    """

    gate_rate: float = 5.0e4
    gate_len: float = 3.5e-9
    dead_time: float = 18.0e-6
    dark_rate: float = 5714.0
    quantum_eff: float = 0.125
    arm_efficiencies: tuple = (0.67, 0.25, 0.15, 0.5)

    def __post_init__(self):
        if self.gate_rate <= 0 or self.gate_len <= 0:
            raise ConfigError("gate_rate and gate_len must be > 0")
        if self.gate_len * self.gate_rate >= 1.0:
            raise ConfigError("gate duty cycle gate_len*gate_rate must be < 1")
        if self.dead_time < 0 or self.dark_rate < 0:
            raise ConfigError("dead_time and dark_rate must be >= 0")
        if not 0.0 < self.quantum_eff <= 1.0:
            raise ConfigError("quantum_eff must lie in (0, 1]")
        for e in self.arm_efficiencies:
            if not 0.0 < e <= 1.0:
                raise ConfigError("arm efficiencies must lie in (0, 1]")

    @property
    def duty_cycle(self):
        return self.gate_len * self.gate_rate

    @property
    def registered_dark_rate(self):
        """Dark events per second surviving the gating."""
        return self.dark_rate * self.duty_cycle


def default_params() -> SystemParams:
    """Laboratory default parameter set (Brillouin microresonator at 300 K)."""
    return SystemParams(
        kappa1=TWO_PI * 7.05e6,
        kappa1_ext=TWO_PI * 2.65e6,
        kappa2=TWO_PI * 46.85e6,
        kappa2_ext=TWO_PI * 5.85e6,
        gamma=TWO_PI * 3.26e6,
        g0=TWO_PI * 296.0,
        omega_m=TWO_PI * 8.16e9,
        omega_het=TWO_PI * 214e6,
        nbar_th=766.0,
        p_in=9.0e-3,
        wavelength=1550e-9,
        eta_total=0.0091,
    )


def default_spad() -> SpadConfig:
    return SpadConfig()

"""Constitutive and dispersion relations for isotropic bi-isotropic media.

Conventions used throughout the package:

* time dependence ``exp(+j*omega*t)``, so loss enters as ``eps = eps0*eps_r - j*sigma/omega``;
* constitutive relations ``D = eps*E + xi*H`` and ``B = zeta*E + mu*H`` with
  ``xi = (chi - j*kappa)*sqrt(eps0*mu0)`` and ``zeta = (chi + j*kappa)*sqrt(eps0*mu0)``;
* the "+" eigenwave is the Beltrami field with ``curl E = +k_plus * E``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np
from scipy import constants

from app.errors import PhysicsError

EPS0 = constants.epsilon_0
MU0 = constants.mu_0
# eps0 * mu0 * C0**2 == 1 to rounding
SLOWNESS0 = math.sqrt(EPS0 * MU0)
C0 = 1.0 / SLOWNESS0


class InvalidMaterialError(PhysicsError):
    pass


class DegenerateMaterialError(PhysicsError):
    pass


@dataclass(frozen=True)
class BiIsotropicMaterial:
    eps_r: float = 1.0
    sigma: float = 0.0
    mu_r: float = 1.0
    kappa: float = 0.0
    chi: float = 0.0

    def __post_init__(self) -> None:
        for name in ("eps_r", "sigma", "mu_r", "kappa", "chi"):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or not math.isfinite(value):
                raise InvalidMaterialError(f"{name} must be a finite real number, got {value!r}")
        if self.eps_r <= 0:
            raise InvalidMaterialError(f"eps_r must be positive, got {self.eps_r}")
        if self.mu_r <= 0:
            raise InvalidMaterialError(f"mu_r must be positive, got {self.mu_r}")
        if self.sigma < 0:
            raise InvalidMaterialError(f"sigma must be non-negative, got {self.sigma}")

    @property
    def is_achiral(self) -> bool:
        return self.kappa == 0 and self.chi == 0

    @property
    def is_lossless(self) -> bool:
        return self.sigma == 0

    def permittivity(self, frequency: float) -> complex:
        omega = _angular(frequency)
        return complex(EPS0 * self.eps_r, -self.sigma / omega)

    def permeability(self) -> float:
        return MU0 * self.mu_r


@dataclass(frozen=True)
class WaveConstants:
    alpha_tilde: float
    k_tilde0: complex
    k_plus: complex
    k_minus: complex
    eta: complex
    xi: complex
    zeta: complex

    @property
    def mean_wavenumber(self) -> complex:
        """Common part sqrt(alpha_tilde**2 + k_tilde0**2) of both eigenwaves."""
        return 0.5 * (self.k_plus + self.k_minus)

    @property
    def attenuation(self) -> float:
        """Field attenuation constant in Np/m shared by both eigenwaves."""
        return float(-self.mean_wavenumber.imag)

    @property
    def wavelength(self) -> float:
        """Shortest eigenwave wavelength in metres."""
        k_max = max(abs(self.k_plus.real), abs(self.k_minus.real))
        return 2.0 * math.pi / k_max


def _angular(frequency: float) -> float:
    if not math.isfinite(frequency) or frequency <= 0:
        raise InvalidMaterialError(f"frequency must be positive and finite, got {frequency!r}")
    return 2.0 * math.pi * frequency


def derive_coupling(material: BiIsotropicMaterial, frequency: float) -> tuple[complex, complex]:
    """Magnetoelectric coupling coefficients (xi, zeta) in s/m.

    The model is non-dispersive, so ``frequency`` is only validated.
    """
    _angular(frequency)
    xi = complex(material.chi, -material.kappa) * SLOWNESS0
    zeta = complex(material.chi, material.kappa) * SLOWNESS0
    return xi, zeta


def wave_constants(material: BiIsotropicMaterial, frequency: float) -> WaveConstants:
    omega = _angular(frequency)
    xi, zeta = derive_coupling(material, frequency)
    eps = material.permittivity(frequency)
    mu = material.permeability()
    coupling = (material.chi**2 + material.kappa**2) * EPS0 * MU0
    alpha_tilde = omega * material.kappa * SLOWNESS0
    k_tilde0 = omega * np.sqrt(complex(eps * mu - coupling))
    radicand = alpha_tilde**2 + k_tilde0**2
    if radicand == 0:
        raise DegenerateMaterialError(
            f"eigenwave branch is ambiguous for {material}: alpha_tilde**2 + k_tilde0**2 == 0"
        )
    if radicand.real <= 0:
        raise DegenerateMaterialError(
            f"no propagating eigenwave in {material}: alpha_tilde**2 + k_tilde0**2 = {radicand:.6g}"
        )
    root = complex(np.sqrt(radicand))
    if root.imag > 0:
        root = -root
    eta = complex(np.sqrt(mu / eps))
    return WaveConstants(
        alpha_tilde=alpha_tilde,
        k_tilde0=complex(k_tilde0),
        k_plus=alpha_tilde + root,
        k_minus=-alpha_tilde + root,
        eta=eta,
        xi=xi,
        zeta=zeta,
    )


def shortest_wavelength(materials: Iterable[BiIsotropicMaterial], frequency: float) -> float:
    wavelengths = [wave_constants(material, frequency).wavelength for material in materials]
    if not wavelengths:
        raise InvalidMaterialError("at least one material is required")
    return min(wavelengths)

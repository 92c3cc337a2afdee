"""Normal-incidence transfer-matrix solver for layered bi-isotropic stacks."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Literal

import numpy as np
from scipy.linalg import expm

from app.errors import ConfigurationError, PhysicsError
from app.services.media import BiIsotropicMaterial, derive_coupling, wave_constants

# (E_x, E_y) -> (H_x, H_y) for a wave travelling along +z in an achiral medium: H = J E / eta
_J = np.array([[0.0, -1.0], [1.0, 0.0]], dtype=complex)
_MIRROR = np.diag([1.0, -1.0]).astype(complex)

StackMethod = Literal["auto", "circular", "matrix"]


class UnsupportedPortError(PhysicsError):
    pass


class UndefinedRotationError(PhysicsError):
    pass


@dataclass(frozen=True)
class Layer:
    material: BiIsotropicMaterial
    thickness: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.thickness) or self.thickness <= 0:
            raise ConfigurationError(f"layer thickness must be positive, got {self.thickness!r}")


@dataclass(frozen=True)
class LayerStack:
    embedding_in: BiIsotropicMaterial
    layers: tuple[Layer, ...]
    embedding_out: BiIsotropicMaterial
    frequency: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "layers", tuple(self.layers))
        if not math.isfinite(self.frequency) or self.frequency <= 0:
            raise ConfigurationError(f"frequency must be positive, got {self.frequency!r}")

    @classmethod
    def single(
        cls,
        material: BiIsotropicMaterial,
        thickness: float,
        frequency: float,
        embedding: BiIsotropicMaterial | None = None,
    ) -> "LayerStack":
        host = embedding or BiIsotropicMaterial()
        return cls(host, (Layer(material, thickness),), host, frequency)

    @property
    def total_thickness(self) -> float:
        return sum(layer.thickness for layer in self.layers)

    @property
    def is_reciprocal(self) -> bool:
        return all(layer.material.chi == 0 for layer in self.layers)

    def mirrored(self) -> "LayerStack":
        return LayerStack(self.embedding_out, tuple(reversed(self.layers)), self.embedding_in, self.frequency)


@dataclass(frozen=True)
class JonesMatrix:
    """2x2 field matrix in the (x, y) basis; ``t_yx`` maps incident x onto output y."""

    t_xx: complex
    t_xy: complex
    t_yx: complex
    t_yy: complex

    @classmethod
    def from_array(cls, array: np.ndarray) -> "JonesMatrix":
        return cls(complex(array[0, 0]), complex(array[0, 1]), complex(array[1, 0]), complex(array[1, 1]))

    @classmethod
    def identity(cls) -> "JonesMatrix":
        return cls(1.0, 0.0, 0.0, 1.0)

    def as_array(self) -> np.ndarray:
        return np.array([[self.t_xx, self.t_xy], [self.t_yx, self.t_yy]], dtype=complex)

    def transpose(self) -> "JonesMatrix":
        return JonesMatrix(self.t_xx, self.t_yx, self.t_xy, self.t_yy)


@dataclass(frozen=True)
class Polarimetry:
    rotation: float
    ellipticity: float
    co_power: float
    cross_power: float
    turns: int = 0
    unwrapped_rotation: float | None = None


@dataclass(frozen=True)
class PowerBalance:
    transmitted: float
    reflected: float

    @property
    def absorbed(self) -> float:
        return 1.0 - self.transmitted - self.reflected


@dataclass
class SweepRow:
    thickness: float
    rotation: float
    ellipticity: float
    co_power: float
    cross_power: float
    extra: dict[str, float] = field(default_factory=dict)


def rotator(angle: float) -> JonesMatrix:
    """Jones matrix of a lossless optical rotator turning x toward -y for positive ``angle``."""
    c, s = math.cos(angle), math.sin(angle)
    return JonesMatrix(c, s, -s, c)


def stack_rotation(stack: LayerStack) -> float:
    """Accumulated optical activity, sum of alpha_tilde * thickness over the layers."""
    return sum(
        wave_constants(layer.material, stack.frequency).alpha_tilde * layer.thickness for layer in stack.layers
    )


def _port_impedance(material: BiIsotropicMaterial, frequency: float) -> complex:
    if not material.is_achiral:
        raise UnsupportedPortError(f"port medium must be achiral (kappa = chi = 0), got {material}")
    if not material.is_lossless:
        raise UnsupportedPortError(
            f"port medium has a complex wavenumber (sigma = {material.sigma} S/m); only lossless ports are supported"
        )
    return wave_constants(material, frequency).eta


def _scalar_layer(material: BiIsotropicMaterial, thickness: float, frequency: float) -> np.ndarray:
    omega = 2.0 * math.pi * frequency
    eps = material.permittivity(frequency)
    mu = material.permeability()
    k = omega * np.sqrt(complex(eps * mu))
    eta = np.sqrt(complex(mu / eps))
    phase = k * thickness
    return np.array(
        [[np.cos(phase), -1j * eta * np.sin(phase)], [-1j * np.sin(phase) / eta, np.cos(phase)]],
        dtype=complex,
    )


def _field_layer(material: BiIsotropicMaterial, thickness: float, frequency: float) -> np.ndarray:
    omega = 2.0 * math.pi * frequency
    eps = material.permittivity(frequency)
    mu = material.permeability()
    xi, zeta = derive_coupling(material, frequency)
    # d/dz (Ex, Ey, Hx, Hy) = M (Ex, Ey, Hx, Hy)
    generator = 1j * omega * np.array(
        [
            [0, -zeta, 0, -mu],
            [zeta, 0, mu, 0],
            [0, eps, 0, xi],
            [-eps, 0, -xi, 0],
        ],
        dtype=complex,
    )
    return expm(generator * thickness)


def _scalar_solve(stack: LayerStack, eta_in: complex, eta_out: complex) -> tuple[complex, complex]:
    product = np.eye(2, dtype=complex)
    for layer in stack.layers:
        product = _scalar_layer(layer.material, layer.thickness, stack.frequency) @ product
    p11, p12, p21, p22 = product[0, 0], product[0, 1], product[1, 0], product[1, 1]
    system = np.array([[p11 - p12 / eta_in, -1.0], [p21 - p22 / eta_in, -1.0 / eta_out]], dtype=complex)
    rhs = -np.array([p11 + p12 / eta_in, p21 + p22 / eta_in], dtype=complex)
    r, t = np.linalg.solve(system, rhs)
    return complex(t), complex(r)


def _circular_jones(stack: LayerStack, eta_in: complex, eta_out: complex) -> tuple[JonesMatrix, JonesMatrix]:
    # Both circular eigenwaves share eta and the mean wavenumber; the chirality only
    # contributes the common rotation, which cancels on every reflected round trip.
    t, r = _scalar_solve(stack, eta_in, eta_out)
    turn = rotator(stack_rotation(stack)).as_array()
    return JonesMatrix.from_array(t * turn), JonesMatrix.from_array(r * np.eye(2))


def _matrix_jones(stack: LayerStack, eta_in: complex, eta_out: complex) -> tuple[JonesMatrix, JonesMatrix]:
    product = np.eye(4, dtype=complex)
    for layer in stack.layers:
        product = _field_layer(layer.material, layer.thickness, stack.frequency) @ product
    p11, p12 = product[:2, :2], product[:2, 2:]
    p21, p22 = product[2:, :2], product[2:, 2:]
    j_in = _J / eta_in
    j_out = _J / eta_out
    system = np.block([[p11 - p12 @ j_in, -np.eye(2)], [p21 - p22 @ j_in, -j_out]])
    rhs = -np.vstack([p11 + p12 @ j_in, p21 + p22 @ j_in])
    solution = np.linalg.solve(system, rhs)
    return JonesMatrix.from_array(solution[2:, :]), JonesMatrix.from_array(solution[:2, :])


def stack_jones(stack: LayerStack, method: StackMethod = "auto") -> tuple[JonesMatrix, JonesMatrix]:
    """Transmission and reflection Jones matrices of ``stack`` for incidence from ``embedding_in``.

    Both are in power-normalized amplitudes, field over sqrt(eta) of the port medium:
    the field transmission ratio is scaled by sqrt(eta_in / eta_out), so
    ``|t_xx|**2 + |t_yx|**2`` is the transmitted power fraction. Reflection stays in
    the input port and is the plain field ratio.
    """
    eta_in = _port_impedance(stack.embedding_in, stack.frequency)
    eta_out = _port_impedance(stack.embedding_out, stack.frequency)
    for layer in stack.layers:
        wave_constants(layer.material, stack.frequency)
    if method == "auto":
        method = "circular" if stack.is_reciprocal else "matrix"
    if method == "circular":
        if not stack.is_reciprocal:
            raise ConfigurationError("the circular-eigenwave path requires chi = 0 in every layer")
        transmission, reflection = _circular_jones(stack, eta_in, eta_out)
    elif method == "matrix":
        transmission, reflection = _matrix_jones(stack, eta_in, eta_out)
    else:
        raise ConfigurationError(f"unknown stack method {method!r}")
    scale = math.sqrt((eta_in / eta_out).real)
    return JonesMatrix.from_array(scale * transmission.as_array()), reflection


def reverse_jones(stack: LayerStack, method: StackMethod = "auto") -> JonesMatrix:
    """Transmission for incidence from ``embedding_out``, expressed in the forward (x, y) basis.

    The reversed problem is solved in a frame turned by pi about x, where y and z flip
    sign. In the power-normalized amplitudes of :func:`stack_jones` a chi = 0 stack
    returns the transpose of the forward matrix, for equal or unequal port media.
    """
    transmission, _ = stack_jones(stack.mirrored(), method)
    return JonesMatrix.from_array(_MIRROR @ transmission.as_array() @ _MIRROR)


def power_fractions(stack: LayerStack, transmission: JonesMatrix, reflection: JonesMatrix) -> PowerBalance:
    """Transmitted and reflected power fractions for unit x-polarized incidence.

    ``transmission`` is in the power-normalized amplitudes returned by :func:`stack_jones`.
    """
    _port_impedance(stack.embedding_in, stack.frequency)
    _port_impedance(stack.embedding_out, stack.frequency)
    transmitted = abs(transmission.t_xx) ** 2 + abs(transmission.t_yx) ** 2
    reflected = abs(reflection.t_xx) ** 2 + abs(reflection.t_yx) ** 2
    return PowerBalance(transmitted=float(transmitted), reflected=float(reflected))


def _wrap_half_turn(angle: float) -> float:
    wrapped = (angle + math.pi / 2) % math.pi - math.pi / 2
    if wrapped <= -math.pi / 2 + 1e-12:
        wrapped += math.pi
    return wrapped


def polarimetry(transmission: JonesMatrix, reference: float | None = None) -> Polarimetry:
    """Rotation and ellipticity of the output for x-polarized input.

    Rotation is half the phase split between the circular components of the output
    field and lies in (-pi/2, pi/2]. It is positive when x turns toward -y, so
    ``rotator(theta)`` reports ``+theta`` (that is ``-arg(t_xx + j*t_yx)`` for a pure
    rotator) and positive kappa reports ``+alpha_tilde * d``. With ``reference``
    (usually :func:`stack_rotation`) the angle is unwrapped onto the nearest branch.
    """
    t_xx, t_yx = transmission.t_xx, transmission.t_yx
    if abs(t_xx) + abs(t_yx) < 1e-12:
        raise UndefinedRotationError("transmission is extinguished; rotation is undefined")
    c_plus = (t_xx + 1j * t_yx) / math.sqrt(2.0)
    c_minus = (t_xx - 1j * t_yx) / math.sqrt(2.0)
    if abs(c_plus) == 0 or abs(c_minus) == 0:
        rotation = 0.0
    else:
        rotation = _wrap_half_turn(0.5 * float(np.angle(c_minus / c_plus)))
    ellipticity = math.atan2(abs(c_plus) - abs(c_minus), abs(c_plus) + abs(c_minus))
    turns = 0
    unwrapped = None
    if reference is not None:
        turns = int(round((reference - rotation) / math.pi))
        unwrapped = rotation + turns * math.pi
    return Polarimetry(
        rotation=rotation,
        ellipticity=ellipticity,
        co_power=abs(t_xx) ** 2,
        cross_power=abs(t_yx) ** 2,
        turns=turns,
        unwrapped_rotation=unwrapped,
    )


def thickness_sweep(
    material: BiIsotropicMaterial,
    thicknesses: Iterable[float],
    frequency: float,
    embedding: BiIsotropicMaterial | None = None,
) -> list[SweepRow]:
    rows: list[SweepRow] = []
    for thickness in thicknesses:
        stack = LayerStack.single(material, thickness, frequency, embedding)
        transmission, reflection = stack_jones(stack)
        report = polarimetry(transmission, reference=stack_rotation(stack))
        balance = power_fractions(stack, transmission, reflection)
        rows.append(
            SweepRow(
                thickness=thickness,
                rotation=report.unwrapped_rotation if report.unwrapped_rotation is not None else report.rotation,
                ellipticity=report.ellipticity,
                co_power=report.co_power,
                cross_power=report.cross_power,
                extra={"transmitted": balance.transmitted, "reflected": balance.reflected},
            )
        )
    return rows

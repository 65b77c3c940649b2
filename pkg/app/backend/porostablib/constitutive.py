import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

from .errors import MaterialError

logger = logging.getLogger("porostab")

MILLIDARCY = 9.869233e-16  # m²
CENTIPOISE = 1.0e-3  # Pa·s
DAY = 86400.0  # s
MEGAPASCAL = 1.0e6  # Pa

WETTING = "w"
NONWETTING = "o"

ArrayLike = Union[float, np.ndarray]


def lame_from_young_poisson(young: float, poisson: float) -> Tuple[float, float]:
    """Convert Young's modulus and Poisson ratio to the Lamé parameters (λ, G)"""
    if not young > 0:
        raise MaterialError(f"Young's modulus must be positive, got {young!r}")
    if not -1.0 < poisson < 0.5:
        raise MaterialError(f"Poisson ratio must lie in (-1, 0.5), got {poisson!r}")
    lam = young * poisson / ((1.0 + poisson) * (1.0 - 2.0 * poisson))
    shear = young / (2.0 * (1.0 + poisson))
    return lam, shear


@dataclass(frozen=True)
class SolidModel:
    """
    Linear isotropic skeleton. A grain modulus of None stands for incompressible grains (1/K_s = 0 exactly) and
    b = 1. With a finite grain modulus the Biot coefficient is b = 1 − K/K_s: it is derived when left at 1 and an
    explicit value has to agree with it.
    """

    lame: float
    shear: float
    biot: float = 1.0
    grain_modulus: Optional[float] = None
    grain_density: float = 2650.0
    reference_porosity: float = 0.2

    def __post_init__(self):
        if not self.shear > 0:
            raise MaterialError(f"Shear modulus must be positive, got {self.shear!r}")
        if self.grain_modulus is None:
            if self.biot != 1.0:
                raise MaterialError("Incompressible grains require a Biot coefficient of 1")
            return
        if not self.grain_modulus > 0:
            raise MaterialError(f"Grain bulk modulus must be positive, got {self.grain_modulus!r}")
        derived = self.biot_from_moduli(self.drained_bulk, self.grain_modulus)
        if not 0.0 < derived < 1.0:
            raise MaterialError(
                f"Grain bulk modulus {self.grain_modulus!r} must exceed the drained bulk modulus {self.drained_bulk!r}"
            )
        if self.biot == 1.0:
            object.__setattr__(self, "biot", derived)
        elif not math.isclose(self.biot, derived, rel_tol=1e-9):
            raise MaterialError(
                f"Biot coefficient {self.biot!r} disagrees with 1 − K/K_s = {derived!r} "
                f"(K = {self.drained_bulk!r}, K_s = {self.grain_modulus!r})"
            )

    @classmethod
    def from_young_poisson(cls, young: float, poisson: float, **kwargs) -> "SolidModel":
        lam, shear = lame_from_young_poisson(young, poisson)
        return cls(lame=lam, shear=shear, **kwargs)

    @staticmethod
    def biot_from_moduli(drained_bulk: float, grain_modulus: Optional[float]) -> float:
        if grain_modulus is None:
            return 1.0
        return 1.0 - drained_bulk / grain_modulus

    @property
    def young(self) -> float:
        return self.shear * (3.0 * self.lame + 2.0 * self.shear) / (self.lame + self.shear)

    @property
    def poisson(self) -> float:
        return self.lame / (2.0 * (self.lame + self.shear))

    @property
    def drained_bulk(self) -> float:
        return self.lame + 2.0 * self.shear / 3.0

    @property
    def inverse_grain_modulus(self) -> float:
        return 0.0 if self.grain_modulus is None else 1.0 / self.grain_modulus

    def constrained_modulus(self, dim: int) -> float:
        """Bulk-like stiffness λ + 2G/d used by the fixed-stress splitting"""
        return self.lame + 2.0 * self.shear / dim


@dataclass(frozen=True)
class FluidModel:
    """Slightly compressible fluid; a bulk modulus of None marks an incompressible phase"""

    reference_density: float
    viscosity: float
    bulk_modulus: Optional[float] = None
    reference_pressure: float = 0.0

    def __post_init__(self):
        if not self.reference_density > 0:
            raise MaterialError(f"Reference density must be positive, got {self.reference_density!r}")
        if not self.viscosity > 0:
            raise MaterialError(f"Viscosity must be positive, got {self.viscosity!r}")
        if self.bulk_modulus is not None and not self.bulk_modulus > 0:
            raise MaterialError(f"Fluid bulk modulus must be positive, got {self.bulk_modulus!r}")

    @property
    def incompressible(self) -> bool:
        return self.bulk_modulus is None

    @property
    def compressibility(self) -> float:
        return 0.0 if self.bulk_modulus is None else 1.0 / self.bulk_modulus


@dataclass(frozen=True)
class RelPermModel:
    """Power-law relative permeability curves on the normalized saturation"""

    residual_wetting: float = 0.0
    residual_nonwetting: float = 0.0
    exponent: float = 2.0

    def __post_init__(self):
        if self.residual_wetting < 0 or self.residual_nonwetting < 0:
            raise MaterialError("Residual saturations must be non-negative")
        if self.residual_wetting + self.residual_nonwetting >= 1.0:
            raise MaterialError("Residual saturations must sum to less than 1")
        if self.exponent < 1.0:
            raise MaterialError(f"Relative permeability exponent must be at least 1, got {self.exponent!r}")

    @property
    def mobile_range(self) -> float:
        return 1.0 - self.residual_wetting - self.residual_nonwetting


@dataclass(frozen=True)
class MaterialSet:
    solid: SolidModel
    wetting: FluidModel
    nonwetting: FluidModel
    relperm: RelPermModel

    def fluid(self, phase: str) -> FluidModel:
        if phase == WETTING:
            return self.wetting
        if phase == NONWETTING:
            return self.nonwetting
        raise MaterialError(f"Unknown phase '{phase}'")

    @property
    def incompressible(self) -> bool:
        return (
            self.solid.biot == 1.0
            and self.solid.grain_modulus is None
            and self.wetting.incompressible
            and self.nonwetting.incompressible
        )


def fluid_density(model: FluidModel, p: ArrayLike) -> ArrayLike:
    if model.incompressible:
        return model.reference_density + 0.0 * np.asarray(p, dtype=float)
    return model.reference_density * (1.0 + (np.asarray(p, dtype=float) - model.reference_pressure) / model.bulk_modulus)


def fluid_density_derivative(model: FluidModel, p: ArrayLike) -> ArrayLike:
    return model.reference_density * model.compressibility + 0.0 * np.asarray(p, dtype=float)


def mixture_density(phi: ArrayLike, s: ArrayLike, rho_s: ArrayLike, rho_w: ArrayLike, rho_o: ArrayLike) -> ArrayLike:
    return (1.0 - phi) * rho_s + phi * rho_w * s + phi * rho_o * (1.0 - s)


def porosity_pressure_coefficient(solid: SolidModel, reference_porosity: Optional[ArrayLike] = None) -> ArrayLike:
    """(b − φ₀)/K_s, the porosity change per unit pressure change"""
    phi0 = solid.reference_porosity if reference_porosity is None else reference_porosity
    return (solid.biot - phi0) * solid.inverse_grain_modulus


def porosity_increment(
    solid: SolidModel, volumetric_strain_increment: ArrayLike, pressure_increment: ArrayLike, reference_porosity=None
) -> ArrayLike:
    return solid.biot * volumetric_strain_increment + porosity_pressure_coefficient(
        solid, reference_porosity
    ) * pressure_increment


def effective_saturation(rp: RelPermModel, s: ArrayLike) -> ArrayLike:
    return np.clip((np.asarray(s, dtype=float) - rp.residual_wetting) / rp.mobile_range, 0.0, 1.0)


def relative_permeability(rp: RelPermModel, s: ArrayLike, phase: str) -> ArrayLike:
    se = effective_saturation(rp, s)
    if phase == WETTING:
        return se**rp.exponent
    if phase == NONWETTING:
        return (1.0 - se) ** rp.exponent
    raise MaterialError(f"Unknown phase '{phase}'")


def relative_permeability_derivative(rp: RelPermModel, s: ArrayLike, phase: str) -> ArrayLike:
    s = np.asarray(s, dtype=float)
    se_raw = (s - rp.residual_wetting) / rp.mobile_range
    inside = (se_raw > 0.0) & (se_raw < 1.0)
    se = np.clip(se_raw, 0.0, 1.0)
    n = rp.exponent
    if phase == WETTING:
        d = n * se ** (n - 1.0) / rp.mobile_range
    elif phase == NONWETTING:
        d = -n * (1.0 - se) ** (n - 1.0) / rp.mobile_range
    else:
        raise MaterialError(f"Unknown phase '{phase}'")
    return np.where(inside, d, 0.0)


def phase_mobility(rp: RelPermModel, s: ArrayLike, viscosity: float, phase: str) -> ArrayLike:
    return relative_permeability(rp, s, phase) / viscosity


def phase_mobility_derivative(rp: RelPermModel, s: ArrayLike, viscosity: float, phase: str) -> ArrayLike:
    return relative_permeability_derivative(rp, s, phase) / viscosity

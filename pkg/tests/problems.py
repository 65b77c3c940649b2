from porostablib.constitutive import FluidModel, MaterialSet, RelPermModel, SolidModel
from porostablib.problem import DisplacementBC

ROLLERS_2D = (
    DisplacementBC("xmin", 0),
    DisplacementBC("xmax", 0),
    DisplacementBC("ymin", 1),
)


def unit_materials(compressible: bool = False) -> MaterialSet:
    """O(1) material set; the compressible one has K_s = 25/3 (so b = 0.8) and compressible phases"""
    if compressible:
        solid = SolidModel(lame=1.0, shear=1.0, grain_modulus=25.0 / 3.0, grain_density=2.0)
        water = FluidModel(reference_density=1.0, viscosity=1.0, bulk_modulus=10.0)
        oil = FluidModel(reference_density=0.8, viscosity=2.0, bulk_modulus=5.0)
    else:
        solid = SolidModel(lame=1.0, shear=1.0, grain_density=2.0)
        water = FluidModel(reference_density=1.0, viscosity=1.0)
        oil = FluidModel(reference_density=0.8, viscosity=2.0)
    relperm = RelPermModel(residual_wetting=0.1, residual_nonwetting=0.1)
    return MaterialSet(solid=solid, wetting=water, nonwetting=oil, relperm=relperm)

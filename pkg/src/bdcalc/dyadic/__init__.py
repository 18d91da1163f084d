"""Dyadic cubes, principal parts, Carleson box integrals and the T(b) stopping-time machinery."""

from .cubes import (
    DyadicCube,
    bump_profile,
    cubes_at_level,
    level_of,
    level_side,
    littlewood_paley,
    littlewood_paley_constant,
    pt_mollify,
    st_average,
    top_level,
)
from .principal import (
    CarlesonReport,
    GammaFamily,
    PrincipalPart,
    carleson_embedding_ratio,
    carleson_norm,
    cube_average_bound,
    gamma_family,
    gamma_st_ratio,
    image_subspace,
    level_nodes,
    polynomial_map,
    ppa_defect,
    principal_part,
)
from .tb import (
    Sector,
    SectorCover,
    StoppingReport,
    TbReport,
    TestFunctionBundle,
    build_test_function,
    cutoff_profile,
    make_sector,
    required_sectors,
    sector_cover,
    sector_index,
    sector_inequality,
    smoothstep,
    stopping_time,
    tb_pipeline,
)

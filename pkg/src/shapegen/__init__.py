"""Shape-library warpings and demonstration retargeting at desk scale.

Subpackages: :mod:`shapegen.geometry` (meshes, exact SDF, training samples),
:mod:`shapegen.neural` (neural SDFs and warpings). Modules:
:mod:`shapegen.se3`, :mod:`shapegen.library`, :mod:`shapegen.annotation`,
:mod:`shapegen.alignment`, :mod:`shapegen.obsgen`, :mod:`shapegen.costmodel`,
:mod:`shapegen.cli`.
"""

__version__ = "0.1.0"

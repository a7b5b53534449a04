"""Poincare sections, open quantum maps and zeta-function resonance tools.

Modules
-------
flow      Hamiltonian flows, tangent dynamics, trapped-set sampling
poincare  section charts, return maps and atlases
qmaps     torus quantization, open baker maps, transfer matrices
grushin   Grushin problems, zeta determinants, zero localization
scaling   one-dimensional complex scaling
io, cli   serialization, manifests and the command line
"""

from .errors import PoincareZetaError, ValidationError
from .flow import (HamiltonianSystem, NormalFormSystem, PhasePoint, free_system, integrate_flow,
                   sample_trapped_set, tangent_flow, three_bump_system)
from .poincare import (ReturnMapAtlas, SectionChart, build_atlas, detect_crossing, return_map_sample,
                       three_bump_sections)
from .qmaps import (DressedFamily, OpenMapMatrix, bogomolny_transfer, open_baker, spectral_projector,
                    weyl_quantize_torus)
from .grushin import (GrushinSystem, ResonanceList, Window, find_resonances, schur_effective_hamiltonian,
                      zeta, zeta_trace_expansion)
from .scaling import ScalingContour, discretize_scaled, resonances_direct

__version__ = "0.1.0"

import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))


@pytest.fixture(scope="session")
def bump_system():
    from poincarezeta.flow import three_bump_system
    return three_bump_system(4.0)


@pytest.fixture(scope="session")
def bump_atlas(bump_system):
    from poincarezeta.poincare import build_atlas, three_bump_sections
    return build_atlas(bump_system, three_bump_sections(), 25, dt=2e-3, horizon=6.0)


@pytest.fixture(scope="session")
def trapped_records(bump_system, bump_atlas):
    """Atlas records whose seed survives 3 time units in both directions."""
    from poincarezeta.flow import escape_times
    sec = bump_atlas.sections
    st = np.concatenate([sec[r.from_section].chart(bump_system, r.rho_in) for r in bump_atlas.records])
    esc = escape_times(bump_system, st, bump_system.interaction_radius, 4.0, dt=2e-3)
    return [r for r, e in zip(bump_atlas.records, esc) if e >= 3.0]

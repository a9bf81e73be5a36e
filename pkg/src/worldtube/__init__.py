"""Worldline-supported stress-energy multipoles in analytic curved spacetimes.

Subpackage map:

* ``spacetime``  -- metric catalog and curvature jets
* ``worldline``  -- geodesics, frames, exponential map, parallel propagators
* ``multipole``  -- worldline multipoles, split, component extraction
* ``moments``    -- extended bodies, squeezing and moment integrals
* ``dynamics``   -- quadrupole evolution, dipole reduction, residual checks
* ``cli``        -- scenario runner
"""

__version__ = "0.1.0"

"""Numerical laboratory for a 2x2 semiclassical operator with crossing characteristics.

The package builds, in order of dependency:

- ``model``     — the operator family (well potential, coupling, symbols, harmonic levels),
- ``flow``      — complex-time Hamiltonian flows with accumulated action,
- ``eikonal``   — the outgoing well phase (analytic Agmon distance) by unstable-manifold shooting,
- ``instanton`` — the broken tunneling loop and its action,
- ``transform`` — the straightening canonical map and the independent rebuild of the action,
- ``weber``     — the dominant parabolic-cylinder family and its parameter-derivative chain,
- ``spectral``  — grid resonances of the complex-translated operator and width-law fits,
- ``cli``       — command-line front end, caching, verification batteries, reports.
"""

__version__ = "0.1.0"

from .model import ModelParams, PotentialModel, HarmonicData  # noqa: F401

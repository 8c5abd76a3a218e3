"""torusgrowth: a numerical laboratory for Sobolev-norm growth of transport
equations on the torus.

The package builds band-limited vector fields, certifies their qualitative
dynamics (hyperbolic critical elements, separatrices, closed orbits),
constructs phase-space escape functions on the cosphere bundle, quantizes
them as Weyl operators on Fourier series, and propagates the transport
equation spectrally to measure Sobolev-norm growth and compare it against
resonant-averaging predictions.
"""

__version__ = "0.1.0"

from . import fields, msanalysis, escape, quantize, solver, normalform  # noqa: F401

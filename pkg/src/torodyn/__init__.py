"""Numerical laboratory for transport on the flat torus.

Implements and verifies, at desk scale, the explicit constructions behind
flow-map composition, push-forward solutions of the continuity equation,
compressing vector fields with their rescalings, the weak-* metric on
bounded dual-norm balls, and the norm-inflation mechanism.
"""

__version__ = "0.1.0"

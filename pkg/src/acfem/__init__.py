"""Adaptive P1 finite elements for the Allen-Cahn equation in 2D, with a
fully computable a posteriori error-estimation engine (conditional
L4(L4), L2(H1) and Linf(L2) bounds driven by a discrete spectral estimate
of the linearized operator).
"""

__version__ = "0.1.0"

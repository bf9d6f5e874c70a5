"""Desk-scale numerical laboratory for centerline detection on synthetic BEV grids.

Core building blocks:

* :mod:`bevlab.bezier` -- Bernstein bases, curve sampling, least-squares fitting
* :mod:`bevlab.grid` -- BEV feature grids and bilinear sampling (+ analytic grads)
* :mod:`bevlab.attention` -- SA / SPDA / MPDA / BDA cross-attention with op counting
* :mod:`bevlab.decoder` -- iterative-refinement decoder with auxiliary mask head
* :mod:`bevlab.matching` -- Mask-L1 mix costs and Hungarian assignment
* :mod:`bevlab.losses` -- regression / mask / classification losses and totals
* :mod:`bevlab.metrics` -- Frechet/Chamfer detection mAP, topology mAP, aggregate score
* :mod:`bevlab.scene` -- synthetic scene generation and mask rasterization
* :mod:`bevlab.service` -- FastAPI service wrapping all of the above
* :mod:`bevlab.cli` -- thin command-line client of the service layer
"""

__version__ = "0.1.0"

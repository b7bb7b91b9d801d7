"""Adaptive 3D informative path planning toolkit.

A UAV with an altitude-dependent downward sensor plans over a
multi-altitude roadmap to reduce belief uncertainty in regions of
interest under a travel-time budget. The package bundles the grid-world
simulator, the GP belief with Kalman fusion, an attention-based policy
with its training loop, baseline planners, and an evaluation harness
exposed through a FastAPI service and a thin CLI client.
"""

__version__ = "0.1.0"

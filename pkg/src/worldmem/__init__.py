"""Camera-aware memory toolkit for interactive world models.

Submodules:

* ``geometry``: quaternions, poses, frusta, Plücker ray maps
* ``retrieval``: frustum-overlap scoring and top-k memory retrieval
* ``actions``: WSAD action inference from pose trajectories
* ``curation``: clip filtering, threshold calibration, recording QA
* ``explorer``: grid navigation agent for data collection
* ``trainkit``: error buffer, flow targets, context layout, temporal RoPE
* ``streaming``: multi-segment rollout planner
* ``dataio``: file formats
* ``cli``: the ``worldmem`` command
"""

__version__ = "0.1.0"

"""demoforge: expand a handful of bimanual robot demonstrations into a
large, visually diverse, action-labeled synthetic dataset.

Stages: trajectory expansion around resampled object poses, edge-map
control-video extraction, multi-view tiling, FK/IK cross-embodiment
retargeting, seven augmentation recipes, generation via an external
service (deterministic mock bundled), and dataset assembly with
integrity checking.
"""

__version__ = "0.1.0"

"""Multi-view multi-person motion capture from redundant joint candidates.

The pipeline triangulates every same-typed 2D joint between every camera
pair into a padded candidate tensor, then selects and aggregates the
valid candidates with a cascade of masked transformer encoders and
optimal-transport token pooling, trained with kinematic losses.  A
synthetic multi-camera scene generator makes the whole pipeline runnable
without any dataset.
"""

__version__ = "0.1.0"

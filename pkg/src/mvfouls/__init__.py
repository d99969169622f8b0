"""Multi-view foul recognition at desk scale.

Subpackages: tensor (autodiff), data (manifest and frame formats),
synth (clip generator), model, train, evaluate, service (HTTP API),
cli.
"""

__version__ = "0.1.0"

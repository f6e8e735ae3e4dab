"""Conservative soft actor-critic: mixed entropy/relative-entropy RL at desk scale."""

__version__ = "0.1.0"

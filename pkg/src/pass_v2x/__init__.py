"""Camera-based pedestrian safety messages and crosswalk collision warnings."""

__version__ = "0.1.0"

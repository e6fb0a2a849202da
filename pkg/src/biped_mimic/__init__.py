"""Motion-imitation reinforcement learning for a planar underactuated walker."""

__version__ = "0.1.0"

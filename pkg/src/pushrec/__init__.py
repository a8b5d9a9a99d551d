"""Planar biped push-recovery: simulator, RBF-reward environment, PPO trainer and evaluation."""

__version__ = "0.1.0"

"""Reasoning-chain mining, scoring, rewards, and desk-scale SFT/GRPO training."""

__version__ = "0.1.0"

"""Automated design of RL agents: wrapper synthesis, verification and configuration refinement."""

__version__ = "0.1.0"

"""Desk-scale autonomous parking lab.

A 2D parking simulator, a Hybrid A* + PID expert pipeline, a small
numpy-backed autodiff engine, an imitation-learned parking policy with
gradient-supervised spatial attention, and a closed-loop evaluation
harness.
"""

__version__ = "0.1.0"

"""Depth-from-focus ranging, camera localisation, distributed consensus and
depth-hold control for small underwater robot teams, with a tank simulator."""

__version__ = "0.1.0"

"""Vertex-reinforced walk laboratory"""

__version__ = "1.0.0"

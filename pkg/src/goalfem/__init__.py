"""Goal-oriented adaptive FEM with multigoal DWR error control."""

__version__ = "0.1.0"

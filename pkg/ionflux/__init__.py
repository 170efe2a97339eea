# Hard-sphere PNP singular-orbit toolkit
"""
This package contains the model, layer, matching and oracle modules for the ionflux toolkit.
"""

__version__ = "1.0.0"

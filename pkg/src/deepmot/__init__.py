"""Desk-scale differentiable multi-object tracking.

Modules: ``autodiff`` (reverse-mode engine), ``geometry``, ``hungarian``,
``dhn`` (Deep Hungarian Net), ``loss`` (differentiable tracking loss),
``moteval`` (CLEAR-MOT / IDF1), ``datasets``, ``tracker`` and ``cli``.
"""

__version__ = "0.1.0"

"""Inference of tree-production rules for glycan assembly.

Subpackages: core tree model, text grammar, forward-production oracle,
constraint encoder, SMT session backend (with a bundled finite-domain
solver), and the synthesis driver tying them together.
"""

__version__ = "0.1.0"

"""Functional brain graph construction across a data-centric design space.

Stages: per-ROI z-scoring and optional high-amplitude retention
(:mod:`.signal`), correlation views (:mod:`.correlation`), topology
(:mod:`.topology`), node/edge features (:mod:`.featurize`), configuration and
sweeps (:mod:`.designspace`), I/O (:mod:`.dataio`) and surrogate evaluation
(:mod:`.evalkit`).
"""

__version__ = "0.1.0"

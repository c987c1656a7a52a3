"""Frequency-domain global features fused into attention-based MIL.

Subpackages: ``spectral`` (pure transforms), ``autodiff``/``nn`` (the
differentiable substrate), ``fftblock`` (the trainable frequency branch and
its design variants), ``mil`` (patch bags, gated attention, fusion),
``data`` (synthetic slide generation) and ``harness`` (training runs,
metrics, ablation sweeps, CLI).
"""

__version__ = "0.1.0"

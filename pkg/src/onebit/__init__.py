"""Quantization-aware training toolkit for 1-bit transformer LMs.

Submodules:
    tensor     deterministic 2-D float32 substrate (matmul, reductions, RNG)
    quant      weight binarization, absmax activation quantizers, grouped LN
    bitlinear  the 1-bit linear layer: forward, STE backward, partition harness
    model      byte-level decoder-only LM, training loop, stability probe
    energy     arithmetic-energy estimator for dense vs 1-bit matmuls
    scaling    power-law loss fits and loss-vs-energy curves
    checkpoint binary checkpoint format (training and inference flavors)
    cli        command-line interface
"""

__version__ = "0.1.0"

"""Task-oriented semantic communication simulator.

End-to-end trainable pipeline: spatiotemporal semantic encoding of synthetic
video features, dual-branch cross-attention joint source-channel coding with
learned adaptive bandwidth allocation, AWGN / Rayleigh block-fading channel
simulation, and multimodal answer prediction on a synthetic video QA task.
"""

__version__ = "0.1.0"

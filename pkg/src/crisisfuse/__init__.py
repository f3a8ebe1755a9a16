"""crisisfuse: multimodal crisis-post classification.

A compact, dependency-light implementation of a two-modality classifier
(image features x tweet text) built around sigmoid gating between
modalities and a label-graph embedding-swap regularizer, with an
experiment harness for consistency/temporal protocols.
"""

__version__ = "0.1.0"

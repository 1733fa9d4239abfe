"""Long-context training and evaluation toolkit.

Subpackages: rope (rotary scaling math), packer (corpus resampling and
separator packing), evalgen (synthetic needle benchmarks), harness
(endpoint driving and scoring), toylab (desk-scale transformer recipe lab).
"""

__version__ = "0.1.0"

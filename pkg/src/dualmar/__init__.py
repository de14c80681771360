"""Dual-view patient representation pipeline.

Subpackages and modules:

- ``kg``: diagnosis knowledge-graph types, cross-referencing, clustering,
  normalization, and archive I/O.
- ``harvest``: prompt rendering and triple extraction against an injected
  text oracle, with a replayable transcript cache.
- ``kge``: polar-coordinate (modulus + phase) knowledge-graph embeddings
  with negative-sampling training and filtered link-prediction evaluation.
- ``ehr``: admission-sequence dataset model, patient-level splits, proxy and
  downstream targets, and the planted-structure synthetic generator.
- ``cograph``: disease-lab co-occurrence counting and the self-connected,
  row-normalized adjacency used by the encoder.
- ``nn``: dense-array autodiff, attention layers, Adam, gradient checking,
  and the binary checkpoint format.
- ``pipeline``: the two-tier attention encoder, proxy pretraining, the
  finetune and direct prediction paths, and their trainers.
- ``metrics``: weighted F1, recall at k, rank-based AUC, and binary F1.
- ``report``: delimited metric tables and matplotlib figures.
- ``cli``: the ``dualmar`` command-line interface.
"""

__version__ = "0.1.0"

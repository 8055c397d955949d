"""Desk-scale toolkit for drug-target interaction prediction.

Pipeline stages: molecule/protein ingestion, fingerprint featurization,
leakage-controlled dataset splits, a small numpy autodiff engine, a
multi-level interaction encoder, adversarial domain-transfer training,
episodic few-shot training with dynamic prototypes, and evaluation
metrics with a CLI harness tying it all together.
"""

__version__ = "0.1.0"

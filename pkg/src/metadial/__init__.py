"""Domain-adaptive task-oriented dialog generation with first-order MAML.

Subpackages by role:

- :mod:`metadial.autodiff`, :mod:`metadial.optim`, :mod:`metadial.gradcheck`:
  reverse-mode differentiation on numpy, Adam and functional SGD, finite
  difference checks.
- :mod:`metadial.schema`, :mod:`metadial.simdial`: domains, knowledge bases,
  belief states and the synthetic dialog generator.
- :mod:`metadial.corpus_io`: vocabulary, embeddings, context examples, batches.
- :mod:`metadial.model`: the two-stage copy-augmented seq2seq model.
- :mod:`metadial.training`, :mod:`metadial.experiment`: meta-training,
  transfer baseline, adaptation and the multi-seed experiment.
- :mod:`metadial.evaluation`: BLEU, Entity F1 and aggregation.
"""

__version__ = "0.1.0"

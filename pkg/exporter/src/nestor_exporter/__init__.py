"""Offline embedding exporter for the nestor core.

Produces the two file formats the core ingests without ever loading a
pretrained model in-process there:

- contextual JSONL: per-sentence token vectors, each token's vector the
  mean of its subtoken vectors from the final hidden layer;
- static word vectors: a word2vec-text subset restricted to a vocabulary.
"""

__version__ = "0.1.0"

from .exporter import ExportJob, ExporterError, export_contextual, export_static  # noqa: F401

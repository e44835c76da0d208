"""Proposer-regressor set prediction network for flat and nested NER.

The package is organized around the pipeline stages:

- ``numerics``:  differentiable numpy substrate + finite-difference oracle
- ``encoder``:   multi-granularity sentence encoding (char / contextual /
                 word / POS channels fused by a BiGRU)
- ``proposer``:  bidirectional feature pyramid and per-token entity proposals
- ``regressor``: stacked spatially modulated attention refinement layers
- ``predictor``: category / joint-span distributions and set decoding
- ``trainer``:   one-to-many assignment, bipartite loss, AdamW loop
- ``data``:      dataset loaders and the synthetic nested corpus
- ``metrics``:   exact-match scoring with length buckets
- ``model``:     wiring of the full network
- ``cli``:       train / eval / predict / gradcheck entry points
"""

__version__ = "0.1.0"

from .numerics import Tensor, Param, Rng  # noqa: F401
from .data import SentenceExample, EntitySpan  # noqa: F401

"""Walk through the feature pyramid: span arithmetic, truncation on short
sentences, and the forward/backward data flow.

Run:  python3 demos/pyramid_spans.py
"""

import numpy as np

from nestor.config import resolve
from nestor.data import synth_nested_corpus
from nestor.encoder import Vocabularies
from nestor.model import Model
from nestor.proposer import PyramidConfig, forward_pass, backward_pass, fuse_proposals

# Every pyramid level l covers spans of v_l consecutive tokens:
# v_0 = 1 (the encoder output itself), and each convolution of kernel k
# grows the covered span by k - 1 while shrinking the sequence.
for kernels in ([], [2], [2, 2], [2, 3]):
    cfg = PyramidConfig(kernels)
    lengths = [cfg.span_length(l) for l in range(len(kernels) + 1)]
    print(f"kernels {kernels!r:12} -> span lengths per level {lengths}")

# Feature (i, l) covers tokens i .. i + v_l - 1, so a 6-token sentence with
# kernels [2, 3] has features covering 1, 2 and 4 tokens:
cfg = PyramidConfig([2, 3])
for level in range(cfg.num_levels(6)):
    spans = [(i, i + cfg.span_length(level) - 1) for i in range(cfg.level_length(level, 6))]
    print(f"level {level}: spans {spans}")

# Short sentences simply truncate the pyramid: a 2-token sentence cannot
# host a level whose features would cover 4 tokens.
print("levels for a 2-token sentence:", cfg.num_levels(2))

# Now the real thing: encode a sentence and push it through both sweeps.
corpus = synth_nested_corpus(seed=1, n_sentences=8, max_len=10, n_types=2, nest_prob=0.3)
vocabs = Vocabularies.build(corpus.sentences)
config = resolve({
    "model": {"dim": 16, "heads": 2, "kernel_sizes": [2, 2], "regressor_layers": 1,
              "gru_hidden": 4, "mlp_hidden": 8, "max_len": 12},
    "embeddings": {"char_dim": 4, "word_dim": 8},
    "train": {"seed": 7, "precision": "float64"},
})
model = Model(config, vocabs)
example = corpus.sentences[0]
print("\nsentence:", example.tokens)

out = model.forward_batch([example])
levels = forward_pass(out.H, model.pyramid_cfg, model.pyramid)
print("forward feature shapes: ", [tuple(l.forward_features.shape) for l in levels])
refined = backward_pass(out.H, levels, model.pyramid_cfg, model.pyramid)
print("refined feature shapes: ", [tuple(r.shape) for r in refined])

# The fuse step turns the pyramid into one proposal per token. Each token
# aggregates the spans of every feature that covers it, so the initial
# location is a convex combination of those endpoints.
pset = fuse_proposals(levels, model.pyramid_cfg, model.pyramid)
locations = pset.N.values[0]
for j, tok in enumerate(example.tokens):
    members = pset.feature_spans[pset.membership[j]]
    print(f"token {j:2d} {tok:>6}: location ({locations[j][0]:5.2f}, {locations[j][1]:5.2f})"
          f"  from spans {members.astype(int).tolist()}")

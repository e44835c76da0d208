"""How proposals get their training targets.

Every proposal must receive a target: one of the sentence's entities or
the padding (None) target. With more proposals than entities each entity
must be covered at least once; with at least as many entities as
proposals, every proposal takes a distinct entity. The optimal cover is a
Hungarian matching on row-reduced costs, and all remaining proposals
greedily take their cheapest row entry.

Run:  python3 demos/assignment_walkthrough.py
"""

import numpy as np

from nestor.numerics import Rng
from nestor.predictor import ProposalDistributions, span_support
from nestor.trainer import CostMatrix, assign, match_cost

rng = Rng(5)
L, T = 5, 2  # five proposals, two entity types (+None)
spans = span_support(L)

dists = []
for i in range(L):
    p_c = rng.uniform(0.05, 1.0, (T + 1,))
    p_c /= p_c.sum()
    p_n = rng.uniform(0.05, 1.0, (len(spans),))
    p_n /= p_n.sum()
    dists.append(ProposalDistributions(p_c=p_c, spans=spans, p_n=p_n))

targets = [(0, 1, 0), (3, 3, 1)]  # two gold entities: (start, end, type id)
print("gold targets:", targets)

# the match cost of assigning target (s, e, t) to proposal i is
#   -log p_c_i(t) - log p_n_i(s, e)
# and the padding target costs -log p_c_i(None)
costs = CostMatrix.build(targets, dists, none_id=T)
print("\ncost matrix (last column = padding):")
for i, row in enumerate(costs.entries):
    print(f"  proposal {i}: " + " ".join(f"{c:6.3f}" for c in row))

assignment, _ = assign(targets, dists, none_id=T)
for i, j in enumerate(assignment.mapping):
    how = "hungarian" if i in assignment.core else "greedy"
    what = f"entity {j} {targets[j]}" if j != assignment.padding_index else "padding"
    print(f"  proposal {i} -> {what:24} ({how})")

print("\ntotal cost:", round(assignment.total_cost(costs), 4))

# sanity: the same cost matrix brute-forced over all valid mappings
best = np.inf
import itertools

for mapping in itertools.product(range(len(targets) + 1), repeat=L):
    if not set(range(len(targets))) <= set(mapping):
        continue  # L > N here: every entity needs a proposal
    best = min(best, sum(costs.entries[i, m] for i, m in enumerate(mapping)))
print("exhaustive optimum:", round(float(best), 4))

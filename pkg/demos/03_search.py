"""Beam search in both directions, reverse rescoring and joint selection.

Uses a tiny random model over a four-symbol alphabet so every candidate can
be enumerated and checked against the search.
"""

import numpy as np

from bttr.config import ModelConfig, SearchParams
from bttr.inference import L2R, R2L, beam_search, ensemble_decode, joint_search, reverse_rescore
from bttr.model import Model
from bttr.numerics import no_grad
from bttr.selftest import exhaustive_winners

model = Model(ModelConfig.preset("mini", 7), seed=11)
model.astype(np.float64)
model.eval()
with no_grad():
    memory = model.encode(np.random.default_rng(11).random((6, 9)))

params = SearchParams(beam=5, max_len=3, alpha=1.0)
for direction in (L2R, R2L):
    print(direction)
    hyps = beam_search(model, memory, direction, params)
    for h, rev in zip(hyps, reverse_rescore(model, memory, hyps)):
        print(f"  core {h.l2r_core()}  logp {h.logp:7.3f}  penalized {h.score:7.3f}  reverse logp {rev:7.3f}")

res = joint_search(model, memory, params)
print("joint winner", res.ids, "from", res.direction, f"score {res.score:.3f}")

# with a beam as wide as the whole space the search is exact
full = SearchParams(beam=64, max_len=3)
oracle = exhaustive_winners(model, memory, full, 4)
print("enumeration", oracle["joint"], "search", joint_search(model, memory, full).ids)

# an ensemble averages next-token probabilities across members
other = Model(ModelConfig.preset("mini", 7), seed=12)
other.astype(np.float64)
other.eval()
with no_grad():
    other_mem = other.encode(np.random.default_rng(11).random((6, 9)))
print("ensemble of two", ensemble_decode([model, other], [memory, other_mem], params).ids)

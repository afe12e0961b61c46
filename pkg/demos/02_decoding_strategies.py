#!/usr/bin/env python3
"""Compare the four decoders, including the classic greedy failure case.

With per-frame probabilities a: 0.4, blank: 0.6 on both of two frames,
blank wins every frame individually, so the greedy decode is empty. But
three paths collapse to [a] for a total of 0.64 versus 0.36 for the
empty sequence, so the most probable *sequence* is [a].
"""

import numpy as np

from ctckit import (
    beam_search_decode,
    best_path_decode,
    exact_decode,
    prefix_search_decode,
)

probs = np.array([[0.4, 0.6],
                  [0.4, 0.6]])

print("exact (top 2):")
for labels, score in exact_decode(probs, top_paths=2).paths:
    print(f"  {labels!r:8} p = {np.exp(score):.4f}")

greedy = best_path_decode(probs)
print(f"greedy        : {greedy.paths[0][0]!r}  "
      f"(argmax path p = {np.exp(greedy.paths[0][1]):.4f})")

beam = beam_search_decode(probs, beam_width=4, top_paths=2)
print("beam width 4  :")
for labels, score in beam.paths:
    print(f"  {labels!r:8} p = {np.exp(score):.4f}")

prefix = prefix_search_decode(probs, blank_threshold=1.0)
print(f"prefix search : {prefix.paths[0][0]!r}  "
      f"p = {np.exp(prefix.paths[0][1]):.4f}")

# prefix search earns its keep on longer inputs by splitting at frames
# where blank is nearly certain, then solving each segment exactly
rng = np.random.default_rng(4)
long_probs = rng.random((9, 4)) + 1e-3
long_probs /= long_probs.sum(axis=1, keepdims=True)
long_probs[4] = [0.0, 0.0, 0.0, 1.0]  # a certain blank splits the input

whole = prefix_search_decode(long_probs)
left = exact_decode(long_probs[:4])
right = exact_decode(long_probs[5:])
print(f"\nsplit decode  : {whole.paths[0][0]!r}")
print(f"left + right  : {left.paths[0][0] + right.paths[0][0]!r}")

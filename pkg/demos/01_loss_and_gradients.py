#!/usr/bin/env python3
"""Walk through the CTC loss on an instance small enough to check by hand.

Two frames, one real label 'a' plus the blank, every probability 0.5.
Of the four frame-level paths, three collapse to [a]:

    a a      -> [a]      0.25
    a blank  -> [a]      0.25
    blank a  -> [a]      0.25
    blank^2  -> []       0.25

so p([a]) = 0.75 and the loss is -ln(0.75).
"""

import numpy as np

from ctckit import ctc_gradient, ctc_loss, make_lattice, log_sum_exp

probs = np.full((2, 2), 0.5)
loss = ctc_loss(probs, labels=[0])
print(f"loss           : {loss:.10f}")
print(f"-ln(0.75)      : {-np.log(0.75):.10f}")

# the lattice behind the number: alpha + beta marginalizes to the same
# log-likelihood at every frame
lat = make_lattice(probs, [0])
for t in range(2):
    print(f"frame {t}: logsumexp(alpha+beta) = "
          f"{log_sum_exp(lat.alpha[t] + lat.beta[t]):+.10f}")
print(f"log-likelihood : {lat.log_likelihood:+.10f}")

# gradients are taken w.r.t. pre-softmax activations; with one frame the
# objective reduces to softmax cross-entropy, so grad = softmax - onehot
logits = np.log(np.array([[0.7, 0.3]]))
loss, grad = ctc_gradient(logits, labels=[0])
print(f"\nsingle frame: loss {loss:.6f}, gradient {grad[0]}")

# and on a random instance the analytic gradient matches central
# finite differences
rng = np.random.default_rng(0)
logits = rng.normal(0, 1, (5, 3))
labels = [1, 0]
_, grad = ctc_gradient(logits, labels)
fd = np.zeros_like(logits)
for i in range(logits.size):
    flat = logits.ravel()
    orig = flat[i]
    flat[i] = orig + 1e-5
    up = ctc_gradient(logits, labels)[0]
    flat[i] = orig - 1e-5
    down = ctc_gradient(logits, labels)[0]
    flat[i] = orig
    fd.ravel()[i] = (up - down) / 2e-5
print(f"max |analytic - finite difference| = {np.max(np.abs(grad - fd)):.2e}")

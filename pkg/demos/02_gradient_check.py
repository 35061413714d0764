"""
Checking LSTM gradients against finite differences
==================================================

The backward pass is derived by hand, so compare it against central
differences on a small random problem.
"""

import numpy as np

from bouncenet import nn

rng = np.random.default_rng(0)
params = nn.init_params(input_size=3, hidden_size=8, n_layers=2, dropout_rate=0.0, seed=0, scale=0.5)
X = rng.normal(size=(4, 12, 3))
L = np.array([12, 9, 7, 12])       # true lengths; the tail is padding
y = np.array([0, 1, 1, 0])

logits, tape = nn.forward(X, L, params, mode="eval")
print("loss:", nn.loss(logits, y))

exact = nn.backward(tape, y, params, truncation_window=None)
approx = nn.finite_diff_gradient(X, L, y, params, perturbation=1e-5)
print("max relative error:", nn.max_relative_error(exact, approx))

# a truncated window only backpropagates through the last few steps
short = nn.backward(tape, y, params, truncation_window=3)
print("gradient norm, full vs window 3:", nn.global_norm(exact), nn.global_norm(short))

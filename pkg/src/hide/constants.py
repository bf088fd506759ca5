"""Shared numeric constants for the entropy model and the coder."""

# Scale bounds keep the discretized Gaussian pmf non-degenerate for coding.
SIGMA_MIN = 0.04
SIGMA_MAX = 64.0

# Likelihood floor used by the rate loss.
P_MIN = 1e-9

# Coded symbol alphabet: integers in [SYMBOL_MIN, SYMBOL_MAX], tails folded
# into the edge bins.
SYMBOL_MIN = -64
SYMBOL_MAX = 63
ALPHABET_SIZE = SYMBOL_MAX - SYMBOL_MIN + 1

# 16-bit probability precision: quantized counts per cdf sum to this.
PROB_TOTAL = 1 << 16

# Rate-distortion weights used for multi-rate sweeps.
LAMBDA_SET = (0.0018, 0.0035, 0.0067, 0.013, 0.025, 0.05)

"""Generate the bundled spambase-like binary classification fixture.

57 non-negative features shaped like the UCI spambase columns:
48 word-frequency percentages, 6 character-frequency percentages and
3 capital-run-length statistics. Most frequency cells are zero; non-zero
cells are exponential. Run lengths are log-normal and heavy tailed.
The label comes from a latent logistic model with a handful of
interactions plus label noise, giving roughly 40% positives.

Usage: python generate_spambase_like.py [rows] > spambase_like.csv
"""
import sys

import numpy as np

N_WORD, N_CHAR = 48, 6


def main(rows: int, seed: int = 20230517) -> None:
    rng = np.random.default_rng(seed)
    spam = rng.random(rows) < 0.4

    # Per-column presence probabilities and scales, differing by class for
    # a subset of informative columns.
    present_ham = rng.uniform(0.05, 0.35, N_WORD + N_CHAR)
    present_spam = present_ham.copy()
    informative = rng.choice(N_WORD + N_CHAR, 24, replace=False)
    shift = rng.choice([-1.0, 1.0], informative.size) * rng.uniform(0.15, 0.45, informative.size)
    present_spam[informative] = np.clip(present_spam[informative] + shift, 0.01, 0.9)
    scale_ham = rng.uniform(0.1, 1.0, N_WORD + N_CHAR)
    scale_spam = scale_ham * rng.uniform(0.7, 2.0, N_WORD + N_CHAR)

    p = np.where(spam[:, None], present_spam, present_ham)
    s = np.where(spam[:, None], scale_spam, scale_ham)
    freq = (rng.random((rows, N_WORD + N_CHAR)) < p) * rng.exponential(s)
    freq = np.minimum(freq, 20.0)

    mu = np.where(spam, 1.2, 0.6)
    avg_run = 1.0 + rng.lognormal(mu, 0.6)
    longest = np.ceil(avg_run * rng.lognormal(1.0 + 0.3 * spam, 0.7))
    total = np.ceil(longest * rng.lognormal(2.2 + 0.6 * spam, 0.9))

    X = np.column_stack([freq, avg_run, longest, total])

    # Deterministic label noise keeps the task from being separable.
    flip = rng.random(rows) < 0.03
    y = np.where(flip, ~spam, spam).astype(int)

    names = [f"word_freq_{i}" for i in range(N_WORD)]
    names += [f"char_freq_{i}" for i in range(N_CHAR)]
    names += ["capital_run_length_average", "capital_run_length_longest",
              "capital_run_length_total", "spam"]
    out = sys.stdout
    out.write(",".join(names) + "\n")
    for row, label in zip(X, y):
        out.write(",".join(f"{v:.3f}" for v in row) + f",{label}\n")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 2000)

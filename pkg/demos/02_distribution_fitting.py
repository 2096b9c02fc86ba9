"""Gamma and Zipf: sampling, fitting and the CV law."""

from __future__ import annotations

import numpy as np

from burstbench.distfit import GammaParams, ZipfParams, cv, fit_gamma, fit_zipf

rng = np.random.default_rng(42)

# Burstiness is set by the shape alone: CV = 1/sqrt(alpha).
print("alpha   cv(theory)  cv(sampled)")
for alpha in (0.25, 0.5, 1.0, 4.0):
    gaps = GammaParams(alpha, 1.0).sample(rng, 100_000)
    print(f"{alpha:5.2f}   {cv(alpha):10.3f}  {gaps.std() / gaps.mean():11.3f}")

# Method-of-moments recovers shape and scale.
gaps = GammaParams(0.5, 2.0).sample(rng, 20_000)
g = fit_gamma(gaps)
print(f"\nfit_gamma: alpha={g.alpha:.3f} beta={g.beta:.3f} (true 0.5, 2.0); mean gap {g.mean:.3f}s")

# Truncated Zipf request lengths: heavy head, long tail up to l_max.
z = ZipfParams(1.1, 2048)
lengths = z.sample(rng, 50_000)
print(f"\nZipf(1.1, 2048): mean {z.mean():.1f} tokens, P(1) = {z.pmf()[0]:.3f}, "
      f"median sample {int(np.median(lengths))}")
print(f"fit_zipf on 50k draws: theta = {fit_zipf(lengths, 2048).theta:.4f}")

for theta in (1.0, 1.1, 1.2):
    print(f"theta {theta}: mean request length {ZipfParams(theta, 2048).mean():.1f}")

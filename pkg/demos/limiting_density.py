"""Limiting spectral density of a separable model against a simulated histogram.

A has two levels (1 and 4), B has two levels (0.5 and 1.5).

    python3 demos/limiting_density.py
"""

from __future__ import annotations

import numpy as np

from sepspike import PopulationSpectrum, SeparableModel, density, draw, find_edge

P, N = 400, 800


def main() -> None:
    a = np.r_[np.full(P // 4, 4.0), np.ones(P - P // 4)]
    b = np.r_[np.full(N // 2, 1.5), np.full(N // 2, 0.5)]
    model = SeparableModel(PopulationSpectrum.from_values(a), PopulationSpectrum.from_values(b))
    edge = find_edge(model)
    print(f"right edge lambda_+ = {edge.lambda_plus:.4f}")
    lam = np.concatenate([draw(model, seed=0, rep=i, vectors=False).eigenvalues for i in range(5)])
    print(f"largest simulated eigenvalue (5 draws): {lam.max():.4f}")
    bins = np.linspace(0.0, edge.lambda_plus * 1.05, 16)
    hist, _ = np.histogram(lam, bins=bins, density=True)
    mids = 0.5 * (bins[1:] + bins[:-1])
    rho = density(model, mids, eta=1e-5).rho
    print(f"{'E':>7} {'rho_c':>8} {'histogram':>10}")
    for x, r, h in zip(mids, rho, hist):
        print(f"{x:7.3f} {r:8.4f} {h:10.4f}")


if __name__ == "__main__":
    main()

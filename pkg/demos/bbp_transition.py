"""Outlier location and eigenvector overlap across the phase transition.

For A = I, B = I (p = n) a spike sigma produces an outlier only above
sigma = 2.  Below it the top eigenvalue sticks to the edge 4 and the top
eigenvector forgets the spiked direction.

    python3 demos/bbp_transition.py
"""

from __future__ import annotations

import numpy as np

from sepspike import SeparableModel, draw, predict_outliers, spiked_to
from sepspike.theory import overlap_value

N = 600
REPS = 20


def main() -> None:
    base = SeparableModel.null(N, N)
    print(f"{'sigma':>6} {'theta':>8} {'mean l1':>8} {'overlap':>8} {'mean <v,xi>^2':>14}")
    for sigma in (1.5, 2.0, 2.5, 3.0, 4.0, 6.0):
        model = spiked_to(base, [sigma])
        preds = predict_outliers(model)
        e = preds.get("a", 1)
        predicted = overlap_value(model, preds.edge, "a", sigma) if e.is_outlier else 0.0
        draws = [draw(model, seed=1, rep=i, top_k=1) for i in range(REPS)]
        lam = np.mean([d.eigenvalues[0] for d in draws])
        ov = np.mean([d.left_vectors[0, 0] ** 2 for d in draws])
        print(f"{sigma:6.2f} {e.theta:8.4f} {lam:8.4f} {predicted:8.4f} {ov:14.4f}")


if __name__ == "__main__":
    main()

"""Discrete proximal model with enumerable expectations.

Binary ``U, Z, W, A, Y`` and no covariates, so the observed law lives on
16 points. Population moments are handed to the bridge solvers as a
weighted sample, which makes every identity checkable to rounding error.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from ..bridge import assemble_moments, solve_square


@dataclass(frozen=True)
class FiniteSupportModel:
    """Latent binary confounder with one binary proxy on each side.

    ``p_y[a][u, w]`` is ``P(Y(a) = 1 | U=u, W=w)``; ``p_a[u, z]`` is
    ``P(A=1 | U=u, Z=z)``.
    """

    p_u: float = 0.4
    p_z: tuple = (0.2, 0.8)
    p_w: tuple = (0.25, 0.7)
    p_a: tuple = ((0.3, 0.5), (0.6, 0.85))
    p_y: tuple = (((0.2, 0.35), (0.55, 0.7)), ((0.3, 0.5), (0.7, 0.9)))

    @classmethod
    def random(cls, rng):
        def p(*shape):
            return rng.uniform(0.1, 0.9, shape)
        # keep proxy relevance away from zero so the 2x2 systems are well posed
        pz = np.sort(rng.uniform(0.1, 0.9, 2))
        pw = np.sort(rng.uniform(0.1, 0.9, 2))
        if pz[1] - pz[0] < 0.2:
            pz = np.array([0.2, 0.75])
        if pw[1] - pw[0] < 0.2:
            pw = np.array([0.25, 0.8])
        return cls(p_u=float(rng.uniform(0.2, 0.8)), p_z=tuple(pz), p_w=tuple(pw),
                   p_a=tuple(map(tuple, p(2, 2))),
                   p_y=tuple(tuple(map(tuple, m)) for m in p(2, 2, 2)))

    def _latent(self):
        # rows over (u, z, w, a, y0, y1) with probabilities
        rows = []
        for u, z, w, a, y0, y1 in itertools.product((0, 1), repeat=6):
            pr = (self.p_u if u else 1 - self.p_u)
            pr *= self.p_z[u] if z else 1 - self.p_z[u]
            pr *= self.p_w[u] if w else 1 - self.p_w[u]
            pr *= self.p_a[u][z] if a else 1 - self.p_a[u][z]
            for arm, yv in ((0, y0), (1, y1)):
                py = self.p_y[arm][u][w]
                pr *= py if yv else 1 - py
            rows.append((u, z, w, a, y0, y1, pr))
        return np.array(rows)

    def observed_law(self):
        """The 16 support points ``(y, a, z, w)`` and their probabilities."""
        lat = self._latent()
        y = np.where(lat[:, 3] == 1, lat[:, 5], lat[:, 4])
        keys = np.column_stack([y, lat[:, 3], lat[:, 1], lat[:, 2]])
        support = np.array(list(itertools.product((0.0, 1.0), repeat=4)))
        prob = np.array([lat[np.all(keys == s, axis=1), 6].sum() for s in support])
        return {"y": support[:, 0], "a": support[:, 1].astype(np.int8),
                "z": support[:, 2], "w": support[:, 3], "prob": prob}

    def true_cdf(self, arm, y=0.0):
        """``P(Y(a) <= y)`` from the latent law (``y`` in ``[0, 1)`` gives ``P(Y(a) = 0)``)."""
        lat = self._latent()
        ya = lat[:, 4 + arm]
        return float(lat[ya <= y, 6].sum())

    def true_shortfall(self, arm, t):
        lat = self._latent()
        return float(lat[:, 6] @ np.maximum(t - lat[:, 4 + arm], 0.0))

    @staticmethod
    def bases(law):
        bW = np.column_stack([np.ones_like(law["w"]), law["w"]])
        bZ = np.column_stack([np.ones_like(law["z"]), law["z"]])
        return bW, bZ

    def exact_bridges(self, arm, thresholds=(0.0,), levels=()):
        """Population bridges from the weighted 16-point moment system."""
        law = self.observed_law()
        bW, bZ = self.bases(law)
        ms = assemble_moments(arm, bW, bZ, law["y"], law["a"], thresholds, levels,
                              weights=law["prob"])
        return ms, solve_square(ms)

    @staticmethod
    def functional(law, arm, h, q, outcome):
        """``E[h + 1(A=a) q (B - h)]`` under the observed law."""
        ind = (law["a"] == arm).astype(float)
        return float(law["prob"] @ (h + ind * q * (outcome - h)))

    @staticmethod
    def drift_product(law, arm, h_true, q_true, h_bar, q_bar):
        """``-E[1(A=a) (q_bar - q)(h_bar - h)]``."""
        ind = (law["a"] == arm).astype(float)
        return float(-(law["prob"] @ (ind * (q_bar - q_true) * (h_bar - h_true))))

"""State extraction and the GOSPA metric (alpha = 2) with its decomposition."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .rfs import ABSENT, ClusteredPmbm

POSITION_AXES = (0, 2)


@dataclass(frozen=True)
class GospaResult:
    """GOSPA value and its decomposition.

    ``localization``, ``missed`` and ``false_`` are contributions to
    ``total ** p``; ``total`` is reported after the 1/p power.
    """

    total: float
    localization: float
    missed: float
    false_: float
    p: float = 2.0


def estimate(pmbm: ClusteredPmbm, threshold: float = 0.4) -> np.ndarray:
    """Means of the Bernoullis with r > threshold in the best global hypothesis of each cluster.

    Returns an (N, n_x) array; clusters are visited in order.
    """
    out = []
    for cl in pmbm.clusters:
        if len(cl) == 0:
            continue
        best = np.flatnonzero(cl.weights == cl.weights.max())
        # ties go to the lexicographically smallest index tuple
        g = min(best, key=lambda i: tuple(cl.choices[i]))
        for t, a in zip(cl.track_ids, cl.choices[g]):
            if a == ABSENT:
                continue
            tr = pmbm.tracks[t]
            if tr.r[a] > threshold:
                out.append(tr.means[a])
    dim = pmbm.ppp.dim
    return np.array(out).reshape(-1, dim)


def positions(states, axes=POSITION_AXES) -> np.ndarray:
    states = np.asarray(states, dtype=float)
    if states.size == 0:
        return np.zeros((0, len(axes)))
    return states.reshape(-1, states.shape[-1])[:, list(axes)]


def gospa(truth, est, c: float = 10.0, p: float = 2.0, alpha: float = 2.0) -> GospaResult:
    """GOSPA distance between two point sets (rows of ``truth`` and ``est``).

    With alpha = 2 the optimal assignment cost is

        sum_{assigned} d(x, y)^p + c^p / 2 * (#missed + #false)

    where only pairs with d < c may be assigned. Inputs are used as given;
    use :func:`positions` to extract position components of full states.
    """
    if alpha != 2:
        raise ValueError("only alpha = 2 is supported")
    X = np.asarray(truth, dtype=float).reshape(-1, np.shape(truth)[-1] if np.size(truth) else 1)
    Y = np.asarray(est, dtype=float).reshape(-1, np.shape(est)[-1] if np.size(est) else 1)
    nx, ny = X.shape[0], Y.shape[0]
    penalty = c**p / 2.0
    if nx == 0 or ny == 0:
        missed, false_ = penalty * nx, penalty * ny
        return GospaResult((missed + false_) ** (1.0 / p), 0.0, missed, false_, p)
    d = np.linalg.norm(X[:, None, :] - Y[None, :, :], axis=-1)
    # capping at c turns "leave both unassigned" (cost 2 * c^p / 2) into an assignment of cost c^p
    cost = np.minimum(d, c) ** p
    rows, cols = linear_sum_assignment(cost)
    real = d[rows, cols] < c
    loc = float((d[rows, cols][real] ** p).sum())
    n_pairs = int(real.sum())
    missed = penalty * (nx - n_pairs)
    false_ = penalty * (ny - n_pairs)
    total = loc + missed + false_
    return GospaResult(total ** (1.0 / p), loc, missed, false_, p)


def rms(values) -> float:
    values = np.asarray(values, dtype=float)
    return math.sqrt(float(np.mean(values**2))) if values.size else 0.0

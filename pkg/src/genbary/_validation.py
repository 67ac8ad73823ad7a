"""Input checks shared by the estimator and the command line."""

import numpy as np
from sklearn.utils import check_array

from .exceptions import InvalidInputError
from .measures import DiscreteMeasure


def check_measures(X, y=None):
    """Normalize user input to a list of uniform :class:`DiscreteMeasure`.

    ``X`` is either a sequence of ``(n_p, d)`` arrays (or measures), or one
    ``(n, d)`` array whose rows are grouped into measures by the labels
    ``y``. Groups are ordered by sorted label.
    """
    if y is None:
        if isinstance(X, np.ndarray):
            raise InvalidInputError("a single array needs group labels y")
        measures = []
        for item in X:
            if isinstance(item, DiscreteMeasure):
                measures.append(item)
            else:
                measures.append(DiscreteMeasure(check_array(item, dtype=float)))
    else:
        X = check_array(X, dtype=float)
        y = np.asarray(y)
        if y.shape != (X.shape[0],):
            raise InvalidInputError("y must hold one label per row of X")
        measures = [DiscreteMeasure(X[y == lab]) for lab in np.unique(y)]
    if not measures:
        raise InvalidInputError("at least one measure is required")
    dims = {m.dim for m in measures}
    if len(dims) != 1:
        raise InvalidInputError(f"measures live in different dimensions: {sorted(dims)}")
    return measures


def check_weights(beta, n_measures):
    """Barycentric weights; uniform when ``beta`` is None."""
    if beta is None:
        return np.full(n_measures, 1.0 / n_measures)
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (n_measures,):
        raise InvalidInputError(f"expected {n_measures} weights, got {beta.size}")
    if np.any(beta < 0) or not np.all(np.isfinite(beta)) or beta.sum() <= 0:
        raise InvalidInputError("weights must be finite, nonnegative and not all zero")
    return beta / beta.sum()

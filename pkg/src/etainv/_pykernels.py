"""numpy implementations of the inner loops in ``_ckernels``."""

import numpy as np


def ddim_update(x, eps, sigma, noise, a, c_prev, b_t):
    ab = a * b_t
    coef = np.sqrt(np.maximum(c_prev - sigma * sigma, 0.0)) - ab
    out = a * x + coef * eps
    if noise is not None:
        out = out + sigma * noise
    return out


def candidate_sq_gaps(residual, sigma, cands):
    diff = residual - sigma * cands
    return np.einsum("ij,ij->i", diff, diff)

"""Built-in reference instances used by the verification suite and as
CLI defaults. All in natural units (hbar = 1, sigma = 1).

  two_level:        H = diag(0, 1), rho_0 = I/2 + off-diagonal coherence 1/4
  three_level:      H = diag(0, 1, 2), diagonal weights (1/4, 1/4, 1/2)
                    plus coherences on every off-diagonal pair
  degenerate:       H = diag(0, 0, 1), weights (0.3, 0.3, 0.4) with
                    coherence between the degenerate doublet and the
                    excited level; the doublet block itself is diagonal,
                    so conditioning on it yields the impure state
                    diag(1/2, 1/2, 0) with purity 1/2
"""

from __future__ import annotations

import numpy as np


def two_level():
    h = np.diag([0.0, 1.0]).astype(complex)
    rho0 = np.array([[0.5, 0.25], [0.25, 0.5]], dtype=complex)
    return h, rho0


def three_level():
    h = np.diag([0.0, 1.0, 2.0]).astype(complex)
    rho0 = np.array(
        [
            [0.25, 0.10, 0.05j],
            [0.10, 0.25, 0.10],
            [-0.05j, 0.10, 0.50],
        ],
        dtype=complex,
    )
    return h, rho0


def degenerate():
    h = np.diag([0.0, 0.0, 1.0]).astype(complex)
    rho0 = np.array(
        [
            [0.30, 0.00, 0.10],
            [0.00, 0.30, 0.10],
            [0.10, 0.10, 0.40],
        ],
        dtype=complex,
    )
    return h, rho0


INSTANCES = {
    "two_level": two_level,
    "three_level": three_level,
    "degenerate": degenerate,
}

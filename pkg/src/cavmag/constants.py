"""Physical constants, CODATA 2018 (SI).

Pinned explicitly rather than taken from ``scipy.constants`` so results do
not drift when scipy moves to a newer CODATA release.
"""

import math

HBAR = 1.054571817e-34  # J s
K_B = 1.380649e-23  # J / K
MU_0 = 1.25663706212e-6  # N / A^2
GAMMA_E = 2 * math.pi * 28.0249514242e9  # rad / (s T), electron gyromagnetic ratio

TWO_PI = 2 * math.pi

"""Reference values of the measured YIG-sphere / copper-cavity system.

Frequencies are given as ``/2pi`` in Hz, matching how they are quoted; use
``TWO_PI *`` to get angular values.
"""

F_R_BARE = 5.23902e9  # bare TE102 cavity frequency
F_M_ZERO = 4.9817e9  # Kittel-mode frequency at zero coil current
G_COUPLING = 10.39e6  # magnon-photon coupling from the dispersion fit
G_CUT = 10.4e6  # coupling from the degeneracy-cut fit
KAPPA_M_CUT = 1.82e6  # magnon HWHM at the degeneracy cut, 55 mK, -140 dBm
KAPPA_M_CUT_SIGMA = 0.18e6
I_DEGENERACY = 2.09  # A
B_DEGENERACY = 0.18698  # T, metadata only
B_OFFSET = 0.178  # T, permanent-magnet offset, metadata only

Q_I = 7125.0
Q_C = 5439.0
Q_L = 3084.0
F_R_DRESSED_ZERO_CURRENT = 5.239452e9

KAPPA_0 = 1.05e6  # TLS-limited amplitude
KAPPA_0_SIGMA = 0.15e6
KAPPA_OFF = 0.91e6
KAPPA_OFF_SIGMA = 0.11e6
P_C_DBM = -81.0
P_C_SIGMA_DB = 6.5

ETA = 0.536
MODE_VOLUME = 5.406e-6  # m^3
N_SPINS = 1.37e18
SPIN = 2.5
G_THEORY = 12.48e6

EXCITATION_COEFF_PER_FW = 62.046
EXCITATION_EXPONENT = 1.0003

POWER_MIN_DBM = -140.0
POWER_MAX_DBM = -65.0
T_BASE = 0.055
T_WARM = 0.2

"""Reference values computed independently of the package and frozen here.

Evaluated with mpmath at 30 significant digits or with exact fractions,
straight from the textbook formulas (not through any package code).
"""

from fractions import Fraction

# B/T for 135-145 GHz over 100 us
PAPER_SLOPE_HZ_PER_S = 1.0e14
# 2*R*B/(c*T), c = 299792458 m/s exactly
BEAT_10CM_HZ = 66712.819039630409915
TAU_10CM_S = 6.6712819039630409915e-10
# radar equation, Pt 10 dBm, 0 dBi antennas, sigma -40 dBsm, 140 GHz carrier
PR_10CM_DBM = -76.362442575669096774
PR_20CM_DBM = -88.403642402228344583
# k * 123.4 ps
LEAK_BEAT_HZ = 12340.0
# 10 MSps / 2**16 and the implied delay step step/k
DDS_STEP = Fraction(10 ** 7, 2 ** 16)
DDS_STEP_HZ = 152.587890625
DELAY_STEP_S = 1.52587890625e-12
# nearest grid point to 10 kHz: 8192/125 steps -> index 66
Q_10KHZ_INDEX = 66
Q_10KHZ_HZ = 10070.80078125
# leakage beat modulo the DDS step (distance to the nearest grid point)
GRID_MISMATCH_HZ = 19.619140625
# 20*log10(2*sin(0.05)): residual of a 0.1 rad phase error
PHASE_ERR_0P1_DB = -20.003619422323798254
# 10**(-3.01/20)
COMBINER_AMPLITUDE = 0.70713120068130107847

"""Reference calibration counts and timing survey.

Bundled as defaults for planning and geometry commands and as fixtures
for regression tests: a 75-million-trial calibration counts table from
the reference experimental run and the station timing survey that fixes
its target regions.  The published mismatch counts are per-settings
totals; they are spread over the four mismatch cells as evenly as
possible, which changes nothing downstream (fits use the matched sector
only and factors are constant across mismatch cells).
"""

from __future__ import annotations

import numpy as np

from .geometry import TimingGeometry
from .trialdata import CountsTable

# Per settings pair (mqa, mqp): matched counts for (oqa, z) =
# (1,1), (2,1), (1,2), (2,2), then the mismatch total.
_CALIBRATION = {
    (1, 1): (18764031, 2339, 2390, 4794, 16),
    (2, 1): (18751159, 9481, 1647, 5474, 29),
    (1, 2): (18752299, 1527, 6879, 5730, 32),
    (2, 2): (18745211, 14655, 12333, 364, 35),
}

_MISMATCH_CELLS = ((0, 0, 1), (0, 1, 0), (1, 0, 1), (1, 1, 0))  # (oqa-1, zqa-1, zqb-1)


def calibration_counts() -> CountsTable:
    """The reference calibration counts as a full 32-cell table."""
    table = np.zeros((2, 2, 2, 2, 2), dtype=np.int64)
    for (ma, mp), (c11, c21, c12, c22, other) in _CALIBRATION.items():
        i, j = ma - 1, mp - 1
        table[i, 0, j, 0, 0] = c11
        table[i, 1, j, 0, 0] = c21
        table[i, 0, j, 1, 1] = c12
        table[i, 1, j, 1, 1] = c22
        q, r = divmod(other, len(_MISMATCH_CELLS))
        for k, (oa, za, zb) in enumerate(_MISMATCH_CELLS):
            table[i, oa, j, za, zb] = q + (1 if k < r else 0)
    return CountsTable(table=table)


def timing_geometry() -> TimingGeometry:
    """The reference station timing survey with 1-sigma uncertainties."""
    return TimingGeometry(
        s_vap_ns=1291.0,
        s_vb_ns=1429.1,
        r_vap_ns=2340.3,
        r_vb_ns=2207.7,
        d_sep_m=195.1,
        s_vap_sigma_ns=0.5,
        s_vb_sigma_ns=0.6,
        r_vap_sigma_ns=0.5,
        r_vb_sigma_ns=0.6,
        d_sep_sigma_m=0.3,
    )

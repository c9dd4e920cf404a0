"""Hand-crafted 10 ms traces whose event schedules can be worked out on paper.

Every fixture uses two base stations with piecewise-constant RSRP/SINR so
that the tick on which each condition starts to hold is known exactly.
"""

import numpy as np

from holab.tracegen import RadioTrace

STRONG, WEAK = -70.0, -90.0  # dBm; WEAK serving satisfies A2, the other side A3
GOOD, BAD = 10.0, -9.0  # dB; BAD is below Q_out = -8 dB


def piecewise(segments, dt=0.01, trace_id="fixture", speed=50.0):
    """``segments`` is a list of (ticks, rsrp[B], sinr[B]) held constant."""
    rsrp = np.concatenate([np.tile(np.asarray(r, float), (n, 1)) for n, r, _ in segments])
    sinr = np.concatenate([np.tile(np.asarray(s, float), (n, 1)) for n, _, s in segments])
    return RadioTrace(dt=dt, rsrp=rsrp, sinr=sinr, speed=speed, id=trace_id)


def dominant(ticks=500):
    """BS 0 is always far stronger; nothing should ever happen."""
    return piecewise([(ticks, [STRONG, WEAK], [GOOD, -GOOD])], trace_id="dominant")


def crossover(at=100, total=200):
    """BS 1 overtakes BS 0 at tick ``at`` and stays ahead."""
    return piecewise([(at, [STRONG, WEAK], [GOOD, -GOOD]),
                      (total - at, [WEAK, STRONG], [GOOD, GOOD])], trace_id="crossover")


def t310_expiry(start=50, bad_ticks=101, total=400):
    """BS 0 stays strongest but its SINR sits at -9 dB from tick ``start``."""
    return piecewise([(start, [STRONG, WEAK], [GOOD, -GOOD]),
                      (bad_ticks, [STRONG, WEAK], [BAD, -GOOD]),
                      (total - start - bad_ticks, [STRONG, WEAK], [GOOD, -GOOD])], trace_id="t310")


def failure_at_preparation_end(at=100, bad_from=110, total=200):
    """Crossover at ``at``; the serving SINR drops below Q_out at ``bad_from``
    so T310 is still running when preparation completes."""
    return piecewise([(at, [STRONG, WEAK], [GOOD, -GOOD]),
                      (bad_from - at, [WEAK, STRONG], [GOOD, GOOD]),
                      (total - bad_from, [WEAK, STRONG], [BAD, GOOD])], trace_id="prep_fail")


def back_and_forth(at=100, gap_ms=800, total=400):
    """Crossover to BS 1 at ``at`` and back to BS 0 ``gap_ms`` later."""
    back = at + gap_ms // 10
    return piecewise([(at, [STRONG, WEAK], [GOOD, -GOOD]),
                      (back - at, [WEAK, STRONG], [GOOD, GOOD]),
                      (total - back, [STRONG, WEAK], [GOOD, GOOD])], trace_id=f"pp{gap_ms}")


def alternating(period_s=6.0, cycles=10, ramp_s=3.0):
    """Two BSs trading dominance every ``period_s`` seconds with smooth ramps.

    The SINR follows from the RSRP difference, so whichever BS is stronger is
    also the only one worth serving from.  Both levels stay below the A2
    threshold so that A3 alone decides when the baseline hands over.
    """
    dt = 0.01
    n = int(round(period_s * cycles / dt))
    t = np.arange(n) * dt
    phase = np.sin(2 * np.pi * t / (2 * period_s))
    # a clipped sine gives plateaus joined by ramps of about ramp_s seconds
    level = np.clip(phase * (period_s / (np.pi * ramp_s)), -1.0, 1.0)
    rsrp = np.column_stack([-95.0 + 10.0 * level, -95.0 - 10.0 * level])
    p = 10 ** (rsrp / 10)
    noise = 10 ** (-120.0 / 10)
    sinr = 10 * np.log10(p / (p[:, ::-1] + noise))
    return RadioTrace(dt=dt, rsrp=rsrp, sinr=sinr, speed=50.0, id="alternating")

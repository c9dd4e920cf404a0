"""Synthetic RSRP/SINR traces for UEs moving along street polylines.

The radio model is a log-distance path loss with log-normal shadowing that is
exponentially correlated along the travelled path.  Raw traces are sampled at
the 3GPP measurement-report interval (120 ms) and then brought to a 10 ms grid
with Fourier interpolation followed by a 2 s moving average.
"""

from __future__ import annotations

import csv
import gzip
import io
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import signal as sps

RAW_DT = 0.12
RESAMPLE_FACTOR = 12
SMOOTHING_WINDOW_S = 2.0


class TraceFormatError(ValueError):
    """Raised when a trace CSV or its metadata sidecar cannot be parsed."""


@dataclass(frozen=True)
class RadioMap:
    """Base-station layout and propagation parameters.

    Positions are in meters, powers in dBm.  ``pl0`` is the path loss at the
    reference distance of 1 m; ``bbox`` is ``(xmin, ymin, xmax, ymax)``.
    """

    bs_positions: np.ndarray
    tx_power: np.ndarray
    pathloss_exponent: float = 3.5
    shadow_sigma: float = 6.0
    shadow_corr_distance: float = 50.0
    noise_floor: float = -100.0
    pl0: float = 43.0
    bbox: tuple[float, float, float, float] = (0.0, 0.0, 1000.0, 1000.0)

    def __post_init__(self):
        pos = np.asarray(self.bs_positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 2:
            raise ValueError("bs_positions must have shape (B, 2)")
        if pos.shape[0] < 2:
            raise ValueError("a radio map needs at least 2 base stations")
        tx = np.broadcast_to(np.asarray(self.tx_power, dtype=float), (pos.shape[0],)).copy()
        if not np.all(np.isfinite(tx)):
            raise ValueError("tx_power must be finite")
        if not self.pathloss_exponent > 0:
            raise ValueError("pathloss_exponent must be > 0")
        if not self.shadow_corr_distance > 0:
            raise ValueError("shadow_corr_distance must be > 0")
        if self.shadow_sigma < 0:
            raise ValueError("shadow_sigma must be >= 0")
        object.__setattr__(self, "bs_positions", pos)
        object.__setattr__(self, "tx_power", tx)
        object.__setattr__(self, "bbox", tuple(float(v) for v in self.bbox))

    @property
    def n_bs(self) -> int:
        return self.bs_positions.shape[0]

    def pathloss(self, distance):
        d = np.maximum(np.asarray(distance, dtype=float), 1.0)
        return self.pl0 + 10.0 * self.pathloss_exponent * np.log10(d)


@dataclass(frozen=True)
class RouteSpec:
    waypoints: np.ndarray
    speed: float  # km/h
    duration: float  # s
    seed: int = 0

    def __post_init__(self):
        wp = np.asarray(self.waypoints, dtype=float)
        if wp.ndim != 2 or wp.shape[1] != 2 or wp.shape[0] < 2:
            raise ValueError("a route needs at least 2 waypoints of shape (2,)")
        if not self.speed > 0:
            raise ValueError("speed must be > 0")
        if not self.duration > 0:
            raise ValueError("duration must be > 0")
        object.__setattr__(self, "waypoints", wp)

    @property
    def length(self) -> float:
        return float(np.sum(np.hypot(*np.diff(self.waypoints, axis=0).T)))

    def at_speed(self, speed: float, duration: float | None = None) -> "RouteSpec":
        """Same street path driven at another speed.

        By default the duration is rescaled so that the UE covers the same
        distance as before.
        """
        if duration is None:
            duration = self.duration * self.speed / speed
        return replace(self, speed=float(speed), duration=float(duration))


@dataclass
class RadioTrace:
    dt: float
    rsrp: np.ndarray
    sinr: np.ndarray
    speed: float
    id: str = ""
    split: str = ""

    def __post_init__(self):
        self.rsrp = np.asarray(self.rsrp, dtype=float)
        self.sinr = np.asarray(self.sinr, dtype=float)
        if self.rsrp.ndim != 2 or self.rsrp.shape != self.sinr.shape:
            raise ValueError("rsrp and sinr must be matrices of identical shape")
        if not (np.all(np.isfinite(self.rsrp)) and np.all(np.isfinite(self.sinr))):
            raise ValueError("trace entries must be finite")
        if not self.dt > 0:
            raise ValueError("dt must be > 0")

    @property
    def n_samples(self) -> int:
        return self.rsrp.shape[0]

    @property
    def n_bs(self) -> int:
        return self.rsrp.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples * self.dt

    def head(self, seconds: float) -> "RadioTrace":
        """Prefix of the trace covering ``seconds``."""
        n = min(self.n_samples, int(round(seconds / self.dt)))
        return replace(self, rsrp=self.rsrp[:n].copy(), sinr=self.sinr[:n].copy())

    def permuted(self, perm: Sequence[int]) -> "RadioTrace":
        """Relabel base stations: column ``j`` of the result is column ``perm[j]``."""
        perm = np.asarray(perm, dtype=int)
        return replace(self, rsrp=self.rsrp[:, perm], sinr=self.sinr[:, perm])


# ---------------------------------------------------------------- radio model


def default_map(seed: int = 0, **overrides) -> RadioMap:
    """Five macro BSs on a randomly perturbed pentagon over a 1 km x 1 km area."""
    rng = np.random.default_rng(seed)
    angles = np.pi / 2 + 2 * np.pi * np.arange(5) / 5 + rng.uniform(-0.25, 0.25, 5)
    radius = 320.0 + rng.uniform(-40.0, 40.0, 5)
    pos = np.column_stack([500.0 + radius * np.cos(angles), 500.0 + radius * np.sin(angles)])
    params = dict(bs_positions=pos, tx_power=np.full(5, 46.0))
    params.update(overrides)
    return RadioMap(**params)


def random_route(
    seed: int,
    speed: float = 50.0,
    duration: float = 180.0,
    block: float = 100.0,
    bbox: tuple[float, float, float, float] = (0.0, 0.0, 1000.0, 1000.0),
    margin: float = 100.0,
) -> RouteSpec:
    """Random-turn walk on a Manhattan street grid, long enough for the drive.

    Streets are the grid lines spaced ``block`` meters apart inside ``bbox``
    shrunk by ``margin``.  U-turns are never taken.
    """
    rng = np.random.default_rng(seed)
    xmin, ymin, xmax, ymax = bbox
    xs = np.arange(xmin + margin, xmax - margin + 1e-9, block)
    ys = np.arange(ymin + margin, ymax - margin + 1e-9, block)
    ix, iy = int(rng.integers(len(xs))), int(rng.integers(len(ys)))
    needed = speed / 3.6 * duration + block
    moves = [(1, 0), (-1, 0), (0, 1), (0, -1)]
    heading = moves[int(rng.integers(4))]
    pts = [(xs[ix], ys[iy])]
    travelled = 0.0
    while travelled < needed:
        options = [m for m in moves if m != (-heading[0], -heading[1])
                   and 0 <= ix + m[0] < len(xs) and 0 <= iy + m[1] < len(ys)]
        # keep going straight most of the time so routes look like drives
        if heading in options and rng.random() < 0.6:
            step = heading
        else:
            step = options[int(rng.integers(len(options)))]
        ix, iy = ix + step[0], iy + step[1]
        heading = step
        pts.append((xs[ix], ys[iy]))
        travelled += block
    return RouteSpec(waypoints=np.array(pts), speed=speed, duration=duration, seed=seed)


def _positions_along(waypoints: np.ndarray, s: np.ndarray) -> np.ndarray:
    seg = np.diff(waypoints, axis=0)
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    s = np.clip(s, 0.0, cum[-1])
    x = np.interp(s, cum, waypoints[:, 0])
    y = np.interp(s, cum, waypoints[:, 1])
    return np.column_stack([x, y])


def _path_shadowing(rng: np.random.Generator, length: float, n_bs: int, sigma: float,
                    corr: float, spacing: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """AR(1) shadowing on a fixed distance grid, one independent process per BS.

    The grid depends only on the path, so the same route driven at another
    speed sees the same shadowing profile.
    """
    n = int(math.ceil(length / spacing)) + 2
    grid = np.arange(n) * spacing
    rho = math.exp(-spacing / corr)
    z = rng.standard_normal((n, n_bs))
    out = np.empty((n, n_bs))
    out[0] = sigma * z[0]
    innov = sigma * math.sqrt(1.0 - rho * rho)
    for k in range(1, n):
        out[k] = rho * out[k - 1] + innov * z[k]
    return grid, out


def compute_sinr(rsrp_dbm, noise_floor: float) -> np.ndarray:
    """Per-BS SINR in dB when every other BS interferes at its received power.

    Works on a vector of B powers or on a ``(T, B)`` matrix (row-wise).
    """
    p = 10.0 ** (np.asarray(rsrp_dbm, dtype=float) / 10.0)
    noise = 10.0 ** (noise_floor / 10.0)
    total = p.sum(axis=-1, keepdims=True)
    return 10.0 * np.log10(p / (total - p + noise))


def generate_trace(radio_map: RadioMap, route: RouteSpec, dt: float = RAW_DT,
                   trace_id: str = "") -> RadioTrace:
    """Sample RSRP and SINR every ``dt`` seconds while driving ``route``."""
    xmin, ymin, xmax, ymax = radio_map.bbox
    wp = route.waypoints
    if (wp[:, 0].min() < xmin or wp[:, 0].max() > xmax
            or wp[:, 1].min() < ymin or wp[:, 1].max() > ymax):
        raise ValueError(f"route leaves the bounding box {radio_map.bbox}")
    n = int(round(route.duration / dt))
    if n < 2:
        raise ValueError("route duration shorter than two samples")
    s = route.speed / 3.6 * dt * np.arange(n)
    pos = _positions_along(wp, s)
    dist = np.hypot(pos[:, None, 0] - radio_map.bs_positions[None, :, 0],
                    pos[:, None, 1] - radio_map.bs_positions[None, :, 1])
    rsrp = radio_map.tx_power[None, :] - radio_map.pathloss(dist)
    if radio_map.shadow_sigma > 0:
        rng = np.random.default_rng(route.seed)
        grid, shadow = _path_shadowing(rng, route.length, radio_map.n_bs,
                                       radio_map.shadow_sigma, radio_map.shadow_corr_distance)
        s_path = np.minimum(s, route.length)
        rsrp = rsrp - np.column_stack([np.interp(s_path, grid, shadow[:, b])
                                       for b in range(radio_map.n_bs)])
    sinr = compute_sinr(rsrp, radio_map.noise_floor)
    return RadioTrace(dt=dt, rsrp=rsrp, sinr=sinr, speed=float(route.speed), id=trace_id)


# ---------------------------------------------------------------- resampling


def fourier_resample(x, factor: int) -> np.ndarray:
    """Band-limited upsampling by an integer factor via FFT zero padding.

    Operates along axis 0, so a ``(T, B)`` matrix is resampled column-wise.
    The signal is treated as one period of a periodic sequence; the original
    samples are reproduced exactly at every ``factor``-th output.
    """
    if not isinstance(factor, (int, np.integer)) or factor < 1:
        raise ValueError("factor must be a positive integer")
    x = np.asarray(x, dtype=float)
    if x.shape[0] < 2:
        raise ValueError("need at least 2 samples")
    if factor == 1:
        return x.copy()
    return sps.resample(x, x.shape[0] * int(factor), axis=0)


def moving_average(x, window: int) -> np.ndarray:
    """Centered moving average along axis 0; the window shrinks at the edges.

    For an even ``window`` the extra sample is taken from the past.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    x = np.asarray(x, dtype=float)
    if window == 1:
        return x.copy()
    n = x.shape[0]
    c = np.concatenate([np.zeros((1,) + x.shape[1:]), np.cumsum(x, axis=0)])
    idx = np.arange(n)
    lo = np.maximum(idx - window // 2, 0)
    hi = np.minimum(idx + (window - 1) // 2 + 1, n)
    counts = (hi - lo).reshape((n,) + (1,) * (x.ndim - 1))
    out = (c[hi] - c[lo]) / counts
    # cumsum differences leave rounding noise; never leave the input range
    return np.clip(out, x.min(axis=0), x.max(axis=0))


def resample_trace(trace: RadioTrace, factor: int = RESAMPLE_FACTOR,
                   window_s: float = SMOOTHING_WINDOW_S) -> RadioTrace:
    dt = trace.dt / factor
    window = max(1, int(round(window_s / dt)))
    rsrp = moving_average(fourier_resample(trace.rsrp, factor), window)
    sinr = moving_average(fourier_resample(trace.sinr, factor), window)
    return replace(trace, dt=dt, rsrp=rsrp, sinr=sinr)


def build_dataset(radio_map: RadioMap, routes: Sequence[RouteSpec], n_train: int | None = None,
                  factor: int = RESAMPLE_FACTOR, window_s: float = SMOOTHING_WINDOW_S,
                  id_prefix: str = "route") -> list[RadioTrace]:
    """Generate, resample and smooth one trace per route.

    The first ``n_train`` routes are tagged ``train`` and the rest ``test``;
    by default two thirds go to training (10 of 15).
    """
    if not routes:
        raise ValueError("need at least one route")
    if n_train is None:
        n_train = (2 * len(routes)) // 3
    out = []
    for i, route in enumerate(routes):
        raw = generate_trace(radio_map, route, trace_id=f"{id_prefix}{i:02d}")
        tr = resample_trace(raw, factor, window_s)
        tr.split = "train" if i < n_train else "test"
        out.append(tr)
    return out


# ---------------------------------------------------------------- file I/O


def _open_text(path: Path, mode: str):
    if path.suffix == ".gz":
        # no stored name and a fixed mtime keep compressed files byte-identical
        fh = open(path, mode + "b")
        raw = gzip.GzipFile(filename="", mode=mode + "b", fileobj=fh, mtime=0)
        wrapper = io.TextIOWrapper(raw, newline="")
        return _Closing(wrapper, fh)
    return open(path, mode, newline="")


class _Closing:
    """Context manager closing a gzip text wrapper and its underlying file."""

    def __init__(self, wrapper, fh):
        self.wrapper, self.fh = wrapper, fh

    def __enter__(self):
        return self.wrapper

    def __exit__(self, *exc):
        try:
            self.wrapper.close()
        finally:
            self.fh.close()


def sidecar_path(path) -> Path:
    path = Path(path)
    name = path.name
    for suffix in (".csv.gz", ".csv"):
        if name.endswith(suffix):
            return path.with_name(name[: -len(suffix)] + ".json")
    return path.with_name(name + ".json")


def write_trace(path, trace: RadioTrace) -> None:
    """Write ``trace`` as CSV plus a JSON metadata sidecar.

    Floats are written with ``repr`` so that reading back is bit-exact.  A
    ``.gz`` suffix selects gzip compression.
    """
    path = Path(path)
    b = trace.n_bs
    header = ["t"] + [f"rsrp_{i}" for i in range(b)] + [f"sinr_{i}" for i in range(b)]
    with _open_text(path, "w") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        rows = np.hstack([trace.rsrp, trace.sinr]).tolist()
        for k, row in enumerate(rows):
            w.writerow([repr(k * trace.dt)] + [repr(v) for v in row])
    meta = {"id": trace.id, "dt": trace.dt, "speed_kmh": trace.speed,
            "n_bs": b, "split": trace.split}
    sidecar_path(path).write_text(json.dumps(meta, indent=2) + "\n")


def read_trace(path) -> RadioTrace:
    path = Path(path)
    meta_path = sidecar_path(path)
    try:
        meta = json.loads(meta_path.read_text())
        dt = float(meta["dt"])
        n_bs = int(meta["n_bs"])
    except FileNotFoundError:
        raise
    except (ValueError, KeyError, TypeError) as exc:
        raise TraceFormatError(f"{meta_path}: bad metadata ({exc})") from exc
    expected = ["t"] + [f"rsrp_{i}" for i in range(n_bs)] + [f"sinr_{i}" for i in range(n_bs)]
    rows = []
    with _open_text(path, "r") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise TraceFormatError(f"{path}:1: empty file")
        if len(header) != len(expected):
            raise TraceFormatError(
                f"{path}:1: column count mismatch (got {len(header)}, expected {len(expected)})")
        if header != expected:
            raise TraceFormatError(f"{path}:1: malformed header {header!r}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(expected):
                raise TraceFormatError(
                    f"{path}:{lineno}: column count mismatch (got {len(row)}, expected {len(expected)})")
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise TraceFormatError(f"{path}:{lineno}: non-numeric cell ({exc})") from exc
    if len(rows) < 1:
        raise TraceFormatError(f"{path}: no samples")
    data = np.array(rows)
    t = data[:, 0]
    expected_t = np.arange(len(t)) * dt
    bad = np.flatnonzero(~np.isclose(t, expected_t, rtol=1e-9, atol=1e-9 * dt))
    if bad.size:
        raise TraceFormatError(
            f"{path}:{bad[0] + 2}: sample time {t[bad[0]]!r} inconsistent with dt={dt!r} from metadata")
    return RadioTrace(dt=dt, rsrp=data[:, 1:1 + n_bs], sinr=data[:, 1 + n_bs:],
                      speed=float(meta.get("speed_kmh", 0.0)), id=str(meta.get("id", "")),
                      split=str(meta.get("split", "")))

"""Preprocessing: raw two-stream recordings to windowed training samples.

The pipeline per (subject, session):

1. align the 200 Hz emg stream with the slower angle stream by pairing every
   emg frame with its nearest-in-time angle frame, dropping pairs farther
   apart than 10 ms;
2. low-pass both columns of the aligned table (emg at 10 Hz, angles at 4 Hz)
   with a 4th-order Butterworth applied forward-backward, so the filter has
   zero phase and unit DC gain;
3. cut sliding windows of 128 consecutive emg rows; the target is the angle
   vector at each window's last row.

Windows are kept as (recording, start_row) indices and materialised per
batch, which avoids duplicating overlapping window data in memory.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.signal import butter, filtfilt

from .errors import ConfigError, DataError, EmptyOverlapError

log = logging.getLogger("myograsp.datapipe")

__all__ = [
    "RawStream",
    "AlignedRecording",
    "Sample",
    "WindowSet",
    "NormStats",
    "WindowSource",
    "align",
    "lowpass",
    "make_windows",
    "concat_windows",
    "normalize",
    "channel_stats",
    "read_stream_csv",
    "write_stream_csv",
    "read_manifest",
    "save_archive",
    "load_archive",
    "preprocess_session",
    "WINDOW_SIZE",
    "EMG_CUTOFF_HZ",
    "ANGLE_CUTOFF_HZ",
    "MAX_GAP_MS",
    "FILTER_ORDER",
    "EDGE_MARGIN_ROWS",
    "ARCHIVE_FORMAT",
]

WINDOW_SIZE = 128
EMG_CUTOFF_HZ = 10.0
ANGLE_CUTOFF_HZ = 4.0
MAX_GAP_MS = 10.0
FILTER_ORDER = 4
# rows at each end of a filtered recording whose targets are not trusted
EDGE_MARGIN_ROWS = 64
ARCHIVE_FORMAT = "myograsp-archive/1"


@dataclass
class RawStream:
    subject_id: int
    session_id: int
    kind: str                 # "emg" or "angles"
    timestamps_ms: np.ndarray  # (N,), strictly increasing
    frames: np.ndarray         # (N, C)
    nominal_rate: float

    def validate(self) -> "RawStream":
        ts = np.asarray(self.timestamps_ms, dtype=np.float64)
        fr = np.asarray(self.frames, dtype=np.float64)
        if self.kind not in ("emg", "angles"):
            raise DataError(f"unknown stream kind {self.kind!r}")
        if ts.ndim != 1 or fr.ndim != 2 or len(ts) != len(fr):
            raise DataError(f"stream shape mismatch: {ts.shape} timestamps, {fr.shape} frames")
        if len(ts) == 0:
            raise DataError("empty stream")
        if np.any(np.diff(ts) <= 0):
            raise DataError("timestamps must be strictly increasing")
        if self.kind == "emg":
            if fr.shape[1] != 8:
                raise DataError(f"emg streams carry 8 channels, got {fr.shape[1]}")
            if np.any(np.abs(fr) > 128):
                raise DataError("emg values must lie within [-128, +128]")
        self.timestamps_ms = ts
        self.frames = fr
        return self


@dataclass
class AlignedRecording:
    subject_id: int
    session_id: int
    timestamps_ms: np.ndarray  # (M,)
    emg: np.ndarray            # (M, 8)
    angles: np.ndarray         # (M, A)

    def __len__(self):
        return len(self.timestamps_ms)


@dataclass
class Sample:
    window: np.ndarray        # (window_size, 8)
    target: np.ndarray        # (A,)
    domain_label: int
    subject_id: int
    session_id: int
    start_timestamp: float
    end_timestamp: float


def align(emg: RawStream, angles: RawStream, max_gap: float = MAX_GAP_MS) -> AlignedRecording:
    """Pair each emg frame with the nearest-in-time angle frame.

    Pairs whose timestamp difference exceeds ``max_gap`` ms are dropped;
    raises EmptyOverlapError when nothing survives.
    """
    emg.validate()
    angles.validate()
    if (emg.subject_id, emg.session_id) != (angles.subject_id, angles.session_id):
        raise DataError("streams to align must come from the same subject and session")
    if emg.kind != "emg" or angles.kind != "angles":
        raise DataError("align expects (emg, angles) streams in that order")

    et = emg.timestamps_ms
    at = angles.timestamps_ms
    pos = np.searchsorted(at, et)
    left = np.clip(pos - 1, 0, len(at) - 1)
    right = np.clip(pos, 0, len(at) - 1)
    pick = np.where(np.abs(et - at[left]) <= np.abs(at[right] - et), left, right)
    gaps = np.abs(et - at[pick])
    keep = gaps <= max_gap
    if not np.any(keep):
        raise EmptyOverlapError(
            f"subject {emg.subject_id} session {emg.session_id}: no emg/angle pairs "
            f"within {max_gap} ms")
    dropped = int((~keep).sum())
    if dropped:
        log.debug("align s%d r%d: dropped %d of %d frames (gap > %.1f ms)",
                  emg.subject_id, emg.session_id, dropped, len(et), max_gap)
    return AlignedRecording(
        subject_id=emg.subject_id,
        session_id=emg.session_id,
        timestamps_ms=et[keep].copy(),
        emg=emg.frames[keep].copy(),
        angles=angles.frames[pick[keep]].copy(),
    )


def lowpass(values: np.ndarray, sample_rate: float, cutoff: float,
            order: int = FILTER_ORDER) -> np.ndarray:
    """Zero-phase Butterworth low-pass along axis 0, length preserving.

    Forward-backward application squares the magnitude response, so the
    amplitude ratio at the cutoff frequency is ~0.5 instead of -3 dB.
    """
    if cutoff >= sample_rate / 2:
        raise ValueError(f"cutoff {cutoff} Hz must be below Nyquist ({sample_rate / 2} Hz)")
    values = np.asarray(values, dtype=np.float64)
    b, a = butter(order, cutoff, btype="low", fs=sample_rate)
    if values.shape[0] <= 3 * max(len(a), len(b)):
        raise DataError(f"{values.shape[0]} rows are too few for zero-phase "
                        f"filtering at order {order}")
    return filtfilt(b, a, values, axis=0)


def filter_recording(rec: AlignedRecording, sample_rate: float,
                     emg_cutoff: float = EMG_CUTOFF_HZ,
                     angle_cutoff: float = ANGLE_CUTOFF_HZ) -> AlignedRecording:
    """Low-pass both columns of an aligned table (align first, then filter)."""
    return AlignedRecording(
        subject_id=rec.subject_id,
        session_id=rec.session_id,
        timestamps_ms=rec.timestamps_ms,
        emg=lowpass(rec.emg, sample_rate, emg_cutoff),
        angles=lowpass(rec.angles, sample_rate, angle_cutoff),
    )


# ---------------------------------------------------------------------------
# windows
# ---------------------------------------------------------------------------

class WindowSet:
    """Sliding windows over one or more recordings, stored as indices."""

    def __init__(self, recordings: list, rec_index: np.ndarray,
                 start_row: np.ndarray, window: int = WINDOW_SIZE):
        self.recordings = recordings
        self.rec_index = np.asarray(rec_index, dtype=np.int32)
        self.start_row = np.asarray(start_row, dtype=np.int64)
        self.window = int(window)
        self._metadata()

    def _metadata(self):
        n = len(self.rec_index)
        self.subject_ids = np.empty(n, dtype=np.int32)
        self.session_ids = np.empty(n, dtype=np.int32)
        self.start_ts = np.empty(n, dtype=np.float64)
        self.end_ts = np.empty(n, dtype=np.float64)
        for ri, rec in enumerate(self.recordings):
            mask = self.rec_index == ri
            if not np.any(mask):
                continue
            starts = self.start_row[mask]
            self.subject_ids[mask] = rec.subject_id
            self.session_ids[mask] = rec.session_id
            self.start_ts[mask] = rec.timestamps_ms[starts]
            self.end_ts[mask] = rec.timestamps_ms[starts + self.window - 1]

    def __len__(self):
        return len(self.rec_index)

    @property
    def n_angles(self) -> int:
        return self.recordings[0].angles.shape[1]

    def materialize(self, idx: np.ndarray):
        """Gather (windows (k, window, 8), targets (k, A)) for sample indices."""
        idx = np.asarray(idx)
        k = len(idx)
        x = np.empty((k, self.window, 8))
        y = np.empty((k, self.n_angles))
        for j, i in enumerate(idx):
            rec = self.recordings[self.rec_index[i]]
            s = self.start_row[i]
            x[j] = rec.emg[s:s + self.window]
            y[j] = rec.angles[s + self.window - 1]
        return x, y

    def sample(self, i: int, domain_label: int = -1) -> Sample:
        x, y = self.materialize(np.array([i]))
        return Sample(window=x[0], target=y[0], domain_label=domain_label,
                      subject_id=int(self.subject_ids[i]),
                      session_id=int(self.session_ids[i]),
                      start_timestamp=float(self.start_ts[i]),
                      end_timestamp=float(self.end_ts[i]))

    def samples(self):
        return [self.sample(i) for i in range(len(self))]


def make_windows(rec: AlignedRecording, window: int = WINDOW_SIZE, stride: int = 8,
                 target_margin: int = 0) -> WindowSet:
    """Cut sliding windows of ``window`` consecutive rows from one recording.

    The target of each window is the angle vector at its last row.  Windows
    whose target falls within ``target_margin`` rows of either end of the
    recording are dropped (filter transients live there).
    """
    m = len(rec)
    if m < window:
        raise DataError(f"recording has {m} rows; need at least {window} for one window")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    starts = np.arange(0, m - window + 1, stride, dtype=np.int64)
    if target_margin > 0:
        tgt = starts + window - 1
        starts = starts[(tgt >= target_margin) & (tgt < m - target_margin)]
    return WindowSet([rec], np.zeros(len(starts), dtype=np.int32), starts, window)


def concat_windows(sets: list) -> WindowSet:
    if not sets:
        raise ValueError("nothing to concatenate")
    window = sets[0].window
    if any(ws.window != window for ws in sets):
        raise ValueError("window sizes differ")
    recordings = []
    rec_index = []
    start_row = []
    for ws in sets:
        offset = len(recordings)
        recordings.extend(ws.recordings)
        rec_index.append(ws.rec_index + offset)
        start_row.append(ws.start_row)
    return WindowSet(recordings, np.concatenate(rec_index),
                     np.concatenate(start_row), window)


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

@dataclass
class NormStats:
    mean: np.ndarray  # (8,)
    std: np.ndarray   # (8,)

    def apply(self, windows: np.ndarray) -> np.ndarray:
        return (windows - self.mean) / self.std


def normalize(windows: np.ndarray, stats: NormStats | None = None):
    """Per-channel standardisation of (N, T, C) window arrays.

    Without ``stats`` the statistics are computed from the given windows
    (the training portion); pass the returned stats to normalise validation
    and test data so nothing leaks from the held-out rows.  Zero-variance
    channels get their std clamped to 1 with a warning.
    """
    windows = np.asarray(windows, dtype=np.float64)
    if len(windows) == 0:
        raise ValueError("normalize needs at least one sample")
    if stats is None:
        flat = windows.reshape(-1, windows.shape[-1])
        mean = flat.mean(axis=0)
        std = flat.std(axis=0)
        if np.any(std == 0):
            warnings.warn("zero-variance channel; std clamped to 1")
            std = np.where(std == 0, 1.0, std)
        stats = NormStats(mean=mean, std=std)
    return stats.apply(windows), stats


def channel_stats(window_set: WindowSet, indices: np.ndarray,
                  chunk: int = 4096) -> NormStats:
    """Training-set channel statistics, streamed to bound memory."""
    indices = np.asarray(indices)
    if len(indices) == 0:
        raise ValueError("channel_stats needs a non-empty training set")
    count = 0
    total = np.zeros(8)
    total_sq = np.zeros(8)
    for lo in range(0, len(indices), chunk):
        x, _ = window_set.materialize(indices[lo:lo + chunk])
        flat = x.reshape(-1, 8)
        count += len(flat)
        total += flat.sum(axis=0)
        total_sq += (flat ** 2).sum(axis=0)
    mean = total / count
    var = total_sq / count - mean ** 2
    std = np.sqrt(np.maximum(var, 0.0))
    if np.any(std == 0):
        warnings.warn("zero-variance channel; std clamped to 1")
        std = np.where(std == 0, 1.0, std)
    return NormStats(mean=mean, std=std)


class WindowSource:
    """Batch source over a WindowSet subset; normalises at materialisation."""

    def __init__(self, window_set: WindowSet, indices: np.ndarray,
                 stats: NormStats | None = None, domains: np.ndarray | None = None):
        self.window_set = window_set
        self.indices = np.asarray(indices)
        self.stats = stats
        self.domains = None if domains is None else np.asarray(domains, dtype=np.int64)
        if self.domains is not None and len(self.domains) != len(self.indices):
            raise ValueError("domain labels must match index count")

    def __len__(self):
        return len(self.indices)

    def batch(self, idx: np.ndarray):
        x, y = self.window_set.materialize(self.indices[idx])
        if self.stats is not None:
            x = self.stats.apply(x)
        d = None if self.domains is None else self.domains[idx]
        return x, y, d


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

def write_stream_csv(path, stream: RawStream) -> None:
    """CSV with header timestamp_ms,ch0..ch7 (emg) or timestamp_ms,angle0..N."""
    prefix = "ch" if stream.kind == "emg" else "angle"
    cols = stream.frames.shape[1]
    header = "timestamp_ms," + ",".join(f"{prefix}{i}" for i in range(cols))
    data = np.column_stack([stream.timestamps_ms, stream.frames])
    np.savetxt(path, data, fmt="%.6f", delimiter=",", header=header, comments="")


def read_stream_csv(path, subject_id: int, session_id: int, kind: str,
                    nominal_rate: float) -> RawStream:
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except OSError as exc:
        raise DataError(f"cannot read stream file {path}: {exc}") from exc
    if data.shape[1] < 2:
        raise DataError(f"{path}: expected timestamp plus at least one channel")
    return RawStream(subject_id=subject_id, session_id=session_id, kind=kind,
                     timestamps_ms=data[:, 0], frames=data[:, 1:],
                     nominal_rate=nominal_rate).validate()


def read_manifest(path) -> dict:
    """Dataset manifest: mode, rates, recording file paths per (subject, session)."""
    try:
        with open(path) as fh:
            manifest = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"manifest {path} is not valid JSON: {exc}") from exc
    for key in ("mode", "n_angles", "emg_rate", "angle_rate", "recordings"):
        if key not in manifest:
            raise DataError(f"manifest {path} misses required key {key!r}")
    return manifest


def preprocess_session(emg: RawStream, angles: RawStream, stride: int,
                       max_gap: float = MAX_GAP_MS,
                       emg_cutoff: float = EMG_CUTOFF_HZ,
                       angle_cutoff: float = ANGLE_CUTOFF_HZ,
                       target_margin: int = EDGE_MARGIN_ROWS):
    """align -> filter -> window for one session; returns (WindowSet, AlignedRecording)."""
    rec = align(emg, angles, max_gap=max_gap)
    rec = filter_recording(rec, emg.nominal_rate, emg_cutoff, angle_cutoff)
    ws = make_windows(rec, WINDOW_SIZE, stride, target_margin=target_margin)
    log.info("session s%d r%d: %d aligned rows, %d windows",
             rec.subject_id, rec.session_id, len(rec), len(ws))
    return ws, rec


def save_archive(path, window_set: WindowSet, meta: dict) -> None:
    """Persist aligned recordings plus the window index as one .npz file."""
    sessions = []
    payload = {}
    for i, rec in enumerate(window_set.recordings):
        payload[f"rec{i}_ts"] = rec.timestamps_ms
        payload[f"rec{i}_emg"] = rec.emg
        payload[f"rec{i}_angles"] = rec.angles
        sessions.append({"subject": rec.subject_id, "session": rec.session_id,
                         "rows": len(rec),
                         "t_start": float(rec.timestamps_ms[0]),
                         "t_end": float(rec.timestamps_ms[-1])})
    header = {"format": ARCHIVE_FORMAT, "window": window_set.window,
              "sessions": sessions, "meta": meta}
    payload["__header__"] = np.frombuffer(
        json.dumps(header, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    payload["windows_rec_index"] = window_set.rec_index
    payload["windows_start_row"] = window_set.start_row
    buf = io.BytesIO()
    np.savez(buf, **payload)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_archive(path):
    """Load a sample archive; returns (WindowSet, meta dict)."""
    try:
        data = np.load(path)
    except OSError as exc:
        raise DataError(f"cannot read archive {path}: {exc}") from exc
    with data:
        if "__header__" not in data:
            raise DataError(f"{path}: not a myograsp archive")
        header = json.loads(bytes(data["__header__"]).decode("utf-8"))
        if header.get("format") != ARCHIVE_FORMAT:
            raise DataError(f"{path}: unsupported archive format {header.get('format')!r}")
        recordings = []
        for i, sess in enumerate(header["sessions"]):
            recordings.append(AlignedRecording(
                subject_id=int(sess["subject"]), session_id=int(sess["session"]),
                timestamps_ms=data[f"rec{i}_ts"], emg=data[f"rec{i}_emg"],
                angles=data[f"rec{i}_angles"]))
        ws = WindowSet(recordings, data["windows_rec_index"],
                       data["windows_start_row"], header["window"])
    meta = dict(header["meta"])
    meta["sessions"] = header["sessions"]
    return ws, meta


def plan_to_csv(path, plan, window_set: WindowSet) -> None:
    """Audit file: one row per sample with its split assignment."""
    names = {0: "train", 1: "validation", 2: "test", 3: "excluded"}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "protocol", "fold", "subject", "session",
                    "start_ts", "end_ts", "assignment", "domain_label"])
        for i in range(len(window_set)):
            w.writerow([i, plan.protocol, plan.fold_index,
                        window_set.subject_ids[i], window_set.session_ids[i],
                        f"{window_set.start_ts[i]:.3f}", f"{window_set.end_ts[i]:.3f}",
                        names[int(plan.assignment[i])], int(plan.domain_labels[i])])

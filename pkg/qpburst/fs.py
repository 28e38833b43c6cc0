"""
Run-directory file formats: the QPIQ binary IQ stream, CSV tables and
canonical JSON.
"""
from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Iterator, List, Optional, Sequence

import numpy as np
from numpy.typing import ArrayLike

from .errors import FormatError
from .logger import verbose
from .models import (
    AlignedHistogram,
    CorrelationReport,
    IqStream,
    P1Series,
    QpTrace,
    QubitRecords,
    RadiationEvents,
    TlsJump,
    TriggerEvent,
)

QPIQ_MAGIC = b"QPIQ"
QPIQ_VERSION = 1
QPIQ_HEADER = struct.Struct("<4sHQIQ")  # magic, version, start_time_ns, bin_width_ns, count
_SAMPLE_DTYPE = np.dtype("<f4")

CONFIG_FILE = "config.json"
MANIFEST_FILE = "manifest.json"
TRUTH_FILE = "truth_events.csv"
TIMELINE_FILE = "timeline.csv"
RECORDS_FILE = "qubit_records.csv"
TLS_TRUTH_FILE = "tls_truth.csv"
TLS_P1_FILE = "tls_p1.csv"
TLS_P1_FINE_FILE = "tls_p1_fine.csv"
REPORT_FILE = "report.json"
HISTOGRAM_FILE = "aligned_histogram.csv"
TRACE_FILE = "nqp_trace.csv"
TLS_DETECTED_FILE = "tls_detected.csv"
CORRELATION_FILE = "correlation_histogram.csv"


@dataclass(frozen=True)
class QpiqHeader:
    start_time_ns: int
    bin_width_ns: int
    count: int


class QpiqWriter:
    """Incremental QPIQ writer; the header count is patched on close."""

    def __init__(self, path: Path):
        self.path = Path(path)
        self._fh = None
        self._start: Optional[int] = None
        self._bin: Optional[int] = None
        self.count = 0

    def __enter__(self) -> "QpiqWriter":
        self._fh = open(self.path, "wb")
        self._fh.write(QPIQ_HEADER.pack(QPIQ_MAGIC, QPIQ_VERSION, 0, 0, 0))
        return self

    def write(self, chunk: IqStream) -> None:
        if self._start is None:
            self._start, self._bin = chunk.start_time_ns, chunk.bin_width_ns
        elif chunk.bin_width_ns != self._bin or chunk.start_time_ns != self._start + self.count * self._bin:
            raise FormatError(f"{self.path.name}: non-contiguous chunk at {chunk.start_time_ns} ns")
        pairs = np.empty((len(chunk), 2), dtype=_SAMPLE_DTYPE)
        pairs[:, 0] = chunk.samples.real
        pairs[:, 1] = chunk.samples.imag
        self._fh.write(pairs.tobytes())
        self.count += len(chunk)

    def __exit__(self, exc_type, exc, tb) -> None:
        try:
            self._fh.seek(0)
            self._fh.write(QPIQ_HEADER.pack(QPIQ_MAGIC, QPIQ_VERSION, self._start or 0, self._bin or 0, self.count))
        finally:
            self._fh.close()


def write_qpiq(path: Path, chunks: Iterable[IqStream]) -> int:
    with QpiqWriter(path) as w:
        for chunk in chunks:
            w.write(chunk)
    verbose(f"wrote {w.count} IQ samples to {Path(path).name}")
    return w.count


def read_qpiq_header(path: Path) -> QpiqHeader:
    path = Path(path)
    with open(path, "rb") as fh:
        raw = fh.read(QPIQ_HEADER.size)
    if len(raw) < QPIQ_HEADER.size:
        raise FormatError(f"{path.name}: truncated QPIQ header")
    magic, version, start, bin_width, count = QPIQ_HEADER.unpack(raw)
    if magic != QPIQ_MAGIC:
        raise FormatError(f"{path.name}: bad magic {magic!r}")
    if version != QPIQ_VERSION:
        raise FormatError(f"{path.name}: unsupported QPIQ version {version}")
    expected = QPIQ_HEADER.size + count * 2 * _SAMPLE_DTYPE.itemsize
    if path.stat().st_size != expected:
        raise FormatError(f"{path.name}: size does not match the {count} samples in the header")
    if bin_width == 0 and count:
        raise FormatError(f"{path.name}: zero bin width")
    return QpiqHeader(start, bin_width, count)


def iter_qpiq(path: Path, chunk_samples: int = 1 << 20) -> Iterator[IqStream]:
    """Read a QPIQ file incrementally as contiguous chunks."""
    header = read_qpiq_header(path)
    with open(path, "rb") as fh:
        fh.seek(QPIQ_HEADER.size)
        done = 0
        while done < header.count:
            n = min(chunk_samples, header.count - done)
            pairs = np.frombuffer(fh.read(n * 2 * _SAMPLE_DTYPE.itemsize), dtype=_SAMPLE_DTYPE).reshape(n, 2)
            samples = pairs[:, 0].astype(np.float64) + 1j * pairs[:, 1].astype(np.float64)
            yield IqStream(header.start_time_ns + done * header.bin_width_ns, header.bin_width_ns, samples)
            done += n


def read_qpiq(path: Path) -> IqStream:
    header = read_qpiq_header(path)
    chunks = list(iter_qpiq(path))
    samples = np.concatenate([c.samples for c in chunks]) if chunks else np.zeros(0, dtype=np.complex128)
    return IqStream(header.start_time_ns, max(header.bin_width_ns, 1), samples)


# CSV tables

def _write_table(path: Path, header: str, columns: Sequence[ArrayLike], fmt: Sequence[str]) -> None:
    cols = [np.asarray(c) for c in columns]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        if cols and cols[0].size:
            np.savetxt(fh, np.column_stack(cols), fmt=list(fmt), delimiter=",")


def _read_table(path: Path, expected_header: str) -> np.ndarray:
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != expected_header:
            raise FormatError(f"{path.name}: expected header '{expected_header}', got '{header}'")
        n_cols = len(expected_header.split(","))
        body = fh.read()
    if not body.strip():
        return np.zeros((0, n_cols))
    return np.loadtxt(body.splitlines(), delimiter=",", ndmin=2)


EVENTS_HEADER = "t_ns,energy_keV"
RECORDS_HEADER = "t_ns,prep,outcome"
DETECTED_HEADER = "t_ns,score,channel"
TIMELINE_HEADER = "logical_ns,synth_ns"
TLS_TRUTH_HEADER = "t_s,magnitude"
P1_HEADER = "t_s,p1,trials"
HISTOGRAM_HEADER = "t_lo_us,t_hi_us,trials,successes,p_hat"
TRACE_HEADER = "t_us,value"
CORRELATION_HEADER = "lo_s,hi_s,count,expected"


def write_events_csv(path: Path, events: RadiationEvents) -> None:
    _write_table(path, EVENTS_HEADER, [events.times_ns, events.energies_kev], ["%d", "%.6f"])


def read_events_csv(path: Path) -> RadiationEvents:
    data = _read_table(path, EVENTS_HEADER)
    return RadiationEvents(data[:, 0].astype(np.int64), data[:, 1])


def write_records_csv(path: Path, records: QubitRecords) -> None:
    _write_table(path, RECORDS_HEADER, [records.times_ns, records.prep, records.outcome], ["%d", "%d", "%d"])


def read_records_csv(path: Path) -> QubitRecords:
    data = _read_table(path, RECORDS_HEADER).astype(np.int64)
    return QubitRecords(data[:, 0], data[:, 1], data[:, 2])


def write_detected_csv(path: Path, events: Sequence[TriggerEvent]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DETECTED_HEADER.split(","))
        for ev in events:
            w.writerow([ev.time_ns, f"{ev.score:.6f}", ev.channel])


def read_detected_csv(path: Path) -> List[TriggerEvent]:
    path = Path(path)
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, [])
        if ",".join(header) != DETECTED_HEADER:
            raise FormatError(f"{path.name}: expected header '{DETECTED_HEADER}'")
        return [TriggerEvent(int(row[0]), float(row[1]), row[2]) for row in reader if row]


def write_times_csv(path: Path, times_ns: ArrayLike) -> None:
    _write_table(path, "t_ns", [np.asarray(times_ns, dtype=np.int64)], ["%d"])


def read_times_csv(path: Path) -> np.ndarray:
    return _read_table(path, "t_ns")[:, 0].astype(np.int64)


def write_timeline_csv(path: Path, logical_ns: ArrayLike, synth_ns: ArrayLike) -> None:
    _write_table(path, TIMELINE_HEADER, [logical_ns, synth_ns], ["%d", "%d"])


def read_timeline_csv(path: Path) -> tuple[np.ndarray, np.ndarray]:
    data = _read_table(path, TIMELINE_HEADER).astype(np.int64)
    return data[:, 0], data[:, 1]


def write_tls_truth_csv(path: Path, jumps: Sequence[TlsJump]) -> None:
    _write_table(
        path, TLS_TRUTH_HEADER, [[j.time_s for j in jumps], [j.magnitude for j in jumps]], ["%.6f", "%.6f"]
    )


def read_tls_truth_csv(path: Path) -> List[TlsJump]:
    return [TlsJump(float(t), float(m)) for t, m in _read_table(path, TLS_TRUTH_HEADER)]


def write_p1_csv(path: Path, series: P1Series) -> None:
    _write_table(path, P1_HEADER, [series.times_s, series.p1, series.trials], ["%.4f", "%.8f", "%d"])


def read_p1_csv(path: Path) -> P1Series:
    data = _read_table(path, P1_HEADER)
    return P1Series(data[:, 0], data[:, 1], data[:, 2].astype(np.int64))


def write_times_s_csv(path: Path, times_s: Sequence[float]) -> None:
    _write_table(path, "t_s", [np.asarray(times_s, dtype=float)], ["%.4f"])


def write_histogram_csv(path: Path, h: AlignedHistogram) -> None:
    _write_table(
        path,
        HISTOGRAM_HEADER,
        [h.edges_us[:-1], h.edges_us[1:], h.trials, h.successes, np.nan_to_num(h.p_hat, nan=-1.0)],
        ["%.3f", "%.3f", "%d", "%d", "%.8f"],
    )


def write_trace_csv(path: Path, trace: QpTrace) -> None:
    _write_table(path, TRACE_HEADER, [trace.times_us, np.nan_to_num(trace.values, nan=-1.0)], ["%.3f", "%.6f"])


def write_correlation_csv(path: Path, report: CorrelationReport) -> None:
    e = report.hist_edges_s
    _write_table(
        path,
        CORRELATION_HEADER,
        [e[:-1], e[1:], report.hist_counts, report.expected_counts],
        ["%.6g", "%.6g", "%d", "%.6f"],
    )


# JSON

def to_jsonable(obj: Any) -> Any:
    """Plain JSON values: numpy scalars unwrapped, non-finite floats as null."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if np.isfinite(obj) else None
    return obj


def dumps_canonical(obj: Any) -> str:
    return json.dumps(to_jsonable(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_json(path: Path, obj: Any) -> None:
    Path(path).write_text(dumps_canonical(obj), encoding="utf-8")


def read_json(path: Path) -> Any:
    path = Path(path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise FormatError(f"{path.name}: invalid JSON ({e})") from None

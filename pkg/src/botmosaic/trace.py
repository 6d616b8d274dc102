"""Flow traces and the ``flow_id,timestamp`` CSV format."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import FormatError

HEADER = ("flow_id", "timestamp")
TIMESTAMP_FORMAT = "{:.9f}"


@dataclass(frozen=True, eq=False)
class FlowTrace:
    """A flow identity and its packet arrival times in seconds.

    Timestamps are stored sorted and read-only, so a trace can be shared
    freely between callers.
    """

    flow_id: str
    timestamps: np.ndarray

    def __post_init__(self):
        ts = np.sort(np.asarray(self.timestamps, dtype=np.float64).ravel())
        if ts.size and (not np.all(np.isfinite(ts)) or ts[0] < 0):
            raise ValueError("timestamps must be finite and non-negative")
        ts.setflags(write=False)
        object.__setattr__(self, "timestamps", ts)

    def __len__(self):
        return int(self.timestamps.size)

    def __eq__(self, other):
        if not isinstance(other, FlowTrace):
            return NotImplemented
        return self.flow_id == other.flow_id and np.array_equal(
            self.timestamps, other.timestamps
        )

    def __repr__(self):
        return f"FlowTrace({self.flow_id!r}, {len(self)} packets)"

    def renamed(self, flow_id: str) -> FlowTrace:
        return FlowTrace(flow_id, self.timestamps)

    def shifted(self, delay: float) -> FlowTrace:
        return FlowTrace(self.flow_id, self.timestamps + delay)


def empty_trace(flow_id: str = "") -> FlowTrace:
    return FlowTrace(flow_id, np.empty(0))


def load_traces(path) -> list[FlowTrace]:
    """Read every flow in a trace CSV, in order of first appearance.

    Raises
    ------
    FileNotFoundError
        If ``path`` does not exist.
    FormatError
        On a bad header, a malformed row, a negative or non-finite
        timestamp, or timestamps that decrease within a flow. The error
        carries the line number.
    """
    path = Path(path)
    flows: dict[str, list[float]] = {}
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != HEADER:
            raise FormatError(
                f"expected header {','.join(HEADER)!r}, got {header!r}", path, 1
            )
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != 2:
                raise FormatError(f"expected 2 fields, got {len(row)}", path, line)
            flow_id, raw = row[0], row[1].strip()
            try:
                t = float(raw)
            except ValueError:
                raise FormatError(f"bad timestamp {raw!r}", path, line) from None
            if not math.isfinite(t) or t < 0:
                raise FormatError(f"timestamp must be finite and >= 0, got {raw}", path, line)
            seq = flows.setdefault(flow_id, [])
            if seq and t < seq[-1]:
                raise FormatError(
                    f"timestamp {raw} decreases within flow {flow_id!r}", path, line
                )
            seq.append(t)
    return [FlowTrace(fid, np.array(ts)) for fid, ts in flows.items()]


def load_trace(path) -> FlowTrace:
    """Read a single-flow trace file. A header-only file gives an empty trace."""
    flows = load_traces(path)
    if not flows:
        return empty_trace()
    if len(flows) > 1:
        raise FormatError(
            f"expected one flow, found {len(flows)}; use load_traces", Path(path)
        )
    return flows[0]


def format_traces(traces: Iterable[FlowTrace]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(HEADER)
    for trace in traces:
        writer.writerows(
            (trace.flow_id, TIMESTAMP_FORMAT.format(t)) for t in trace.timestamps
        )
    return buf.getvalue()


def save_traces(traces: Sequence[FlowTrace] | FlowTrace, path) -> None:
    if isinstance(traces, FlowTrace):
        traces = [traces]
    Path(path).write_text(format_traces(traces))


save_trace = save_traces

"""Event streams: the ``mpstream/1`` line format, validation and seeded generators.

A stream file is UTF-8 with LF endings. Line 1 is a manifest JSON object
carrying ``"format": "mpstream/1"``; every following line is one event
object with fields exactly ``{op, id?, x, y?}``. Files ending in ``.gz``
are gzip-compressed.
"""

from __future__ import annotations

import gzip
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import StreamFormatError, StreamValidationError
from .theory import path_length

FORMAT = "mpstream/1"
OPS = ("insert", "delete", "predict")
PATTERNS = ("uniform", "burst", "adversarial_latest")


@dataclass
class Event:
    op: str
    x: np.ndarray
    y: float | None = None
    id: str | None = None
    t_index: int = 0

    def __eq__(self, other):
        if not isinstance(other, Event):
            return NotImplemented
        return (
            self.op == other.op
            and self.id == other.id
            and self.y == other.y
            and self.t_index == other.t_index
            and np.array_equal(self.x, other.x)
        )


@dataclass
class Stream:
    manifest: dict
    events: list[Event] = field(default_factory=list)

    @property
    def inserts(self) -> list[Event]:
        return [e for e in self.events if e.op == "insert"]

    def insert_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        ins = self.inserts
        d = self.manifest["d"]
        if not ins:
            return np.zeros((0, d)), np.zeros(0)
        return np.array([e.x for e in ins]), np.array([e.y for e in ins], dtype=float)


# -- line format ----------------------------------------------------------

def _num(v: float) -> str:
    v = float(v)
    if not math.isfinite(v):
        raise StreamFormatError(f"non-finite number {v!r}")
    return format(v, ".17g")


def format_event(e: Event) -> str:
    parts = [f'"op":{json.dumps(e.op)}']
    if e.id is not None:
        parts.append(f'"id":{json.dumps(e.id)}')
    parts.append('"x":[' + ",".join(_num(v) for v in np.asarray(e.x).tolist()) + "]")
    if e.y is not None:
        parts.append(f'"y":{_num(e.y)}')
    return "{" + ",".join(parts) + "}"


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def parse_event(line: str, line_no: int | None = None, t_index: int = 0) -> Event:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise StreamFormatError(f"invalid JSON ({exc.msg})", line_no) from None
    if not isinstance(obj, dict):
        raise StreamFormatError("event must be a JSON object", line_no)
    op = obj.get("op")
    if op not in OPS:
        raise StreamFormatError(f"unknown op {op!r}", line_no)
    allowed = {"op", "id", "x"} | ({"y"} if op != "predict" else set())
    unknown = set(obj) - allowed
    if unknown:
        raise StreamFormatError(f"unexpected field(s) {sorted(unknown)} for {op}", line_no)
    x = obj.get("x")
    if not isinstance(x, list) or not x or not all(_is_number(v) for v in x):
        raise StreamFormatError("x must be a non-empty list of finite numbers", line_no)
    y = obj.get("y")
    if op != "predict":
        if not _is_number(y):
            raise StreamFormatError(f"{op} requires a finite numeric y", line_no)
        y = float(y)
    ident = obj.get("id")
    if ident is not None and not isinstance(ident, str):
        raise StreamFormatError("id must be a string", line_no)
    return Event(op, np.array(x, dtype=float), y, ident, t_index)


def _open_text(path, mode):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, mode + "t", encoding="utf-8", newline="\n")
    return open(path, mode, encoding="utf-8", newline="\n")


def stream_lines(stream: Stream) -> list[str]:
    return [json.dumps(stream.manifest, sort_keys=True)] + [format_event(e) for e in stream.events]


def write_stream(path, stream: Stream) -> None:
    path = Path(path)
    if path.suffix == ".gz":
        # fixed mtime keeps compressed output byte-identical across runs
        data = ("\n".join(stream_lines(stream)) + "\n").encode("utf-8")
        with open(path, "wb") as raw, gzip.GzipFile(fileobj=raw, mode="wb", mtime=0, filename="") as fh:
            fh.write(data)
        return
    with _open_text(path, "w") as fh:
        for line in stream_lines(stream):
            fh.write(line + "\n")


def parse_stream(lines) -> Stream:
    lines = iter(lines)
    try:
        head = next(lines)
    except StopIteration:
        raise StreamFormatError("empty stream: missing manifest", 1) from None
    try:
        manifest = json.loads(head)
    except json.JSONDecodeError as exc:
        raise StreamFormatError(f"invalid manifest JSON ({exc.msg})", 1) from None
    if not isinstance(manifest, dict) or manifest.get("format") != FORMAT:
        raise StreamFormatError(f'manifest must carry "format": "{FORMAT}"', 1)
    if not isinstance(manifest.get("d"), int) or manifest["d"] < 1:
        raise StreamFormatError("manifest needs integer d >= 1", 1)
    events = []
    for i, line in enumerate(lines, start=2):
        line = line.rstrip("\n")
        if not line:
            raise StreamFormatError("blank line", i)
        e = parse_event(line, i, t_index=len(events))
        if e.x.shape != (manifest["d"],):
            raise StreamFormatError(f"x has length {e.x.size}, manifest d={manifest['d']}", i)
        events.append(e)
    return Stream(manifest, events)


def read_stream(path) -> Stream:
    with _open_text(path, "r") as fh:
        return parse_stream(fh)


def validate_stream(stream: Stream) -> None:
    """Replay-time referential integrity: deletes must name a live, matching insert."""
    live: dict[str, Event] = {}
    seen: set[str] = set()
    for e in stream.events:
        if e.op == "insert" and e.id is not None:
            if e.id in seen:
                raise StreamValidationError(f"duplicate insert id {e.id!r}", e.t_index)
            seen.add(e.id)
            live[e.id] = e
        elif e.op == "delete":
            if e.id is None:
                raise StreamValidationError("delete without id", e.t_index)
            src = live.pop(e.id, None)
            if src is None:
                raise StreamValidationError(f"delete references unknown or already-deleted id {e.id!r}", e.t_index)
            if src.y != e.y or not np.array_equal(src.x, e.x):
                raise StreamValidationError(f"delete payload for {e.id!r} differs from its insert", e.t_index)


# -- generators -----------------------------------------------------------

def _unit_sphere(rng, n, d):
    z = rng.standard_normal((n, d))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def uniform_in_ball(rng, d: int, radius: float) -> np.ndarray:
    u = rng.standard_normal(d)
    u /= np.linalg.norm(u)
    return u * radius * rng.random() ** (1.0 / d)


def _labels(rng, X, w, noise_std, loss):
    scores = X @ w
    if loss == "squared":
        return scores + noise_std * rng.standard_normal(X.shape[0]) if noise_std > 0 else scores
    p = 1.0 / (1.0 + np.exp(-scores))
    return np.where(rng.random(X.shape[0]) < p, 1.0, -1.0)


def _insert_events(X, Y, start=0):
    return [
        Event("insert", X[i].copy(), float(Y[i]), f"i{start + i}", start + i)
        for i in range(X.shape[0])
    ]


def gen_stationary(seed: int, n: int, d: int, noise_std: float = 0.1, loss: str = "squared",
                   w_radius: float = 1.0) -> Stream:
    """``n`` inserts with unit-norm features around a hidden weight drawn uniformly from a ball."""
    rng = np.random.default_rng(seed)
    w_true = uniform_in_ball(rng, d, w_radius)
    X = _unit_sphere(rng, n, d) if n else np.zeros((0, d))
    Y = _labels(rng, X, w_true, noise_std, loss) if n else np.zeros(0)
    manifest = {
        "format": FORMAT,
        "d": d,
        "loss": loss,
        "seed": seed,
        "generator": {"kind": "stationary", "n": n, "noise_std": noise_std, "w_radius": w_radius},
        "w_true": w_true.tolist(),
    }
    return Stream(manifest, _insert_events(X, Y))


def gen_drift(seed: int, segments, noise_std: float = 0.1, loss: str = "squared") -> Stream:
    """Piecewise-stationary stream; ``segments`` is a list of ``(length, w_true)``."""
    if not segments:
        raise ValueError("need at least one segment")
    rng = np.random.default_rng(seed)
    ws = [np.asarray(w, dtype=float) for _, w in segments]
    d = ws[0].size
    events = []
    for (length, _), w in zip(segments, ws):
        X = _unit_sphere(rng, length, d)
        Y = _labels(rng, X, w, noise_std, loss)
        events.extend(_insert_events(X, Y, start=len(events)))
    manifest = {
        "format": FORMAT,
        "d": d,
        "loss": loss,
        "seed": seed,
        "generator": {"kind": "drift", "noise_std": noise_std,
                      "segment_lengths": [int(length) for length, _ in segments]},
        "comparator_path": [w.tolist() for w in ws],
        "P_T": path_length(ws),
    }
    return Stream(manifest, events)


def oscillating_segments(seed: int, d: int, n: int, path_len: float, hop: float = 5.0):
    """Segments alternating between two points ``hop`` apart, totalling ``path_len``.

    ``path_len`` must be a multiple of ``hop``; 0 yields a single segment.
    """
    k = round(path_len / hop) if path_len > 0 else 0
    if k and not math.isclose(k * hop, path_len):
        raise ValueError("path_len must be a multiple of hop")
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(d)
    u /= np.linalg.norm(u)
    a, b = 0.5 * hop * u, -0.5 * hop * u
    n_seg = k + 1
    base, extra = divmod(n, n_seg)
    return [(base + (1 if i < extra else 0), a if i % 2 == 0 else b) for i in range(n_seg)]


def expanded_comparator_path(stream: Stream) -> np.ndarray:
    """Per-insert comparator path for a drift stream (segment w repeated over its length)."""
    lengths = stream.manifest["generator"]["segment_lengths"]
    path = stream.manifest["comparator_path"]
    return np.repeat(np.asarray(path, dtype=float), lengths, axis=0)


def gen_delete_schedule(stream: Stream, m: int, pattern: str = "uniform", seed: int = 0) -> Stream:
    """Interleave ``m`` deletes referencing earlier inserts.

    uniform / adversarial_latest place delete j after insert ``round(j n / (m + 1/2))``;
    burst places all m in one block after the middle insert. uniform and burst
    pick random live targets; adversarial_latest always takes the newest live insert.
    """
    if pattern not in PATTERNS:
        raise ValueError(f"unknown pattern {pattern!r}")
    if m == 0:
        return Stream(dict(stream.manifest), list(stream.events))
    n = sum(1 for e in stream.events if e.op == "insert")
    if m < 0 or n == 0:
        raise ValueError("m must be >= 0 and the stream must contain inserts")
    if pattern == "burst":
        at = max(m, round(n / 2))
        after = [min(at, n)] * m
    else:
        after = [min(n, max(1, round(j * n / (m + 0.5)))) for j in range(1, m + 1)]
    rng = np.random.default_rng(seed)
    live: list[Event] = []
    out: list[Event] = []
    seen = 0
    queue = list(after)

    def emit_deletes():
        while queue and queue[0] == seen:
            queue.pop(0)
            if not live:
                raise ValueError(f"not enough live inserts for a delete after insert {seen}")
            idx = len(live) - 1 if pattern == "adversarial_latest" else int(rng.integers(len(live)))
            target = live.pop(idx)
            out.append(Event("delete", target.x.copy(), target.y, target.id))

    for e in stream.events:
        out.append(Event(e.op, e.x, e.y, e.id))
        if e.op == "insert":
            seen += 1
            if e.id is None:
                raise ValueError("inserts need ids to be deletable")
            live.append(e)
            emit_deletes()
        elif e.op == "delete":
            live = [ev for ev in live if ev.id != e.id]
    for i, e in enumerate(out):
        e.t_index = i
    manifest = dict(stream.manifest)
    manifest["deletions"] = {"m": m, "pattern": pattern, "seed": seed}
    return Stream(manifest, out)

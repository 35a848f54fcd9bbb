"""Edge-event parsing, time bucketing and model persistence.

File formats:

* events CSV, header ``timestamp,src,dst``; timestamps are decimal
  seconds relative to an arbitrary epoch.
* types CSV, header ``vertex,type``.
* model file: JSON with a format version, a content checksum and one
  entry per block ``{a, b, n, q_m, q_s, r, mu0, sigma0}``.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .graph_model import DynamicNetwork, TypePair, VertexTyping
from .ssm import ModelParams

MODEL_FORMAT_VERSION = 1

EMPTY_GRAPH = "empty-graph"
MISSING_OBSERVATION = "missing-observation"


class IngestError(ValueError):
    """Malformed or inconsistent input data."""


class ModelFormatError(ValueError):
    """Model file cannot be used."""


class ModelVersionError(ModelFormatError):
    pass


class ModelChecksumError(ModelFormatError):
    pass


@dataclass(frozen=True)
class EdgeEvent:
    timestamp: float
    src: str
    dst: str


@dataclass(frozen=True)
class BucketingConfig:
    """How to discretise event time.

    Buckets are half-open: bucket t covers
    [origin + (t-1) * width, origin + t * width), so boundary events
    land in the later bucket.  ``T`` optionally caps the number of
    buckets (later events are dropped).  ``missing_policy`` decides
    whether an event-free bucket is an observed empty graph or a gap.
    """

    origin: float
    width: float
    T: int | None = None
    missing_policy: str = EMPTY_GRAPH

    def __post_init__(self) -> None:
        if not self.width > 0:
            raise ValueError("bucket width must be positive")
        if self.T is not None and self.T < 0:
            raise ValueError("bucket cap must be >= 0")
        if self.missing_policy not in (EMPTY_GRAPH, MISSING_OBSERVATION):
            raise ValueError(f"unknown missing policy {self.missing_policy!r}")


def parse_inputs(events_file, types_file) -> tuple[list[EdgeEvent], VertexTyping]:
    """Read and validate an event file against a vertex-type file."""
    typing = _parse_types(types_file)
    events = _parse_events(events_file, typing)
    return events, typing


def _parse_types(path) -> VertexTyping:
    vertex_ids: list[str] = []
    type_of: dict[str, str] = {}
    with open(path, newline="") as fh:
        rows = csv.reader(fh)
        header = next(rows, None)
        if header is None or [c.strip() for c in header] != ["vertex", "type"]:
            raise IngestError(f"{path}: expected header 'vertex,type'")
        for lineno, row in enumerate(rows, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise IngestError(f"{path}:{lineno}: expected 2 columns, got {len(row)}")
            vertex, label = row[0].strip(), row[1].strip()
            if not vertex or not label:
                raise IngestError(f"{path}:{lineno}: empty vertex or type")
            if vertex in type_of:
                raise IngestError(f"{path}:{lineno}: duplicate vertex {vertex!r}")
            vertex_ids.append(vertex)
            type_of[vertex] = label
    if not vertex_ids:
        raise IngestError(f"{path}: no vertices")
    return VertexTyping(vertex_ids=tuple(vertex_ids), type_of=type_of)


def _parse_events(path, typing: VertexTyping) -> list[EdgeEvent]:
    known = set(typing.vertex_ids)
    events: list[EdgeEvent] = []
    with open(path, newline="") as fh:
        rows = csv.reader(fh)
        header = next(rows, None)
        if header is None or [c.strip() for c in header] != ["timestamp", "src", "dst"]:
            raise IngestError(f"{path}: expected header 'timestamp,src,dst'")
        for lineno, row in enumerate(rows, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise IngestError(f"{path}:{lineno}: expected 3 columns, got {len(row)}")
            try:
                ts = float(row[0])
            except ValueError:
                raise IngestError(f"{path}:{lineno}: bad timestamp {row[0]!r}") from None
            if not math.isfinite(ts):
                raise IngestError(f"{path}:{lineno}: non-finite timestamp")
            src, dst = row[1].strip(), row[2].strip()
            if src == dst:
                raise IngestError(f"{path}:{lineno}: self-loop event on vertex {src!r}")
            for v in (src, dst):
                if v not in known:
                    raise IngestError(f"{path}:{lineno}: vertex {v!r} has no type")
            events.append(EdgeEvent(timestamp=ts, src=src, dst=dst))
    return events


def bucketize(
    events: Iterable[EdgeEvent], typing: VertexTyping, config: BucketingConfig
) -> DynamicNetwork:
    """Collapse timestamped events into binary adjacency snapshots.

    A pair is connected in bucket t if at least one event touched it
    there; multiplicities are discarded.  Order of the event list does
    not matter.
    """
    index = typing.vertex_index()
    buckets: dict[int, set[tuple[str, str]]] = {}
    max_t = 0
    for ev in events:
        if ev.timestamp < config.origin:
            raise IngestError(
                f"event at {ev.timestamp} precedes the bucketing origin {config.origin}"
            )
        t = int(math.floor((ev.timestamp - config.origin) / config.width)) + 1
        if config.T is not None and t > config.T:
            continue
        max_t = max(max_t, t)
        edge = (ev.src, ev.dst) if index[ev.src] < index[ev.dst] else (ev.dst, ev.src)
        buckets.setdefault(t, set()).add(edge)
    T = config.T if config.T is not None else max_t
    snapshots = tuple(frozenset(buckets.get(t, ())) for t in range(1, T + 1))
    missing: frozenset[int] = frozenset()
    if config.missing_policy == MISSING_OBSERVATION:
        missing = frozenset(t for t in range(1, T + 1) if t not in buckets)
    return DynamicNetwork(typing=typing, snapshots=snapshots, missing=missing)


def _canonical_payload(payload: dict) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def _checksum(payload: dict) -> str:
    return hashlib.sha256(_canonical_payload(payload).encode()).hexdigest()


def save_model(
    params: Mapping[TypePair, ModelParams],
    n_by_pair: Mapping[TypePair, int],
    path,
) -> None:
    """Persist fitted per-block parameters with a version and checksum.

    All blocks must share one period d.  Floats go through JSON's
    shortest round-trip representation, so reloading is bit-exact.
    """
    if not params:
        raise ValueError("no blocks to save")
    ds = {p.d for p in params.values()}
    if len(ds) != 1:
        raise ValueError(f"blocks disagree on period d: {sorted(ds)}")
    blocks = []
    for pair in sorted(params):
        p = params[pair]
        if pair not in n_by_pair:
            raise ValueError(f"no possible-edge count for block {pair}")
        blocks.append(
            {
                "a": pair[0],
                "b": pair[1],
                "n": int(n_by_pair[pair]),
                "q_m": p.q_m,
                "q_s": p.q_s,
                "r": p.r,
                "mu0": [float(x) for x in p.mu0],
                "sigma0": [[float(x) for x in row] for row in p.Sigma0],
            }
        )
    payload = {"version": MODEL_FORMAT_VERSION, "d": ds.pop(), "blocks": blocks}
    document = dict(payload)
    document["checksum"] = _checksum(payload)
    with open(path, "w") as fh:
        json.dump(document, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(path) -> tuple[dict[TypePair, ModelParams], dict[TypePair, int]]:
    """Reload a saved model, verifying version and content checksum."""
    with open(path) as fh:
        text = fh.read()
    try:
        document = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelChecksumError(f"{path}: unreadable or truncated model file") from exc
    if not isinstance(document, dict):
        raise ModelChecksumError(f"{path}: not a model file")
    version = document.get("version")
    if version != MODEL_FORMAT_VERSION:
        raise ModelVersionError(
            f"{path}: unsupported model format version {version!r} "
            f"(expected {MODEL_FORMAT_VERSION})"
        )
    stored = document.pop("checksum", None)
    if stored is None or _checksum(document) != stored:
        raise ModelChecksumError(f"{path}: checksum mismatch")
    d = document["d"]
    params: dict[TypePair, ModelParams] = {}
    n_by_pair: dict[TypePair, int] = {}
    for blk in document["blocks"]:
        pair = (blk["a"], blk["b"])
        params[pair] = ModelParams(
            d=d,
            q_m=blk["q_m"],
            q_s=blk["q_s"],
            r=blk["r"],
            mu0=np.array(blk["mu0"], dtype=float),
            Sigma0=np.array(blk["sigma0"], dtype=float),
        )
        n_by_pair[pair] = int(blk["n"])
    return params, n_by_pair

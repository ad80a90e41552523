"""Dataset loading from a JSON manifest plus three CSV files.

Manifest: {"name", "neurons", "connections", "spikes", "units"} with file
paths relative to the manifest. CSVs are UTF-8 with header rows and '.'
decimals: neurons (id,x,y,z,kind), connections (pre,post,weight),
spikes (time,neuron). Positions are millimeters.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .model import (
    KIND_INPUT,
    KIND_REGULAR,
    DanglingId,
    DuplicateNeuronId,
    MalformedRow,
    NetworkDataset,
    NonDenseNeuronIds,
    SelfConnection,
)

_KINDS = {"input": KIND_INPUT, "regular": KIND_REGULAR}


def _rows(path: Path, expected_header: list[str]):
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise MalformedRow(path, 1, "missing header row") from None
        if [h.strip().lower() for h in header] != expected_header:
            raise MalformedRow(path, 1, f"expected header {','.join(expected_header)}")
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(expected_header):
                raise MalformedRow(path, line_no, f"expected {len(expected_header)} columns")
            yield line_no, row


def _parse_float(path, line_no, value, what) -> float:
    try:
        v = float(value)
    except ValueError:
        raise MalformedRow(path, line_no, f"bad {what} {value!r}") from None
    if not np.isfinite(v):
        raise MalformedRow(path, line_no, f"non-finite {what}")
    return v


def _parse_int(path, line_no, value, what) -> int:
    try:
        return int(value)
    except ValueError:
        raise MalformedRow(path, line_no, f"bad {what} {value!r}") from None


def load_dataset(manifest_path) -> NetworkDataset:
    manifest_path = Path(manifest_path)
    doc = json.loads(manifest_path.read_text(encoding="utf-8"))
    base = manifest_path.parent
    name = doc.get("name", manifest_path.stem)
    units = doc.get("units", "mm")
    warnings: list[str] = []

    neurons_path = base / doc["neurons"]
    ids, positions, kinds = [], [], []
    for line_no, row in _rows(neurons_path, ["id", "x", "y", "z", "kind"]):
        nid = _parse_int(neurons_path, line_no, row[0], "neuron id")
        xyz = [_parse_float(neurons_path, line_no, row[i], "coordinate") for i in (1, 2, 3)]
        kind = row[4].strip().lower()
        if kind not in _KINDS:
            raise MalformedRow(neurons_path, line_no, f"unknown kind {row[4]!r}")
        ids.append(nid)
        positions.append(xyz)
        kinds.append(_KINDS[kind])
    n = len(ids)
    id_arr = np.asarray(ids, dtype=np.int64)
    if n:
        sorted_ids = np.sort(id_arr)
        dups = np.flatnonzero(np.diff(sorted_ids) == 0)
        if dups.size:
            raise DuplicateNeuronId(f"duplicate neuron id {int(sorted_ids[dups[0]])}")
        if sorted_ids[0] != 0 or sorted_ids[-1] != n - 1:
            raise NonDenseNeuronIds("neuron ids must be dense from 0")
    pos_arr = np.zeros((n, 3), dtype=np.float32)
    kind_arr = np.zeros(n, dtype=np.uint8)
    if n:
        pos_arr[id_arr] = np.asarray(positions, dtype=np.float32)
        kind_arr[id_arr] = np.asarray(kinds, dtype=np.uint8)

    conn_path = base / doc["connections"]
    pre, post, weight = [], [], []
    for line_no, row in _rows(conn_path, ["pre", "post", "weight"]):
        a = _parse_int(conn_path, line_no, row[0], "pre id")
        b = _parse_int(conn_path, line_no, row[1], "post id")
        w = _parse_float(conn_path, line_no, row[2], "weight")
        if not 0 <= a < n:
            raise DanglingId(f"{conn_path}:{line_no}: pre id {a} does not exist")
        if not 0 <= b < n:
            raise DanglingId(f"{conn_path}:{line_no}: post id {b} does not exist")
        if a == b:
            raise SelfConnection(f"{conn_path}:{line_no}: neuron {a} connects to itself")
        if w == 0.0:
            raise MalformedRow(conn_path, line_no, "zero weight")
        pre.append(a)
        post.append(b)
        weight.append(w)

    spikes_path = base / doc["spikes"]
    times, spike_ids = [], []
    for line_no, row in _rows(spikes_path, ["time", "neuron"]):
        t = _parse_float(spikes_path, line_no, row[0], "time")
        if t < 0:
            raise MalformedRow(spikes_path, line_no, "negative spike time")
        sid = _parse_int(spikes_path, line_no, row[1], "neuron id")
        if not 0 <= sid < n:
            raise DanglingId(f"{spikes_path}:{line_no}: spike neuron {sid} does not exist")
        times.append(t)
        spike_ids.append(sid)
    times_arr = np.asarray(times, dtype=np.float64)
    spike_id_arr = np.asarray(spike_ids, dtype=np.uint32)
    if times_arr.size and np.any(np.diff(times_arr) < 0):
        warnings.append(f"{spikes_path}: spike stream was unsorted; sorted on load")
        order = np.argsort(times_arr, kind="stable")
        times_arr = times_arr[order]
        spike_id_arr = spike_id_arr[order]

    return NetworkDataset(
        name=name,
        positions=pos_arr,
        kinds=kind_arr,
        conn_pre=np.asarray(pre, dtype=np.int32),
        conn_post=np.asarray(post, dtype=np.int32),
        conn_weight=np.asarray(weight, dtype=np.float32),
        spike_times=times_arr,
        spike_ids=spike_id_arr,
        units=units,
        warnings=warnings,
    )

"""Traffic data model and dataset file I/O.

A dataset on disk is a directory holding

* ``topology.csv`` -- ``link_id,upstream,downstream`` with ``;``-separated
  neighbor ids,
* ``manifest.json`` -- step duration and the list of sequences,
* one state CSV per sequence -- ``link_id,t000,t001,...``, one row per link,
* optionally ``ground_truth.csv`` -- ``sequence_id,scenario``.

Link identifiers from the files are remapped to dense indices ``0..n-1`` in
topology file order; the original identifiers are kept in
``NetworkTopology.link_ids``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, InvalidMeasurementError, ParseError

TOPOLOGY_FILE = "topology.csv"
MANIFEST_FILE = "manifest.json"
GROUND_TRUTH_FILE = "ground_truth.csv"


class Scenario(str, Enum):
    ITD = "ITD"
    ATD = "ATD"
    ETD = "ETD"


def compute_traffic_index(min_travel_time, mean_travel_time):
    """Ratio of minimum to mean observed travel time, clamped to [0, 1].

    Works on scalars and arrays. A mean below the minimum (measurement
    noise) clamps to 1.
    """
    lo = np.asarray(min_travel_time, dtype=float)
    hi = np.asarray(mean_travel_time, dtype=float)
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise InvalidMeasurementError("travel times must be finite")
    if np.any(lo <= 0) or np.any(hi <= 0):
        raise InvalidMeasurementError("travel times must be strictly positive")
    index = np.clip(lo / hi, 0.0, 1.0)
    if index.ndim == 0:
        return float(index)
    return index


@dataclass(frozen=True)
class NetworkTopology:
    """Directed link adjacency with dense link indices."""

    upstream: tuple[tuple[int, ...], ...]
    downstream: tuple[tuple[int, ...], ...]
    link_ids: tuple[str, ...] = ()

    def __post_init__(self):
        n = len(self.upstream)
        if len(self.downstream) != n:
            raise DataError("upstream and downstream lists differ in length")
        if not self.link_ids:
            object.__setattr__(self, "link_ids", tuple(str(i) for i in range(n)))
        elif len(self.link_ids) != n:
            raise DataError("link_ids length does not match the topology")
        if len(set(self.link_ids)) != n:
            raise DataError("duplicate link id in topology")
        for i in range(n):
            for kind, nbrs in (("upstream", self.upstream[i]), ("downstream", self.downstream[i])):
                for j in nbrs:
                    if not 0 <= j < n:
                        raise DataError(f"link {i}: {kind} neighbor {j} out of range")
                    if j == i:
                        raise DataError(f"link {i} lists itself as {kind} neighbor")

    @property
    def n_links(self) -> int:
        return len(self.upstream)

    def neighbor_count(self, link: int) -> int:
        return len(self.upstream[link]) + len(self.downstream[link])


@dataclass(frozen=True)
class SequenceInfo:
    id: str
    scenario: Scenario
    steps: int
    file: str = ""


@dataclass(frozen=True)
class SequenceManifest:
    sequences: tuple[SequenceInfo, ...]
    step_minutes: float = 15.0

    def __post_init__(self):
        if not self.sequences:
            raise DataError("manifest lists no sequences")
        ids = [s.id for s in self.sequences]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate sequence id in manifest")
        steps = {s.steps for s in self.sequences}
        if len(steps) != 1:
            raise DataError(f"sequences have differing step counts {sorted(steps)}")
        if self.n_steps < 1:
            raise DataError("sequences must have at least one step")

    @property
    def n_steps(self) -> int:
        return self.sequences[0].steps

    @property
    def ids(self) -> list[str]:
        return [s.id for s in self.sequences]

    def scenario_of(self, sequence_id: str) -> Scenario:
        for s in self.sequences:
            if s.id == sequence_id:
                return s.scenario
        raise KeyError(sequence_id)

    def scenario_map(self) -> dict[str, Scenario]:
        return {s.id: s.scenario for s in self.sequences}


@dataclass(frozen=True)
class TrafficStateMatrix:
    """Links x samples matrix of traffic indexes.

    ``column_index[j]`` is the ``(sequence_id, time_step)`` pair of column j.
    Columns of one sequence are contiguous and in time order. The value
    array is made read-only on construction.
    """

    values: np.ndarray
    column_index: tuple[tuple[str, int], ...]
    _spans: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2:
            raise DataError("state matrix must be two-dimensional")
        if values.shape[1] != len(self.column_index):
            raise DataError("column_index length does not match the matrix width")
        if not np.all(np.isfinite(values)):
            raise DataError("state matrix contains non-finite values")
        if values.size and (values.min() < 0.0 or values.max() > 1.0):
            raise DataError("traffic index outside [0, 1]")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        index = tuple((str(s), int(t)) for s, t in self.column_index)
        object.__setattr__(self, "column_index", index)

        spans = {}
        seen = set()
        prev_seq = None
        for j, (seq, step) in enumerate(index):
            if (seq, step) in seen:
                raise DataError(f"duplicate column ({seq}, {step})")
            seen.add((seq, step))
            if seq != prev_seq:
                if seq in spans:
                    raise DataError(f"columns of sequence {seq!r} are not contiguous")
                spans[seq] = [j, j + 1]
            else:
                if step <= index[j - 1][1]:
                    raise DataError(f"columns of sequence {seq!r} are not in time order")
                spans[seq][1] = j + 1
            prev_seq = seq
        object.__setattr__(self, "_spans", {k: tuple(v) for k, v in spans.items()})

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def m(self) -> int:
        return self.values.shape[1]

    @property
    def sequence_ids(self) -> list[str]:
        return list(self._spans)

    def span(self, sequence_id: str) -> tuple[int, int]:
        try:
            return self._spans[sequence_id]
        except KeyError:
            raise KeyError(f"unknown sequence {sequence_id!r}") from None

    def steps(self) -> np.ndarray:
        return np.array([t for _, t in self.column_index], dtype=int)


def slice_sequence(matrix: TrafficStateMatrix, sequence_id: str) -> list[np.ndarray]:
    """Columns of one sequence in time order."""
    start, stop = matrix.span(sequence_id)
    return [matrix.values[:, j] for j in range(start, stop)]


# ---------------------------------------------------------------- file I/O


def _format_float(x: float) -> str:
    # repr is the shortest string that round-trips exactly
    return repr(float(x))


def _split_ids(cell: str) -> list[str]:
    cell = cell.strip()
    if not cell:
        return []
    return [tok.strip() for tok in cell.split(";")]


def load_topology(path) -> NetworkTopology:
    path = Path(path)
    try:
        fh = open(path, newline="")
    except FileNotFoundError:
        raise ParseError(path, None, "file not found") from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["link_id", "upstream", "downstream"]:
            raise ParseError(path, 1, "header must be link_id,upstream,downstream")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise ParseError(path, lineno, f"expected 3 fields, got {len(row)}")
            rows.append((lineno, row[0].strip(), _split_ids(row[1]), _split_ids(row[2])))

    dense = {}
    for lineno, lid, _, _ in rows:
        if not lid:
            raise ParseError(path, lineno, "empty link_id")
        if lid in dense:
            raise ParseError(path, lineno, f"duplicate link_id {lid!r}")
        dense[lid] = len(dense)

    upstream, downstream = [], []
    for lineno, lid, ups, downs in rows:
        mapped = []
        for kind, ids in (("upstream", ups), ("downstream", downs)):
            out = []
            for other in ids:
                if other not in dense:
                    raise ParseError(path, lineno, f"dangling {kind} link id {other!r}")
                if other == lid:
                    raise ParseError(path, lineno, f"link {lid!r} lists itself as {kind} neighbor")
                out.append(dense[other])
            mapped.append(tuple(out))
        upstream.append(mapped[0])
        downstream.append(mapped[1])
    return NetworkTopology(tuple(upstream), tuple(downstream), tuple(dense))


def save_topology(path, topology: NetworkTopology) -> None:
    ids = topology.link_ids
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["link_id", "upstream", "downstream"])
        for i in range(topology.n_links):
            w.writerow([
                ids[i],
                ";".join(ids[j] for j in topology.upstream[i]),
                ";".join(ids[j] for j in topology.downstream[i]),
            ])


def load_manifest(path) -> SequenceManifest:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ParseError(path, None, "file not found") from None
    except json.JSONDecodeError as exc:
        raise ParseError(path, exc.lineno, f"invalid JSON: {exc.msg}") from None
    if not isinstance(raw, dict) or not isinstance(raw.get("sequences"), list):
        raise ParseError(path, None, "manifest must be an object with a 'sequences' list")
    seqs = []
    for k, entry in enumerate(raw["sequences"]):
        try:
            seqs.append(SequenceInfo(
                id=str(entry["id"]),
                scenario=Scenario(entry["scenario"]),
                steps=int(entry["steps"]),
                file=str(entry.get("file", f"{entry['id']}.csv")),
            ))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(path, None, f"sequence entry {k} invalid: {exc}") from None
    try:
        return SequenceManifest(tuple(seqs), float(raw.get("step_minutes", 15)))
    except DataError as exc:
        raise ParseError(path, None, str(exc)) from None


def save_manifest(path, manifest: SequenceManifest) -> None:
    step = manifest.step_minutes
    doc = {
        "step_minutes": int(step) if float(step).is_integer() else step,
        "sequences": [
            {"id": s.id, "scenario": s.scenario.value, "steps": s.steps, "file": s.file or f"{s.id}.csv"}
            for s in manifest.sequences
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def _read_state_file(path: Path, topology: NetworkTopology, steps: int) -> np.ndarray:
    dense = {lid: i for i, lid in enumerate(topology.link_ids)}
    expected = ["link_id"] + [f"t{t:03d}" for t in range(steps)]
    try:
        fh = open(path, newline="")
    except FileNotFoundError:
        raise ParseError(path, None, "sequence file referenced by manifest is missing") from None
    out = np.full((topology.n_links, steps), np.nan)
    seen = np.zeros(topology.n_links, dtype=bool)
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != expected:
            raise ParseError(path, 1, f"header must be link_id,t000..t{steps - 1:03d}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != steps + 1:
                raise ParseError(path, lineno, f"expected {steps + 1} fields, got {len(row)}")
            lid = row[0].strip()
            if lid not in dense:
                raise ParseError(path, lineno, f"link id {lid!r} not in topology")
            i = dense[lid]
            if seen[i]:
                raise ParseError(path, lineno, f"duplicate row for link {lid!r}")
            seen[i] = True
            for t, cell in enumerate(row[1:]):
                try:
                    v = float(cell)
                except ValueError:
                    raise ParseError(path, lineno, f"malformed value {cell!r}") from None
                if not (0.0 <= v <= 1.0):  # also rejects nan
                    raise ParseError(path, lineno, f"traffic index {cell} outside [0, 1]")
                out[i, t] = v
    if not seen.all():
        missing = topology.link_ids[int(np.flatnonzero(~seen)[0])]
        raise ParseError(path, None, f"no row for link {missing!r}")
    return out


def load_state_matrix(data_path, manifest_path, topology_path):
    """Load and validate a dataset.

    ``data_path`` is the directory the manifest's sequence file names are
    relative to. Returns ``(matrix, manifest, topology)``.
    """
    topology = load_topology(topology_path)
    manifest = load_manifest(manifest_path)
    data_path = Path(data_path)
    blocks, index = [], []
    for seq in manifest.sequences:
        blocks.append(_read_state_file(data_path / seq.file, topology, seq.steps))
        index.extend((seq.id, t) for t in range(seq.steps))
    matrix = TrafficStateMatrix(np.hstack(blocks), tuple(index))
    return matrix, manifest, topology


def load_dataset(directory):
    """Load a dataset directory with the standard file names."""
    d = Path(directory)
    return load_state_matrix(d, d / MANIFEST_FILE, d / TOPOLOGY_FILE)


def save_dataset(directory, matrix: TrafficStateMatrix, manifest: SequenceManifest,
                 topology: NetworkTopology, ground_truth: bool = True) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    if matrix.n != topology.n_links:
        raise DataError("matrix rows do not match topology link count")
    missing = set(matrix.sequence_ids) ^ set(manifest.ids)
    if missing:
        raise DataError(f"matrix and manifest disagree on sequences: {sorted(missing)[:3]}")
    save_topology(d / TOPOLOGY_FILE, topology)
    save_manifest(d / MANIFEST_FILE, manifest)
    header = ["link_id"] + [f"t{t:03d}" for t in range(manifest.n_steps)]
    for seq in manifest.sequences:
        start, stop = matrix.span(seq.id)
        block = matrix.values[:, start:stop]
        with open(d / (seq.file or f"{seq.id}.csv"), "w", newline="") as fh:
            fh.write(",".join(header) + "\n")
            for i, lid in enumerate(topology.link_ids):
                fh.write(lid + "," + ",".join(map(_format_float, block[i].tolist())) + "\n")
    if ground_truth:
        save_ground_truth(d / GROUND_TRUTH_FILE, manifest)


def save_ground_truth(path, manifest: SequenceManifest) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sequence_id", "scenario"])
        for s in manifest.sequences:
            w.writerow([s.id, s.scenario.value])


def load_ground_truth(path) -> dict[str, Scenario]:
    path = Path(path)
    out = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for lineno, row in enumerate(reader, start=2):
            try:
                out[row["sequence_id"]] = Scenario(row["scenario"])
            except (KeyError, ValueError):
                raise ParseError(path, lineno, "invalid ground truth row") from None
    return out


def column_labels(matrix: TrafficStateMatrix) -> list[str]:
    """``seq:step`` strings used as column headers in exported tables."""
    return [f"{s}:{t}" for s, t in matrix.column_index]


def parse_column_label(label: str) -> tuple[str, int]:
    seq, _, step = label.rpartition(":")
    return seq, int(step)


def sample_scenarios(matrix: TrafficStateMatrix, scenarios: dict) -> list:
    return [scenarios[s] for s, _ in matrix.column_index]


def n_top(fraction: float, total: int) -> int:
    """Number of items in the top ``fraction`` of ``total`` (at least one)."""
    if not 0.0 < fraction <= 1.0:
        raise ConfigError("fraction must be in (0, 1]")
    return max(1, int(math.floor(fraction * total + 1e-9)))

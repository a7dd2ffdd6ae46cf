"""Plain-text file formats for matrices, triplets, features, labels, landmarks and models.

All writers are deterministic: the same arrays always produce the same bytes.

* Matrix file: first line ``rows cols``, then one row-major line per row of
  whitespace-separated values printed with 17 significant digits.
* Triplet file: TSV ``view<TAB>i<TAB>j<TAB>k`` with 0-based indices; lines
  starting with ``#`` are comments. Writers emit ``# num_objects N`` and
  ``# num_views T`` headers so empty views and unused objects survive a
  round trip.
* Feature file: first line ``N H``, then one tab-separated row per object.
* Labels file: TSV ``index<TAB>label``.
* Landmark file: TSV ``object<TAB>landmark<TAB>x<TAB>y``.
* Model directory: ``L.txt``, ``M_<t>.txt`` and ``model.json`` (config and
  objective trace).
"""

import json
import os

import numpy as np

from .data import AIRPLANE_VIEWS, LandmarkSet, TripletDataset
from .exceptions import DataError, DataFormatError

MODEL_META = "model.json"


def _fmt(x):
    return "%.17g" % x


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataFormatError(path, exc.lineno, exc.msg) from None


def _lines(path):
    """Yield ``(lineno, stripped_line)`` for non-blank lines."""
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if line:
                yield lineno, line


def _numbers(path, lineno, line, cast=float, count=None):
    try:
        vals = [cast(tok) for tok in line.split()]
    except ValueError:
        raise DataFormatError(path, lineno, f"expected numbers, got {line!r}") from None
    if count is not None and len(vals) != count:
        raise DataFormatError(path, lineno, f"expected {count} values, got {len(vals)}")
    return vals


# ---------------------------------------------------------------------------
# matrices


def write_matrix(path, A):
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    with open(path, "w") as fh:
        fh.write(f"{A.shape[0]} {A.shape[1]}\n")
        for row in A:
            fh.write(" ".join(_fmt(x) for x in row) + "\n")


def _read_table(path, header_what):
    it = _lines(path)
    try:
        lineno, line = next(it)
    except StopIteration:
        raise DataFormatError(path, 1, f"missing '{header_what}' header") from None
    rows, cols = _numbers(path, lineno, line, int, 2)
    if rows < 0 or cols < 0:
        raise DataFormatError(path, lineno, "negative dimensions")
    A = np.empty((rows, cols))
    r = 0
    for lineno, line in it:
        if r >= rows:
            raise DataFormatError(path, lineno, f"more than {rows} rows")
        A[r] = _numbers(path, lineno, line, float, cols)
        r += 1
    if r != rows:
        raise DataFormatError(path, lineno, f"expected {rows} rows, found {r}")
    return A


def read_matrix(path):
    return _read_table(path, "rows cols")


# ---------------------------------------------------------------------------
# triplets, features, labels


def save_triplets(path, data):
    """Write every view's triplets of a :class:`TripletDataset`."""
    with open(path, "w") as fh:
        fh.write(f"# num_objects {data.num_objects}\n")
        fh.write(f"# num_views {data.num_views}\n")
        for t, S in enumerate(data.triplets):
            for i, j, k in S:
                fh.write(f"{t}\t{i}\t{j}\t{k}\n")


def load_triplets(path, num_objects=None, num_views=None, features=None, labels=None):
    """Read a triplet file into a :class:`TripletDataset`.

    Header comments supply the object and view counts; explicit arguments
    override them, and without either they are inferred from the indices.
    """
    header = {}
    rows = []
    for lineno, line in _lines(path):
        if line.startswith("#"):
            parts = line[1:].split()
            if len(parts) == 2 and parts[0] in ("num_objects", "num_views"):
                header[parts[0]] = int(_numbers(path, lineno, parts[1], int, 1)[0])
            continue
        vals = _numbers(path, lineno, line, int, 4)
        if min(vals) < 0:
            raise DataFormatError(path, lineno, "negative index")
        rows.append((lineno, vals))
    N = num_objects if num_objects is not None else header.get("num_objects")
    T = num_views if num_views is not None else header.get("num_views")
    if N is None:
        N = 1 + max((max(v[1:]) for _, v in rows), default=-1)
    if T is None:
        T = 1 + max((v[0] for _, v in rows), default=-1)
    per_view = [[] for _ in range(T)]
    for lineno, (t, i, j, k) in rows:
        if t >= T:
            raise DataFormatError(path, lineno, f"view {t} out of range for {T} views")
        if max(i, j, k) >= N:
            raise DataFormatError(path, lineno, f"object index out of range for {N} objects")
        if len({i, j, k}) != 3:
            raise DataFormatError(path, lineno, "triplet indices must be distinct")
        per_view[t].append((i, j, k))
    trips = tuple(np.array(S, dtype=np.int64).reshape(-1, 3) for S in per_view)
    try:
        return TripletDataset(N, trips, features, labels)
    except DataError as exc:
        raise DataFormatError(path, 0, str(exc)) from None


def save_features(path, X):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    with open(path, "w") as fh:
        fh.write(f"{X.shape[0]} {X.shape[1]}\n")
        for row in X:
            fh.write("\t".join(_fmt(x) for x in row) + "\n")


def load_features(path):
    return _read_table(path, "N H")


def save_labels(path, labels):
    with open(path, "w") as fh:
        for n, lab in enumerate(np.asarray(labels).tolist()):
            fh.write(f"{n}\t{lab}\n")


def load_labels(path):
    """Read ``index<TAB>label`` lines; labels become integers when they all parse."""
    entries = {}
    for lineno, line in _lines(path):
        if line.startswith("#"):
            continue
        parts = line.split("\t") if "\t" in line else line.split()
        if len(parts) != 2:
            raise DataFormatError(path, lineno, "expected 'index<TAB>label'")
        try:
            idx = int(parts[0])
        except ValueError:
            raise DataFormatError(path, lineno, f"bad index {parts[0]!r}") from None
        if idx in entries:
            raise DataFormatError(path, lineno, f"duplicate index {idx}")
        entries[idx] = parts[1].strip()
    if sorted(entries) != list(range(len(entries))):
        raise DataFormatError(path, 0, "indices must cover 0..N-1")
    labs = [entries[n] for n in range(len(entries))]
    try:
        return np.array([int(x) for x in labs], dtype=np.int64)
    except ValueError:
        return np.array(labs)


# ---------------------------------------------------------------------------
# landmarks


def save_landmarks(path, landmarks):
    with open(path, "w") as fh:
        for n, shape in enumerate(landmarks.points):
            for lid, (x, y) in zip(landmarks.ids, shape):
                fh.write(f"{n}\t{lid}\t{_fmt(x)}\t{_fmt(y)}\n")


def save_view_subsets(path, subsets):
    write_json(path, {name: list(ids) for name, ids in subsets.items()})


def load_view_subsets(path):
    raw = read_json(path)
    if not isinstance(raw, dict) or not all(isinstance(v, list) for v in raw.values()):
        raise DataFormatError(path, 1, "expected an object mapping view names to landmark lists")
    return {str(k): [int(x) for x in v] for k, v in raw.items()}


def load_landmarks(path, subsets_path=None):
    """Read a landmark file; every object must annotate the same landmark ids."""
    table = {}
    for lineno, line in _lines(path):
        if line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 4:
            raise DataFormatError(path, lineno, "expected 'object landmark x y'")
        try:
            n, lid = int(parts[0]), int(parts[1])
            xy = (float(parts[2]), float(parts[3]))
        except ValueError:
            raise DataFormatError(path, lineno, f"malformed landmark line {line!r}") from None
        if lid in table.setdefault(n, {}):
            raise DataFormatError(path, lineno, f"object {n} repeats landmark {lid}")
        table[n][lid] = xy
    if sorted(table) != list(range(len(table))):
        raise DataFormatError(path, 0, "object indices must cover 0..N-1")
    ids = tuple(sorted(table[0])) if table else ()
    for n, marks in table.items():
        if tuple(sorted(marks)) != ids:
            raise DataFormatError(path, 0, f"object {n} has a different landmark set")
    points = np.array([[table[n][lid] for lid in ids] for n in range(len(table))]).reshape(len(table), len(ids), 2)
    subsets = AIRPLANE_VIEWS if subsets_path is None else load_view_subsets(subsets_path)
    try:
        return LandmarkSet(points, ids, dict(subsets))
    except DataError as exc:
        raise DataFormatError(path, 0, str(exc)) from None


# ---------------------------------------------------------------------------
# models


def save_model(directory, model):
    os.makedirs(directory, exist_ok=True)
    write_matrix(os.path.join(directory, "L.txt"), model.L)
    for t, M in enumerate(model.Ms):
        write_matrix(os.path.join(directory, f"M_{t}.txt"), M)
    write_json(
        os.path.join(directory, MODEL_META),
        {
            "config": model.config.to_dict(),
            "num_views": model.num_views,
            "objective_trace": [float(x) for x in model.objective_trace],
        },
    )


def load_model(directory):
    from .solver import SolverConfig, TrainedModel

    meta_path = os.path.join(directory, MODEL_META)
    meta = read_json(meta_path)
    try:
        cfg = SolverConfig.from_dict(meta["config"])
        T = int(meta["num_views"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(meta_path, 1, f"bad model metadata: {exc}") from None
    L = read_matrix(os.path.join(directory, "L.txt"))
    Ms = tuple(read_matrix(os.path.join(directory, f"M_{t}.txt")) for t in range(T))
    return TrainedModel(L, Ms, tuple(meta.get("objective_trace", ())), cfg)

"""Gas-sensor dataset ingestion, splitting and summary statistics.

The on-disk format is a UTF-8 CSV with a header row and the seven sensor
columns ``MQ2, MQ3, MQ5, MQ6, MQ7, MQ8, MQ135`` followed by a label column.
Readings are written with ``repr`` so that a save/load round trip reproduces
every 64-bit float exactly.
"""
from __future__ import annotations

import csv
import io
import itertools
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from sklearn.model_selection import StratifiedShuffleSplit

from ._io import atomic_write_text
from ._rng import substream
from .encoding import SENSOR_NAMES
from .exceptions import SchemaError, StratificationError, ValidationError

LABEL_COLUMN = "label"
LABEL_COLUMN_ALIASES = ("label", "gas", "class", "target")


class ExtraColumnWarning(UserWarning):
    """Columns outside the sensor schema were present and ignored."""


@dataclass(frozen=True)
class GasLabel:
    """A gas class.

    The four canonical classes have fixed display names. Anything else is
    kept verbatim as an ``Other`` label so nonstandard corpora still load.
    """

    name: str

    NO_GAS = "NoGas"
    PERFUME = "Perfume"
    CO2_CO = "CO2COMixture"
    TOXIC = "ToxicMixture"

    @property
    def is_canonical(self) -> bool:
        return self.name in CANONICAL_LABELS

    def __str__(self) -> str:
        return CANONICAL_LABELS.get(self.name, self.name)

    def format(self) -> str:
        return str(self)

    @classmethod
    def parse(cls, text: str, aliases: Mapping[str, str] | None = None) -> "GasLabel":
        """Match ``text`` case-insensitively against canonical names and aliases.

        Unmatched text becomes an ``Other`` label holding the stripped input.
        """
        raw = str(text).strip()
        key = _fold(raw)
        table = dict(_DEFAULT_ALIASES)
        if aliases:
            table.update({_fold(k): v for k, v in aliases.items()})
        if key in table:
            return cls(table[key])
        return cls(raw)


CANONICAL_LABELS = {
    GasLabel.NO_GAS: "No Gas",
    GasLabel.PERFUME: "Perfume",
    GasLabel.CO2_CO: "CO2 and CO Mixture",
    GasLabel.TOXIC: "Toxic Gases Mixture",
}


def _fold(s: str) -> str:
    return " ".join(s.lower().replace("_", " ").split())


_DEFAULT_ALIASES = {}
for _ident, _display in CANONICAL_LABELS.items():
    _DEFAULT_ALIASES[_fold(_ident)] = _ident
    _DEFAULT_ALIASES[_fold(_display)] = _ident
_DEFAULT_ALIASES.update({
    "nogas": GasLabel.NO_GAS,
    "co2 co mixture": GasLabel.CO2_CO,
    "co2 & co mixture": GasLabel.CO2_CO,
    "toxic mixture": GasLabel.TOXIC,
    "toxic gas mixture": GasLabel.TOXIC,
})


@dataclass(frozen=True)
class SensorRecord:
    readings: tuple
    label: GasLabel

    def __post_init__(self):
        r = tuple(float(v) for v in self.readings)
        if len(r) != len(SENSOR_NAMES):
            raise ValidationError(f"expected {len(SENSOR_NAMES)} readings, got {len(r)}")
        for name, v in zip(SENSOR_NAMES, r):
            if not math.isfinite(v) or v < 0:
                raise ValidationError(f"{name} reading must be finite and >= 0, got {v!r}")
        object.__setattr__(self, "readings", r)
        if not isinstance(self.label, GasLabel):
            object.__setattr__(self, "label", GasLabel.parse(self.label))


@dataclass(frozen=True)
class Dataset:
    records: tuple
    source: str = "<memory>"
    n_rows: int = field(default=-1)

    def __post_init__(self):
        recs = tuple(self.records)
        if not recs:
            raise ValidationError("dataset is empty")
        object.__setattr__(self, "records", recs)
        if self.n_rows < 0:
            object.__setattr__(self, "n_rows", len(recs))

    def __len__(self) -> int:
        return len(self.records)

    @property
    def X(self) -> np.ndarray:
        return np.array([r.readings for r in self.records], dtype=float)

    @property
    def y(self) -> np.ndarray:
        return np.array([str(r.label) for r in self.records], dtype=object)

    def class_counts(self) -> dict:
        out: dict = {}
        for r in self.records:
            out[str(r.label)] = out.get(str(r.label), 0) + 1
        return out

    @classmethod
    def from_arrays(cls, X, y, source: str = "<memory>") -> "Dataset":
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != len(SENSOR_NAMES):
            raise ValidationError(f"expected an (m, {len(SENSOR_NAMES)}) array, got shape {X.shape}")
        if len(X) != len(y):
            raise ValidationError(f"{len(X)} rows but {len(y)} labels")
        recs = [SensorRecord(tuple(row), lab if isinstance(lab, GasLabel) else GasLabel.parse(str(lab)))
                for row, lab in zip(X, y)]
        return cls(tuple(recs), source)

    def subset(self, idx: Iterable[int], source: str | None = None) -> "Dataset":
        return Dataset(tuple(self.records[i] for i in idx), source or self.source)


def _find_label_column(header: Sequence[str], label_column: str | None) -> int:
    folded = [h.strip().lower() for h in header]
    candidates = (label_column,) if label_column else LABEL_COLUMN_ALIASES
    for c in candidates:
        if c is not None and c.lower() in folded:
            return folded.index(c.lower())
    raise SchemaError(f"missing label column {label_column or LABEL_COLUMN!r}")


def _sensor_columns(header: Sequence[str], name: str) -> list[int]:
    folded = [h.strip().lower() for h in header]
    cols = []
    for s in SENSOR_NAMES:
        if s.lower() not in folded:
            raise SchemaError(f"{name}: missing column {s!r}")
        cols.append(folded.index(s.lower()))
    return cols


def _parse_readings(row: Sequence[str], cols: Sequence[int], lineno: int, name: str) -> list[float]:
    vals = []
    for s, c in zip(SENSOR_NAMES, cols):
        cell = row[c].strip() if c < len(row) else ""
        try:
            v = float(cell)
        except ValueError:
            raise ValidationError(f"{name}: row {lineno}, column {s}: non-numeric value {cell!r}") from None
        if not math.isfinite(v) or v < 0:
            raise ValidationError(f"{name}: row {lineno}, column {s}: reading must be finite and >= 0, got {cell!r}")
        vals.append(v)
    return vals


def read_csv(source, label_column: str | None = None, aliases: Mapping[str, str] | None = None,
             name: str = "<stream>") -> Dataset:
    """Parse a sensor CSV from an open text stream."""
    reader = csv.reader(source)
    header = next(reader, None)
    if header is None or not any(h.strip() for h in header):
        raise ValidationError(f"{name}: file is empty")
    cols = _sensor_columns(header, name)
    lab = _find_label_column(header, label_column)
    extra = [h for i, h in enumerate(header) if i not in cols and i != lab]
    if extra:
        warnings.warn(f"{name}: ignoring extra columns {extra}", ExtraColumnWarning, stacklevel=3)

    records = []
    for lineno, row in enumerate(reader, start=2):
        if not row or not any(c.strip() for c in row):
            continue
        if len(row) < len(header):
            raise ValidationError(f"{name}: row {lineno} has {len(row)} fields, expected {len(header)}")
        vals = _parse_readings(row, cols, lineno, name)
        label = row[lab].strip()
        if not label:
            raise ValidationError(f"{name}: row {lineno}: missing label")
        records.append(SensorRecord(tuple(vals), GasLabel.parse(label, aliases)))
    if not records:
        raise ValidationError(f"{name}: no data rows")
    return Dataset(tuple(records), name, len(records))


def load_csv(path, label_column: str | None = None, aliases: Mapping[str, str] | None = None) -> Dataset:
    """Load a sensor CSV.

    Parameters
    ----------
    path : str or Path
    label_column : str, optional
        Header of the label column. By default the first of
        ``label, gas, class, target`` found (case-insensitive) is used.
    aliases : mapping, optional
        Extra ``text -> canonical identifier`` label aliases, e.g.
        ``{"clean air": "NoGas"}``.

    Raises
    ------
    SchemaError
        A sensor or label column is missing.
    ValidationError
        The file is empty or a reading is non-numeric, negative or non-finite.
    """
    path = Path(path)
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            return read_csv(fh, label_column, aliases, name=str(path))
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc.strerror or exc}") from exc


def load_readings(path) -> np.ndarray:
    """Sensor readings from a CSV whose label column, if any, is ignored."""
    path = Path(path)
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or not any(h.strip() for h in header):
                raise ValidationError(f"{path}: file is empty")
            cols = _sensor_columns(header, str(path))
            rows = [_parse_readings(r, cols, i, str(path))
                    for i, r in enumerate(reader, start=2) if any(c.strip() for c in r)]
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc.strerror or exc}") from exc
    if not rows:
        raise ValidationError(f"{path}: no data rows")
    return np.array(rows, dtype=float)


def dumps_csv(dataset: Dataset) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([*SENSOR_NAMES, LABEL_COLUMN])
    for r in dataset.records:
        w.writerow([repr(v) for v in r.readings] + [str(r.label)])
    return buf.getvalue()


def save_csv(dataset: Dataset, path) -> Path:
    return atomic_write_text(path, dumps_csv(dataset))


def split(dataset: Dataset, test_fraction: float = 0.2, seed: int = 0) -> tuple:
    """Stratified train/test partition.

    Raises
    ------
    StratificationError
        Some class has fewer than two records.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValidationError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    counts = dataset.class_counts()
    thin = sorted(k for k, v in counts.items() if v < 2)
    if thin:
        raise StratificationError(f"classes with fewer than 2 records cannot be stratified: {thin}")
    y = dataset.y
    sss = StratifiedShuffleSplit(n_splits=1, test_size=test_fraction, random_state=int(seed))
    try:
        tr, te = next(sss.split(np.zeros(len(y)), y))
    except ValueError as exc:
        raise StratificationError(str(exc)) from exc
    return (dataset.subset(sorted(tr), dataset.source + "[train]"),
            dataset.subset(sorted(te), dataset.source + "[test]"))


def summary_stats(dataset: Dataset) -> dict:
    """Per-sensor min, max, mean and population variance."""
    X = dataset.X
    return {
        s: {
            "min": float(X[:, j].min()),
            "max": float(X[:, j].max()),
            "mean": float(np.mean(X[:, j])),
            "variance": float(np.var(X[:, j])),
        }
        for j, s in enumerate(SENSOR_NAMES)
    }


def dumps_pairdata(dataset: Dataset, sensors: Sequence[str] | None = None) -> str:
    sensors = list(SENSOR_NAMES if sensors is None else sensors)
    if not sensors:
        raise ValidationError("no sensors selected")
    unknown = [s for s in sensors if s not in SENSOR_NAMES]
    if unknown:
        raise ValidationError(f"unknown sensors {unknown}; expected a subset of {list(SENSOR_NAMES)}")
    idx = {s: SENSOR_NAMES.index(s) for s in sensors}
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sensor_a", "sensor_b", "value_a", "value_b", "label"])
    for a, b in itertools.combinations(sensors, 2):
        for r in dataset.records:
            w.writerow([a, b, repr(r.readings[idx[a]]), repr(r.readings[idx[b]]), str(r.label)])
    return buf.getvalue()


def export_pairdata(dataset: Dataset, path, sensors: Sequence[str] | None = None) -> Path:
    """Write every unordered sensor pair as tidy long-form rows."""
    text = dumps_pairdata(dataset, sensors)
    try:
        return atomic_write_text(path, text)
    except OSError as exc:
        raise ValidationError(f"cannot write {path}: {exc.strerror or exc}") from exc


# Observed per-sensor ranges of the reference corpus, used to place synthetic clusters.
REFERENCE_MIN = np.array([502.0, 337.0, 291.0, 311.0, 361.0, 220.0, 275.0])
REFERENCE_MAX = np.array([824.0, 543.0, 596.0, 524.0, 796.0, 794.0, 589.0])
SYNTHETIC_LABELS = (GasLabel.NO_GAS, GasLabel.PERFUME, GasLabel.CO2_CO)


def synthetic_clusters(n_per_class: int = 100, n_classes: int = 3, spread: float = 0.05, seed: int = 0) -> Dataset:
    """Gaussian blobs in the seven-sensor schema.

    Each class centre is drawn uniformly from the middle 70% of every
    sensor's reference range; readings scatter around it with standard
    deviation ``spread`` times that range. Rows are shuffled.
    """
    labels = (GasLabel.NO_GAS, GasLabel.PERFUME, GasLabel.CO2_CO, GasLabel.TOXIC)
    if not 1 <= n_classes <= len(labels):
        raise ValidationError(f"n_classes must lie in [1, {len(labels)}], got {n_classes}")
    if n_per_class < 1:
        raise ValidationError(f"n_per_class must be >= 1, got {n_per_class}")
    rng = substream(seed, "data.synthetic")
    width = REFERENCE_MAX - REFERENCE_MIN
    centres = REFERENCE_MIN + width * rng.uniform(0.15, 0.85, (n_classes, len(SENSOR_NAMES)))
    X = np.vstack([c + rng.normal(0.0, spread * width, (n_per_class, len(SENSOR_NAMES))) for c in centres])
    X = np.clip(X, 0.0, None)
    y = np.repeat(np.arange(n_classes), n_per_class)
    order = rng.permutation(len(y))
    return Dataset.from_arrays(X[order], [GasLabel(labels[k]) for k in y[order]], source=f"synthetic(seed={seed})")

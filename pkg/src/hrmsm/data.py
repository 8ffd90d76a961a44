"""Observed longitudinal panels, history windows and t-specific views.

A panel holds, for every unit, treatments ``A(0..K)``, covariate vectors
``L(0..K+1)`` and an outcome series ``Y(1..K+1)``.  Everything is stored in
dense numpy arrays indexed ``[unit, time]``; :class:`UnitRecord` and
:class:`TView` are lightweight per-unit views over those arrays.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "OUTCOME_KINDS",
    "PanelError",
    "TreatmentLevels",
    "OutcomeSeries",
    "UnitRecord",
    "PanelDataset",
    "PanelSchema",
    "WindowSpec",
    "VAtom",
    "VSpec",
    "TView",
    "load_panel",
    "write_panel",
    "build_t_view",
    "flatten_view",
    "eval_v",
    "v_matrix",
]

OUTCOME_KINDS = ("continuous", "binary", "counts")


class PanelError(ValueError):
    """Raised when panel data or a window/V specification is malformed."""


@dataclass(frozen=True)
class TreatmentLevels:
    """Finite treatment label set with one numeric score per label.

    Codes are positions in ``labels``; code 0 is the reference level.
    """

    labels: tuple[str, ...]
    scores: np.ndarray

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=float)
        if len(self.labels) < 2:
            raise PanelError("treatment needs at least two levels")
        if len(set(self.labels)) != len(self.labels):
            raise PanelError("duplicate treatment labels")
        if scores.shape != (len(self.labels),):
            raise PanelError("one score per treatment level is required")
        scores.setflags(write=False)
        object.__setattr__(self, "labels", tuple(str(x) for x in self.labels))
        object.__setattr__(self, "scores", scores)

    @classmethod
    def binary(cls) -> "TreatmentLevels":
        return cls(("0", "1"), np.array([0.0, 1.0]))

    @classmethod
    def from_mapping(cls, mapping: dict) -> "TreatmentLevels":
        return cls(tuple(str(k) for k in mapping), np.array([float(v) for v in mapping.values()]))

    def __len__(self):
        return len(self.labels)

    def code(self, label) -> int:
        try:
            return self.labels.index(str(label))
        except ValueError:
            raise PanelError(f"treatment label {label!r} not in levels {self.labels}") from None

    def score_of(self, codes) -> np.ndarray:
        return self.scores[np.asarray(codes, dtype=int)]

    def to_dict(self) -> dict:
        return {lab: float(sc) for lab, sc in zip(self.labels, self.scores)}

    def __eq__(self, other):
        return (
            isinstance(other, TreatmentLevels)
            and self.labels == other.labels
            and np.array_equal(self.scores, other.scores)
        )

    def __hash__(self):
        return hash((self.labels, tuple(self.scores)))


@dataclass(frozen=True)
class OutcomeSeries:
    """Outcome values for times ``0..K+1``; index 0 is unused (NaN).

    For ``counts`` the values are event counts C(t) and ``trials`` holds N(t).
    """

    kind: str
    values: np.ndarray
    trials: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in OUTCOME_KINDS:
            raise PanelError(f"unknown outcome kind {self.kind!r}")
        if (self.kind == "counts") != (self.trials is not None):
            raise PanelError("trials are required for, and only for, counts outcomes")
        vals = self.values[1:]
        if np.isnan(vals).any():
            raise PanelError("outcome missing at some time in 1..K+1")
        if self.kind == "binary" and not np.isin(vals, (0.0, 1.0)).all():
            raise PanelError("binary outcome must be 0/1")
        if self.kind == "counts":
            n = self.trials[1:]
            if (n < 1).any() or (vals < 0).any() or (vals > n).any():
                raise PanelError("counts outcome requires 0 <= C(t) <= N(t) and N(t) >= 1")

    def at(self, t: int):
        if self.kind == "counts":
            return (float(self.values[t]), float(self.trials[t]))
        return float(self.values[t])


@dataclass(frozen=True)
class UnitRecord:
    id: object
    treatments: np.ndarray  # (K+1,) integer codes
    covariates: np.ndarray  # (K+2, p)
    outcome: OutcomeSeries
    levels: TreatmentLevels
    covariate_names: tuple[str, ...]

    @property
    def K(self) -> int:
        return len(self.treatments) - 1


@dataclass(frozen=True, eq=False)
class PanelDataset:
    """Array-backed panel ``O = (A(0..K), L(0..K+1))`` for ``n`` units.

    Attributes
    ----------
    ids : ndarray, shape (n,)
    treatments : ndarray of int, shape (n, K+1)
        Treatment codes into ``levels``.
    covariates : ndarray, shape (n, K+2, p)
    outcome : ndarray, shape (n, K+2)
        ``outcome[:, 0]`` is NaN; counts outcomes store C(t) here.
    trials : ndarray or None, shape (n, K+2)
        N(t) for counts outcomes.
    """

    ids: np.ndarray
    treatments: np.ndarray
    covariates: np.ndarray
    outcome: np.ndarray
    covariate_names: tuple[str, ...]
    levels: TreatmentLevels
    outcome_kind: str = "continuous"
    trials: np.ndarray | None = None
    outcome_name: str = "Y"

    def __post_init__(self):
        treatments = np.asarray(self.treatments, dtype=np.int64)
        covariates = np.asarray(self.covariates, dtype=float)
        outcome = np.asarray(self.outcome, dtype=float)
        ids = np.asarray(self.ids, dtype=object)
        if treatments.ndim != 2:
            raise PanelError("treatments must be (n, K+1)")
        n, k1 = treatments.shape
        p = len(self.covariate_names)
        if covariates.ndim == 2 and p == 1:
            covariates = covariates[:, :, None]
        if covariates.shape != (n, k1 + 1, p):
            raise PanelError(
                f"covariates have shape {covariates.shape}, expected {(n, k1 + 1, p)}"
            )
        if outcome.shape != (n, k1 + 1):
            raise PanelError(f"outcome has shape {outcome.shape}, expected {(n, k1 + 1)}")
        if ids.shape != (n,):
            raise PanelError("one id per unit is required")
        if self.outcome_kind not in OUTCOME_KINDS:
            raise PanelError(f"unknown outcome kind {self.outcome_kind!r}")
        if ((treatments < 0) | (treatments >= len(self.levels))).any():
            raise PanelError("treatment code outside the level set")
        if not np.isfinite(covariates).all():
            i, j, _ = np.argwhere(~np.isfinite(covariates))[0]
            raise PanelError(f"unit {ids[i]!r}: missing covariate at time {j}")
        if np.isnan(outcome[:, 1:]).any():
            i, j = np.argwhere(np.isnan(outcome[:, 1:]))[0]
            raise PanelError(f"unit {ids[i]!r}: missing outcome at time {j + 1}")
        outcome[:, 0] = np.nan
        trials = self.trials
        if self.outcome_kind == "counts":
            if trials is None:
                raise PanelError("counts outcome requires trials")
            trials = np.asarray(trials, dtype=float)
            if trials.shape != outcome.shape:
                raise PanelError("trials must match the outcome shape")
            c, nn = outcome[:, 1:], trials[:, 1:]
            bad = (nn < 1) | (c < 0) | (c > nn) | (c != np.round(c))
            if bad.any():
                i, j = np.argwhere(bad)[0]
                raise PanelError(f"unit {ids[i]!r}: invalid count/trials at time {j + 1}")
            trials[:, 0] = np.nan
            trials.setflags(write=False)
        elif trials is not None:
            raise PanelError("trials given for a non-counts outcome")
        if self.outcome_kind == "binary" and not np.isin(outcome[:, 1:], (0.0, 1.0)).all():
            raise PanelError("binary outcome must be 0/1")
        for arr in (treatments, covariates, outcome, ids):
            arr.setflags(write=False)
        object.__setattr__(self, "treatments", treatments)
        object.__setattr__(self, "covariates", covariates)
        object.__setattr__(self, "outcome", outcome)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "trials", trials)
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))

    @property
    def n(self) -> int:
        return self.treatments.shape[0]

    @property
    def K(self) -> int:
        return self.treatments.shape[1] - 1

    @property
    def treatment_scores(self) -> np.ndarray:
        return self.levels.scores[self.treatments]

    def covariate_index(self, name: str) -> int:
        try:
            return self.covariate_names.index(name)
        except ValueError:
            raise PanelError(f"unknown covariate {name!r}") from None

    def unit(self, i: int) -> UnitRecord:
        trials = None if self.trials is None else self.trials[i]
        return UnitRecord(
            id=self.ids[i],
            treatments=self.treatments[i],
            covariates=self.covariates[i],
            outcome=OutcomeSeries(self.outcome_kind, self.outcome[i], trials),
            levels=self.levels,
            covariate_names=self.covariate_names,
        )

    @property
    def units(self) -> list[UnitRecord]:
        return [self.unit(i) for i in range(self.n)]

    def take(self, idx) -> "PanelDataset":
        """Sub-panel (with repetition allowed) of the units at positions ``idx``."""
        idx = np.asarray(idx, dtype=np.int64)
        return PanelDataset(
            ids=self.ids[idx],
            treatments=self.treatments[idx],
            covariates=self.covariates[idx],
            outcome=self.outcome[idx].copy(),
            covariate_names=self.covariate_names,
            levels=self.levels,
            outcome_kind=self.outcome_kind,
            trials=None if self.trials is None else self.trials[idx].copy(),
            outcome_name=self.outcome_name,
        )

    def outcome_at(self, t: int) -> np.ndarray:
        """Outcome column at time ``t``: shape (n,), or (n, 2) of (C, N) for counts."""
        if self.outcome_kind == "counts":
            return np.column_stack([self.outcome[:, t], self.trials[:, t]])
        return self.outcome[:, t]

    @classmethod
    def from_units(cls, units: Sequence[UnitRecord], outcome_name: str = "Y") -> "PanelDataset":
        if not units:
            raise PanelError("no units")
        first = units[0]
        kind = first.outcome.kind
        return cls(
            ids=np.array([u.id for u in units], dtype=object),
            treatments=np.stack([u.treatments for u in units]),
            covariates=np.stack([u.covariates for u in units]),
            outcome=np.stack([u.outcome.values for u in units]),
            covariate_names=first.covariate_names,
            levels=first.levels,
            outcome_kind=kind,
            trials=None if kind != "counts" else np.stack([u.outcome.trials for u in units]),
            outcome_name=outcome_name,
        )


# ---------------------------------------------------------------------------
# CSV ingestion


@dataclass(frozen=True)
class PanelSchema:
    """Column mapping for a long-format table (one row per unit and time).

    ``outcome`` names the outcome column; for counts outcomes ``outcome`` is
    the count column and ``trials`` the trial-count column.
    """

    id: str = "id"
    time: str = "time"
    treatment: str = "A"
    outcome: str = "Y"
    covariates: tuple[str, ...] = ()
    outcome_kind: str = "continuous"
    trials: str | None = None
    treatment_levels: dict | None = None

    def __post_init__(self):
        object.__setattr__(self, "covariates", tuple(self.covariates))
        if self.outcome_kind not in OUTCOME_KINDS:
            raise PanelError(f"unknown outcome kind {self.outcome_kind!r}")
        if (self.outcome_kind == "counts") != (self.trials is not None):
            raise PanelError("schema.trials is required for, and only for, counts outcomes")


def _is_blank(cell) -> bool:
    return cell is None or str(cell).strip() == "" or str(cell).strip().lower() == "nan"


def _infer_levels(labels: Iterable[str]) -> TreatmentLevels:
    uniq = sorted(set(labels))
    try:
        scores = [float(x) for x in uniq]
        order = np.argsort(scores, kind="stable")
        uniq = [uniq[i] for i in order]
        scores = [scores[i] for i in order]
    except ValueError:
        scores = list(range(len(uniq)))
    if len(uniq) == 1:
        raise PanelError("only one treatment level observed; supply schema.treatment_levels")
    return TreatmentLevels(tuple(uniq), np.array(scores, dtype=float))


def load_panel(path, schema: PanelSchema) -> PanelDataset:
    """Read a long-format CSV into a :class:`PanelDataset`.

    Times must be consecutive integers from 0 for every unit; ``K`` is the
    maximum time minus one.  Units keep the order of first appearance.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        needed = [schema.id, schema.time, schema.treatment, schema.outcome, *schema.covariates]
        if schema.trials:
            needed.append(schema.trials)
        missing = [c for c in needed if c not in header]
        if missing:
            raise PanelError(f"missing columns: {missing}")
        rows: dict[str, dict[int, dict]] = {}
        for row in reader:
            uid = row[schema.id]
            try:
                t = int(float(row[schema.time]))
            except ValueError:
                raise PanelError(f"unit {uid!r}: non-integer time {row[schema.time]!r}") from None
            unit_rows = rows.setdefault(uid, {})
            if t in unit_rows:
                raise PanelError(f"unit {uid!r}: duplicate row at time {t}")
            unit_rows[t] = row
    if not rows:
        raise PanelError("empty panel")

    max_t = max(max(r) for r in rows.values())
    if max_t < 1:
        raise PanelError("need at least times 0 and 1")
    K = max_t - 1
    for uid, unit_rows in rows.items():
        for t in range(max_t + 1):
            if t not in unit_rows:
                raise PanelError(f"unit {uid!r}: no row at time {t}")
        if len(unit_rows) != max_t + 1:
            extra = sorted(set(unit_rows) - set(range(max_t + 1)))
            raise PanelError(f"unit {uid!r}: unexpected times {extra}")

    if schema.treatment_levels is not None:
        levels = TreatmentLevels.from_mapping(schema.treatment_levels)
    else:
        labels = [
            str(unit_rows[t][schema.treatment]).strip()
            for unit_rows in rows.values()
            for t in range(K + 1)
            if not _is_blank(unit_rows[t][schema.treatment])
        ]
        levels = _infer_levels(labels)

    n, p = len(rows), len(schema.covariates)
    ids = np.empty(n, dtype=object)
    A = np.zeros((n, K + 1), dtype=np.int64)
    L = np.zeros((n, K + 2, p))
    Y = np.full((n, K + 2), np.nan)
    N = np.full((n, K + 2), np.nan) if schema.trials else None

    def number(uid, t, col, cell):
        if _is_blank(cell):
            raise PanelError(f"unit {uid!r}: missing {col!r} at time {t}")
        try:
            return float(cell)
        except ValueError:
            raise PanelError(f"unit {uid!r}: non-numeric {col!r} at time {t}: {cell!r}") from None

    for i, (uid, unit_rows) in enumerate(rows.items()):
        ids[i] = uid
        for t in range(K + 2):
            row = unit_rows[t]
            if t <= K:
                cell = row[schema.treatment]
                if _is_blank(cell):
                    raise PanelError(f"unit {uid!r}: missing treatment at time {t}")
                label = str(cell).strip()
                if label not in levels.labels:
                    try:
                        # tolerate "1.0" for label "1"
                        label = next(lab for lab in levels.labels if float(lab) == float(label))
                    except (ValueError, StopIteration):
                        raise PanelError(
                            f"unit {uid!r}: treatment {cell!r} at time {t} not in {levels.labels}"
                        ) from None
                A[i, t] = levels.labels.index(label)
            for c, col in enumerate(schema.covariates):
                L[i, t, c] = number(uid, t, col, row[col])
            if t >= 1:
                Y[i, t] = number(uid, t, schema.outcome, row[schema.outcome])
                if N is not None:
                    N[i, t] = number(uid, t, schema.trials, row[schema.trials])

    return PanelDataset(
        ids=ids,
        treatments=A,
        covariates=L,
        outcome=Y,
        covariate_names=schema.covariates,
        levels=levels,
        outcome_kind=schema.outcome_kind,
        trials=N,
        outcome_name=schema.outcome,
    )


def _fmt(x: float) -> str:
    if math.isnan(x):
        return ""
    if float(x).is_integer():
        return str(int(x))
    return repr(float(x))


def write_panel(data: PanelDataset, path, schema: PanelSchema | None = None) -> PanelSchema:
    """Write ``data`` as a long-format CSV; returns the schema that reads it back."""
    if schema is None:
        schema = PanelSchema(
            covariates=data.covariate_names,
            outcome=data.outcome_name,
            outcome_kind=data.outcome_kind,
            trials="N" if data.outcome_kind == "counts" else None,
            treatment_levels=data.levels.to_dict(),
        )
    cols = [schema.id, schema.time, schema.treatment, *schema.covariates, schema.outcome]
    if schema.trials:
        cols.append(schema.trials)
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for i in range(data.n):
            for t in range(data.K + 2):
                a = data.levels.labels[data.treatments[i, t]] if t <= data.K else ""
                row = [str(data.ids[i]), str(t), a]
                row += [_fmt(v) for v in data.covariates[i, t]]
                row.append(_fmt(data.outcome[i, t]))
                if schema.trials:
                    row.append(_fmt(data.trials[i, t]))
                w.writerow(row)
    return schema


# ---------------------------------------------------------------------------
# windows, V and t-specific views


@dataclass(frozen=True)
class WindowSpec:
    """History size ``s`` and the target set of outcome times ``t`` (outcome Y(t+1))."""

    s: int
    targets: tuple[int, ...]

    def __post_init__(self):
        targets = tuple(sorted(int(t) for t in set(self.targets)))
        object.__setattr__(self, "targets", targets)
        if self.s < 1:
            raise PanelError("window size s must be >= 1")
        if not targets:
            raise PanelError("target set must be nonempty")
        if targets[0] < self.s - 1:
            raise PanelError(f"targets must satisfy t >= s-1 = {self.s - 1}")

    @classmethod
    def full(cls, s: int, K: int) -> "WindowSpec":
        """Window with the typical target set ``{s-1, ..., K}``."""
        return cls(s, tuple(range(s - 1, K + 1)))

    def validate(self, K: int) -> "WindowSpec":
        if self.s > K + 1:
            raise PanelError(f"window size s={self.s} exceeds K+1={K + 1}")
        if self.targets[-1] > K:
            raise PanelError(f"target t={self.targets[-1]} exceeds K={K}")
        return self

    def start(self, t: int) -> int:
        return t - self.s + 1


@dataclass(frozen=True)
class VAtom:
    """One baseline selector: covariate ``name`` at the window start or at time 0."""

    name: str
    anchor: str = "window_start"

    def __post_init__(self):
        if self.anchor not in ("window_start", "study_baseline"):
            raise PanelError(f"unknown V anchor {self.anchor!r}")


@dataclass(frozen=True)
class VSpec:
    atoms: tuple[VAtom, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "atoms", tuple(self.atoms))

    def __len__(self):
        return len(self.atoms)

    def validate(self, covariate_names: Sequence[str]) -> "VSpec":
        for atom in self.atoms:
            if atom.name not in covariate_names:
                raise PanelError(f"V references unknown covariate {atom.name!r}")
        return self

    def names(self) -> list[str]:
        return [f"{a.name}@{'start' if a.anchor == 'window_start' else 'baseline'}" for a in self.atoms]


@dataclass(frozen=True)
class TView:
    """Unit data re-indexed so that ``t-s+1`` is baseline and ``Y(t+1)`` the outcome.

    ``baseline_block`` is ``(A(0..t-s), L(0..t-s+1))``; outcomes observed up
    to the window start ride along in ``baseline_outcomes`` (``Y(1..t-s+1)``)
    and inside the window in ``window_outcomes`` (``Y(t-s+2..t)``).
    """

    t: int
    s: int
    baseline_block: tuple[np.ndarray, np.ndarray]
    window_treatments: np.ndarray
    window_covariates: np.ndarray
    outcome: object
    baseline_outcomes: np.ndarray
    window_outcomes: np.ndarray
    levels: TreatmentLevels
    covariate_names: tuple[str, ...]
    outcome_kind: str = "continuous"
    baseline_trials: np.ndarray | None = None
    window_trials: np.ndarray | None = None
    unit_id: object = None

    @property
    def start(self) -> int:
        return self.t - self.s + 1

    @property
    def window_scores(self) -> np.ndarray:
        return self.levels.scores[self.window_treatments]


def build_t_view(unit: UnitRecord, window: WindowSpec, t: int) -> TView:
    """Re-index ``unit`` into the t-specific layout for window size ``window.s``."""
    s = window.s
    if t not in window.targets:
        raise PanelError(f"t={t} is not in the target set {window.targets}")
    if s > unit.K + 1 or t > unit.K:
        raise PanelError(f"window (s={s}, t={t}) does not fit K={unit.K}")
    start = t - s + 1
    y, n = unit.outcome.values, unit.outcome.trials
    outcome = unit.outcome.at(t + 1)
    return TView(
        t=t,
        s=s,
        baseline_block=(unit.treatments[:start].copy(), unit.covariates[: start + 1].copy()),
        window_treatments=unit.treatments[start : t + 1].copy(),
        window_covariates=unit.covariates[start + 1 : t + 2].copy(),
        outcome=outcome,
        baseline_outcomes=y[1 : start + 1].copy(),
        window_outcomes=y[start + 1 : t + 1].copy(),
        levels=unit.levels,
        covariate_names=unit.covariate_names,
        outcome_kind=unit.outcome.kind,
        baseline_trials=None if n is None else n[1 : start + 1].copy(),
        window_trials=None if n is None else n[start + 1 : t + 1].copy(),
        unit_id=unit.id,
    )


def flatten_view(view: TView) -> dict[str, np.ndarray]:
    """Undo the re-indexing: arrays on the conventional time axis ``0..t+1``.

    Returns ``treatments`` (t+1,), ``covariates`` (t+2, p), ``outcome``
    (t+2,) with NaN at 0, and ``trials`` for counts outcomes.
    """
    a0, l0 = view.baseline_block
    treatments = np.concatenate([a0, view.window_treatments])
    covariates = np.concatenate([l0, view.window_covariates])
    last = view.outcome[0] if view.outcome_kind == "counts" else view.outcome
    outcome = np.concatenate([[np.nan], view.baseline_outcomes, view.window_outcomes, [last]])
    out = {"treatments": treatments, "covariates": covariates, "outcome": outcome}
    if view.outcome_kind == "counts":
        out["trials"] = np.concatenate(
            [[np.nan], view.baseline_trials, view.window_trials, [view.outcome[1]]]
        )
    return out


def eval_v(view: TView, vspec: VSpec) -> np.ndarray:
    """V(t-s+1) read off the view's baseline block."""
    _, l0 = view.baseline_block
    out = np.empty(len(vspec))
    for k, atom in enumerate(vspec.atoms):
        c = view.covariate_names.index(atom.name)
        out[k] = l0[0, c] if atom.anchor == "study_baseline" else l0[-1, c]
    return out


def v_matrix(data: PanelDataset, vspec: VSpec, t: int, s: int) -> np.ndarray:
    """Vectorised :func:`eval_v` over all units: shape (n, len(vspec))."""
    start = t - s + 1
    out = np.empty((data.n, len(vspec)))
    for k, atom in enumerate(vspec.atoms):
        c = data.covariate_index(atom.name)
        out[:, k] = data.covariates[:, 0 if atom.anchor == "study_baseline" else start, c]
    return out

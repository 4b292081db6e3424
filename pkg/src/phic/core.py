"""Domain model: items, profiles, response matrices and positional datasets."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

ITEMS_PER_DV = 4


class ValidationError(ValueError):
    """A domain invariant does not hold."""


class IngestError(ValueError):
    """Input data cannot be parsed or references unknown entities."""


class QuestionType(str, enum.Enum):
    NAME = "Name"
    FUNCTION = "Function"
    CONTENT = "Content"

    @classmethod
    def parse(cls, value: str) -> "QuestionType":
        for member in cls:
            if member.value.lower() == str(value).strip().lower():
                return member
        raise ValueError(f"unknown question type {value!r}")


#: Within-session question order. Only "Name first" is documented for the
#: survey; the rest is configurable.
DEFAULT_SESSION_ORDER: tuple[QuestionType, ...] = (
    QuestionType.NAME,
    QuestionType.FUNCTION,
    QuestionType.FUNCTION,
    QuestionType.CONTENT,
)


def parse_session_order(text: str | Sequence[str]) -> tuple[QuestionType, ...]:
    parts = text.split(",") if isinstance(text, str) else list(text)
    order = tuple(QuestionType.parse(p) for p in parts)
    _check_order(order)
    return order


def _check_order(order: Sequence[QuestionType]) -> None:
    if len(order) != ITEMS_PER_DV:
        raise ValidationError(f"session order needs {ITEMS_PER_DV} entries, got {len(order)}")
    counts = {t: sum(1 for o in order if o is t) for t in QuestionType}
    if counts != {QuestionType.NAME: 1, QuestionType.FUNCTION: 2, QuestionType.CONTENT: 1}:
        raise ValidationError("session order must hold one Name, two Function and one Content")


@dataclass(frozen=True)
class Item:
    item_id: str
    dv_id: int
    question_type: QuestionType
    within_dv_position: int
    expert_difficulty: float

    def __post_init__(self):
        if not 1 <= self.within_dv_position <= ITEMS_PER_DV:
            raise ValidationError(f"item {self.item_id}: within_dv_position must be in 1..4")
        if not math.isfinite(self.expert_difficulty):
            raise ValidationError(f"item {self.item_id}: expert_difficulty must be finite")


def validate_items(items: Sequence[Item], order: Sequence[QuestionType] = DEFAULT_SESSION_ORDER) -> None:
    """Check that every visualization owns four items laid out as ``order``."""
    _check_order(order)
    ids = [it.item_id for it in items]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate item_id in item table")
    by_dv: dict[int, list[Item]] = {}
    for it in items:
        by_dv.setdefault(it.dv_id, []).append(it)
    for dv, group in sorted(by_dv.items()):
        positions = sorted(it.within_dv_position for it in group)
        if positions != list(range(1, ITEMS_PER_DV + 1)):
            raise ValidationError(f"dv {dv}: needs exactly one item per within_dv_position 1..4")
        for it in group:
            expected = order[it.within_dv_position - 1]
            if it.question_type is not expected:
                raise ValidationError(
                    f"item {it.item_id}: type {it.question_type.value} at within-DV position "
                    f"{it.within_dv_position} conflicts with session order (expected {expected.value})"
                )


@dataclass(frozen=True)
class ProfileAttribute:
    name: str
    kind: str  # "numeric" or "categorical"
    categories: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in ("numeric", "categorical"):
            raise ValidationError(f"attribute {self.name}: kind must be numeric or categorical")
        if self.kind == "categorical" and not self.categories:
            raise ValidationError(f"attribute {self.name}: categorical attribute needs categories")


@dataclass(frozen=True)
class ProfileSchema:
    attributes: tuple[ProfileAttribute, ...]
    expected_size: int = 18

    def __post_init__(self):
        if len(self.attributes) != self.expected_size:
            raise ValidationError(
                f"profile schema must declare {self.expected_size} attributes, got {len(self.attributes)}"
            )
        names = [a.name for a in self.attributes]
        if len(set(names)) != len(names):
            raise ValidationError("duplicate attribute name in profile schema")

    @property
    def names(self) -> list[str]:
        return [a.name for a in self.attributes]

    def __getitem__(self, name: str) -> ProfileAttribute:
        for a in self.attributes:
            if a.name == name:
                return a
        raise KeyError(name)

    def to_dict(self) -> list[dict]:
        return [
            {"name": a.name, "kind": a.kind, "categories": list(a.categories)} for a in self.attributes
        ]

    @classmethod
    def from_dict(cls, entries: Iterable[Mapping]) -> "ProfileSchema":
        attrs = tuple(
            ProfileAttribute(e["name"], e["kind"], tuple(e.get("categories", ()))) for e in entries
        )
        return cls(attrs)


_COUNTRIES = ("UK", "USA", "Canada", "Ireland", "Australia", "SouthAfrica", "India", "Other")

DEFAULT_PROFILE_SCHEMA = ProfileSchema(
    (
        ProfileAttribute("Age", "numeric"),
        ProfileAttribute("Gender", "categorical", ("Female", "Male", "NonBinary", "Undisclosed")),
        ProfileAttribute("CountryOfBirth", "categorical", _COUNTRIES),
        ProfileAttribute("CountryOfResidence", "categorical", _COUNTRIES),
        ProfileAttribute("Nationality", "categorical", _COUNTRIES),
        ProfileAttribute("Language", "categorical", ("English", "Bilingual", "Other")),
        ProfileAttribute("Education", "categorical", ("Secondary", "Vocational", "Bachelor", "Master")),
        ProfileAttribute(
            "Profession", "categorical", ("Student", "Employee", "SelfEmployed", "Unemployed", "Retired", "Other")
        ),
        ProfileAttribute(
            "DataVizExpertise", "categorical", ("None", "Novice", "Intermediate", "Advanced", "Expert")
        ),
        ProfileAttribute(
            "DataVizExperience", "categorical", ("Never", "Rarely", "Monthly", "Weekly", "Daily")
        ),
        ProfileAttribute("EmploymentSector", "categorical", ("Education", "Health", "Finance", "Tech", "Public", "Other")),
        ProfileAttribute("StatisticsTraining", "categorical", ("None", "Basic", "Course", "Degree")),
        ProfileAttribute("ChartReadingFrequency", "categorical", ("Never", "Rarely", "Monthly", "Weekly", "Daily")),
        ProfileAttribute("SpreadsheetUse", "categorical", ("Never", "Rarely", "Monthly", "Weekly", "Daily")),
        ProfileAttribute("ColorVisionDeficiency", "categorical", ("No", "Yes", "Unsure")),
        ProfileAttribute("Device", "categorical", ("Desktop", "Laptop", "Tablet")),
        ProfileAttribute("EnglishFirstLanguage", "categorical", ("Yes", "No")),
        ProfileAttribute("YearsInEducation", "numeric"),
    )
)


@dataclass(frozen=True)
class SubjectProfile:
    """One subject's attributes.

    ``values`` maps attribute name to a float (numeric), a category string, or
    ``None`` for an explicitly missing answer.
    """

    subject_id: str
    values: Mapping[str, object]

    def validate(self, schema: ProfileSchema) -> None:
        if set(self.values) != set(schema.names):
            missing = set(schema.names) - set(self.values)
            extra = set(self.values) - set(schema.names)
            raise ValidationError(
                f"subject {self.subject_id}: profile attributes do not match schema "
                f"(missing={sorted(missing)}, unexpected={sorted(extra)})"
            )
        for attr in schema.attributes:
            v = self.values[attr.name]
            if v is None:
                continue
            if attr.kind == "categorical" and v not in attr.categories:
                raise ValidationError(f"subject {self.subject_id}: unknown {attr.name} value {v!r}")
            if attr.kind == "numeric" and not (isinstance(v, (int, float)) and math.isfinite(v)):
                raise ValidationError(f"subject {self.subject_id}: {attr.name} must be a finite number")


@dataclass(frozen=True)
class ResponseMatrix:
    """Subjects x administration positions, each cell an item id plus correctness.

    ``item_ids[s, p]`` is the item subject ``s`` saw at position ``p + 1`` and
    ``correct[s, p]`` is 1 for a correct answer.
    """

    subject_ids: tuple[str, ...]
    item_ids: np.ndarray
    correct: np.ndarray

    def __post_init__(self):
        item_ids = np.asarray(self.item_ids, dtype=object)
        correct = np.asarray(self.correct, dtype=np.int8)
        if item_ids.ndim != 2 or item_ids.shape != correct.shape:
            raise ValidationError("item_ids and correct must be equally shaped 2-D arrays")
        if item_ids.shape[0] != len(self.subject_ids):
            raise ValidationError("one row per subject required")
        if len(set(self.subject_ids)) != len(self.subject_ids):
            raise ValidationError("duplicate subject_id in response matrix")
        if not np.isin(correct, (0, 1)).all():
            raise ValidationError("correctness must be binary")
        item_ids.flags.writeable = False
        correct.flags.writeable = False
        object.__setattr__(self, "item_ids", item_ids)
        object.__setattr__(self, "correct", correct)

    @classmethod
    def from_cells(
        cls,
        cells: Mapping[str, Sequence[tuple[str, int]]],
        n_positions: int = 32,
    ) -> "ResponseMatrix":
        subject_ids = tuple(cells)
        for sid in subject_ids:
            if len(cells[sid]) != n_positions:
                raise ValidationError(
                    f"subject {sid}: expected {n_positions} cells, got {len(cells[sid])}"
                )
        ids = np.empty((len(subject_ids), n_positions), dtype=object)
        corr = np.zeros((len(subject_ids), n_positions), dtype=np.int8)
        for s, sid in enumerate(subject_ids):
            for p, (item_id, c) in enumerate(cells[sid]):
                ids[s, p] = item_id
                corr[s, p] = c
        return cls(subject_ids, ids, corr)

    @property
    def n_subjects(self) -> int:
        return len(self.subject_ids)

    @property
    def n_positions(self) -> int:
        return self.item_ids.shape[1]

    def validate(self, items: Sequence[Item]) -> None:
        """Check every subject answers each item once, in DV blocks of four."""
        by_id = {it.item_id: it for it in items}
        if self.n_positions != len(items):
            raise ValidationError(f"expected {len(items)} positions per subject, got {self.n_positions}")
        for s, sid in enumerate(self.subject_ids):
            row = self.item_ids[s]
            for p, iid in enumerate(row):
                if iid not in by_id:
                    raise IngestError(f"subject {sid}, position {p + 1}: unknown item {iid!r}")
            if len(set(row)) != len(row):
                raise ValidationError(f"subject {sid}: an item is answered more than once")
            for start in range(0, self.n_positions, ITEMS_PER_DV):
                block = [by_id[i] for i in row[start:start + ITEMS_PER_DV]]
                if len({it.dv_id for it in block}) != 1 or [
                    it.within_dv_position for it in block
                ] != list(range(1, ITEMS_PER_DV + 1)):
                    raise ValidationError(
                        f"subject {sid}: positions {start + 1}..{start + ITEMS_PER_DV} are not the "
                        "four items of one visualization in fixed order"
                    )

    def by_item(self, item_order: Sequence[str]) -> np.ndarray:
        """Return correctness reshaped to subjects x items in ``item_order``."""
        col = {iid: j for j, iid in enumerate(item_order)}
        out = np.empty((self.n_subjects, len(item_order)), dtype=np.int8)
        idx = np.vectorize(col.__getitem__, otypes=[np.int64])(self.item_ids)
        rows = np.repeat(np.arange(self.n_subjects), self.n_positions)
        out[rows, idx.ravel()] = self.correct.ravel()
        return out

    def drop_subjects(self, keep: np.ndarray) -> "ResponseMatrix":
        keep = np.asarray(keep)
        return ResponseMatrix(
            tuple(np.asarray(self.subject_ids, dtype=object)[keep]), self.item_ids[keep], self.correct[keep]
        )


def position_semantics(
    position: int, order: Sequence[QuestionType] = DEFAULT_SESSION_ORDER, n_positions: int = 32
) -> tuple[int, QuestionType]:
    """Map a 1-based administration position to ``(session, question_type)``."""
    if isinstance(position, bool) or not isinstance(position, (int, np.integer)):
        raise ValueError(f"position must be an integer, got {position!r}")
    if not 1 <= position <= n_positions:
        raise ValueError(f"position must be in 1..{n_positions}, got {position}")
    session = (position - 1) // ITEMS_PER_DV + 1
    return session, order[(position - 1) % ITEMS_PER_DV]


@dataclass(frozen=True)
class PositionalDataset:
    position: int
    session: int
    question_type: QuestionType
    subject_ids: tuple[str, ...]
    item_ids: tuple[str, ...]
    correct: np.ndarray = field(repr=False)

    @property
    def n_rows(self) -> int:
        return len(self.subject_ids)


def build_positional_datasets(
    matrix: ResponseMatrix,
    items: Sequence[Item],
    order: Sequence[QuestionType] = DEFAULT_SESSION_ORDER,
) -> list[PositionalDataset]:
    """Split a response matrix into one dataset per administration position."""
    known = {it.item_id for it in items}
    for s, sid in enumerate(matrix.subject_ids):
        for p in range(matrix.n_positions):
            if matrix.item_ids[s, p] not in known:
                raise IngestError(f"subject {sid}, position {p + 1}: unknown item {matrix.item_ids[s, p]!r}")
    if matrix.n_positions != len(items):
        raise ValidationError(f"each subject needs {len(items)} cells, matrix has {matrix.n_positions}")
    datasets = []
    for p in range(matrix.n_positions):
        session, qtype = position_semantics(p + 1, order, matrix.n_positions)
        correct = matrix.correct[:, p].copy()
        correct.flags.writeable = False
        datasets.append(
            PositionalDataset(
                position=p + 1,
                session=session,
                question_type=qtype,
                subject_ids=matrix.subject_ids,
                item_ids=tuple(matrix.item_ids[:, p]),
                correct=correct,
            )
        )
    return datasets

"""CSV corpus I/O and the synthetic population generator."""

from __future__ import annotations

import csv
import json
import math
import statistics
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit
from scipy.stats import norm

from ._rng import derive_rng
from .core import (
    DEFAULT_PROFILE_SCHEMA,
    DEFAULT_SESSION_ORDER,
    ITEMS_PER_DV,
    IngestError,
    Item,
    ProfileSchema,
    QuestionType,
    ResponseMatrix,
    SubjectProfile,
    ValidationError,
    parse_session_order,
    validate_items,
)

ITEMS_HEADER = ["item_id", "dv_id", "question_type", "within_dv_position", "expert_difficulty"]
RATINGS_HEADER = ["item_id", "rater_id", "rating"]
RESPONSES_HEADER = ["subject_id", "position", "item_id", "correct"]


@dataclass
class Corpus:
    items: list[Item]
    profiles: dict[str, SubjectProfile]
    matrix: ResponseMatrix
    schema: ProfileSchema = DEFAULT_PROFILE_SCHEMA
    order: tuple[QuestionType, ...] = DEFAULT_SESSION_ORDER
    ratings: list[tuple[str, str, float]] | None = None

    @property
    def item_ids(self) -> list[str]:
        return [it.item_id for it in self.items]


def _rows(path: Path, header: Sequence[str] | None):
    """Yield (line_number, row dict) after checking the header."""
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise IngestError(f"{path}: cannot open ({exc.strerror})") from None
    with fh:
        reader = csv.reader(fh)
        try:
            got = next(reader)
        except StopIteration:
            raise IngestError(f"{path}, line 1: empty file") from None
        got = [h.strip() for h in got]
        if header is not None and got != list(header):
            raise IngestError(f"{path}, line 1: expected header {','.join(header)}, got {','.join(got)}")
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(got):
                raise IngestError(
                    f"{path}, line {reader.line_num}: expected {len(got)} fields, got {len(row)}"
                )
            yield reader.line_num, dict(zip(got, (c.strip() for c in row)))


def _field(path, line, col, value, conv, what):
    try:
        out = conv(value)
    except (TypeError, ValueError):
        raise IngestError(f"{path}, line {line}, column {col}: invalid {what} {value!r}") from None
    if isinstance(out, float) and not math.isfinite(out):
        raise IngestError(f"{path}, line {line}, column {col}: {what} must be finite")
    return out


def load_schema(path) -> ProfileSchema:
    with open(path, encoding="utf-8") as fh:
        return ProfileSchema.from_dict(json.load(fh))


def load_items(path, ratings_path=None, order=DEFAULT_SESSION_ORDER, rating_scale=(1.0, 5.0)):
    path = Path(path)
    ratings = load_ratings(ratings_path, rating_scale) if ratings_path else None
    medians = {}
    if ratings is not None:
        per_item: dict[str, list[float]] = {}
        for iid, _, r in ratings:
            per_item.setdefault(iid, []).append(r)
        medians = {iid: float(statistics.median(v)) for iid, v in per_item.items()}
    items = []
    for line, row in _rows(path, ITEMS_HEADER):
        iid = row["item_id"]
        if not iid:
            raise IngestError(f"{path}, line {line}, column item_id: empty item_id")
        try:
            qtype = QuestionType.parse(row["question_type"])
        except ValueError:
            raise IngestError(
                f"{path}, line {line}, column question_type: unknown value {row['question_type']!r}"
            ) from None
        if iid in medians:
            expert = medians[iid]
        elif ratings is not None:
            raise IngestError(f"{path}, line {line}: item {iid} has no expert ratings")
        else:
            expert = _field(path, line, "expert_difficulty", row["expert_difficulty"], float, "number")
        try:
            items.append(
                Item(
                    item_id=iid,
                    dv_id=_field(path, line, "dv_id", row["dv_id"], int, "integer"),
                    question_type=qtype,
                    within_dv_position=_field(
                        path, line, "within_dv_position", row["within_dv_position"], int, "integer"
                    ),
                    expert_difficulty=expert,
                )
            )
        except ValidationError as exc:
            raise IngestError(f"{path}, line {line}: {exc}") from None
    if ratings is not None:
        unknown = set(medians) - {it.item_id for it in items}
        if unknown:
            raise IngestError(f"{ratings_path}: ratings for unknown items {sorted(unknown)}")
    try:
        validate_items(items, order)
    except ValidationError as exc:
        raise IngestError(f"{path}: {exc}") from None
    return items


def load_ratings(path, rating_scale=(1.0, 5.0)) -> list[tuple[str, str, float]]:
    path = Path(path)
    lo, hi = rating_scale
    seen = set()
    out = []
    for line, row in _rows(path, RATINGS_HEADER):
        key = (row["item_id"], row["rater_id"])
        if key in seen:
            raise IngestError(f"{path}, line {line}: duplicate rating for item {key[0]}, rater {key[1]}")
        seen.add(key)
        r = _field(path, line, "rating", row["rating"], float, "rating")
        if not lo <= r <= hi:
            raise IngestError(f"{path}, line {line}, column rating: {r} outside scale [{lo}, {hi}]")
        out.append((key[0], key[1], r))
    return out


def load_profiles(path, schema: ProfileSchema = DEFAULT_PROFILE_SCHEMA) -> dict[str, SubjectProfile]:
    path = Path(path)
    header = ["subject_id", *schema.names]
    profiles = {}
    for line, row in _rows(path, header):
        sid = row["subject_id"]
        if sid in profiles:
            raise IngestError(f"{path}, line {line}: duplicate subject {sid}")
        values: dict[str, object] = {}
        for attr in schema.attributes:
            raw = row[attr.name]
            if raw == "":
                values[attr.name] = None
            elif attr.kind == "numeric":
                values[attr.name] = _field(path, line, attr.name, raw, float, "number")
            else:
                if raw not in attr.categories:
                    raise IngestError(f"{path}, line {line}, column {attr.name}: unknown category {raw!r}")
                values[attr.name] = raw
        profiles[sid] = SubjectProfile(sid, values)
    return profiles


def load_responses(path, n_positions: int = 32) -> ResponseMatrix:
    path = Path(path)
    cells: dict[str, dict[int, tuple[str, int]]] = {}
    for line, row in _rows(path, RESPONSES_HEADER):
        sid = row["subject_id"]
        pos = _field(path, line, "position", row["position"], int, "integer")
        if not 1 <= pos <= n_positions:
            raise IngestError(f"{path}, line {line}, column position: {pos} outside 1..{n_positions}")
        correct = _field(path, line, "correct", row["correct"], int, "integer")
        if correct not in (0, 1):
            raise IngestError(f"{path}, line {line}, column correct: must be 0 or 1")
        subject = cells.setdefault(sid, {})
        if pos in subject:
            raise IngestError(f"{path}, line {line}: duplicate response for subject {sid}, position {pos}")
        subject[pos] = (row["item_id"], correct)
    ordered = {}
    for sid, by_pos in cells.items():
        if sorted(by_pos) != list(range(1, n_positions + 1)):
            raise ValidationError(f"subject {sid}: expected {n_positions} positions, got {len(by_pos)}")
        ordered[sid] = [by_pos[p] for p in range(1, n_positions + 1)]
    return ResponseMatrix.from_cells(ordered, n_positions)


def load_corpus(
    items_path,
    profiles_path,
    responses_path,
    expert_ratings_path=None,
    schema: ProfileSchema = DEFAULT_PROFILE_SCHEMA,
    order=DEFAULT_SESSION_ORDER,
    rating_scale=(1.0, 5.0),
) -> Corpus:
    """Read and validate a corpus from the CSV interchange files."""
    items = load_items(items_path, expert_ratings_path, order, rating_scale)
    profiles = load_profiles(profiles_path, schema)
    matrix = load_responses(responses_path, len(items))
    matrix.validate(items)
    missing = [sid for sid in matrix.subject_ids if sid not in profiles]
    if missing:
        raise IngestError(f"{profiles_path}: no profile for subject {missing[0]}")
    ratings = load_ratings(expert_ratings_path, rating_scale) if expert_ratings_path else None
    return Corpus(items, profiles, matrix, schema, tuple(order), ratings)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_corpus(corpus: Corpus, directory) -> dict[str, Path]:
    """Write the CSV interchange files; returns the written paths by role."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = {"items": d / "items.csv", "profiles": d / "profiles.csv", "responses": d / "responses.csv"}
    with open(paths["items"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ITEMS_HEADER)
        for it in corpus.items:
            w.writerow([it.item_id, it.dv_id, it.question_type.value, it.within_dv_position, _fmt(it.expert_difficulty)])
    with open(paths["profiles"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject_id", *corpus.schema.names])
        for sid in corpus.matrix.subject_ids:
            prof = corpus.profiles[sid]
            w.writerow([sid, *(_fmt(prof.values[n]) for n in corpus.schema.names)])
    with open(paths["responses"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESPONSES_HEADER)
        m = corpus.matrix
        for s, sid in enumerate(m.subject_ids):
            for p in range(m.n_positions):
                w.writerow([sid, p + 1, m.item_ids[s, p], int(m.correct[s, p])])
    if corpus.ratings is not None:
        paths["expert_ratings"] = d / "expert_ratings.csv"
        with open(paths["expert_ratings"], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(RATINGS_HEADER)
            for iid, rid, r in corpus.ratings:
                w.writerow([iid, rid, _fmt(r)])
    return paths


# --------------------------------------------------------------------------
# Synthetic populations
# --------------------------------------------------------------------------


@dataclass
class SyntheticConfig:
    n_subjects: int = 1083
    n_items: int = 32
    ability_mean: float = 0.0
    ability_sd: float = 1.0
    difficulty_mean: float = 0.0
    difficulty_sd: float = 1.09
    difficulty_clip: tuple[float, float] = (-2.38, 2.36)
    name_fatigue_drift: float = 0.0
    profile_signal: float = 0.0
    seed: int = 0
    n_raters: int = 7
    rating_scale: tuple[float, float] = (1.0, 5.0)
    rater_noise_sd: float = 0.8
    missing_rate: float = 0.0
    session_order: tuple[str, ...] = tuple(t.value for t in DEFAULT_SESSION_ORDER)

    def __post_init__(self):
        self.difficulty_clip = tuple(float(v) for v in self.difficulty_clip)
        self.rating_scale = tuple(float(v) for v in self.rating_scale)
        self.session_order = tuple(
            t.value if isinstance(t, QuestionType) else str(t) for t in self.session_order
        )
        self.validate()

    def validate(self) -> None:
        if self.n_subjects < 1:
            raise ValueError("n_subjects must be positive")
        if self.n_items < ITEMS_PER_DV or self.n_items % ITEMS_PER_DV:
            raise ValueError("n_items must be a positive multiple of 4")
        if self.ability_sd <= 0 or self.difficulty_sd <= 0:
            raise ValueError("standard deviations must be positive")
        lo, hi = self.difficulty_clip
        if not lo < hi:
            raise ValueError("difficulty_clip low must be below high")
        if self.name_fatigue_drift < 0:
            raise ValueError("name_fatigue_drift must be >= 0")
        if not 0.0 <= self.profile_signal <= 1.0:
            raise ValueError("profile_signal must lie in [0, 1]")
        if not 0.0 <= self.missing_rate < 1.0:
            raise ValueError("missing_rate must lie in [0, 1)")
        if self.n_raters < 1:
            raise ValueError("n_raters must be positive")
        parse_session_order(list(self.session_order))

    @property
    def order(self) -> tuple[QuestionType, ...]:
        return parse_session_order(list(self.session_order))

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("difficulty_clip", "rating_scale", "session_order"):
            d[k] = list(d[k])
        return d


@dataclass
class GroundTruth:
    abilities: dict[str, float]
    difficulties: dict[str, float]
    config: dict = field(default_factory=dict)

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(
                {"abilities": self.abilities, "difficulties": self.difficulties, "config": self.config},
                fh, indent=2, sort_keys=True,
            )

    @classmethod
    def from_json(cls, path) -> "GroundTruth":
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
        return cls(d["abilities"], d["difficulties"], d.get("config", {}))


def _category_cuts(schema: ProfileSchema) -> list:
    # equiprobable categories, ordered along the latent
    return [
        norm.ppf(np.arange(1, len(a.categories)) / len(a.categories)) if a.kind == "categorical" else None
        for a in schema.attributes
    ]


def _profile_values(schema: ProfileSchema, cuts, latent: np.ndarray, missing: np.ndarray) -> dict[str, object]:
    values: dict[str, object] = {}
    for j, attr in enumerate(schema.attributes):
        z = latent[j]
        if missing[j]:
            values[attr.name] = None
        elif attr.kind == "categorical":
            values[attr.name] = attr.categories[int(np.searchsorted(cuts[j], z))]
        elif attr.name == "Age":
            values[attr.name] = float(np.clip(round(40 + 12 * z), 18, 80))
        else:
            values[attr.name] = float(round(10 + 3 * z, 1))
    return values


def generate_synthetic(
    config: SyntheticConfig, schema: ProfileSchema = DEFAULT_PROFILE_SCHEMA
) -> tuple[Corpus, GroundTruth]:
    """Simulate a survey from the Rasch model with optional Name fatigue drift.

    Each subject sees the visualizations in a random order, the four items of
    a visualization in fixed order. Every per-subject quantity is drawn from
    a stream keyed by (seed, subject index).
    """
    cfg = config
    order = cfg.order
    n_dvs = cfg.n_items // ITEMS_PER_DV
    rng = derive_rng(cfg.seed, "synthetic-items")
    b = np.clip(rng.normal(cfg.difficulty_mean, cfg.difficulty_sd, cfg.n_items), *cfg.difficulty_clip)
    b = b - b.mean()

    lo, hi = cfg.rating_scale
    mid, slope = (lo + hi) / 2, (hi - lo) / (cfg.difficulty_clip[1] - cfg.difficulty_clip[0])
    noise = rng.normal(0.0, cfg.rater_noise_sd, (cfg.n_items, cfg.n_raters))
    raw_ratings = np.clip(np.round(mid + slope * (b[:, None] - cfg.difficulty_mean) + noise), lo, hi)

    items, ratings = [], []
    for j in range(cfg.n_items):
        dv, pos = j // ITEMS_PER_DV + 1, j % ITEMS_PER_DV + 1
        iid = f"dv{dv}_q{pos}"
        items.append(Item(iid, dv, order[pos - 1], pos, float(np.median(raw_ratings[j]))))
        ratings.extend((iid, f"r{k + 1}", float(raw_ratings[j, k])) for k in range(cfg.n_raters))
    is_name = np.array([it.question_type is QuestionType.NAME for it in items])

    n_attr = len(schema.attributes)
    sids = [f"s{s + 1:05d}" for s in range(cfg.n_subjects)]
    ids = np.empty((cfg.n_subjects, cfg.n_items), dtype=object)
    correct = np.zeros((cfg.n_subjects, cfg.n_items), dtype=np.int8)
    abilities, profiles = {}, {}
    signal = cfg.profile_signal
    cuts = _category_cuts(schema)
    for s, sid in enumerate(sids):
        srng = derive_rng(cfg.seed, "synthetic-subject", s)
        theta = srng.normal(cfg.ability_mean, cfg.ability_sd)
        dv_order = srng.permutation(n_dvs)
        seq = (dv_order[:, None] * ITEMS_PER_DV + np.arange(ITEMS_PER_DV)[None, :]).ravel()
        session = np.arange(cfg.n_items) // ITEMS_PER_DV
        drift = cfg.name_fatigue_drift * session * is_name[seq]
        p = expit(theta - b[seq] - drift)
        correct[s] = srng.random(cfg.n_items) < p
        ids[s] = [items[j].item_id for j in seq]
        z_theta = (theta - cfg.ability_mean) / cfg.ability_sd
        latent = signal * z_theta + math.sqrt(1 - signal**2) * srng.standard_normal(n_attr)
        missing = srng.random(n_attr) < cfg.missing_rate
        profiles[sid] = SubjectProfile(sid, _profile_values(schema, cuts, latent, missing))
        abilities[sid] = float(theta)

    matrix = ResponseMatrix(tuple(sids), ids, correct)
    corpus = Corpus(items, profiles, matrix, schema, order, ratings)
    truth = GroundTruth(abilities, {it.item_id: float(v) for it, v in zip(items, b)}, cfg.to_dict())
    return corpus, truth

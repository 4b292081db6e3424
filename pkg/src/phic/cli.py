"""Command-line entry point: ``phic <stage> [options]``.

Stages write into ``--out`` (default ``phic-out``)::

    corpus/     synth | ingest      items.csv, profiles.csv, responses.csv, ...
    rasch/      rasch               calibration.json, loo_difficulties.csv
    features/   features            features_01.csv .. features_32.csv
    eval/       evaluate            runs.csv, summary.json
    importance/ importance          importance_grid.csv
    ablation/   ablate              ablation.csv
    rq1/        rq1                 hic_summary.csv, hic_mcnemar.csv
    simulate/   simulate            simulation.csv, summary.json
    report.json report

Every stage also writes ``manifest.json`` echoing the effective
configuration and SHA-256 digests of its inputs and outputs.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import shutil
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .adaptive import Policy, simulate
from .analysis import GROUPS, ablation, hic_summary, importance_grid
from .core import DEFAULT_PROFILE_SCHEMA, IngestError, ProfileSchema, ValidationError, build_positional_datasets, parse_session_order
from .eval import aggregate_summary, evaluate, write_runs_csv
from .features import assemble_features, read_feature_table
from .ingest import Corpus, SyntheticConfig, generate_synthetic, load_corpus, load_schema, write_corpus
from .rasch import CalibrationError, RaschCalibration, jmle_calibrate, loo_difficulties

log = logging.getLogger("phic")

STAGES = ("ingest", "synth", "rasch", "features", "evaluate", "importance", "ablate", "rq1", "simulate", "report")


class MissingStage(RuntimeError):
    pass


@dataclass
class RunConfig:
    out: str = "phic-out"
    seed: int = 0
    workers: int = 1
    # ingest
    data: str = ""
    items: str = ""
    profiles: str = ""
    responses: str = ""
    expert_ratings: str = ""
    profile_schema: str = ""
    session_order: str = "Name,Function,Function,Content"
    rating_scale: str = "1,5"
    # synth
    subjects: int = 1083
    n_items: int = 32
    ability_mean: float = 0.0
    ability_sd: float = 1.0
    difficulty_sd: float = 1.09
    difficulty_clip: str = "-2.38,2.36"
    drift: float = 0.0
    profile_signal: float = 0.0
    missing_rate: float = 0.0
    # rasch
    tolerance: float = 0.005
    max_iterations: int = 200
    loo_mode: str = "row"
    # evaluate / importance / ablate
    models: str = "LR,MLP,RF"
    fs: str = "both"
    selector: str = "CFS"
    seeds: str = "1-10"
    folds: int = 10
    positions: str = "all"
    pooling: str = "pool"
    threshold: float = 0.5
    groups: str = ",".join(GROUPS)
    aggregate: str = "mean"
    # rq1
    session_pairs: str = "1-8"
    # simulate
    policies: str = "Random,MaxInfo,PhicConstrained"
    tau: float = 0.25
    respondents: int = 500
    se_target: float = 0.6
    max_items: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def parse_int_list(text: str, upper: int | None = None) -> list[int]:
    if text.strip().lower() == "all":
        if upper is None:
            raise ValueError("'all' needs a known upper bound")
        return list(range(1, upper + 1))
    out: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part[1:]:
            a, b = part.split("-", 1)
            out.extend(range(int(a), int(b) + 1))
        else:
            out.append(int(part))
    return out


def read_config_file(path) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    known = {f.name for f in fields(RunConfig)}
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}, line {n}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in known:
                raise ValueError(f"{path}, line {n}: unknown key {key!r}")
            values[key] = value
    return values


def build_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    types = {f.name: f.type for f in fields(RunConfig)}
    overrides = read_config_file(args.config) if args.config else {}
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            overrides[f.name] = v
    for key, value in overrides.items():
        kind = types[key]
        try:
            if kind in ("int", int):
                value = int(value)
            elif kind in ("float", float):
                value = float(value)
            else:
                value = str(value)
        except ValueError:
            raise ValueError(f"config {key}: cannot parse {value!r}") from None
        setattr(cfg, key, value)
    return cfg


# --------------------------------------------------------------------------
# artifact helpers
# --------------------------------------------------------------------------


def _digest(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(stage_dir: Path, stage: str, cfg: RunConfig, inputs, outputs, extra=None) -> None:
    base = Path(cfg.out)
    manifest = {
        "stage": stage,
        "version": __version__,
        "config": cfg.to_dict(),
        "inputs": {str(Path(p).relative_to(base) if Path(p).is_relative_to(base) else p): _digest(Path(p)) for p in inputs},
        "outputs": {str(Path(p).relative_to(base)): _digest(Path(p)) for p in outputs},
    }
    if extra:
        manifest.update(extra)
    with open(stage_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _schema(cfg: RunConfig) -> ProfileSchema:
    return load_schema(cfg.profile_schema) if cfg.profile_schema else DEFAULT_PROFILE_SCHEMA


def corpus_dir(cfg) -> Path:
    return Path(cfg.out) / "corpus"


def load_stage_corpus(cfg: RunConfig) -> Corpus:
    d = corpus_dir(cfg)
    if not (d / "responses.csv").exists():
        raise MissingStage(f"no corpus in {d}; run 'synth' or 'ingest' first")
    with open(d / "profile_schema.json", encoding="utf-8") as fh:
        schema = ProfileSchema.from_dict(json.load(fh))
    with open(d / "session_order.txt", encoding="utf-8") as fh:
        order = parse_session_order(fh.read().strip())
    ratings = d / "expert_ratings.csv"
    lo, hi = (float(v) for v in cfg.rating_scale.split(","))
    return load_corpus(
        d / "items.csv", d / "profiles.csv", d / "responses.csv",
        ratings if ratings.exists() else None, schema, order, (lo, hi),
    )


def _store_corpus(cfg: RunConfig, corpus: Corpus, stage: str, inputs=(), truth=None) -> None:
    d = corpus_dir(cfg)
    d.mkdir(parents=True, exist_ok=True)
    paths = list(write_corpus(corpus, d).values())
    with open(d / "profile_schema.json", "w", encoding="utf-8") as fh:
        json.dump(corpus.schema.to_dict(), fh, indent=2)
    with open(d / "session_order.txt", "w", encoding="utf-8") as fh:
        fh.write(",".join(t.value for t in corpus.order) + "\n")
    paths += [d / "profile_schema.json", d / "session_order.txt"]
    if truth is not None:
        truth.to_json(d / "ground_truth.json")
        paths.append(d / "ground_truth.json")
    write_manifest(d, stage, cfg, inputs, paths)


def cmd_synth(cfg: RunConfig) -> None:
    lo, hi = (float(v) for v in cfg.difficulty_clip.split(","))
    rlo, rhi = (float(v) for v in cfg.rating_scale.split(","))
    sc = SyntheticConfig(
        n_subjects=cfg.subjects,
        n_items=cfg.n_items,
        ability_mean=cfg.ability_mean,
        ability_sd=cfg.ability_sd,
        difficulty_sd=cfg.difficulty_sd,
        difficulty_clip=(lo, hi),
        name_fatigue_drift=cfg.drift,
        profile_signal=cfg.profile_signal,
        missing_rate=cfg.missing_rate,
        rating_scale=(rlo, rhi),
        session_order=tuple(cfg.session_order.split(",")),
        seed=cfg.seed,
    )
    corpus, truth = generate_synthetic(sc, _schema(cfg))
    _store_corpus(cfg, corpus, "synth", truth=truth)
    print(f"synth: {corpus.matrix.n_subjects} subjects x {corpus.matrix.n_positions} positions -> {corpus_dir(cfg)}")


def cmd_ingest(cfg: RunConfig) -> None:
    data = Path(cfg.data) if cfg.data else None

    def pick(explicit, name):
        if explicit:
            return Path(explicit)
        if data is None:
            raise ValueError(f"ingest needs --data or an explicit path for {name}")
        return data / name

    items, profiles, responses = pick(cfg.items, "items.csv"), pick(cfg.profiles, "profiles.csv"), pick(cfg.responses, "responses.csv")
    ratings = Path(cfg.expert_ratings) if cfg.expert_ratings else (data / "expert_ratings.csv" if data and (data / "expert_ratings.csv").exists() else None)
    lo, hi = (float(v) for v in cfg.rating_scale.split(","))
    corpus = load_corpus(items, profiles, responses, ratings, _schema(cfg), parse_session_order(cfg.session_order), (lo, hi))
    inputs = [p for p in (items, profiles, responses, ratings) if p is not None]
    if corpus_dir(cfg).resolve() in {p.resolve().parent for p in inputs}:
        raise ValueError("ingest source and output corpus directory are the same")
    _store_corpus(cfg, corpus, "ingest", inputs)
    print(f"ingest: {corpus.matrix.n_subjects} subjects validated -> {corpus_dir(cfg)}")


def ensure_rasch(cfg: RunConfig, corpus: Corpus):
    d = Path(cfg.out) / "rasch"
    cal_path, loo_path = d / "calibration.json", d / "loo_difficulties.csv"
    if cal_path.exists() and loo_path.exists():
        with open(cal_path, encoding="utf-8") as fh:
            cal = RaschCalibration.from_dict(json.load(fh))
        from .rasch import LooDifficultyTable

        with open(loo_path, encoding="utf-8") as fh:
            header = fh.readline().rstrip("\n").split(",")[1:]
            rows = [line.rstrip("\n").split(",") for line in fh if line.strip()]
        table = LooDifficultyTable(
            tuple(r[0] for r in rows), tuple(header), np.array([[float(v) for v in r[1:]] for r in rows]), cfg.loo_mode
        )
        return cal, table
    return cmd_rasch(cfg, corpus)


def cmd_rasch(cfg: RunConfig, corpus: Corpus | None = None):
    corpus = corpus or load_stage_corpus(cfg)
    d = Path(cfg.out) / "rasch"
    d.mkdir(parents=True, exist_ok=True)
    cal = jmle_calibrate(corpus.matrix, cfg.tolerance, cfg.max_iterations, item_ids=corpus.item_ids)
    cal.to_json(d / "calibration.json")
    loo = loo_difficulties(
        corpus.matrix, cfg.tolerance, cfg.max_iterations, cfg.loo_mode, cfg.workers, item_ids=corpus.item_ids
    )
    with open(d / "loo_difficulties.csv", "w", encoding="utf-8") as fh:
        fh.write(",".join(["subject_id", *loo.item_ids]) + "\n")
        for sid, row in zip(loo.subject_ids, loo.values):
            fh.write(",".join([sid, *(repr(float(v)) for v in row)]) + "\n")
    c = corpus_dir(cfg)
    write_manifest(
        d, "rasch", cfg, [c / "responses.csv"], [d / "calibration.json", d / "loo_difficulties.csv"],
        {"converged": cal.converged, "iterations": cal.iterations, "constraint_residual": cal.constraint_residual,
         "loo_all_converged": bool(np.all(loo.converged)) if loo.converged is not None else None},
    )
    print(f"rasch: {len(cal.item_difficulties)} items, converged={cal.converged}, "
          f"range [{min(cal.item_difficulties.values()):.2f}, {max(cal.item_difficulties.values()):.2f}] logits")
    return cal, loo


def _feature_path(d: Path, position: int) -> Path:
    return d / f"features_{position:02d}.csv"


def cmd_features(cfg: RunConfig, corpus: Corpus | None = None):
    corpus = corpus or load_stage_corpus(cfg)
    _, loo = ensure_rasch(cfg, corpus)
    datasets = build_positional_datasets(corpus.matrix, corpus.items, corpus.order)
    tables = assemble_features(datasets, corpus.profiles, corpus.items, loo, corpus.schema)
    d = Path(cfg.out) / "features"
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    for t in tables:
        t.to_csv(_feature_path(d, t.position))
        paths.append(_feature_path(d, t.position))
    write_manifest(d, "features", cfg, [Path(cfg.out) / "rasch" / "loo_difficulties.csv"], paths,
                   {"n_positions": len(tables)})
    print(f"features: {len(tables)} tables of {tables[0].n_rows} rows -> {d}")
    return tables


def load_tables(cfg: RunConfig):
    d = Path(cfg.out) / "features"
    if not (d / "manifest.json").exists():
        corpus = load_stage_corpus(cfg)
        tables = cmd_features(cfg, corpus)
    else:
        corpus_d = corpus_dir(cfg)
        with open(corpus_d / "profile_schema.json", encoding="utf-8") as fh:
            schema = ProfileSchema.from_dict(json.load(fh))
        with open(corpus_d / "session_order.txt", encoding="utf-8") as fh:
            order = parse_session_order(fh.read().strip())
        with open(d / "manifest.json", encoding="utf-8") as fh:
            n = json.load(fh)["n_positions"]
        tables = [read_feature_table(_feature_path(d, p), p, schema, order, n) for p in range(1, n + 1)]
    wanted = set(parse_int_list(cfg.positions, len(tables)))
    return [t for t in tables if t.position in wanted]


def _configs(cfg: RunConfig):
    models = [m.strip() for m in cfg.models.split(",") if m.strip()]
    fs = {"both": (False, True), "yes": (True,), "no": (False,)}.get(cfg.fs.lower())
    if fs is None:
        raise ValueError("--fs must be yes, no or both")
    return [(m, f) for m in models for f in fs]


def _cv_kwargs(cfg: RunConfig) -> dict:
    return {"k": cfg.folds, "selector": cfg.selector, "pooling": cfg.pooling, "threshold": cfg.threshold}


def cmd_evaluate(cfg: RunConfig) -> None:
    tables = load_tables(cfg)
    seeds = parse_int_list(cfg.seeds)
    runs = evaluate(tables, _configs(cfg), seeds, cfg.workers, **_cv_kwargs(cfg))
    d = Path(cfg.out) / "eval"
    d.mkdir(parents=True, exist_ok=True)
    write_runs_csv(runs, d / "runs.csv")
    summary = aggregate_summary(runs)
    summary.to_json(d / "summary.json")
    write_manifest(d, "evaluate", cfg, [_feature_path(Path(cfg.out) / "features", t.position) for t in tables],
                   [d / "runs.csv", d / "summary.json"], {"seeds": seeds})
    print(f"evaluate: {len(runs)} runs over {len(tables)} datasets -> {d / 'summary.json'}")
    for r in summary.rows:
        print(f"  {r.model:4s} fs={'yes' if r.fs else 'no ':3s} %best={100 * r.pct_best:5.1f}  "
              f"median AUC={r.median_auc:.3f}  median kappa={r.median_kappa:.3f}")


def cmd_importance(cfg: RunConfig) -> None:
    tables = load_tables(cfg)
    seeds = parse_int_list(cfg.seeds)
    grid = importance_grid(tables, seeds, cfg.folds, cfg.aggregate, cfg.workers)
    d = Path(cfg.out) / "importance"
    d.mkdir(parents=True, exist_ok=True)
    grid.write_csv(d / "importance_grid.csv")
    write_manifest(d, "importance", cfg, [], [d / "importance_grid.csv"], {"seeds": seeds})
    print(f"importance: {len(grid.cells)} cells -> {d / 'importance_grid.csv'}")


def cmd_ablate(cfg: RunConfig) -> None:
    tables = load_tables(cfg)
    seeds = parse_int_list(cfg.seeds)
    groups = [g.strip() for g in cfg.groups.split(",") if g.strip()]
    model = _configs(cfg)[0][0]
    report = ablation(tables, groups, seeds, model=model, fs=True, workers=cfg.workers, **_cv_kwargs(cfg))
    d = Path(cfg.out) / "ablation"
    d.mkdir(parents=True, exist_ok=True)
    report.write_csv(d / "ablation.csv")
    write_manifest(d, "ablate", cfg, [], [d / "ablation.csv"],
                   {"seeds": seeds, "model": model, "groups": groups,
                    "median_auc": {g: report.median_auc(g) for g in groups}})
    print("ablate: " + ", ".join(f"{g} AUC={report.median_auc(g):.3f}" for g in groups))


def cmd_rq1(cfg: RunConfig) -> None:
    corpus = load_stage_corpus(cfg)
    pairs = []
    for part in cfg.session_pairs.split(","):
        a, b = part.split("-")
        pairs.append((int(a), int(b)))
    summary = hic_summary(corpus.matrix, corpus.items, pairs, corpus.order)
    d = Path(cfg.out) / "rq1"
    d.mkdir(parents=True, exist_ok=True)
    summary.write_csv(d / "hic_summary.csv", d / "hic_mcnemar.csv")
    write_manifest(d, "rq1", cfg, [corpus_dir(cfg) / "responses.csv"], [d / "hic_summary.csv", d / "hic_mcnemar.csv"])
    for (t, a, b), (stat, p, _) in summary.mcnemar.items():
        print(f"rq1: {t.value:8s} sessions {a} vs {b}: McNemar={stat:.3f} p={p:.3g}")


def cmd_simulate(cfg: RunConfig) -> None:
    corpus = load_stage_corpus(cfg)
    cal, _ = ensure_rasch(cfg, corpus)
    policies = []
    for name in (p.strip() for p in cfg.policies.split(",")):
        if name:
            policies.append(Policy(name, cfg.tau) if name == "PhicConstrained" else Policy(name))
    report = simulate(
        policies, cal.item_difficulties, cfg.respondents, cfg.ability_mean, cfg.ability_sd,
        cfg.max_items or None, cfg.se_target if cfg.se_target > 0 else None, cfg.seed,
    )
    d = Path(cfg.out) / "simulate"
    d.mkdir(parents=True, exist_ok=True)
    report.write_csv(d / "simulation.csv")
    with open(d / "summary.json", "w", encoding="utf-8") as fh:
        json.dump({"config": report.config, "policies": report.summary()}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_manifest(d, "simulate", cfg, [Path(cfg.out) / "rasch" / "calibration.json"], [d / "simulation.csv", d / "summary.json"])
    for name, s in report.summary().items():
        print(f"simulate: {name:28s} median items={s['median_items']:.1f} median |error|={s['median_abs_error']:.3f}")


def _read_csv_rows(path: Path) -> list[dict]:
    import csv

    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def cmd_report(cfg: RunConfig) -> None:
    base = Path(cfg.out)
    needed = {
        "evaluate": base / "eval" / "summary.json",
        "importance": base / "importance" / "importance_grid.csv",
        "ablate": base / "ablation" / "ablation.csv",
        "rq1": base / "rq1" / "hic_summary.csv",
    }
    for stage, path in needed.items():
        if not path.exists():
            raise MissingStage(f"report needs stage '{stage}' ({path} missing)")
    with open(needed["evaluate"], encoding="utf-8") as fh:
        summary = json.load(fh)
    bundle = {
        "summary": summary,
        "correctness_by_session": _read_csv_rows(needed["rq1"]),
        "session_mcnemar": _read_csv_rows(base / "rq1" / "hic_mcnemar.csv"),
        "accuracy_by_session": [r for r in _read_csv_rows(needed["ablate"]) if r["group"] == "All"],
        "importance": _read_csv_rows(needed["importance"]),
        "feature_groups": _read_csv_rows(needed["ablate"]),
    }
    sim = base / "simulate" / "summary.json"
    if sim.exists():
        with open(sim, encoding="utf-8") as fh:
            bundle["adaptive"] = json.load(fh)
    with open(base / "report.json", "w", encoding="utf-8") as fh:
        json.dump(bundle, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"report: {base / 'report.json'}")


COMMANDS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "rasch": cmd_rasch,
    "features": cmd_features,
    "evaluate": cmd_evaluate,
    "importance": cmd_importance,
    "ablate": cmd_ablate,
    "rq1": cmd_rq1,
    "simulate": cmd_simulate,
    "report": cmd_report,
}


class _Parser(argparse.ArgumentParser):
    """Argument parser that reports usage errors on one line."""

    def error(self, message):
        self.exit(2, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="flat key = value configuration file")
    common.add_argument("--out", help="output directory (default phic-out)")
    common.add_argument("--seed", type=int, help="top-level seed")
    common.add_argument("--workers", type=int, help="worker processes")
    common.add_argument("--models", help="comma list of LR, MLP, RF")
    common.add_argument("--fs", choices=["yes", "no", "both"], help="feature selection setting")
    common.add_argument("--groups", help="comma list of feature groups for ablate")
    common.add_argument("--tau", type=float, help="PhicConstrained probability floor")
    common.add_argument("--drift", type=float, help="Name fatigue drift (logits per session) for synth")
    common.add_argument("--subjects", type=int, help="synthetic subject count")
    common.add_argument("--data", help="directory with items.csv, profiles.csv, responses.csv")
    common.add_argument("--positions", help="positions to evaluate, e.g. all, 1-8, 2,9,16")
    common.add_argument("--seeds", help="cross-validation seeds, e.g. 1-10")
    common.add_argument("--respondents", type=int, help="simulated respondents")
    common.add_argument("--se-target", dest="se_target", type=float, help="stop at this standard error (0: off)")
    common.add_argument("--profile-signal", dest="profile_signal", type=float, help="synthetic profile/ability coupling")
    common.add_argument("--ability-sd", dest="ability_sd", type=float, help="synthetic ability spread")
    common.add_argument("--loo-mode", dest="loo_mode", choices=["row", "cell"], help="held-out calibration mode")

    parser = _Parser(prog="phic", description="Predict interpretation correctness of visualization items.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGES:
        sub.add_parser(name, parents=[common], help=COMMANDS[name].__name__.replace("cmd_", ""))
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        cfg = build_config(args)
        Path(cfg.out).mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](cfg)
    except (MissingStage, IngestError, ValidationError, CalibrationError, ValueError, KeyError, OSError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"phic {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

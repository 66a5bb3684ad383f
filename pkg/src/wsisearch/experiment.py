"""Experiment orchestration: site, subtype, and patch retrieval runs.

A run builds the engine's database, queries every slide (or every query
mosaic patch, for the patch task), writes one CSV row per query with up to
K_max result slots, and aggregates the metric summary.  The subtype task
rebuilds a database per site so queries only ever compete within their own
tissue; a standalone prebuilt database can instead be queried with a site
filter (the CLI does this), which keeps the candidate set identical but
computes database-wide statistics globally.

Per-query work may run on a thread pool; rows are keyed by query_id and
sorted before writing so the output is independent of scheduling.
"""
from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

from . import hshr, retccl, sish, yottixel
from .errors import (
    FormatError,
    UndefinedAggregateError,
    UnprocessedSlideError,
    UnsupportedOperationError,
    ValidationError,
)
from .metrics import (
    FIELD_SITE,
    FIELD_SUBTYPE,
    QueryRow,
    RetrievalSlot,
    aggregate_mean,
    ap_at_k,
    mv_at_k,
)
from .model import RetrievalResult, SlideRecord, patch_ref

ENGINE_MODULES = {
    "yottixel": yottixel,
    "sish": sish,
    "retccl": retccl,
    "hshr": hshr,
}
ENGINE_PARAMS = {
    "yottixel": yottixel.YottixelParams,
    "sish": sish.SishParams,
    "retccl": retccl.RetcclParams,
    "hshr": hshr.HshrParams,
}

TASK_SITE = "site"
TASK_SUBTYPE = "subtype"
TASK_PATCH = "patch"


@dataclass(frozen=True)
class MetricPlan:
    field: str
    mv_ks: tuple[int, ...]
    ap_ks: tuple[int, ...]
    k_max: int


# K choices per task; the subtype and patch tasks judge the finer label
TASK_PLANS = {
    TASK_SITE: MetricPlan(field=FIELD_SITE, mv_ks=(1, 3, 5, 10), ap_ks=(3, 5), k_max=10),
    TASK_SUBTYPE: MetricPlan(field=FIELD_SUBTYPE, mv_ks=(1, 3, 5), ap_ks=(3, 5), k_max=5),
    TASK_PATCH: MetricPlan(field=FIELD_SUBTYPE, mv_ks=(1, 3, 5), ap_ks=(3, 5), k_max=5),
}


def check_engine_task(engine: str, task: str) -> None:
    if engine not in ENGINE_MODULES:
        raise ValidationError(
            f"unknown engine {engine!r}; choose from {sorted(ENGINE_MODULES)}"
        )
    if task not in TASK_PLANS:
        raise ValidationError(f"unknown task {task!r}; choose from {sorted(TASK_PLANS)}")
    if engine == "hshr" and task == TASK_PATCH:
        raise UnsupportedOperationError("hshr does not support patch retrieval")


def make_params(engine: str, overrides: Mapping[str, object] | None = None):
    """Engine parameter object from defaults plus named overrides."""
    cls = ENGINE_PARAMS.get(engine)
    if cls is None:
        raise ValidationError(
            f"unknown engine {engine!r}; choose from {sorted(ENGINE_MODULES)}"
        )
    overrides = dict(overrides or {})
    known = {f.name for f in cls.__dataclass_fields__.values()}  # type: ignore[attr-defined]
    unknown = set(overrides) - known
    if unknown:
        raise ValidationError(
            f"{engine} does not take parameter(s) {sorted(unknown)}; known: {sorted(known)}"
        )
    return cls(**overrides)


@dataclass(frozen=True)
class ExperimentConfig:
    engine: str
    task: str = TASK_SITE
    k_max: int | None = None  # None: the task's default
    jobs: int = 1
    engine_params: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        check_engine_task(self.engine, self.task)
        if self.k_max is not None and self.k_max < 1:
            raise ValidationError("k_max must be >= 1")
        if self.jobs < 1:
            raise ValidationError("jobs must be >= 1")

    @property
    def plan(self) -> MetricPlan:
        return TASK_PLANS[self.task]

    @property
    def effective_k(self) -> int:
        return self.k_max if self.k_max is not None else self.plan.k_max


def build_engine_database(
    engine: str, slides: Sequence[SlideRecord], overrides: Mapping[str, object] | None = None
):
    return ENGINE_MODULES[engine].build_database(slides, make_params(engine, overrides))


def _null_row(query: SlideRecord, k_max: int) -> QueryRow:
    return QueryRow(
        query_id=query.slide_id,
        query_site=query.site,
        query_subtype=query.subtype,
        slots=(None,) * k_max,
    )


def _result_to_slots(result: RetrievalResult, k_max: int) -> tuple[RetrievalSlot | None, ...]:
    slots: list[RetrievalSlot | None] = [
        RetrievalSlot(e.target_id, e.target_site, e.target_subtype, e.score)
        for e in result.entries
    ]
    slots.extend([None] * (k_max - len(slots)))
    return tuple(slots)


def _query_one(
    engine: str,
    db,
    query: SlideRecord,
    task: str,
    k_max: int,
    candidate_filter: Callable,
) -> list[QueryRow]:
    """All rows one query slide produces; unprocessable queries abstain with
    an all-null row rather than killing the run."""
    mod = ENGINE_MODULES[engine]
    try:
        if task == TASK_PATCH:
            rows = []
            for patch in mod.query_patch_set(db, query):
                result = mod.query_patches(db, patch, k_max, candidate_filter)
                rows.append(
                    QueryRow(
                        query_id=patch_ref(query.slide_id, patch.x, patch.y),
                        query_site=query.site,
                        query_subtype=query.subtype,
                        slots=_result_to_slots(result, k_max),
                    )
                )
            return rows
        result = mod.query_slides(db, query, k_max, candidate_filter)
        return [
            QueryRow(
                query_id=query.slide_id,
                query_site=query.site,
                query_subtype=query.subtype,
                slots=_result_to_slots(result, k_max),
            )
        ]
    except (UnprocessedSlideError, UnsupportedOperationError):
        return [_null_row(query, k_max)]


def _patient_filter(query: SlideRecord) -> Callable:
    # self-exclusion is by patient, not just slide id
    return lambda slide_id, labels: labels.patient_id != query.patient_id


def run_experiment(
    config: ExperimentConfig,
    db_slides: Sequence[SlideRecord],
    query_slides: Sequence[SlideRecord],
    out_dir: str | Path | None = None,
) -> "ExperimentReport":
    """Full run: build database(s), query everything, write rows + summary.

    The subtype task builds one database per site from that site's slides;
    queries whose site has no database slides abstain with all-null rows.
    """
    k_max = config.effective_k
    mod = ENGINE_MODULES[config.engine]
    params = make_params(config.engine, config.engine_params)

    if config.task == TASK_SUBTYPE:
        by_site: dict[str, list[SlideRecord]] = {}
        for slide in db_slides:
            by_site.setdefault(slide.site, []).append(slide)
        databases = {
            site: mod.build_database(slides, params) for site, slides in by_site.items()
        }

        def db_for(query: SlideRecord):
            return databases.get(query.site)

    else:
        database = mod.build_database(db_slides, params)

        def db_for(query: SlideRecord):
            return database

    def worker(query: SlideRecord) -> list[QueryRow]:
        db = db_for(query)
        if db is None:
            return [_null_row(query, k_max)]
        return _query_one(
            config.engine, db, query, config.task, k_max, _patient_filter(query)
        )

    if config.jobs == 1:
        per_query = [worker(q) for q in query_slides]
    else:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            per_query = list(pool.map(worker, query_slides))

    rows = sorted(
        (row for rows in per_query for row in rows), key=lambda r: r.query_id
    )
    summary = compute_summary(rows, config.task)

    rows_path = summary_csv = summary_txt = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        rows_path = out_dir / "rows.csv"
        write_rows(rows_path, rows, k_max)
        summary_csv = out_dir / "summary.csv"
        summary_txt = out_dir / "summary.txt"
        write_summary(
            summary,
            summary_csv,
            summary_txt,
            context={
                "engine": config.engine,
                "task": config.task,
                "queries": str(len(rows)),
            },
        )
    return ExperimentReport(
        config=config,
        rows=rows,
        summary=summary,
        rows_path=rows_path,
        summary_csv=summary_csv,
        summary_txt=summary_txt,
    )


def query_rows_against_db(
    engine: str,
    db,
    query_slides: Sequence[SlideRecord],
    task: str,
    k_max: int | None = None,
    jobs: int = 1,
) -> list[QueryRow]:
    """Query a single prebuilt database (the CLI path).

    The subtype task here narrows candidates to the query's site by filter
    instead of rebuilding; database-wide statistics stay global.
    """
    check_engine_task(engine, task)
    if jobs < 1:
        raise ValidationError("jobs must be >= 1")
    k = k_max if k_max is not None else TASK_PLANS[task].k_max

    def worker(query: SlideRecord) -> list[QueryRow]:
        patient_ok = _patient_filter(query)
        if task == TASK_SUBTYPE:
            def keep(slide_id, labels):
                return labels.site == query.site and patient_ok(slide_id, labels)
        else:
            keep = patient_ok
        return _query_one(engine, db, query, task, k, keep)

    if jobs == 1:
        per_query = [worker(q) for q in query_slides]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            per_query = list(pool.map(worker, query_slides))
    return sorted((row for rows in per_query for row in rows), key=lambda r: r.query_id)


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    rows: list[QueryRow]
    summary: dict[str, float | None]
    rows_path: Path | None
    summary_csv: Path | None
    summary_txt: Path | None


def compute_summary(rows: Sequence[QueryRow], task: str) -> dict[str, float | None]:
    """mMV@k / mAP@k for the task's metric plan; None marks undefined cells."""
    plan = TASK_PLANS[task]
    # metrics needing more slots than the rows carry are undefined, not errors
    slots = min((len(row.slots) for row in rows), default=0)
    summary: dict[str, float | None] = {}
    for k in plan.mv_ks:
        if k > slots:
            summary[f"mMV@{k}"] = None
            continue
        outcomes = [mv_at_k(row, k, plan.field) for row in rows]
        try:
            summary[f"mMV@{k}"] = aggregate_mean(outcomes)
        except UndefinedAggregateError:
            summary[f"mMV@{k}"] = None
    for k in plan.ap_ks:
        if k > slots or not rows:
            summary[f"mAP@{k}"] = None
            continue
        values = [ap_at_k(row, k, plan.field) for row in rows]
        summary[f"mAP@{k}"] = aggregate_mean(values)
    return summary


def _row_header(k_max: int) -> list[str]:
    header = ["query_id", "query_site", "query_subtype"]
    for i in range(1, k_max + 1):
        header += [f"ret_{i}_id", f"ret_{i}_site", f"ret_{i}_subtype", f"ret_{i}_score"]
    return header


def write_rows(path: str | Path, rows: Sequence[QueryRow], k_max: int) -> None:
    """QueryRow CSV; null slots are empty fields, scores print as %.6g."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_row_header(k_max))
        for row in rows:
            if len(row.slots) != k_max:
                raise ValidationError(
                    f"row {row.query_id!r} has {len(row.slots)} slots, expected {k_max}"
                )
            cells = [row.query_id, row.query_site, row.query_subtype]
            for slot in row.slots:
                if slot is None:
                    cells += ["", "", "", ""]
                else:
                    cells += [slot.target_id, slot.site, slot.subtype, f"{slot.score:.6g}"]
            writer.writerow(cells)


def read_rows(path: str | Path) -> list[QueryRow]:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty rows file") from None
        if len(header) < 7 or (len(header) - 3) % 4 != 0:
            raise FormatError(f"{path}: malformed header of {len(header)} columns")
        k_max = (len(header) - 3) // 4
        if header != _row_header(k_max):
            raise FormatError(f"{path}: header does not match the rows schema")
        rows = []
        for lineno, cells in enumerate(reader, start=2):
            if len(cells) != len(header):
                raise FormatError(
                    f"{path}:{lineno}: expected {len(header)} cells, got {len(cells)}"
                )
            slots: list[RetrievalSlot | None] = []
            for i in range(k_max):
                chunk = cells[3 + 4 * i : 7 + 4 * i]
                if all(c == "" for c in chunk):
                    slots.append(None)
                elif all(c != "" for c in chunk):
                    slots.append(
                        RetrievalSlot(chunk[0], chunk[1], chunk[2], float(chunk[3]))
                    )
                else:
                    raise FormatError(f"{path}:{lineno}: slot {i + 1} partially filled")
            rows.append(
                QueryRow(
                    query_id=cells[0],
                    query_site=cells[1],
                    query_subtype=cells[2],
                    slots=tuple(slots),
                )
            )
    return rows


def format_cell(value: float | None) -> str:
    return "-" if value is None else f"{value:.4f}"


def write_summary(
    summary: dict[str, float | None],
    csv_path: str | Path,
    txt_path: str | Path,
    context: dict[str, str] | None = None,
) -> None:
    with Path(csv_path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["metric", "value"])
        for name, value in summary.items():
            writer.writerow([name, format_cell(value)])

    lines = []
    for key, val in (context or {}).items():
        lines.append(f"{key}: {val}")
    if lines:
        lines.append("")
    width = max(len(name) for name in summary) if summary else 6
    lines.append(f"{'metric'.ljust(width)}  value")
    for name, value in summary.items():
        lines.append(f"{name.ljust(width)}  {format_cell(value)}")
    Path(txt_path).write_text("\n".join(lines) + "\n")

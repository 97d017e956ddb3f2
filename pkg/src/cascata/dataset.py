"""Per-query log ingestion, validation, splitting, and cost aggregation.

A dataset is a rectangular table: every query has exactly one record per
model in the cascade order. All downstream fitting reads from here.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    BadConfidence,
    MalformedRecord,
    MissingPrice,
    NonRectangular,
    NoIncorrectExamples,
    NTrainTooLarge,
)

CSV_COLUMNS = ("query_id", "model_id", "raw_confidence", "correct",
               "input_tokens", "output_tokens")

TRAIN, TEST = "train", "test"


@dataclass(frozen=True, slots=True)
class QueryRecord:
    """One (query, model) observation from the logs."""

    query_id: str
    model_id: str
    raw_confidence: float
    correct: bool
    input_tokens: int
    output_tokens: int


@dataclass(frozen=True)
class PriceSheet:
    """Per-token prices, currency per token, keyed by model id."""

    gamma_in: dict[str, float]
    gamma_out: dict[str, float]

    def __post_init__(self):
        for name, table in (("gamma_in", self.gamma_in), ("gamma_out", self.gamma_out)):
            for model_id, price in table.items():
                if not (price > 0.0):
                    raise ValueError(f"{name}[{model_id!r}] must be strictly positive, got {price}")

    def cost_of(self, rec: QueryRecord) -> float:
        if rec.model_id not in self.gamma_in or rec.model_id not in self.gamma_out:
            raise MissingPrice(rec.model_id)
        return (self.gamma_in[rec.model_id] * rec.input_tokens
                + self.gamma_out[rec.model_id] * rec.output_tokens)

    @classmethod
    def from_config(cls, prices: dict) -> "PriceSheet":
        gin = {m: float(p["input"]) for m, p in prices.items()}
        gout = {m: float(p["output"]) for m, p in prices.items()}
        return cls(gamma_in=gin, gamma_out=gout)


@dataclass(frozen=True)
class AlignedDataset:
    """Rectangular (query x model) table plus an optional train/test split.

    Immutable after construction; `split` and `balanced_subsample` return
    new instances sharing the record objects.
    """

    model_order: tuple[str, ...]
    queries: tuple[str, ...]
    records: dict[tuple[str, str], QueryRecord]
    split_tag: dict[str, str]

    def record(self, query_id: str, model_id: str) -> QueryRecord:
        return self.records[(query_id, model_id)]

    @property
    def n_queries(self) -> int:
        return len(self.queries)

    @property
    def k(self) -> int:
        return len(self.model_order)

    def queries_in_split(self, split: str | None) -> tuple[str, ...]:
        if split is None:
            return self.queries
        return tuple(q for q in self.queries if self.split_tag.get(q) == split)

    def column(self, model_id: str, field: str, split: str | None = None) -> np.ndarray:
        """Values of one record field for one model, in query order."""
        qs = self.queries_in_split(split)
        vals = [getattr(self.records[(q, model_id)], field) for q in qs]
        if field == "correct":
            return np.asarray(vals, dtype=bool)
        if field in ("input_tokens", "output_tokens"):
            return np.asarray(vals, dtype=np.int64)
        return np.asarray(vals, dtype=float)


def _parse_row(row: dict, line_no: int) -> QueryRecord:
    try:
        query_id = row["query_id"]
        model_id = row["model_id"]
        raw_confidence = float(row["raw_confidence"])
        correct_raw = str(row["correct"]).strip()
        input_tokens = int(row["input_tokens"])
        output_tokens = int(row["output_tokens"])
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedRecord(line_no, str(exc)) from exc
    if correct_raw not in ("0", "1"):
        raise MalformedRecord(line_no, f"correct must be 0 or 1, got {correct_raw!r}")
    if not np.isfinite(raw_confidence) or not (0.0 <= raw_confidence <= 1.0):
        raise BadConfidence(
            f"line {line_no}: raw_confidence {raw_confidence} outside [0, 1]")
    if input_tokens < 0 or output_tokens < 0:
        raise MalformedRecord(line_no, "token counts must be nonnegative")
    return QueryRecord(query_id, model_id, raw_confidence,
                       correct_raw == "1", input_tokens, output_tokens)


def _assemble(parsed: list[QueryRecord], model_order) -> AlignedDataset:
    records: dict[tuple[str, str], QueryRecord] = {}
    seen_models: list[str] = []
    seen_queries: list[str] = []
    for rec in parsed:
        key = (rec.query_id, rec.model_id)
        if key in records:
            raise MalformedRecord(0, f"duplicate record for {key}")
        records[key] = rec
        if rec.model_id not in seen_models:
            seen_models.append(rec.model_id)
        if rec.query_id not in seen_queries:
            seen_queries.append(rec.query_id)
    if model_order is None:
        model_order = tuple(seen_models)
    else:
        model_order = tuple(model_order)
        extra = set(seen_models) - set(model_order)
        if extra:
            raise MalformedRecord(0, f"records for models not in model_order: {sorted(extra)}")
    missing = [(q, m) for q in seen_queries for m in model_order
               if (q, m) not in records]
    if missing:
        raise NonRectangular(missing)
    return AlignedDataset(model_order=model_order, queries=tuple(seen_queries),
                          records=records, split_tag={})


def load_dataset(path, format: str = "csv", model_order=None) -> AlignedDataset:
    """Load a per-query log file into an aligned dataset.

    `format` is "csv" (fixed column order, mandatory header) or "jsonl"
    (one record object per line). When `model_order` is omitted the cascade
    order is the order of first appearance in the file.
    """
    parsed: list[QueryRecord] = []
    if format == "csv":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise MalformedRecord(1, "empty file") from None
            if tuple(header) != CSV_COLUMNS:
                raise MalformedRecord(1, f"header must be {','.join(CSV_COLUMNS)}")
            for line_no, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != len(CSV_COLUMNS):
                    raise MalformedRecord(line_no, f"expected {len(CSV_COLUMNS)} fields")
                parsed.append(_parse_row(dict(zip(CSV_COLUMNS, row)), line_no))
    elif format == "jsonl":
        with open(path) as fh:
            for line_no, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise MalformedRecord(line_no, str(exc)) from exc
                obj = dict(obj)
                if "correct" in obj:
                    obj["correct"] = str(int(obj["correct"]))
                parsed.append(_parse_row(obj, line_no))
    else:
        raise ValueError(f"unknown format {format!r}")
    return _assemble(parsed, model_order)


def write_dataset(ds: AlignedDataset, path) -> None:
    """Write the canonical CSV form: query-major, cascade-model order.

    Floats use shortest round-trip repr, so loading the output and writing
    it again is byte-identical.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for q in ds.queries:
            for m in ds.model_order:
                rec = ds.records[(q, m)]
                writer.writerow([rec.query_id, rec.model_id, repr(rec.raw_confidence),
                                 int(rec.correct), rec.input_tokens, rec.output_tokens])


def split(ds: AlignedDataset, n_train: int, seed: int) -> AlignedDataset:
    """Tag queries train/test with a deterministic per-query permutation."""
    if n_train >= ds.n_queries:
        raise NTrainTooLarge(
            f"n_train={n_train} but dataset has only {ds.n_queries} queries")
    if n_train < 1:
        raise ValueError("n_train must be >= 1")
    rng = np.random.default_rng(seed)
    order = rng.permutation(ds.n_queries)
    tags = {}
    for rank, idx in enumerate(order):
        tags[ds.queries[idx]] = TRAIN if rank < n_train else TEST
    return replace(ds, split_tag=tags)


def balanced_subsample(ds: AlignedDataset, target_n: int, seed: int) -> AlignedDataset:
    """Shrink the train split to at most `target_n` queries, label-balanced.

    Round-robin over models: each visit draws one query the model answered
    correctly and one it answered incorrectly, deduplicating collisions,
    until the target is met or the pools are exhausted. The resulting train
    size lies in [2/3 * target_n, target_n] whenever the pools allow it.
    """
    train = list(ds.queries_in_split(TRAIN))
    if not train:
        raise ValueError("dataset has no train split; call split() first")
    pools: dict[str, tuple[list[str], list[str]]] = {}
    for m in ds.model_order:
        correct = [q for q in train if ds.records[(q, m)].correct]
        incorrect = [q for q in train if not ds.records[(q, m)].correct]
        if not incorrect:
            raise NoIncorrectExamples(m)
        if not correct:
            raise ValueError(f"model {m!r} has no correct training examples")
        pools[m] = (correct, incorrect)

    rng = np.random.default_rng(seed)
    selected: dict[str, None] = {}
    while len(selected) < target_n:
        grew = False
        for m in ds.model_order:
            if len(selected) >= target_n:
                break
            correct, incorrect = pools[m]
            pair = (correct[rng.integers(len(correct))],
                    incorrect[rng.integers(len(incorrect))])
            room = target_n - len(selected)
            for q in pair[:room]:
                if q not in selected:
                    selected[q] = None
                    grew = True
        if not grew and all(
            set(c) <= selected.keys() and set(i) <= selected.keys()
            for c, i in pools.values()
        ):
            break

    tags = dict(ds.split_tag)
    for q in train:
        tags[q] = TRAIN if q in selected else TEST
    return replace(ds, split_tag=tags)


def expected_cost_per_model(ds: AlignedDataset, prices: PriceSheet) -> list[float]:
    """Mean per-query cost of each model over the train split, cascade order."""
    qs = ds.queries_in_split(TRAIN) if ds.split_tag else ds.queries
    if not qs:
        raise ValueError("no queries in the train split")
    costs = []
    for m in ds.model_order:
        if m not in prices.gamma_in or m not in prices.gamma_out:
            raise MissingPrice(m)
        t_in = np.mean([ds.records[(q, m)].input_tokens for q in qs])
        t_out = np.mean([ds.records[(q, m)].output_tokens for q in qs])
        costs.append(prices.gamma_in[m] * t_in + prices.gamma_out[m] * t_out)
    return costs

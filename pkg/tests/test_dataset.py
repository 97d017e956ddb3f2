import numpy as np
import pytest

from cascata.dataset import (
    PriceSheet,
    balanced_subsample,
    expected_cost_per_model,
    load_dataset,
    split,
    write_dataset,
)
from cascata.errors import (
    BadConfidence,
    MissingPrice,
    NonRectangular,
    NoIncorrectExamples,
    NTrainTooLarge,
)
from conftest import make_dataset, write_csv


def complete_rows(n_queries=3, models=("m1", "m2")):
    rows = []
    for i in range(n_queries):
        for j, m in enumerate(models):
            rows.append((f"q{i}", m, 0.1 + 0.1 * i + 0.05 * j, (i + j) % 2, 100, 50))
    return rows


def test_load_complete_dataset(tmp_path):
    path = write_csv(tmp_path / "d.csv", complete_rows())
    ds = load_dataset(path)
    assert ds.n_queries == 3
    assert ds.model_order == ("m1", "m2")
    assert len(ds.records) == 6


def test_load_missing_cell_is_nonrectangular(tmp_path):
    rows = [r for r in complete_rows() if not (r[0] == "q2" and r[1] == "m2")]
    path = write_csv(tmp_path / "d.csv", rows)
    with pytest.raises(NonRectangular) as exc:
        load_dataset(path)
    assert ("q2", "m2") in exc.value.missing_cells


def test_load_bad_confidence(tmp_path):
    rows = complete_rows()
    rows[3] = (rows[3][0], rows[3][1], 1.5, rows[3][3], 100, 50)
    path = write_csv(tmp_path / "d.csv", rows)
    with pytest.raises(BadConfidence):
        load_dataset(path)


def test_load_jsonl_roundtrip(tmp_path):
    import json

    rows = complete_rows()
    path = tmp_path / "d.jsonl"
    keys = ("query_id", "model_id", "raw_confidence", "correct",
            "input_tokens", "output_tokens")
    path.write_text("\n".join(json.dumps(dict(zip(keys, r))) for r in rows) + "\n")
    ds = load_dataset(path, format="jsonl")
    assert len(ds.records) == 6


def test_exact_endpoint_confidences_are_legal(tmp_path):
    rows = [("q0", "m1", 0.0, 0, 1, 1), ("q1", "m1", 1.0, 1, 1, 1)]
    ds = load_dataset(write_csv(tmp_path / "d.csv", rows))
    assert ds.record("q1", "m1").raw_confidence == 1.0


def test_write_load_write_is_byte_identical(tmp_path):
    rows = [(f"q{i}", m, np.random.default_rng(i).random(), i % 2, 10 * i, i)
            for i in range(5) for m in ("a", "b")]
    ds = make_dataset(rows)
    p1, p2 = tmp_path / "c1.csv", tmp_path / "c2.csv"
    write_dataset(ds, p1)
    write_dataset(load_dataset(p1), p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_split_paper_sizes_and_determinism():
    rows = [(f"q{i}", "m1", 0.5, i % 2, 1, 1) for i in range(1300)]
    ds = make_dataset(rows)
    a = split(ds, n_train=300, seed=7)
    b = split(ds, n_train=300, seed=7)
    tags = list(a.split_tag.values())
    assert tags.count("train") == 300 and tags.count("test") == 1000
    assert a.split_tag == b.split_tag
    assert set(a.split_tag) == set(a.queries)  # partition


def test_split_rejects_n_train_too_large():
    ds = make_dataset(complete_rows())
    with pytest.raises(NTrainTooLarge):
        split(ds, n_train=3, seed=0)


def test_balanced_subsample_size_window():
    rng = np.random.default_rng(1)
    rows = []
    for i in range(200):
        for m in ("m1", "m2"):
            rows.append((f"q{i}", m, 0.5, int(rng.random() < 0.6), 1, 1))
    ds = split(make_dataset(rows), n_train=150, seed=3)
    out = balanced_subsample(ds, target_n=30, seed=5)
    size = len(out.queries_in_split("train"))
    assert 20 <= size <= 30
    # everything removed from train lands in test: still a partition
    assert set(out.split_tag) == set(out.queries)


def test_balanced_subsample_requires_incorrect_examples():
    rows = [(f"q{i}", "m1", 0.5, 1, 1, 1) for i in range(20)]
    ds = split(make_dataset(rows), n_train=10, seed=0)
    with pytest.raises(NoIncorrectExamples):
        balanced_subsample(ds, target_n=4, seed=0)


def test_balanced_subsample_minimal_pair():
    # one model, one correct and one incorrect candidate: the only draw
    rows = [("q0", "m1", 0.5, 1, 1, 1), ("q1", "m1", 0.5, 0, 1, 1),
            ("q2", "m1", 0.5, 1, 1, 1)]
    ds = split(make_dataset(rows), n_train=2, seed=4)
    train = ds.queries_in_split("train")
    labels = {ds.record(q, "m1").correct for q in train}
    if labels != {True, False}:
        pytest.skip("seeded split lacks one label in train; covered by window test")
    out = balanced_subsample(ds, target_n=2, seed=0)
    chosen = out.queries_in_split("train")
    assert len(chosen) == 2
    assert {out.record(q, "m1").correct for q in chosen} == {True, False}


def test_balanced_subsample_label_balance_single_model():
    rows = [(f"q{i}", "m1", 0.5, i % 2, 1, 1) for i in range(400)]
    ds = split(make_dataset(rows), n_train=300, seed=9)
    out = balanced_subsample(ds, target_n=30, seed=11)
    chosen = out.queries_in_split("train")
    n_correct = sum(out.record(q, "m1").correct for q in chosen)
    # pairs add one of each label; imbalance only through collisions
    assert abs(n_correct - (len(chosen) - n_correct)) <= 2


def test_expected_cost_hand_value():
    rows = [(f"q{i}", "m1", 0.5, 1, 100, 50) for i in range(4)]
    ds = make_dataset(rows)
    prices = PriceSheet(gamma_in={"m1": 1e-6}, gamma_out={"m1": 2e-6})
    assert expected_cost_per_model(ds, prices) == pytest.approx([2.0e-4], abs=1e-18)


def test_expected_cost_zero_tokens():
    rows = [(f"q{i}", "m1", 0.5, 1, 0, 0) for i in range(4)]
    prices = PriceSheet(gamma_in={"m1": 1e-6}, gamma_out={"m1": 2e-6})
    assert expected_cost_per_model(make_dataset(rows), prices) == [0.0]


def test_expected_cost_missing_price():
    rows = complete_rows()
    prices = PriceSheet(gamma_in={"m1": 1e-6}, gamma_out={"m1": 2e-6})
    with pytest.raises(MissingPrice):
        expected_cost_per_model(make_dataset(rows), prices)


def test_expected_cost_uses_train_split_only():
    rows = [("q0", "m1", 0.5, 1, 100, 0), ("q1", "m1", 0.5, 1, 300, 0),
            ("q2", "m1", 0.5, 0, 900, 0)]
    ds = make_dataset(rows)
    ds_split = split(ds, n_train=2, seed=0)
    prices = PriceSheet(gamma_in={"m1": 1.0}, gamma_out={"m1": 1.0})
    train = ds_split.queries_in_split("train")
    expected = np.mean([ds.record(q, "m1").input_tokens for q in train])
    assert expected_cost_per_model(ds_split, prices) == pytest.approx([expected])


def test_price_sheet_rejects_nonpositive():
    with pytest.raises(ValueError):
        PriceSheet(gamma_in={"m1": 0.0}, gamma_out={"m1": 1e-6})

import numpy as np
import pytest

from cascata.dataset import CSV_COLUMNS, AlignedDataset, QueryRecord


def make_dataset(rows) -> AlignedDataset:
    """Rows of (query_id, model_id, raw_conf, correct, t_in, t_out)."""
    records = {}
    queries, models = [], []
    for q, m, conf, corr, t_in, t_out in rows:
        records[(q, m)] = QueryRecord(q, m, float(conf), bool(corr), int(t_in), int(t_out))
        if q not in queries:
            queries.append(q)
        if m not in models:
            models.append(m)
    return AlignedDataset(model_order=tuple(models), queries=tuple(queries),
                          records=records, split_tag={})


def write_csv(path, rows):
    lines = [",".join(CSV_COLUMNS)]
    for q, m, conf, corr, t_in, t_out in rows:
        lines.append(f"{q},{m},{conf},{int(corr)},{t_in},{t_out}")
    path.write_text("\n".join(lines) + "\n")
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(20250809)

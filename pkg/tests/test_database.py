import pandas as pd

import database
from config import BENCH_TABLE, RESCORE_TABLE
from pipeline import RescoreConfig, rescore_archive, results_frame, run_bench
from score import HashScorer

STAMP = "2026-01-02 03:04:05"


def test_init_creates_both_tables(tmp_path):
    db = tmp_path / "runs.db"
    database.init_database(db)
    database.init_database(db)
    assert database.get_unique_run_timestamps(BENCH_TABLE, db) == []
    assert database.get_unique_run_timestamps(RESCORE_TABLE, db) == []


def test_missing_table_gives_no_timestamps(tmp_path):
    assert database.get_unique_run_timestamps(db_path=tmp_path / "empty.db") == []


def test_save_and_reload_runs(tmp_path, small_lattices):
    db = tmp_path / "runs.db"
    database.init_database(db)
    lattices = small_lattices[:3]
    cfg = RescoreConfig(lam=1.0)

    bench = run_bench(lattices, HashScorer(), cfg, epsilons=(0.5,), orders=())
    stamp, count = database.save_bench_results(bench, archive="a.txt", scorer="hash",
                                               run_timestamp=STAMP, db_path=db)
    assert (stamp, count) == (STAMP, len(bench))

    results = rescore_archive(lattices, HashScorer(), cfg)
    _, count = database.save_rescore_results(results_frame(results, cfg), archive="a.txt",
                                             scorer="hash", run_timestamp=STAMP, db_path=db)
    assert count == 3

    assert database.get_unique_run_timestamps(BENCH_TABLE, db) == [STAMP]
    stored = database.get_bench_by_timestamp(STAMP, db)
    assert list(stored["strategy"]) == list(bench["strategy"])
    assert stored["wall_time"].isna().all()
    assert set(stored["scorer"]) == {"hash"}
    rows = database.get_rescore_by_timestamp(STAMP, db)
    assert list(rows["utt_id"]) == [lat.utt_id for lat in lattices]


def test_empty_frames_are_not_saved(tmp_path):
    db = tmp_path / "runs.db"
    database.init_database(db)
    _, count = database.save_bench_results(pd.DataFrame(), run_timestamp=STAMP, db_path=db)
    assert count == 0
    assert database.get_unique_run_timestamps(db_path=db) == []


def test_export_and_delete(tmp_path, small_lattices):
    db = tmp_path / "runs.db"
    database.init_database(db)
    bench = run_bench(small_lattices[:2], HashScorer(), epsilons=(0.5,), orders=())
    database.save_bench_results(bench, run_timestamp=STAMP, db_path=db)

    out = tmp_path / "export.xlsx"
    assert database.export_to_excel(STAMP, out, db_path=db)
    assert list(pd.read_excel(out, sheet_name="bench")["strategy"]) == list(bench["strategy"])
    assert database.export_to_excel(filename=tmp_path / "all.xlsx", db_path=db)

    assert database.delete_run(STAMP, db_path=db) == len(bench)
    assert not database.export_to_excel(STAMP, tmp_path / "gone.xlsx", db_path=db)

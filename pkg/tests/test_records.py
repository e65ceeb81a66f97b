# Copyright (C) 2024 The convexflow authors
# This file is part of convexflow
# SPDX-License-Identifier: Apache-2.0

import csv
import json
import math
import tempfile
import unittest
from pathlib import Path

import numpy as np

from convexflow.records import (RECORD_FORMAT, SUMMARY_HEADER, RunRecord, StepDiagnostics, read_record, read_records,
                                read_summary, record_filename, summarize, write_record, write_summary)


def make_record(method, seed, mmd, status="ok", wall=1.0):
    return RunRecord(method=method, seed=seed, kind="euclidean", theta_init=np.zeros(3),
                     theta_final=np.array([0.1, 1.0 / 3.0, -2.5e-17]),
                     diagnostics=[StepDiagnostics(0, 1.25, 0.5, 0.01, epsilon=0.123),
                                  StepDiagnostics(1, 1.0, 0.25, 0.005, inexactness_delta=0.3, inner_objective=2.0)],
                     final_mmd=mmd, wall_time_seconds=wall, status=status)


class RecordFileTest(unittest.TestCase):

    def test_filename(self):
        self.assertEqual(record_filename("implicit", 7), "implicit_seed0007.json")

    def test_written_record_reads_back_exactly(self):
        record = make_record("implicit", 3, 0.1 + 0.2)
        with tempfile.TemporaryDirectory() as tmp:
            path = write_record(record, Path(tmp) / "runs")
            self.assertEqual(path.name, "implicit_seed0003.json")
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
            self.assertEqual(raw["format"], RECORD_FORMAT)
            self.assertEqual(raw["rng"], "numpy.random.Philox")
            loaded = read_record(path)
        np.testing.assert_array_equal(loaded.theta_final, record.theta_final)
        self.assertEqual(loaded.final_mmd, 0.1 + 0.2)
        self.assertEqual(loaded.diagnostics, record.diagnostics)
        self.assertIsNone(loaded.final_map_error)
        self.assertEqual(loaded.status, "ok")

    def test_rejects_other_json(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "x_seed0000.json"
            path.write_text(json.dumps({"method": "x"}), encoding="utf-8")
            with self.assertRaises(ValueError):
                read_record(path)

    def test_read_records_ignores_summary(self):
        with tempfile.TemporaryDirectory() as tmp:
            write_record(make_record("a", 1, 0.5), tmp)
            write_record(make_record("a", 0, 0.4), tmp)
            write_summary(summarize(read_records(tmp)), Path(tmp) / "summary.csv")
            self.assertEqual([r.seed for r in read_records(tmp)], [0, 1])


class SummaryTest(unittest.TestCase):

    def test_statistics_skip_failed_runs(self):
        records = [make_record("a", 0, 1.0, wall=2.0), make_record("a", 1, 3.0, wall=4.0),
                   make_record("a", 2, 100.0, status="failed"), make_record("b", 0, None),
                   make_record("b", 1, 0.5)]
        rows = summarize(records)
        self.assertEqual([row["method"] for row in rows], ["a", "b"])
        a, b = rows
        self.assertEqual(a["n_seeds"], 2)
        self.assertEqual(a["mmd_mean"], 2.0)
        self.assertAlmostEqual(a["mmd_std"], math.sqrt(2.0))
        self.assertEqual((a["mmd_min"], a["mmd_max"]), (1.0, 3.0))
        self.assertEqual(a["mean_wall_time_s"], 3.0)
        self.assertEqual(b["n_seeds"], 1)
        self.assertEqual(b["mmd_std"], 0.0)

    def test_method_without_runs(self):
        rows = summarize([make_record("a", 0, 1.0)], ["a", "missing"])
        self.assertEqual(rows[1]["n_seeds"], 0)
        self.assertTrue(math.isnan(rows[1]["mmd_mean"]))

    def test_csv(self):
        rows = summarize([make_record("implicit", 0, 0.1), make_record("implicit", 1, 0.2 / 3.0)])
        with tempfile.TemporaryDirectory() as tmp:
            path = write_summary(rows, Path(tmp) / "summary.csv")
            with open(path, encoding="utf-8", newline="") as fh:
                lines = list(csv.reader(fh))
            loaded = read_summary(path)
        self.assertEqual(lines[0], SUMMARY_HEADER)
        self.assertEqual(lines[1][:2], ["implicit", "2"])
        self.assertEqual(loaded, rows)


if __name__ == '__main__':
    unittest.main()

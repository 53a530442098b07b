import csv
import io
import json
import tempfile
import unittest
from contextlib import redirect_stderr, redirect_stdout
from pathlib import Path

from app.cli import CHECKPOINT_FILENAME, EXIT_DATA, EXIT_OK, EXIT_USAGE, PREDICTIONS_FILENAME, run
from app.config import CONFIG_FILENAME
from features.spatial import SPATIAL_COLUMNS
from storage.checkpoint import MAGIC

FIXTURES = Path(__file__).parent / "fixtures" / "sroie"
SMALL = ["--epochs", "1", "--hidden", "4", "--text-dim", "8", "--visual-dim", "4", "--seed", "0"]


def invoke(*argv):
    out, err = io.StringIO(), io.StringIO()
    with redirect_stdout(out), redirect_stderr(err):
        code = run([str(a) for a in argv])
    return code, out.getvalue(), err.getvalue()


class TestCli(unittest.TestCase):
    def setUp(self):
        tmp = tempfile.TemporaryDirectory()
        self.addCleanup(tmp.cleanup)
        self.tmp = Path(tmp.name)

    def test_no_subcommand(self):
        code, _, err = invoke()
        self.assertEqual(code, EXIT_USAGE)
        self.assertIn("subcommand", err)

    def test_bad_flag(self):
        code, _, _ = invoke("train", FIXTURES, "--out", self.tmp, "--epochs", "many")
        self.assertEqual(code, EXIT_USAGE)

    def test_invalid_value(self):
        code, _, err = invoke("train", FIXTURES, "--out", self.tmp, "--hidden", "0")
        self.assertEqual(code, EXIT_USAGE)
        self.assertIn("hidden", err)

    def test_missing_corpus(self):
        missing = self.tmp / "nowhere"
        code, _, err = invoke("train", missing, "--out", self.tmp / "run", *SMALL)
        self.assertEqual(code, EXIT_DATA)
        self.assertIn(str(missing), err)

    def test_missing_checkpoint(self):
        code, _, _ = invoke("predict", self.tmp / "absent.boxtag", FIXTURES, "--out", self.tmp)
        self.assertEqual(code, EXIT_DATA)

    def test_synth_then_validate(self):
        corpus = self.tmp / "synth"
        code, _, _ = invoke("synth", "--n", 5, "--seed", 3, "--out", corpus)
        self.assertEqual(code, EXIT_OK)
        self.assertEqual(len(list(corpus.glob("*.txt"))), 5)
        self.assertTrue((corpus / CONFIG_FILENAME).exists())
        self.assertEqual(json.loads((corpus / "synth.json").read_text())["seed"], 3)
        code, out, _ = invoke("validate", corpus)
        self.assertEqual(code, EXIT_OK)
        self.assertTrue(out.startswith("5 invoices"))

    def test_synth_render(self):
        corpus = self.tmp / "synth"
        code, _, _ = invoke("synth", "--n", 2, "--out", corpus, "--render")
        self.assertEqual(code, EXIT_OK)
        self.assertEqual(len(list(corpus.glob("*.png"))), 2)

    def test_validate_fixture(self):
        code, out, _ = invoke("validate", FIXTURES)
        self.assertEqual(code, EXIT_OK)
        self.assertTrue(out.startswith("3 invoices, 42 boxes"))

    def test_oracle(self):
        code, out, _ = invoke("oracle-test", "--instances", 20, "--grad-seeds", 1)
        self.assertEqual(code, EXIT_OK)
        self.assertIn("max logZ error", out)
        self.assertIn("max gradient error", out)

    def test_fixture_end_to_end(self):
        run_dir = self.tmp / "run"
        code, _, err = invoke("train", FIXTURES, "--out", run_dir, *SMALL)
        self.assertEqual(code, EXIT_OK, err)
        checkpoint = run_dir / CHECKPOINT_FILENAME
        self.assertEqual(checkpoint.read_bytes()[:8], MAGIC)
        self.assertEqual(len(json.loads((run_dir / "history.json").read_text())), 1)
        echoed = json.loads((run_dir / CONFIG_FILENAME).read_text())
        self.assertEqual((echoed["epochs"], echoed["hidden"]), (1, 4))
        self.assertTrue((run_dir / "validation.json").exists())

        pred_dir = self.tmp / "pred"
        code, _, err = invoke("predict", checkpoint, FIXTURES, "--out", pred_dir)
        self.assertEqual(code, EXIT_OK, err)
        preds = json.loads((pred_dir / PREDICTIONS_FILENAME).read_text())
        self.assertEqual(sorted(preds), ["X51005200931", "X51005268200", "X51006414392"])
        self.assertEqual(len(preds["X51006414392"]["boxes"]), 12)
        self.assertEqual(set(preds["X51006414392"]["fields"]), {"company", "date", "address", "total"})

        eval_dir = self.tmp / "eval"
        code, _, err = invoke("eval", FIXTURES, "--out", eval_dir, "--checkpoint", checkpoint)
        self.assertEqual(code, EXIT_OK, err)
        report = json.loads((eval_dir / "report.json").read_text())
        self.assertEqual(report["reports"][0]["method"], "boxtagger")
        self.assertEqual(report["reports"][0]["boxes"]["boxes"], 42)

        features = self.tmp / "features.csv"
        code, _, err = invoke("features", FIXTURES, "--out", features, "--checkpoint", checkpoint)
        self.assertEqual(code, EXIT_OK, err)
        with open(features, newline="", encoding="utf-8") as handle:
            rows = list(csv.reader(handle))
        self.assertEqual(len(rows), 43)
        self.assertEqual(rows[0][-len(SPATIAL_COLUMNS):], list(SPATIAL_COLUMNS))
        self.assertEqual(len(rows[0]), 2 + 8 + 4 + len(SPATIAL_COLUMNS))

    def test_rule_method(self):
        run_dir = self.tmp / "rule"
        code, _, err = invoke("train", FIXTURES, "--out", run_dir, "--method", "rule", "--format", "table")
        self.assertEqual(code, EXIT_OK, err)
        self.assertTrue((run_dir / "validation.table").exists())
        code, _, err = invoke("features", FIXTURES, "--out", self.tmp / "f.csv", "--checkpoint", run_dir / CHECKPOINT_FILENAME)
        self.assertEqual(code, EXIT_USAGE)
        self.assertIn("box tagger", err)

    def test_eval_comparison(self):
        eval_dir = self.tmp / "cmp"
        code, out, err = invoke("eval", FIXTURES, "--out", eval_dir, "--method", "rule", "--seeds", 0, 1)
        self.assertEqual(code, EXIT_OK, err)
        summary = json.loads((eval_dir / "summary.json").read_text())
        self.assertEqual(summary["seeds"], [0, 1])
        self.assertIn("rule", summary["median_box_macro_f1"])


if __name__ == "__main__":
    unittest.main()

"""End-to-end learning checks on the synthetic corpus; minutes of CPU, run with BOXTAG_SLOW=1."""

import os
import unittest

from evaluation.experiments import evaluate_predictor, run_ablation, run_comparison
from models.corpus import split_dataset
from synth.generator import SynthConfig, generate
from tagger.model import TaggerConfig
from tagger.training import TrainConfig, train

SLOW = os.environ.get("BOXTAG_SLOW") == "1"


def model_config():
    return TaggerConfig(text_dim=32, vocab_size=1024, visual_dim=8, crop_h=16, crop_w=32, conv_layers=[[4, 3, 2]], hidden=32)


def train_config(seed=0):
    return TrainConfig(epochs=100, batch_size=8, lr=1e-2, patience=10, seed=seed)


@unittest.skipUnless(SLOW, "set BOXTAG_SLOW=1 to run")
class TestSyntheticLearning(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.corpus = generate(SynthConfig(n_invoices=200, seed=7, render=True))

    def test_box_tagger_learns_layout(self):
        train_set, test_set = split_dataset(self.corpus, 0.8, 0)
        model, history = train(train_set, test_set, model_config(), train_config())
        self.assertLess(history[-1].train_loss, history[0].train_loss)
        report = evaluate_predictor(model, test_set, "boxtagger")
        self.assertGreaterEqual(report.boxes.macro_f1, 0.95)

    def test_method_ordering(self):
        result = run_comparison(
            self.corpus, ["rule", "wordlstm", "boxtagger"], [0, 1, 2], model_config(), train_config()
        )
        summary = result.summary()
        self.assertLess(summary["rule"], summary["wordlstm"])
        self.assertLessEqual(summary["wordlstm"], summary["boxtagger"])

    def test_feature_ablation(self):
        summary = run_ablation(self.corpus, [0, 1, 2], model_config(), train_config()).summary()
        self.assertGreaterEqual(summary["boxtagger[full]"], summary["boxtagger[text]"])


if __name__ == "__main__":
    unittest.main()

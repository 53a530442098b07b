import tempfile
import unittest
from pathlib import Path

from models.corpus import align_labels, reading_order, split_dataset, validate_invoice
from models.errors import CorpusError, EmptyCorpusError
from models.invoice import BoundingBox, FieldAnnotation, FieldLabel, Invoice, LabeledInvoice
from storage.corpus_io import load_corpus, load_invoices, write_corpus
from synth.generator import SynthConfig, generate

FIXTURES = Path(__file__).parent / "fixtures" / "sroie"

N = FieldLabel.NONE


def box(x0, y0, x1, y1, text):
    return BoundingBox.from_coords([x0, y0, x1, y0, x1, y1, x0, y1], text)


def invoice_of(texts, inv_id="inv"):
    boxes = [box(10, 10 + 20 * i, 90, 20 + 20 * i, t) for i, t in enumerate(texts)]
    return Invoice(id=inv_id, page_width=100, page_height=20 + 20 * len(texts), boxes=boxes)


def labeled(inv_id):
    inv = invoice_of(["A"], inv_id)
    return LabeledInvoice(invoice=inv, labels=[N])


class TestAlignLabels(unittest.TestCase):
    def test_exact_total(self):
        item = align_labels(invoice_of(["TOTAL", "7.50"]), FieldAnnotation(total="7.50"))
        self.assertEqual(item.labels, [N, FieldLabel.TOTAL])

    def test_address_split_over_boxes(self):
        item = align_labels(invoice_of(["12 FOO ST", "KL"]), FieldAnnotation(address="12 FOO ST KL"))
        self.assertEqual(item.labels, [FieldLabel.ADDRESS, FieldLabel.ADDRESS])

    def test_absent_field(self):
        ann = FieldAnnotation(company="ACME", date="")
        item = align_labels(invoice_of(["ACME", "26/02/1998"]), ann)
        self.assertEqual(item.labels, [FieldLabel.COMPANY, N])

    def test_date_inside_longer_box(self):
        item = align_labels(invoice_of(["26/02/1998 18:12:12"]), FieldAnnotation(date="26/02/1998"))
        self.assertEqual(item.labels, [FieldLabel.DATE])

    def test_unmatched_field_is_reported(self):
        with self.assertLogs("models.corpus", level="WARNING"):
            item = align_labels(invoice_of(["HELLO"]), FieldAnnotation(total="9.99"))
        self.assertEqual(item.coverage.missing, ["total"])
        self.assertEqual(item.labels, [N])


class TestReadingOrder(unittest.TestCase):
    def test_single_box(self):
        self.assertEqual(reading_order([box(0, 0, 5, 5, "A")]), [0])

    def test_rows_top_to_bottom(self):
        boxes = [box(0, 95, 10, 105, "LOW"), box(0, 5, 10, 15, "HIGH")]
        self.assertEqual(reading_order(boxes), [1, 0])

    def test_same_row_left_to_right(self):
        boxes = [box(45, 0, 55, 10, "RIGHT"), box(0, 0, 10, 10, "LEFT")]
        self.assertEqual(reading_order(boxes), [1, 0])

    def test_empty(self):
        with self.assertRaises(EmptyCorpusError):
            reading_order([])


class TestSplitDataset(unittest.TestCase):
    def test_sizes_and_disjoint(self):
        items = [labeled(f"inv{i}") for i in range(10)]
        train, test = split_dataset(items, 0.8, 42)
        self.assertEqual((len(train), len(test)), (8, 2))
        self.assertFalse({i.id for i in train} & {i.id for i in test})

    def test_deterministic(self):
        items = [labeled(f"inv{i}") for i in range(10)]
        first = split_dataset(items, 0.8, 42)
        second = split_dataset(items, 0.8, 42)
        self.assertEqual([i.id for i in first[1]], [i.id for i in second[1]])

    def test_duplicates_dropped(self):
        train, test = split_dataset([labeled("a"), labeled("a"), labeled("b")], 0.5, 0)
        self.assertEqual(sorted(i.id for i in train + test), ["a", "b"])

    def test_small_corpora_keep_both_parts(self):
        for n, ratio, expected in [(2, 0.8, (1, 1)), (2, 0.1, (1, 1)), (3, 0.8, (2, 1)), (5, 0.99, (4, 1))]:
            with self.subTest(n=n, ratio=ratio):
                train, test = split_dataset([labeled(f"inv{i}") for i in range(n)], ratio, 0)
                self.assertEqual((len(train), len(test)), expected)

    def test_too_few(self):
        with self.assertRaises(EmptyCorpusError):
            split_dataset([labeled("a"), labeled("a")], 0.8, 0)


class TestValidateInvoice(unittest.TestCase):
    def test_clean(self):
        self.assertEqual(validate_invoice(invoice_of(["A", "B"])), [])

    def test_box_outside_page(self):
        inv = Invoice(id="x", page_width=50, page_height=50, boxes=[box(10, 10, 80, 20, "WIDE")])
        problems = validate_invoice(inv)
        self.assertEqual(len(problems), 1)
        self.assertIn("outside the page", problems[0])


class TestCorpusDirectory(unittest.TestCase):
    def test_fixture_loads(self):
        items = load_corpus(FIXTURES)
        self.assertEqual([i.id for i in items], ["X51005200931", "X51005268200", "X51006414392"])
        by_id = {i.id: i for i in items}
        gardenia = by_id["X51006414392"]
        self.assertEqual(
            gardenia.labels,
            [FieldLabel.COMPANY, N, FieldLabel.ADDRESS, FieldLabel.ADDRESS, N, FieldLabel.DATE]
            + [N] * 5
            + [FieldLabel.TOTAL],
        )
        unihakka = by_id["X51005268200"]
        self.assertEqual(unihakka.labels[5], FieldLabel.DATE)
        self.assertEqual(unihakka.labels[11], FieldLabel.TOTAL)
        # no image: the page is the box extent
        self.assertEqual((gardenia.invoice.page_width, gardenia.invoice.page_height), (500.0, 338.0))
        for item in items:
            self.assertEqual(validate_invoice(item.invoice), [])
            self.assertEqual(item.coverage.missing, [])

    def test_missing_directory(self):
        with self.assertRaises(CorpusError) as ctx:
            load_corpus(Path("/nonexistent/corpus"))
        self.assertIn("/nonexistent/corpus", str(ctx.exception))

    def test_missing_annotation(self):
        with tempfile.TemporaryDirectory() as tmp:
            Path(tmp, "a.txt").write_text("0,0,10,0,10,5,0,5,TOTAL\n", encoding="utf-8")
            with self.assertRaises(CorpusError):
                load_corpus(Path(tmp))
            self.assertEqual(len(load_invoices(Path(tmp))), 1)

    def test_synthetic_corpus_written_and_reloaded(self):
        items = generate(SynthConfig(n_invoices=12, seed=3, render=True))
        with tempfile.TemporaryDirectory() as tmp:
            write_corpus(Path(tmp), items)
            loaded = load_corpus(Path(tmp))
        self.assertEqual([i.id for i in loaded], [i.id for i in items])
        total = sum(len(i.labels) for i in items)
        agree = sum(a == b for x, y in zip(items, loaded) for a, b in zip(x.labels, y.labels))
        self.assertGreaterEqual(agree / total, 0.99)
        for x, y in zip(items, loaded):
            self.assertEqual([b.text for b in x.invoice.boxes], [b.text for b in y.invoice.boxes])
            self.assertEqual((y.invoice.page_width, y.invoice.page_height), (600.0, 1000.0))
            self.assertTrue(y.invoice.has_image())


if __name__ == "__main__":
    unittest.main()

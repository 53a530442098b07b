import unittest

from models.errors import EmptyCorpusError, ParseError
from models.invoice import FieldAnnotation
from models.parsers import (
    format_annotation,
    format_box_file,
    parse_annotation,
    parse_box_file,
    parse_box_line,
)


class TestBoxParsers(unittest.TestCase):
    def test_parse_box_line(self):
        box = parse_box_line("0,0,10,0,10,5,0,5,TOTAL", 1)
        self.assertEqual(box.text, "TOTAL")
        self.assertEqual(box.coords(), [0, 0, 10, 0, 10, 5, 0, 5])
        self.assertIsNone(parse_box_line("   ", 2))

    def test_transcript_keeps_commas(self):
        box = parse_box_line("1,1,9,1,9,4,1,4,1,000.00", 1)
        self.assertEqual(box.text, "1,000.00")

    def test_non_numeric_coordinate(self):
        with self.assertRaises(ParseError) as ctx:
            parse_box_file("1,2,three,4,5,6,7,8,x\n")
        self.assertEqual(ctx.exception.line, 1)

    def test_short_line_reports_line_number(self):
        with self.assertRaises(ParseError) as ctx:
            parse_box_file("0,0,10,0,10,5,0,5,A\n0,0,1,TOTAL\n")
        self.assertEqual(ctx.exception.line, 2)

    def test_blank_file(self):
        with self.assertRaises(EmptyCorpusError):
            parse_box_file("\n  \n")

    def test_coordinates_clamped_to_page(self):
        box = parse_box_line("-3,0,120,0,120,5,-3,5,WIDE", 1, page_width=100, page_height=50)
        self.assertEqual(box.hull(), (0.0, 0.0, 100.0, 5.0))

    def test_format_then_parse(self):
        raw = "1,2,30,2,30,12,1,12,NO 5, JALAN PUDU\n4,20,9.5,20,9.5,28,4,28,7.50\n"
        boxes = parse_box_file(raw)
        self.assertEqual(format_box_file(boxes), raw)


class TestAnnotationParser(unittest.TestCase):
    def test_parse_annotation(self):
        ann = parse_annotation('{"company": "ACME", "total": "7.50"}')
        self.assertEqual(ann, FieldAnnotation(company="ACME", total="7.50"))

    def test_unknown_key(self):
        with self.assertRaises(ParseError):
            parse_annotation('{"company": "ACME", "tax": "0.30"}')

    def test_non_string_value(self):
        with self.assertRaises(ParseError):
            parse_annotation('{"total": 7.5}')

    def test_invalid_json_has_line(self):
        with self.assertRaises(ParseError) as ctx:
            parse_annotation('{\n"company": }')
        self.assertEqual(ctx.exception.line, 2)

    def test_format_annotation(self):
        ann = FieldAnnotation(company="ACME", date="26/02/1998", address="KL", total="7.50")
        self.assertEqual(parse_annotation(format_annotation(ann)), ann)


if __name__ == "__main__":
    unittest.main()

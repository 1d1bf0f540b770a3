import json

import numpy as np
import pytest

from vgt import coco
from vgt.doc import (CLS_ID, D4LA_CATEGORIES, MASK_ID, PAD_ID, UNK_ID, Vocab,
                     derive_tokens, detokenize, group_segments, load_ocr_page,
                     save_ocr_page, split_word_box, tokenize, Word)


@pytest.fixture(scope="module")
def vocab():
    return Vocab(["[PAD]", "[MASK]", "[UNK]", "[CLS]",
                  "table", "##s", "a", "b", "c", "##b", "##c", "abc", "the"])


class TestVocab:
    def test_reserved_ids(self, vocab):
        assert (PAD_ID, MASK_ID, UNK_ID, CLS_ID) == (0, 1, 2, 3)
        assert vocab.id("[PAD]") == 0 and vocab.id("[CLS]") == 3

    def test_rejects_bad_reserved_order(self):
        with pytest.raises(ValueError, match="must start"):
            Vocab(["[PAD]", "[UNK]", "[MASK]", "[CLS]", "a"])

    def test_rejects_duplicates(self):
        with pytest.raises(ValueError, match="duplicate"):
            Vocab(["[PAD]", "[MASK]", "[UNK]", "[CLS]", "a", "a"])

    def test_toy_vocab_ships_1000(self):
        v = Vocab.toy()
        assert len(v) == 1000

    def test_file_round_trip(self, tmp_path, vocab):
        path = tmp_path / "v.txt"
        vocab.save(path)
        assert Vocab.from_file(path).tokens == vocab.tokens


class TestTokenize:
    def test_whole_word_hit(self, vocab):
        assert tokenize("table", vocab) == [vocab.id("table")]

    def test_greedy_longest_match(self, vocab):
        # hand oracle: "tables" -> longest prefix "table", then "##s"
        assert tokenize("tables", vocab) == [vocab.id("table"), vocab.id("##s")]

    def test_unknown_symbol(self, vocab):
        assert tokenize("é", vocab) == [UNK_ID]

    def test_lowercases(self, vocab):
        assert tokenize("TABLE", vocab) == [vocab.id("table")]

    def test_round_trip_in_vocab(self, vocab):
        for word in ("abc", "tables", "the"):
            assert detokenize(tokenize(word, vocab), vocab) == word

    def test_prefers_whole_word_over_pieces(self, vocab):
        assert tokenize("abc", vocab) == [vocab.id("abc")]


class TestSplitWordBox:
    def test_equal_split(self):
        assert split_word_box((0, 0, 32, 10), 2) == [(0, 0, 16, 10), (16, 0, 32, 10)]

    def test_single(self):
        assert split_word_box((3, 4, 9, 8), 1) == [(3, 4, 9, 8)]

    def test_remainder_to_last(self):
        boxes = split_word_box((0, 0, 10, 5), 3)
        assert [b[2] - b[0] for b in boxes] == [3, 3, 4]
        assert boxes[0][0] == 0 and boxes[-1][2] == 10

    def test_degenerate_warns(self):
        with pytest.warns(UserWarning, match="1-px"):
            boxes = split_word_box((0, 0, 2, 5), 4)
        assert all(b[2] - b[0] >= 1 for b in boxes)

    @pytest.mark.parametrize("seed", range(20))
    def test_tiling_property(self, seed):
        rng = np.random.default_rng(seed)
        x0 = int(rng.integers(0, 50))
        w = int(rng.integers(1, 60))
        n = int(rng.integers(1, min(w, 8) + 1))
        boxes = split_word_box((x0, 0, x0 + w, 7), n)
        # union == input, pairwise disjoint, left-to-right
        assert boxes[0][0] == x0 and boxes[-1][2] == x0 + w
        for a, b in zip(boxes, boxes[1:]):
            assert a[2] == b[0]
        assert sum(b[2] - b[0] for b in boxes) == w


class TestOcrPage:
    def test_zero_words_valid(self, tmp_path, vocab):
        path = tmp_path / "p.json"
        path.write_text(json.dumps({"page": {"h": 20, "w": 30}, "words": []}))
        page = load_ocr_page(str(path), vocab)
        assert page.tokens == () and page.page_h == 20

    def test_subtokens_from_split(self, tmp_path, vocab):
        path = tmp_path / "p.json"
        path.write_text(json.dumps(
            {"page": {"h": 20, "w": 40},
             "words": [{"text": "abb", "box": [0, 0, 30, 10]}]}))
        page = load_ocr_page(str(path), vocab)
        # "abb" -> a, ##b, ##b: 3 sub-tokens of width 10
        assert len(page.tokens) == 3
        assert all(t.box[2] - t.box[0] == 10 for t in page.tokens)

    def test_box_clamped(self, tmp_path, vocab):
        path = tmp_path / "p.json"
        path.write_text(json.dumps(
            {"page": {"h": 10, "w": 10},
             "words": [{"text": "a", "box": [-5, 2, 40, 50]}]}))
        page = load_ocr_page(str(path), vocab)
        assert page.words[0].box == (0, 2, 10, 10)

    def test_missing_field_named(self, tmp_path, vocab):
        path = tmp_path / "p.json"
        path.write_text(json.dumps({"page": {"h": 10}, "words": []}))
        with pytest.raises(ValueError, match="'w'"):
            load_ocr_page(str(path), vocab)

    def test_malformed_json(self, tmp_path, vocab):
        path = tmp_path / "p.json"
        path.write_text("{nope")
        with pytest.raises(ValueError, match="malformed"):
            load_ocr_page(str(path), vocab)

    def test_save_load_round_trip(self, tmp_path, vocab):
        words = (Word("abc", (2, 2, 12, 6)), Word("the", (14, 2, 24, 6)))
        from vgt.doc import DocPage
        page = DocPage(page_h=30, page_w=30, words=words,
                       tokens=derive_tokens(words, vocab),
                       image=np.full((30, 30, 3), 255, np.uint8),
                       segments=group_segments(words))
        path = tmp_path / "q.json"
        save_ocr_page(str(path), page)
        page2 = load_ocr_page(str(path), vocab)
        assert page2.words == words
        assert page2.tokens == page.tokens
        assert page2.segments == page.segments

    def test_subtoken_boxes_tile_word(self, vocab):
        words = (Word("abcbc", (3, 1, 20, 5)),)
        tokens = derive_tokens(words, vocab)
        total = sum(t.box[2] - t.box[0] for t in tokens)
        assert total == 17
        for a, b in zip(tokens, tokens[1:]):
            assert a.box[2] == b.box[0]


class TestSegments:
    def test_one_line(self):
        words = (Word("aa", (0, 0, 8, 4)), Word("bb", (10, 0, 18, 4)))
        segs = group_segments(words)
        assert len(segs) == 1
        assert segs[0] == ("aa bb", (0, 0, 18, 4))

    def test_two_lines_by_vertical_gap(self):
        words = (Word("aa", (0, 0, 8, 4)), Word("bb", (0, 10, 8, 14)))
        assert len(group_segments(words)) == 2

    def test_wide_gap_splits(self):
        words = (Word("aa", (0, 0, 8, 4)), Word("bb", (40, 0, 48, 4)))
        assert len(group_segments(words)) == 2


class TestCoco:
    def _fixture(self, tmp_path):
        raw = {
            "images": [{"id": 1, "file_name": "a.png", "width": 50, "height": 40},
                       {"id": 2, "file_name": "b.png", "width": 50, "height": 40},
                       {"id": 5, "file_name": "c.png", "width": 50, "height": 40}],
            "categories": [{"id": 7, "name": "x"}, {"id": 3, "name": "y"}],
            "annotations": [
                {"id": 1, "image_id": 1, "category_id": 7, "bbox": [10, 10, 20, 5]},
                {"id": 2, "image_id": 2, "category_id": 3, "bbox": [0, 0, 5, 5]},
            ],
        }
        path = tmp_path / "coco.json"
        path.write_text(json.dumps(raw))
        return str(path)

    def test_bbox_conversion(self, tmp_path):
        ds = coco.load_coco(self._fixture(tmp_path))
        cls, box = ds.images[0].annotations[0]
        assert box == (10, 10, 30, 15)
        # category 3 -> 0, 7 -> 1 (ascending original id)
        assert cls == 1 and ds.class_names == ["y", "x"]

    def test_empty_annotations(self, tmp_path):
        path = tmp_path / "e.json"
        path.write_text(json.dumps({"images": [], "categories": [], "annotations": []}))
        ds = coco.load_coco(str(path))
        assert ds.images == []

    def test_unknown_image_is_error(self, tmp_path):
        raw = {"images": [], "categories": [{"id": 1, "name": "x"}],
               "annotations": [{"id": 1, "image_id": 9, "category_id": 1, "bbox": [0, 0, 1, 1]}]}
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(raw))
        with pytest.raises(ValueError, match="unknown image"):
            coco.load_coco(str(path))

    def test_round_trip_identity(self, tmp_path):
        ds = coco.load_coco(self._fixture(tmp_path))
        out = tmp_path / "rt.json"
        coco.save_coco(str(out), ds)
        ds2 = coco.load_coco(str(out))
        assert ds2.class_names == ds.class_names
        for a, b in zip(ds.images, ds2.images):
            assert a.image_id == b.image_id and a.annotations == b.annotations

    def test_conversion_invertible(self):
        bbox = [3.0, 4.0, 10.0, 6.0]
        assert coco.xyxy_to_xywh(coco.xywh_to_xyxy(bbox)) == bbox


def test_d4la_taxonomy_has_27_names():
    assert len(D4LA_CATEGORIES) == 27
    assert len(set(D4LA_CATEGORIES)) == 27

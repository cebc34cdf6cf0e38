"""Corpus loading, validation, splitting, and detection file round trips."""

import json

import pytest

from scoreforge.corpus import (
    AnnotatedCorpus,
    BBox,
    CorpusError,
    Detection,
    Page,
    Region,
    load_corpus,
    make_splits,
    read_detections,
    validate_corpus,
    write_corpus,
    write_detections,
)

from conftest import build_fixture_corpus, write_pages_only_corpus


def _write(path, payload):
    path.write_text(json.dumps(payload), "utf-8")
    return path


def _minimal(images=(), annotations=(), categories=({"id": 1, "name": "staff"},)):
    return {"images": list(images), "annotations": list(annotations), "categories": list(categories)}


class TestLoad:
    def test_fixture_counts(self, small_corpus_path):
        corpus = load_corpus(small_corpus_path)
        assert len(corpus.pages) == 3
        assert len(corpus.regions()) == 12
        assert corpus.class_names() == ["staff", "text"]

    def test_four_page_fixture(self, tmp_path):
        path = build_fixture_corpus(tmp_path, n_pages=4, width=320, height=240)
        corpus = load_corpus(path)
        assert len(corpus.pages) == 4
        assert len(corpus.regions()) == 16

    def test_empty_annotations(self, tmp_path):
        path = _write(
            tmp_path / "c.json",
            _minimal(images=[{"id": 1, "file_name": "a.png", "width": 10, "height": 10}]),
        )
        corpus = load_corpus(path)
        assert len(corpus.pages) == 1
        assert corpus.regions() == []

    def test_150_page_descriptor(self, tmp_path):
        path = write_pages_only_corpus(tmp_path / "seils_like.json", 150)
        assert len(load_corpus(path).pages) == 150

    def test_malformed_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json", "utf-8")
        with pytest.raises(CorpusError, match="parse"):
            load_corpus(path)

    def test_missing_page_reference(self, tmp_path):
        path = _write(
            tmp_path / "c.json",
            _minimal(
                images=[{"id": 1, "file_name": "a.png", "width": 10, "height": 10}],
                annotations=[{"id": 1, "image_id": 99, "category_id": 1, "bbox": [0, 0, 2, 2]}],
            ),
        )
        with pytest.raises(CorpusError, match="missing page"):
            load_corpus(path)

    def test_missing_category_reference(self, tmp_path):
        path = _write(
            tmp_path / "c.json",
            _minimal(
                images=[{"id": 1, "file_name": "a.png", "width": 10, "height": 10}],
                annotations=[{"id": 1, "image_id": 1, "category_id": 7, "bbox": [0, 0, 2, 2]}],
            ),
        )
        with pytest.raises(CorpusError, match="missing category"):
            load_corpus(path)

    def test_nonpositive_box_rejected(self, tmp_path):
        path = _write(
            tmp_path / "c.json",
            _minimal(
                images=[{"id": 1, "file_name": "a.png", "width": 10, "height": 10}],
                annotations=[{"id": 1, "image_id": 1, "category_id": 1, "bbox": [0, 0, 0, 2]}],
            ),
        )
        with pytest.raises(CorpusError, match="positive"):
            load_corpus(path)

    def test_out_of_bounds_rejected_not_clipped(self, tmp_path):
        path = _write(
            tmp_path / "c.json",
            _minimal(
                images=[{"id": 1, "file_name": "a.png", "width": 10, "height": 10}],
                annotations=[{"id": 1, "image_id": 1, "category_id": 1, "bbox": [5, 0, 8, 2]}],
            ),
        )
        with pytest.raises(CorpusError, match="finding"):
            load_corpus(path)
        # lenient load hands the corpus over for inspection
        assert len(load_corpus(path, validate=False).regions()) == 1


def _corpus(regions_spec, width=100, height=80):
    page = Page(id=1, file_name="p.png", width=width, height=height)
    page.regions = [
        Region(id=rid, page_id=1, class_name=cls, bbox=BBox(*box)) for rid, cls, box in regions_spec
    ]
    return AnnotatedCorpus(pages=[page], categories={1: "staff", 2: "text"})


class TestValidate:
    def test_valid_fixture_empty_report(self, small_corpus_path):
        assert validate_corpus(load_corpus(small_corpus_path)).is_valid

    def test_out_of_bounds_finding(self):
        report = validate_corpus(_corpus([(1, "staff", (95, 0, 10, 5))]))
        assert [f.kind for f in report.findings] == ["out_of_bounds"]

    def test_duplicate_region_id(self):
        report = validate_corpus(_corpus([(1, "staff", (0, 0, 5, 5)), (1, "staff", (10, 10, 5, 5))]))
        assert [f.kind for f in report.findings] == ["duplicate_id"]

    def test_unknown_class(self):
        report = validate_corpus(_corpus([(1, "lyrics", (0, 0, 5, 5))]))
        assert [f.kind for f in report.findings] == ["unknown_class"]


class TestSplits:
    def test_150_pages_seed7(self, tmp_path):
        corpus = load_corpus(write_pages_only_corpus(tmp_path / "c.json", 150))
        plan = make_splits(corpus, seed=7)
        assert sorted(plan.train_subsets) == [1, 2, 4, 8, 16, 32, 64]
        assert len(plan.validation) == 43
        assert len(plan.test) == 43

    def test_66_pages(self, tmp_path):
        corpus = load_corpus(write_pages_only_corpus(tmp_path / "c.json", 66))
        plan = make_splits(corpus, seed=0)
        assert plan.max_train_size == 64
        assert len(plan.validation) == 1
        assert len(plan.test) == 1

    def test_small_corpus_caps_ladder(self, tmp_path):
        corpus = load_corpus(write_pages_only_corpus(tmp_path / "c.json", 5))
        plan = make_splits(corpus, seed=0)
        assert sorted(plan.train_subsets) == [1, 2]
        assert len(plan.validation) == 2  # odd remainder goes to validation
        assert len(plan.test) == 1

    def test_too_small(self, tmp_path):
        corpus = load_corpus(write_pages_only_corpus(tmp_path / "c.json", 2))
        with pytest.raises(CorpusError):
            make_splits(corpus, seed=0)

    def test_determinism(self, tmp_path):
        corpus = load_corpus(write_pages_only_corpus(tmp_path / "c.json", 150))
        assert make_splits(corpus, seed=7) == make_splits(corpus, seed=7)
        assert make_splits(corpus, seed=7) != make_splits(corpus, seed=8)

    def test_partition_and_nesting(self, tmp_path):
        corpus = load_corpus(write_pages_only_corpus(tmp_path / "c.json", 97))
        plan = make_splits(corpus, seed=3)
        top = plan.train_subsets[plan.max_train_size]
        groups = [set(top), set(plan.validation), set(plan.test)]
        assert sum(len(g) for g in groups) == 97
        assert set.union(*groups) == {p.id for p in corpus.pages}
        assert not (groups[0] & groups[1]) and not (groups[0] & groups[2]) and not (groups[1] & groups[2])
        assert abs(len(plan.validation) - len(plan.test)) <= 1
        sizes = sorted(plan.train_subsets)
        for small, big in zip(sizes, sizes[1:]):
            assert big == 2 * small
            assert set(plan.train_subsets[small]) <= set(plan.train_subsets[big])


class TestDetectionsIO:
    CATS = {1: "staff", 2: "text"}

    def test_round_trip_bit_exact(self, tmp_path):
        dets = [
            Detection(1, "staff", BBox(0.125, 7.3, 200.0, 61.0), 0.987654321),
            Detection(1, "text", BBox(3.0, 400.0, 150.5, 42.25), 0.5),
            Detection(2, "staff", BBox(40.0, 90.0, 700.0, 88.0), 1.0),
        ]
        path = tmp_path / "dets.json"
        write_detections(dets, path, self.CATS)
        assert read_detections(path, self.CATS) == dets

    def test_empty_round_trip(self, tmp_path):
        path = tmp_path / "dets.json"
        write_detections([], path, self.CATS)
        assert json.loads(path.read_text()) == []
        assert read_detections(path, self.CATS) == []

    def test_confidence_out_of_range_rejected(self, tmp_path):
        path = _write(
            tmp_path / "dets.json",
            [{"image_id": 1, "category_id": 1, "bbox": [0, 0, 5, 5], "score": 1.5}],
        )
        with pytest.raises(CorpusError, match="confidence"):
            read_detections(path, self.CATS)

    def test_corpus_round_trip(self, small_corpus_path, tmp_path):
        corpus = load_corpus(small_corpus_path)
        out = tmp_path / "rewritten.json"
        write_corpus(corpus, out)
        assert load_corpus(out) == corpus

import json

import numpy as np
import pytest

from crossloc.dataset import (
    Dataset,
    DatasetFormatError,
    GenConfig,
    LocationEntry,
    generate,
    load_jsonl,
    save_jsonl,
    split,
    subset_views,
    truncate_text,
)
from crossloc.numerics import ConfigError, DomainError
from crossloc.text_head import TextTokenSequence

SMALL = GenConfig(grid_rows=3, grid_cols=4, seed=5)


class TestGenerate:
    def test_bit_identical_reruns(self):
        a = generate(SMALL)
        b = generate(SMALL)
        for ea, eb in zip(a.entries, b.entries):
            assert ea.id == eb.id and ea.x_m == eb.x_m and ea.y_m == eb.y_m
            for va, vb in zip(ea.views, eb.views):
                assert va.image.local_tokens.tobytes() == vb.image.local_tokens.tobytes()
                assert va.text.tokens.tobytes() == vb.text.tokens.tobytes()

    def test_grid_count_and_spacing(self):
        ds = generate(GenConfig(grid_rows=10, grid_cols=10, spacing_m=6.0, seed=0))
        assert len(ds.entries) == 100
        coords = np.array([[e.x_m, e.y_m] for e in ds.entries])
        d = np.linalg.norm(coords[:, None] - coords[None, :], axis=2)
        assert d[~np.eye(100, dtype=bool)].min() == pytest.approx(6.0)

    def test_view_and_token_shapes(self):
        ds = generate(SMALL)
        entry = ds.entries[0]
        assert len(entry.views) == SMALL.views
        view = entry.views[0]
        assert view.image.local_tokens.shape == (SMALL.image_tokens, SMALL.image_dim)
        assert view.image.global_token.shape == (SMALL.image_dim,)
        assert view.text.tokens.shape == (SMALL.sentences * SMALL.tokens_per_sentence, SMALL.text_dim)
        assert view.text.sentence_breaks[-1] == view.text.tokens.shape[0]

    def test_different_seeds_differ(self):
        a = generate(SMALL)
        b = generate(GenConfig(grid_rows=3, grid_cols=4, seed=6))
        assert a.entries[0].views[0].text.tokens.tobytes() != b.entries[0].views[0].text.tokens.tobytes()

    def test_distractor_budget_validated(self):
        with pytest.raises(ConfigError):
            GenConfig(image_tokens=4, distractor_tokens=4)


class TestJsonlRoundtrip:
    def test_lossless_roundtrip(self, tmp_path):
        ds = generate(SMALL)
        path = str(tmp_path / "d.jsonl")
        save_jsonl(ds, path)
        loaded = load_jsonl(path)
        assert len(loaded.entries) == len(ds.entries)
        for ea, eb in zip(ds.entries, loaded.entries):
            assert (ea.id, ea.x_m, ea.y_m) == (eb.id, eb.x_m, eb.y_m)
            for va, vb in zip(ea.views, eb.views):
                np.testing.assert_array_equal(va.image.local_tokens, vb.image.local_tokens)
                np.testing.assert_array_equal(va.image.global_token, vb.image.global_token)
                np.testing.assert_array_equal(va.text.tokens, vb.text.tokens)
                assert va.text.sentence_breaks == vb.text.sentence_breaks

    def test_save_load_save_byte_identical(self, tmp_path):
        ds = generate(SMALL)
        p1, p2 = str(tmp_path / "a.jsonl"), str(tmp_path / "b.jsonl")
        save_jsonl(ds, p1)
        save_jsonl(load_jsonl(p1), p2)
        assert open(p1, "rb").read() == open(p2, "rb").read()

    def test_provenance_preserved(self, tmp_path):
        ds = generate(SMALL)
        path = str(tmp_path / "d.jsonl")
        save_jsonl(ds, path)
        assert load_jsonl(path).provenance["generator"]["seed"] == 5

    def test_comment_lines_ignored(self, tmp_path):
        ds = generate(GenConfig(grid_rows=1, grid_cols=1, seed=0))
        path = str(tmp_path / "d.jsonl")
        save_jsonl(ds, path)
        lines = open(path).read().splitlines()
        lines.insert(0, "# exporter: backbone=frozen-encoder-v1")
        path2 = str(tmp_path / "commented.jsonl")
        open(path2, "w").write("\n".join(lines) + "\n")
        assert len(load_jsonl(path2).entries) == 1


class TestJsonlValidation:
    def _records(self, tmp_path):
        ds = generate(GenConfig(grid_rows=1, grid_cols=2, seed=0))
        path = str(tmp_path / "base.jsonl")
        save_jsonl(ds, path)
        return [l for l in open(path).read().splitlines() if not l.startswith("#")]

    def _load_lines(self, tmp_path, lines):
        path = str(tmp_path / "case.jsonl")
        open(path, "w").write("\n".join(lines) + "\n")
        return load_jsonl(path)

    def test_missing_view_rejected_with_line_number(self, tmp_path):
        lines = self._records(tmp_path)
        record = json.loads(lines[3])
        del record["view"]
        lines[3] = json.dumps(record)
        with pytest.raises(DatasetFormatError, match="line 4"):
            self._load_lines(tmp_path, lines)

    def test_invalid_json_rejected_with_line_number(self, tmp_path):
        lines = self._records(tmp_path)
        lines[2] = lines[2][:-5]
        with pytest.raises(DatasetFormatError, match="line 3"):
            self._load_lines(tmp_path, lines)

    def test_mixed_image_dims_rejected(self, tmp_path):
        lines = self._records(tmp_path)
        record = json.loads(lines[-2])
        assert record["modality"] == "image"
        record["tokens"] = [row + [0.0] for row in record["tokens"]]
        lines[-2] = json.dumps(record)
        with pytest.raises(DatasetFormatError, match="token dim"):
            self._load_lines(tmp_path, lines)

    def test_missing_modality_pair_rejected(self, tmp_path):
        lines = self._records(tmp_path)
        dropped = [l for l in lines if not (json.loads(l)["location_id"] == "loc0001"
                                            and json.loads(l)["view"] == 2
                                            and json.loads(l)["modality"] == "text")]
        with pytest.raises(DatasetFormatError, match="both an image and a text"):
            self._load_lines(tmp_path, dropped)

    def test_bad_view_index_rejected(self, tmp_path):
        lines = self._records(tmp_path)
        record = json.loads(lines[0])
        record["view"] = 7
        lines[0] = json.dumps(record)
        with pytest.raises(DatasetFormatError, match="view"):
            self._load_lines(tmp_path, lines)

    def test_inconsistent_coords_rejected(self, tmp_path):
        lines = self._records(tmp_path)
        record = json.loads(lines[1])
        record["x_m"] += 1.0
        lines[1] = json.dumps(record)
        with pytest.raises(DatasetFormatError, match="coordinates"):
            self._load_lines(tmp_path, lines)


class TestSplit:
    def test_70_locations_split_5_1_1(self):
        ds = generate(GenConfig(grid_rows=7, grid_cols=10, seed=1))
        out = split(ds, seed=3)
        counts = {name: len(out.split_entries(name)) for name in ("train", "val", "test")}
        assert counts == {"train": 50, "val": 10, "test": 10}

    def test_default_desk_scale_split(self):
        ds = generate(GenConfig(seed=0))
        out = split(ds, seed=0)
        assert len(out.split_entries("train")) == 230
        assert len(out.split_entries("val")) == 46
        assert len(out.split_entries("test")) == 46

    def test_same_seed_same_partition(self):
        ds = generate(GenConfig(grid_rows=3, grid_cols=7, seed=2))
        assert split(ds, seed=9).splits == split(ds, seed=9).splits

    def test_partition_is_exact(self):
        ds = generate(GenConfig(grid_rows=3, grid_cols=7, seed=2))
        out = split(ds, seed=4)
        ids = [e.id for e in ds.entries]
        labeled = [out.splits[i] for i in ids]
        assert len(labeled) == len(ids)
        assert set(out.splits) == set(ids)

    def test_too_few_locations_rejected(self):
        ds = generate(GenConfig(grid_rows=1, grid_cols=2, seed=0))
        with pytest.raises(ConfigError):
            split(ds, seed=0)

    def test_ratio_validation(self):
        ds = generate(GenConfig(grid_rows=3, grid_cols=4, seed=0))
        with pytest.raises(ConfigError):
            split(ds, ratios=(0.5, 0.5, 0.5), seed=0)


class TestTruncateText:
    def _seq(self):
        return TextTokenSequence(np.arange(16.0).reshape(8, 2), (3, 8))

    def test_full_fraction_identity(self):
        seq = self._seq()
        out = truncate_text(seq, 1.0)
        np.testing.assert_array_equal(out.tokens, seq.tokens)
        assert out.sentence_breaks == seq.sentence_breaks

    def test_quarter_keeps_ceiling(self):
        out = truncate_text(self._seq(), 0.25)
        assert out.tokens.shape[0] == 2
        assert out.sentence_breaks == (2,)

    def test_half_recomputes_breaks(self):
        # 8 tokens, breaks (3, 8): keeping 4 cuts the second sentence
        out = truncate_text(self._seq(), 0.5)
        assert out.tokens.shape[0] == 4
        assert out.sentence_breaks == (3, 4)

    def test_bad_fraction_rejected(self):
        with pytest.raises(DomainError):
            truncate_text(self._seq(), 0.0)


class TestSubsetViews:
    def test_identity_at_full_count(self):
        entry = generate(SMALL).entries[0]
        assert subset_views(entry, 4) is not entry
        assert len(subset_views(entry, 4).views) == 4

    def test_single_view(self):
        entry = generate(SMALL).entries[0]
        out = subset_views(entry, 1)
        assert len(out.views) == 1
        assert out.views[0] is entry.views[0]

    def test_out_of_range_rejected(self):
        entry = generate(SMALL).entries[0]
        with pytest.raises(DomainError):
            subset_views(entry, 5)

"""Tests for the synthetic corpus generator."""

from unittest import mock

import numpy as np
import pytest

from delivery_triage import generator
from delivery_triage.datasets import filter_for_training, summarize
from delivery_triage.generator import (
    DAMAGE_CLASS,
    TABLE_WEIGHTS,
    GeneratorConfig,
    _apply_typos,
    _build_text_spec,
    generate_synthetic,
)
from delivery_triage.numerics import seeded_rng
from delivery_triage.ppm import read_ppm


@pytest.fixture(scope="module")
def text_corpus_10k():
    return generate_synthetic(GeneratorConfig(n_text=10_000, seed=42))


class TestTextSpec:
    def test_default_weights_sum_to_100(self):
        assert sum(TABLE_WEIGHTS.values()) == pytest.approx(100.0)
        assert len(TABLE_WEIGHTS) == 10

    def test_lexicons_disjoint_by_default(self):
        lexicons, _ = _build_text_spec(overlap=False)
        seen: dict[str, str] = {}
        for label, words in lexicons.items():
            for w in words:
                assert w not in seen, f"{w!r} serves both {seen.get(w)!r} and {label!r}"
                seen[w] = label

    def test_overlap_mode_shares_one_lexicon(self):
        lexicons, clauses = _build_text_spec(overlap=True)
        assert lexicons["Late Delivery"] == lexicons["Not Received"]
        assert clauses["Late Delivery"] == clauses["Not Received"]

    def test_collision_detected_at_build_time(self):
        rigged = {k: list(v) for k, v in generator._LEXICONS.items()}
        rigged["Wrong Address"] = ["late"]  # collides with Late Delivery
        with mock.patch.object(generator, "_LEXICONS", rigged):
            with pytest.raises(AssertionError, match="share"):
                _build_text_spec(overlap=False)

    def test_filler_leak_detected(self):
        rigged = {k: list(v) for k, v in generator._LEXICONS.items()}
        rigged["Shipping Charges"] = ["tracking"]  # appears in a filler phrase
        with mock.patch.object(generator, "_LEXICONS", rigged):
            with pytest.raises(AssertionError, match="filler"):
                _build_text_spec(overlap=False)


class TestTypos:
    def test_deterministic_per_seed(self):
        text = "the box arrived crushed and dented" * 10
        assert _apply_typos(text, seeded_rng(5)) == _apply_typos(text, seeded_rng(5))

    def test_long_text_gets_perturbed(self):
        text = "a" * 2000
        noisy = _apply_typos(text, seeded_rng(5))
        assert noisy != text
        # 2% of 2000 chars mutate; length shifts stay well under 10%
        assert 1800 < len(noisy) < 2200


class TestTextRecords:
    def test_damage_class_count_within_sampling_tolerance(self, text_corpus_10k):
        counts = summarize(text_corpus_10k).counts
        assert 3448 <= counts[DAMAGE_CLASS] <= 3848

    def test_survivor_fraction_after_filtering(self, text_corpus_10k):
        survivors = filter_for_training(text_corpus_10k)
        expected = (1.0 - 0.0716 - 0.0837) * 10_000
        assert abs(len(survivors) - expected) <= 100

    def test_unknown_records_have_empty_comments(self, text_corpus_10k):
        unknowns = [r for r in text_corpus_10k if r.label == "Unknown"]
        assert unknowns, "distribution should produce Unknown records"
        assert all(r.comment == "" for r in unknowns)

    def test_ids_unique_and_ordered(self, text_corpus_10k):
        ids = [r.id for r in text_corpus_10k]
        assert len(set(ids)) == len(ids)
        assert ids[0] == "text-00000"

    def test_same_seed_same_records(self):
        config = GeneratorConfig(n_text=200, seed=9)
        assert generate_synthetic(config) == generate_synthetic(config)

    def test_custom_weights_respected(self):
        config = GeneratorConfig(
            n_text=500, seed=1, class_weights={"Late Delivery": 50.0, "Wrong Address": 50.0}
        )
        counts = summarize(generate_synthetic(config)).counts
        assert set(counts) == {"Late Delivery", "Wrong Address"}
        assert abs(counts["Late Delivery"] - 250) < 60


class TestImageRecords:
    def test_run_twice_byte_identical_images(self, tmp_path):
        dirs = [tmp_path / "a", tmp_path / "b"]
        for d in dirs:
            generate_synthetic(GeneratorConfig(n_images=100, seed=77, out_dir=str(d)))
        for i in range(100):
            name = f"images/img-{i:05d}.ppm"
            assert (dirs[0] / name).read_bytes() == (dirs[1] / name).read_bytes()

    def test_families_and_metadata(self, tmp_path):
        records = generate_synthetic(GeneratorConfig(n_images=100, seed=3, out_dir=str(tmp_path)))
        by_family: dict[str, int] = {}
        for r in records:
            by_family[r.image_label] = by_family.get(r.image_label, 0) + 1
            assert r.image_path is not None and not r.image_path.startswith("/")
            assert (tmp_path / r.image_path).exists()
            assert r.comment, "image records carry comments for fusion experiments"
            if r.image_label == "damaged":
                assert r.label == DAMAGE_CLASS
                assert r.damage_box is not None
            else:
                assert r.damage_box is None
        assert set(by_family) == {"damaged", "not_damaged", "irrelevant"}

    def test_damage_box_bounds_and_dark_tear_pixels(self, tmp_path):
        records = generate_synthetic(GeneratorConfig(n_images=60, seed=21, out_dir=str(tmp_path)))
        damaged = [r for r in records if r.image_label == "damaged"]
        assert damaged
        for r in damaged:
            box = r.damage_box
            assert 0 <= box.x and 0 <= box.y
            assert box.x + box.width <= 64 and box.y + box.height <= 64
            pixels = read_ppm(tmp_path / r.image_path)
            window = pixels[box.y : box.y + box.height, box.x : box.x + box.width]
            dark = np.all(window <= 60.5 / 255.0, axis=-1)
            assert dark.any(), f"{r.id}: no tear pixel inside its damage_box"

    def test_intact_packages_have_no_tear_dark_pixels(self, tmp_path):
        records = generate_synthetic(GeneratorConfig(n_images=60, seed=22, out_dir=str(tmp_path)))
        intact = [r for r in records if r.image_label == "not_damaged"]
        assert intact
        for r in intact:
            pixels = read_ppm(tmp_path / r.image_path)
            dark = np.all(pixels <= 60.5 / 255.0, axis=-1)
            assert not dark.any()

    def test_unwritable_out_dir_raises(self, tmp_path):
        blocker = tmp_path / "blocker"
        blocker.write_text("a file, not a directory")
        config = GeneratorConfig(n_images=1, seed=0, out_dir=str(blocker / "sub"))
        with pytest.raises(OSError, match="not writable"):
            generate_synthetic(config)


class TestOverlapMode:
    def test_confusable_pair_shares_vocabulary(self):
        config = GeneratorConfig(n_text=2000, seed=6, overlap_late_not_received=True)
        records = generate_synthetic(config)
        late_words = {
            w for r in records if r.label == "Late Delivery" for w in r.comment.lower().split()
        }
        nr_words = {
            w for r in records if r.label == "Not Received" for w in r.comment.lower().split()
        }
        shared_keywords = {"waiting", "stuck", "nowhere", "unfulfilled"}
        assert shared_keywords & late_words
        assert shared_keywords & nr_words

    def test_default_mode_keeps_pair_separable(self):
        records = generate_synthetic(GeneratorConfig(n_text=2000, seed=6))
        late = " ".join(r.comment for r in records if r.label == "Late Delivery")
        for w in ("missing", "lost", "undelivered", "vanished"):
            assert w not in late.split()

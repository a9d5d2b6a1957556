"""Dataset layer: attributes, renderer, grammar, sketch, dataset build."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from latentface.toyfaces import (
    AttributeVector,
    DISCRETE_DOMAINS,
    GrammarError,
    PART_IDS,
    build_dataset,
    DatasetConfig,
    describe,
    extract_label_map,
    extract_sketch,
    glasses_bbox,
    load_manifest,
    parse_text,
    query_contradicts,
    render,
    sample_attributes,
)
from latentface.toyfaces.renderer import background_color, part_color_family

LUMA = np.array([0.299, 0.587, 0.114])


def label_boundary(lab):
    bnd = np.zeros(lab.shape, bool)
    bnd[:-1] |= lab[:-1] != lab[1:]
    bnd[1:] |= lab[1:] != lab[:-1]
    bnd[:, :-1] |= lab[:, :-1] != lab[:, 1:]
    bnd[:, 1:] |= lab[:, 1:] != lab[:, :-1]
    return bnd


def dilate(mask):
    out = mask.copy()
    for sx in (-1, 0, 1):
        for sy in (-1, 0, 1):
            out |= np.roll(np.roll(mask, sx, 0), sy, 1)
    return out


class TestSampleAttributes:
    def test_deterministic(self):
        assert sample_attributes(7) == sample_attributes(7)

    def test_small_scale_distinct(self):
        assert len({str(sample_attributes(s)) for s in range(10)}) >= 2

    def test_uniform_within_binomial_bound(self):
        # 3 sigma binomial bound per enum value over n draws.
        n = 10_000
        draws = [sample_attributes(s) for s in range(n)]
        for slot, domain in DISCRETE_DOMAINS.items():
            p = 1.0 / len(domain)
            sigma = np.sqrt(n * p * (1 - p))
            for value in domain:
                count = sum(1 for d in draws if d.value(slot) == value)
                assert abs(count - n * p) <= 3 * sigma, (slot, value, count)
        hues = np.array([d.background_hue for d in draws])
        assert 0 <= hues.min() and hues.max() < 1
        assert abs(hues.mean() - 0.5) < 3 * (1 / np.sqrt(12 * n))

    def test_validation(self):
        with pytest.raises(ValueError):
            AttributeVector("feminine", "light", "black", "long", "none", "neutral", "none", 1.0)
        with pytest.raises(ValueError):
            AttributeVector("x", "light", "black", "long", "none", "neutral", "none", 0.5)


class TestRender:
    def test_deterministic_bitwise(self):
        a = sample_attributes(3)
        img1 = render(a, 32, 11)
        img2 = render(a, 32, 11)
        assert np.array_equal(img1, img2)

    def test_range_and_shape(self):
        a = sample_attributes(4)
        for res in (32, 64):
            img = render(a, res, 1)
            assert img.shape == (res, res, 3)
            assert img.min() >= 0 and img.max() <= 1

    def test_unsupported_resolution(self):
        with pytest.raises(ValueError):
            render(sample_attributes(0), 48, 0)

    def test_glasses_toggle_localized(self):
        for seed in range(25):
            a = sample_attributes(seed)
            d = a.to_dict()
            d["glasses"] = "none" if a.glasses == "glasses" else "glasses"
            b = AttributeVector.from_dict(d)
            diff = np.abs(render(a, 32, seed) - render(b, 32, seed)).sum(axis=2) > 1e-6
            y0, y1, x0, x1 = glasses_bbox(32, seed)
            outside = diff.copy()
            outside[y0:y1, x0:x1] = False
            assert not outside.any()
            assert diff[y0:y1, x0:x1].any()

    def test_bald_has_no_hair_pixels(self):
        found = 0
        for seed in range(60):
            a = sample_attributes(seed)
            if a.hair_length != "bald":
                continue
            found += 1
            assert (extract_label_map(a, 32, seed) == PART_IDS["hair"]).sum() == 0
        assert found > 0

    def test_jitter_moves_at_most_two_pixels(self):
        a = sample_attributes(1)
        base = extract_label_map(a, 32, 0) != PART_IDS["background"]
        ys, xs = np.nonzero(base)
        c0 = np.array([ys.mean(), xs.mean()])
        for seed in (1, 2, 3):
            moved = extract_label_map(a, 32, seed) != PART_IDS["background"]
            ys, xs = np.nonzero(moved)
            assert np.abs(np.array([ys.mean(), xs.mean()]) - c0).max() <= 2.0


class TestLabelMap:
    def test_every_pixel_has_one_id(self):
        a = sample_attributes(5)
        lab = extract_label_map(a, 32, 5)
        assert set(np.unique(lab)) <= set(PART_IDS.values())

    def test_no_glasses_id_without_glasses(self):
        for seed in range(40):
            a = sample_attributes(seed)
            if a.glasses == "none":
                assert (extract_label_map(a, 32, seed) == PART_IDS["glasses"]).sum() == 0

    def test_hat_above_hair_centroid(self):
        found = 0
        for seed in range(120):
            a = sample_attributes(seed)
            if a.hat != "hat" or a.hair_length == "bald":
                continue
            found += 1
            lab = extract_label_map(a, 32, seed)
            hat_ys = np.nonzero(lab == PART_IDS["hat"])[0]
            hair_ys = np.nonzero(lab == PART_IDS["hair"])[0]
            assert hat_ys.max() < hair_ys.mean()
        assert found >= 5

    def test_image_label_color_consistency(self):
        # >=90% of each part's pixels must be a >=50% blend of that part's
        # assigned color with some other palette color (antialiasing slack).
        def seg_dist(pts, a, b):
            ab = b - a
            t = np.clip(((pts - a) @ ab) / ((ab * ab).sum() + 1e-12), 0, 1)
            return np.linalg.norm(pts - (a + t[:, None] * ab[None, :]), axis=1)

        for seed in range(40):
            attrs = sample_attributes(seed)
            img = render(attrs, 32, seed)
            lab = extract_label_map(attrs, 32, seed)
            fam = part_color_family(attrs)
            bases = [c for colors in fam.values() for c in colors]
            for pid, colors in fam.items():
                m = lab == pid
                if not m.any():
                    continue
                pts = img[m].astype(np.float64)
                dmin = np.full(len(pts), np.inf)
                for base in colors:
                    for other in bases:
                        mid = (np.asarray(base) + np.asarray(other)) / 2
                        dmin = np.minimum(dmin, seg_dist(pts, np.asarray(base, float), mid))
                assert (dmin <= 0.10).mean() >= 0.9, (seed, pid)


class TestSketch:
    def test_constant_image_all_zero(self):
        assert extract_sketch(np.full((32, 32, 3), 0.5)).sum() == 0

    def test_quantile_one_all_zero(self):
        a = sample_attributes(2)
        assert extract_sketch(render(a, 32, 2), quantile=1.0).sum() == 0

    def test_sound_wrt_label_boundaries(self):
        for seed in range(50):
            a = sample_attributes(seed)
            sk = extract_sketch(render(a, 32, seed)).astype(bool)
            near = dilate(label_boundary(extract_label_map(a, 32, seed)))
            assert not (sk & ~near).any(), seed

    def test_marks_face_outline(self):
        # Where face/background luma contrast is non-negligible, the sketch
        # lands on the exposed face boundary; a small allowance for images
        # whose other parts dominate the gradient budget.
        present = total = 0
        coverages = []
        for seed in range(250):
            a = sample_attributes(seed)
            fam = part_color_family(a)
            contrast = abs(float(fam[PART_IDS["skin"]][0] @ LUMA)
                           - float(np.asarray(background_color(a.background_hue)) @ LUMA))
            if contrast < 0.15:
                continue
            total += 1
            lab = extract_label_map(a, 32, seed)
            outline = np.zeros(lab.shape, bool)
            for ax, sh in [(0, 1), (0, -1), (1, 1), (1, -1)]:
                outline |= (lab == PART_IDS["skin"]) & (np.roll(lab, sh, axis=ax) == PART_IDS["background"])
            sk = dilate(extract_sketch(render(a, 32, seed)).astype(bool))
            hits = (sk & outline).sum()
            present += hits > 0
            coverages.append(hits / outline.sum())
        assert total >= 80
        assert present / total >= 0.95
        assert np.mean(coverages) >= 0.5


class TestGrammar:
    def test_default_count_is_ten(self):
        texts = describe(sample_attributes(9))
        assert len(texts) == 10
        assert len(set(texts)) == 10

    def test_deterministic_per_seed(self):
        a = sample_attributes(3)
        assert describe(a, 10, seed=4) == describe(a, 10, seed=4)
        assert describe(a, 10, seed=4) != describe(a, 10, seed=5)

    def test_each_sentence_mentions_two_attributes(self):
        for seed in range(20):
            a = sample_attributes(seed)
            for s in describe(a, 10, seed=seed):
                assert len(parse_text(s)) >= 2, s

    def test_blonde_and_glasses_cooccur(self):
        d = sample_attributes(0).to_dict()
        d.update(hair_color="blonde", glasses="glasses", hair_length="long")
        a = AttributeVector.from_dict(d)
        texts = describe(a, 10, seed=1)
        assert any(
            parse_text(t).get("hair_color") == "blonde" and parse_text(t).get("glasses") == "glasses"
            for t in texts
        )

    def test_count_too_large_raises(self):
        with pytest.raises(GrammarError):
            describe(sample_attributes(1), 10_000, seed=0)

    def test_roundtrip_never_contradicts(self):
        # 100 attribute draws x 10 sentences each.
        for seed in range(100):
            a = sample_attributes(seed)
            for s in describe(a, 10, seed=seed):
                assert not query_contradicts(parse_text(s), a), s

    def test_parse_examples(self):
        q = parse_text("she has long blonde hair")
        assert q == {
            "gender_presentation": "feminine",
            "hair_length": "long",
            "hair_color": "blonde",
        }
        assert parse_text("") == {}
        assert parse_text("xylophone qwerty") == {}
        assert parse_text("not smiling")["smile"] == "neutral"
        assert parse_text("no glasses")["glasses"] == "none"
        assert parse_text("add glasses")["glasses"] == "glasses"
        assert parse_text("grey hair")["hair_color"] == "gray"

    @given(st.text(max_size=60))
    @settings(max_examples=200, deadline=None)
    def test_parse_total_on_arbitrary_text(self, text):
        q = parse_text(text)
        for slot, value in q.items():
            assert value in DISCRETE_DOMAINS[slot]


class TestBuildDataset:
    def test_split_and_rebuild_hash(self, tmp_path):
        cfg = DatasetConfig(size=10, resolution=32, seed=77)
        m1 = build_dataset(cfg, tmp_path / "d1")
        assert len(m1.train) == 8 and len(m1.test) == 2
        m2 = build_dataset(cfg, tmp_path / "d2")
        assert m1.content_hash() == m2.content_hash()

    def test_single_sample_floor_rule(self, tmp_path):
        m = build_dataset(DatasetConfig(size=1, seed=5), tmp_path / "one")
        assert len(m.train) == 1 and len(m.test) == 0

    def test_manifest_roundtrip(self, tmp_path):
        cfg = DatasetConfig(size=6, seed=3)
        m = build_dataset(cfg, tmp_path / "d")
        loaded = load_manifest(tmp_path / "d")
        assert loaded.content_hash() == m.content_hash()
        s = loaded.samples[0]
        img = s.load_image()
        assert img.shape == (32, 32, 3) and img.dtype == np.float32
        assert s.load_sketch().shape == (32, 32)
        assert set(np.unique(s.load_label_map())) <= set(PART_IDS.values())
        # stored image equals render quantized to uint8
        direct = render(s.attrs, 32, s.jitter_seed)
        assert np.abs(img - direct).max() <= (0.5 / 255) + 1e-6

    def test_ten_texts_each(self, tmp_path):
        m = build_dataset(DatasetConfig(size=3, seed=9), tmp_path / "d")
        for s in m.samples:
            assert len(s.texts) == 10 and len(set(s.texts)) == 10

import math

import numpy as np
import pytest

from infoleak.errors import DataFormatError, InvalidParameterError, ShapeMismatchError
from infoleak.estimators import TideModel, TrainConfig
from infoleak.mechanism import MechanismConfig
from infoleak.pipelines import (
    SyntheticSpec,
    gen_gaussian_pairs,
    load_csv_dataset,
    synthetic_bench,
    write_csv_dataset,
)
from infoleak.pipelines.images import (
    PatchSpec,
    RasterImage,
    features_to_image,
    image_to_features,
    load_image_dir,
    obfuscate_image,
    planted_patches,
    read_pnm,
    save_image_dir,
    synthetic_face_gen,
    write_pnm,
)
from infoleak.pipelines.text import (
    Corpus,
    planted_corpus,
    read_labeled_text,
    score_terms,
    tokenize,
    tokenize_bow,
    train_text_tide,
    write_labeled_text,
)


class TestPatches:
    def test_four_patches(self, rng):
        img = RasterImage(rng.random((64, 64)))
        assert image_to_features(img, PatchSpec(32)).shape == (4, 1024)

    def test_single_patch_is_flat_image(self, rng):
        img = RasterImage(rng.random((64, 64)))
        f = image_to_features(img, PatchSpec(64))
        assert np.array_equal(f[0], img.pixels.ravel())

    @pytest.mark.parametrize("p", [1, 4, 16, 32])
    def test_reassembly_exact(self, rng, p):
        img = RasterImage(rng.random((64, 64)))
        back = features_to_image(image_to_features(img, PatchSpec(p)), PatchSpec(p), 64, 64)
        assert np.array_equal(back, img.pixels)

    def test_colour_reassembly(self, rng):
        img = RasterImage(rng.random((32, 16, 3)))
        back = features_to_image(image_to_features(img, PatchSpec(8)), PatchSpec(8), 32, 16, 3)
        assert np.array_equal(back, img.pixels)

    def test_raster_order(self):
        px = np.zeros((4, 4))
        px[0:2, 2:4] = 1.0
        f = image_to_features(RasterImage(px), PatchSpec(2))
        assert f.sum(axis=1).tolist() == [0, 4, 0, 0]

    def test_non_dividing_patch(self, rng):
        with pytest.raises(InvalidParameterError):
            image_to_features(RasterImage(rng.random((64, 64))), PatchSpec(24))

    def test_planted_patches(self):
        assert planted_patches(PatchSpec(16)) == [9, 10, 13, 14]
        assert planted_patches(PatchSpec(32)) == []


class TestPnm:
    def test_round_trip_is_bit_exact(self, tmp_path, rng):
        img = RasterImage(rng.integers(0, 256, (10, 7)) / 255.0)
        write_pnm(tmp_path / "a.pgm", img)
        back = read_pnm(tmp_path / "a.pgm")
        assert np.array_equal(back.pixels, img.pixels)
        write_pnm(tmp_path / "b.pgm", back)
        assert (tmp_path / "a.pgm").read_bytes() == (tmp_path / "b.pgm").read_bytes()

    def test_ppm(self, tmp_path, rng):
        img = RasterImage(rng.integers(0, 256, (4, 5, 3)) / 255.0)
        write_pnm(tmp_path / "c.ppm", img)
        assert np.array_equal(read_pnm(tmp_path / "c.ppm").pixels, img.pixels)

    def test_garbage(self, tmp_path):
        (tmp_path / "x.pgm").write_bytes(b"hello")
        with pytest.raises(DataFormatError):
            read_pnm(tmp_path / "x.pgm")

    def test_pixel_range(self):
        with pytest.raises(InvalidParameterError):
            RasterImage(np.full((2, 2), 1.5))


class TestFaces:
    def test_shapes_and_determinism(self):
        a, la = synthetic_face_gen(100, 3)
        b, lb = synthetic_face_gen(100, 3)
        assert a.shape == (100, 64, 64) and a.min() >= 0 and a.max() <= 1
        assert np.array_equal(a, b) and np.array_equal(la, lb)

    def test_attribute_only_in_planted_block(self):
        imgs, labels = synthetic_face_gen(2000, 0)
        diff = np.abs(imgs[labels == 1].mean(0) - imgs[labels == 0].mean(0))
        inside = np.zeros_like(diff, dtype=bool)
        inside[32:64, 16:48] = True
        assert diff[inside].max() > 0.1
        assert diff[~inside].max() < 0.02

    def test_directory_round_trip(self, tmp_path):
        imgs, labels = synthetic_face_gen(100, 1)
        imgs = np.rint(imgs * 255) / 255
        save_image_dir(tmp_path, imgs, labels)
        back, lb = load_image_dir(tmp_path)
        assert np.array_equal(back, imgs) and np.array_equal(lb, labels)


class TestObfuscateImage:
    @pytest.fixture
    def model(self, rng):
        m = TideModel([4], 5.0, n_features=4, feature_dim=1024, prefix_mask_supported=True).initialize(rng)
        m.theta[:] = rng.normal(0, 0.5, m.n_params)
        return m

    def test_infinite_eps_passes_through(self, model, rng):
        img = RasterImage(rng.random((64, 64)))
        cfg = MechanismConfig(math.inf, 0.5, 4, 1.0, 1.0)
        raw, display, heat, report = obfuscate_image(img, model, cfg, PatchSpec(32), 0)
        assert report.leaking == []
        assert np.array_equal(raw, img.pixels)
        assert np.array_equal(display.pixels, img.pixels)

    def test_same_seed_same_output(self, model, rng):
        img = RasterImage(rng.random((64, 64)))
        cfg = MechanismConfig(0.0, 0.5, 4, 1.0, 0.3)
        a = obfuscate_image(img, model, cfg, PatchSpec(32), 9)
        b = obfuscate_image(img, model, cfg, PatchSpec(32), 9)
        assert a[3].leaking
        assert np.array_equal(a[0], b[0])
        assert not np.array_equal(a[0], img.pixels)

    def test_display_is_clamped_raw_is_not(self, model, rng):
        img = RasterImage(rng.random((64, 64)))
        raw, display, _, _ = obfuscate_image(img, model, MechanismConfig(0.0, 0.5, 4, 1.0, 3.0), PatchSpec(32), 1)
        assert raw.min() < 0 or raw.max() > 1
        assert display.pixels.min() >= 0 and display.pixels.max() <= 1

    def test_shape_mismatch(self, model, rng):
        with pytest.raises(ShapeMismatchError):
            obfuscate_image(RasterImage(rng.random((64, 64))), model, MechanismConfig(1.0, 0.5, 4, 1.0, 1.0),
                            PatchSpec(16), 0)


class TestText:
    def test_tokenize_rules(self):
        text = "Café RULES!! see https://x.co/abc @bob #Winning a b2"
        assert tokenize(text) == ["cafe", "rules", "see", "winning", "b2"]

    def test_identical_documents(self):
        c = tokenize_bow(["aa bb aa", "aa bb aa", "cc"], 3)
        assert np.array_equal(c.counts[0], c.counts[1])

    def test_vocab_size_one(self):
        c = tokenize_bow(["aa bb aa", "bb aa", "aa cc"], 1)
        assert c.vocabulary == ["aa"]
        assert c.counts[:, 0].tolist() == [2, 1, 1]

    def test_tie_breaks_alphabetically(self):
        assert tokenize_bow(["zz yy", "yy zz"], 2).vocabulary == ["yy", "zz"]

    def test_labeled_file_round_trip(self, tmp_path):
        write_labeled_text(tmp_path / "c.txt", [0, 1], ["hello there", "bye"])
        labels, docs = read_labeled_text(tmp_path / "c.txt")
        assert labels.tolist() == [0, 1] and docs == ["hello there", "bye"]

    def test_bad_label(self, tmp_path):
        (tmp_path / "c.txt").write_text("x\thello\n")
        with pytest.raises(DataFormatError, match="line 1"):
            read_labeled_text(tmp_path / "c.txt")

    def test_planted_term_only_under_label_one(self):
        labels, docs = planted_corpus(500, 0)
        has = np.array(["alpha" in tokenize(d) for d in docs])
        assert not has[labels == 0].any()
        assert has[labels == 1].mean() == pytest.approx(0.6, abs=0.08)

    def test_planted_term_ranks_top_decile(self):
        labels, docs = planted_corpus(1500, 4)
        corpus = tokenize_bow(docs, 50, labels)
        model = train_text_tide(corpus, rows=np.arange(1200), config=TrainConfig(
            epochs=30, batch_size=64, learning_rate=0.01, weight_decay=0.01, initial_accumulator=1e-4,
            attribute_init_scale=1.0, seed=4))
        ranked = [t.term for t in score_terms(model, corpus, rows=np.arange(1200, 1500))]
        assert ranked.index("alpha") < 5

    def test_absent_term_scores_zero(self):
        labels, docs = planted_corpus(300, 1)
        corpus = tokenize_bow(docs, 20, labels)
        counts = corpus.counts.copy()
        counts[:, -1] = 0
        corpus = Corpus(counts, corpus.vocabulary, labels)
        model = train_text_tide(corpus, config=TrainConfig(epochs=10, batch_size=64, learning_rate=0.01, seed=1,
                                                          initial_accumulator=1e-4, attribute_init_scale=1.0))
        last = [t for t in score_terms(model, corpus) if t.position == 19][0]
        assert last.score < 0.05


class TestTabular:
    def test_round_trip(self, tmp_path, rng):
        s, x = rng.normal(size=(5, 2)), rng.normal(size=(5, 3))
        write_csv_dataset(tmp_path / "d.csv", s, x)
        s2, x2, names = load_csv_dataset(tmp_path / "d.csv")
        assert np.array_equal(s, s2) and np.array_equal(x, x2)
        assert names == ["x0", "x1", "x2"]

    def test_error_has_location(self, tmp_path):
        (tmp_path / "d.csv").write_text("s,x0\n1,2\n1,oops\n")
        with pytest.raises(DataFormatError, match=r"line 3, column 'x0'"):
            load_csv_dataset(tmp_path / "d.csv")

    def test_missing_attribute(self, tmp_path):
        (tmp_path / "d.csv").write_text("a,b\n1,2\n")
        with pytest.raises(DataFormatError):
            load_csv_dataset(tmp_path / "d.csv")


class TestSynthetic:
    def test_independent_correlation(self):
        data, _ = gen_gaussian_pairs(SyntheticSpec(d=2, rho=0.0, n=4000), seed=0)
        c = np.corrcoef(data.s[:, 0], data.x[:, 0])[0, 1]
        assert abs(c) < 3 / math.sqrt(4000)

    def test_correlation_half(self):
        data, _ = gen_gaussian_pairs(SyntheticSpec(d=2, rho=0.5, n=10 ** 5), seed=0)
        for k in range(2):
            assert np.corrcoef(data.s[:, k], data.x[:, k])[0, 1] == pytest.approx(0.5, abs=0.01)

    def test_same_seed(self):
        a, _ = gen_gaussian_pairs(SyntheticSpec(n=100), seed=5)
        b, _ = gen_gaussian_pairs(SyntheticSpec(n=100), seed=5)
        assert np.array_equal(a.s, b.s) and np.array_equal(a.x, b.x)

    def test_bench_rows_and_determinism(self):
        spec = [SyntheticSpec(d=1, rho=0.2, n=300, repeats=2, seed=3)]
        cfg = TrainConfig(epochs=5)
        a = synthetic_bench(spec, hidden=(8,), train_config=cfg)
        b = synthetic_bench(spec, hidden=(8,), train_config=cfg)
        assert len(a.rows) == 6
        assert a.to_csv() == b.to_csv()
        assert a.summary_csv().splitlines()[0] == "d,rho,tide,kde,plugin"

    def test_unknown_estimator(self):
        with pytest.raises(InvalidParameterError):
            synthetic_bench([SyntheticSpec(n=100, repeats=1)], ["mine"])

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from irrflow.datagen import DataConfig, make_sample, write_dataset
from irrflow.estimator import IRRFlowEstimator
from irrflow.validation import check_image_pairs, check_training_samples


def tiny_estimator(**kw):
    base = dict(variant="pwc", levels=2, base_scale_exp=1, cost_radius=2,
                decoder_width=16, decoder_depth=2, adapter_channels=8,
                total_steps=4, batch_size=2, seed=0)
    base.update(kw)
    return IRRFlowEstimator(**base)


@pytest.fixture(scope="module")
def samples():
    cfg = DataConfig(width=32, height=32)
    return [make_sample(seed, cfg) for seed in range(6)]


class TestSklearnProtocol:
    def test_get_set_params_roundtrip(self):
        est = tiny_estimator()
        params = est.get_params()
        assert params["variant"] == "pwc" and params["levels"] == 2
        est.set_params(levels=3, occlusion=False)
        assert est.levels == 3 and est.occlusion is False

    def test_clone(self):
        est = tiny_estimator(learning_rate=1e-4)
        cloned = clone(est)
        assert cloned.get_params() == est.get_params()

    def test_predict_before_fit_raises(self, samples):
        with pytest.raises(NotFittedError):
            tiny_estimator().predict(samples)


class TestFitPredict:
    def test_fit_predict_shapes(self, samples):
        est = tiny_estimator().fit(samples)
        pred = est.predict(samples)
        assert pred["flow_fw"].shape == (6, 32, 32, 2)
        assert pred["flow_bw"].shape == (6, 32, 32, 2)
        assert pred["occ1"].shape == (6, 32, 32)
        assert np.all((pred["occ1"] >= 0) & (pred["occ1"] <= 1))
        assert est.n_parameters_ > 0
        assert len(est.history_) == 4

    def test_fit_from_dataset_directory(self, samples, tmp_path):
        write_dataset(samples, tmp_path / "train", DataConfig(width=32, height=32))
        est = tiny_estimator().fit(tmp_path)
        assert hasattr(est, "model_")

    def test_fit_from_arrays(self, samples):
        X = np.stack([np.stack([s.image1, s.image2]) for s in samples])
        y = {"flow_fw": np.stack([s.flow_fw for s in samples]),
             "flow_bw": np.stack([s.flow_bw for s in samples]),
             "occ1": np.stack([s.occ1 for s in samples]),
             "occ2": np.stack([s.occ2 for s in samples])}
        est = tiny_estimator().fit(X, y)
        pred = est.predict(X)
        assert pred["flow_fw"].shape == (6, 32, 32, 2)

    def test_score_is_negative_epe(self, samples):
        est = tiny_estimator().fit(samples)
        score = est.score(samples)
        report = est.evaluate(samples)
        assert score == pytest.approx(-report.epe)

    def test_save_load_same_predictions(self, samples, tmp_path):
        est = tiny_estimator().fit(samples)
        pred = est.predict(samples[:2])
        est.save(tmp_path / "est.ckpt")
        loaded = tiny_estimator().load(tmp_path / "est.ckpt")
        pred2 = loaded.predict(samples[:2])
        np.testing.assert_array_equal(pred["flow_fw"], pred2["flow_fw"])

    def test_occlusion_disabled(self, samples):
        est = tiny_estimator(occlusion=False, bidirectional=False).fit(samples)
        pred = est.predict(samples)
        assert "occ1" not in pred and "flow_bw" not in pred


class TestValidationHelpers:
    def test_pairs_from_tuples(self, samples):
        pairs = check_image_pairs([(s.image1, s.image2) for s in samples[:2]])
        assert pairs.shape == (2, 2, 32, 32, 3) and pairs.dtype == np.uint8

    def test_pairs_from_float_array(self):
        arr = np.random.default_rng(0).uniform(size=(2, 2, 8, 8, 3))
        pairs = check_image_pairs(arr)
        assert pairs.dtype == np.uint8 and pairs.max() <= 255

    def test_bad_pair_shape(self):
        with pytest.raises(ValueError):
            check_image_pairs(np.zeros((2, 3, 8, 8, 3)))

    def test_samples_passthrough(self, samples):
        assert check_training_samples(samples) is not samples
        assert check_training_samples(samples)[0] is samples[0]

    def test_arrays_need_flow_target(self, samples):
        X = np.stack([np.stack([s.image1, s.image2]) for s in samples[:2]])
        with pytest.raises(ValueError, match="flow_fw"):
            check_training_samples(X, None)

    def test_target_shape_mismatch(self, samples):
        X = np.stack([np.stack([s.image1, s.image2]) for s in samples[:2]])
        with pytest.raises(ValueError, match="flow_fw"):
            check_training_samples(X, {"flow_fw": np.zeros((2, 8, 8, 2))})

    def test_missing_dataset_dir(self, tmp_path):
        with pytest.raises(ValueError, match="manifest"):
            check_training_samples(tmp_path)

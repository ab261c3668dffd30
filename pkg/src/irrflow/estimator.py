"""Scikit-learn style estimator wrapping model construction, training, and
prediction, so the flow/occlusion network drops into standard tooling
(`get_params` / `set_params` / `clone`, fit/predict, `score`).
"""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from irrflow import fileio
from irrflow.datagen import DataConfig
from irrflow.model import ModelConfig, build_model, count_parameters
from irrflow.train import TrainConfig, evaluate, load_model, predict_images, train
from irrflow.validation import check_image_pairs, check_training_samples


class IRRFlowEstimator(BaseEstimator):
    """Joint bi-directional optical flow and occlusion estimator.

    Parameters mirror the model and training configuration; see ModelConfig
    and TrainConfig for semantics.  After `fit`, predictions are dense flow
    fields in pixels plus occlusion probability maps.

    Example
    -------
    >>> est = IRRFlowEstimator(variant="pwc", levels=2, total_steps=50)
    >>> est.fit(samples)            # list of SceneSample or a dataset dir
    >>> pred = est.predict(samples)
    >>> pred["flow_fw"].shape       # (N, H, W, 2)
    """

    def __init__(self, variant="pwc", levels=3, iterations=None, base_scale_exp=2,
                 warp_level=None, encoder_widths=None, decoder_width=32, decoder_depth=5,
                 adapter_channels=32, cost_radius=4, bidirectional=True, occlusion=True,
                 bilateral_refinement=False, occlusion_upsampling=False,
                 weight_sharing="shared", window=5, dtype="float32",
                 learning_rate=3e-4, lr_decay_steps=0, lr_decay_factor=0.5,
                 total_steps=500, batch_size=4, forward_only_gt=False,
                 deterministic=True, seed=0):
        self.variant = variant
        self.levels = levels
        self.iterations = iterations
        self.base_scale_exp = base_scale_exp
        self.warp_level = warp_level
        self.encoder_widths = encoder_widths
        self.decoder_width = decoder_width
        self.decoder_depth = decoder_depth
        self.adapter_channels = adapter_channels
        self.cost_radius = cost_radius
        self.bidirectional = bidirectional
        self.occlusion = occlusion
        self.bilateral_refinement = bilateral_refinement
        self.occlusion_upsampling = occlusion_upsampling
        self.weight_sharing = weight_sharing
        self.window = window
        self.dtype = dtype
        self.learning_rate = learning_rate
        self.lr_decay_steps = lr_decay_steps
        self.lr_decay_factor = lr_decay_factor
        self.total_steps = total_steps
        self.batch_size = batch_size
        self.forward_only_gt = forward_only_gt
        self.deterministic = deterministic
        self.seed = seed

    def _model_config(self) -> ModelConfig:
        return ModelConfig(
            variant=self.variant, levels=self.levels, iterations=self.iterations,
            base_scale_exp=self.base_scale_exp, warp_level=self.warp_level,
            encoder_widths=self.encoder_widths, decoder_width=self.decoder_width,
            decoder_depth=self.decoder_depth, adapter_channels=self.adapter_channels,
            cost_radius=self.cost_radius, bidirectional=self.bidirectional,
            occlusion=self.occlusion, bilateral_refinement=self.bilateral_refinement,
            occlusion_upsampling=self.occlusion_upsampling,
            weight_sharing=self.weight_sharing, window=self.window,
            dtype=self.dtype, seed=self.seed,
        )

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            model=self._model_config(), data=DataConfig(),
            learning_rate=self.learning_rate, lr_decay_steps=self.lr_decay_steps,
            lr_decay_factor=self.lr_decay_factor, total_steps=self.total_steps,
            batch_size=self.batch_size, forward_only_gt=self.forward_only_gt,
            deterministic=self.deterministic, seed=self.seed,
        )

    def fit(self, X, y=None):
        """Train on scene samples (list, dataset directory, or arrays + targets)."""
        samples = check_training_samples(X, y)
        config = self._train_config()
        self.model_, self.history_ = train(config, samples)
        self.config_ = self.model_.config
        self.n_parameters_ = count_parameters(self.model_)[0]
        return self

    def _require_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("this IRRFlowEstimator is not fitted yet; call fit first")

    def predict(self, X) -> dict:
        """Dense predictions for image pairs.

        Returns a dict with `flow_fw` (N, H, W, 2) and, depending on the
        configuration, `flow_bw`, `occ1`, and `occ2`.
        """
        self._require_fitted()
        pairs = check_image_pairs(X)
        preds = list(predict_images(self.model_, pairs[:, 0], pairs[:, 1],
                                    batch_size=self.batch_size))
        out = {"flow_fw": np.stack([p["flow_fw"] for p in preds])}
        for key in ("flow_bw", "occ1", "occ2"):
            if preds[0][key] is not None:
                out[key] = np.stack([p[key] for p in preds])
        return out

    def score(self, X, y=None) -> float:
        """Negative mean endpoint error (higher is better)."""
        self._require_fitted()
        samples = check_training_samples(X, y)
        return -evaluate(self.model_, samples, batch_size=self.batch_size).epe

    def evaluate(self, X, y=None):
        """Full EvalReport (EPE, occlusion F1, Fl-all) on labelled samples."""
        self._require_fitted()
        samples = check_training_samples(X, y)
        return evaluate(self.model_, samples, batch_size=self.batch_size)

    def save(self, path) -> None:
        self._require_fitted()
        fileio.save_checkpoint(path, self.model_, self.config_)

    def load(self, path):
        """Load weights from a checkpoint; estimator params are overridden."""
        self.model_, _ = load_model(path)
        self.config_ = self.model_.config
        self.n_parameters_ = count_parameters(self.model_)[0]
        self.history_ = []
        return self

    def warm_start_model(self):
        """Untrained model for inspection (parameter audits, sharing checks)."""
        return build_model(self._model_config())

"""
Surrogate network training.

Dense ReLU / clipped-ReLU regressors trained with Adam on mean squared error plus
an l1 penalty on all weights and biases, with optional inverted dropout. The
trained model is returned as a raw-space ``Network``: input and target
normalization are folded into the first and last layers.
"""
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np
import tensorflow as tf

from .. import TrainingDivergedError
from ..models.network import ActivationKind, Layer, Network
from ..services.benchmark_service import Dataset, get_benchmark

logger = logging.getLogger(__name__)

# Hyperparameter vocabulary of the training grid
GRID_DEPTHS = tuple(range(1, 11))
GRID_WIDTHS = (25, 50)
GRID_L1 = (0.0, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3)
GRID_CLIPS = (2.0, 5.0)
GRID_DROPOUT = (0.0, 0.1, 0.2)

MAPE_EPSILON = 1e-8


@dataclass
class TrainConfig:
    hidden_layers: int = 2
    width: int = 25
    activation: ActivationKind = field(default_factory=ActivationKind.relu)
    l1: float = 0.0
    dropout_rate: float = 0.0
    epochs: int = 300
    batch_size: int = 256
    learning_rate: float = 1e-3
    seed: int = 0
    deterministic: bool = True

    def __post_init__(self):
        if self.hidden_layers < 1:
            raise ValueError(f"hidden_layers must be >= 1, got {self.hidden_layers}")
        if self.width < 1:
            raise ValueError(f"width must be >= 1, got {self.width}")
        if self.l1 < 0:
            raise ValueError(f"l1 coefficient must be >= 0, got {self.l1}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if self.activation.kind.value == "identity":
            raise ValueError("hidden activation must be relu or clipped_relu")

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["activation"] = {"kind": self.activation.kind.value, "clip": self.activation.clip}
        return data


@dataclass
class TrainReport:
    final_train_loss: float
    test_mape: float
    test_rmse: float
    loss_trace: List[float]
    wall_time: float
    config: Dict

    def to_dict(self) -> Dict:
        return asdict(self)


def mape(pred, truth, epsilon: float = MAPE_EPSILON) -> float:
    """Mean absolute percentage error with an ``epsilon`` floor on |truth|."""
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    truth = np.asarray(truth, dtype=np.float64).reshape(-1)
    if pred.size == 0:
        raise ValueError("mape of an empty vector is undefined")
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.size} predictions vs {truth.size} targets")
    return float(np.mean(np.abs(pred - truth) / np.maximum(epsilon, np.abs(truth))))


def fold_normalization(
    weights: Sequence[Tuple[np.ndarray, np.ndarray]],
    activation: ActivationKind,
    input_mean: np.ndarray,
    input_std: np.ndarray,
    target_mean: float,
    target_std: float,
    input_bounds: np.ndarray,
) -> Network:
    """
    Build a raw-space network from weights trained on normalized data.

    Args:
        weights: (W, b) per layer with W shaped n_out x n_in
        activation: Hidden activation
        input_mean, input_std: Input z-score statistics
        target_mean, target_std: Target z-score statistics
        input_bounds: Box of the raw input space

    Returns:
        Network mapping raw inputs to raw targets
    """
    folded = [(np.array(w, dtype=np.float64), np.array(b, dtype=np.float64)) for w, b in weights]
    mean = np.asarray(input_mean, dtype=np.float64)
    std = np.asarray(input_std, dtype=np.float64)

    w_first, b_first = folded[0]
    folded[0] = (w_first / std[None, :], b_first - w_first @ (mean / std))

    w_last, b_last = folded[-1]
    folded[-1] = (w_last * target_std, b_last * target_std + target_mean)

    layers = []
    for k, (w, b) in enumerate(folded):
        kind = activation if k < len(folded) - 1 else ActivationKind.identity()
        layers.append(Layer(w, b, kind))
    return Network(tuple(layers), input_bounds)


class _L1Penalty(tf.keras.regularizers.Regularizer):
    """l1 penalty returned in the backend float type."""

    def __init__(self, l1: float):
        self.l1 = float(l1)

    def __call__(self, x):
        penalty = tf.cast(self.l1, x.dtype) * tf.reduce_sum(tf.abs(x))
        return tf.cast(penalty, tf.keras.backend.floatx())

    def get_config(self):
        return {"l1": self.l1}


class _DivergenceGuard(tf.keras.callbacks.Callback):
    """Aborts training on a non-finite epoch loss."""

    def on_epoch_end(self, epoch, logs=None):
        loss = (logs or {}).get("loss")
        if loss is not None and not np.isfinite(loss):
            raise TrainingDivergedError(epoch + 1, float(loss))


class NetworkTrainer:
    """
    Trains dense surrogates on benchmark data sets.

    After ``train`` the Keras model stays available as ``self.model`` in
    evaluation mode for inference checks.
    """

    def __init__(self, config: TrainConfig):
        """
        Initialize the trainer.

        Args:
            config: Training hyperparameters
        """
        self.config = config
        self.model = None

    def build_model(self, n_inputs: int, n_outputs: int = 1) -> tf.keras.Model:
        cfg = self.config
        regularizer = _L1Penalty(cfg.l1) if cfg.l1 > 0 else None

        model = tf.keras.Sequential(name="surrogate")
        model.add(tf.keras.Input(shape=(n_inputs,), dtype="float64"))
        for k in range(cfg.hidden_layers):
            model.add(tf.keras.layers.Dense(
                cfg.width,
                kernel_initializer=tf.keras.initializers.HeUniform(seed=cfg.seed + k),
                bias_initializer="zeros",
                kernel_regularizer=regularizer,
                bias_regularizer=regularizer,
                dtype="float64",
            ))
            max_value = cfg.activation.clip if cfg.activation.is_clipped else None
            model.add(tf.keras.layers.ReLU(max_value=max_value, dtype="float64"))
            if cfg.dropout_rate > 0:
                model.add(tf.keras.layers.Dropout(cfg.dropout_rate, seed=cfg.seed + 1000 + k, dtype="float64"))
        model.add(tf.keras.layers.Dense(
            n_outputs,
            kernel_initializer=tf.keras.initializers.HeUniform(seed=cfg.seed + cfg.hidden_layers),
            bias_initializer="zeros",
            kernel_regularizer=regularizer,
            bias_regularizer=regularizer,
            dtype="float64",
        ))
        model.compile(
            optimizer=tf.keras.optimizers.Adam(
                learning_rate=cfg.learning_rate, beta_1=0.9, beta_2=0.999, epsilon=1e-8
            ),
            loss="mse",
        )
        return model

    def dense_weights(self) -> List[Tuple[np.ndarray, np.ndarray]]:
        """(W, b) of every Dense layer, W shaped n_out x n_in."""
        weights = []
        for layer in self.model.layers:
            if isinstance(layer, tf.keras.layers.Dense):
                kernel, bias = layer.get_weights()
                weights.append((np.asarray(kernel, dtype=np.float64).T, np.asarray(bias, dtype=np.float64)))
        return weights

    def train(self, data: Dataset) -> Tuple[Network, TrainReport]:
        """
        Train a surrogate on the train split of ``data``.

        Args:
            data: Normalized benchmark data set

        Returns:
            (raw-space network, training report)
        """
        cfg = self.config
        tf.keras.utils.set_random_seed(cfg.seed)
        if cfg.deterministic:
            tf.config.experimental.enable_op_determinism()
            try:
                tf.config.threading.set_intra_op_parallelism_threads(1)
                tf.config.threading.set_inter_op_parallelism_threads(1)
            except RuntimeError:
                # Threading can only be configured before TF initializes
                pass

        x_train, y_train = data.split("train")
        x_norm = data.normalize_inputs(x_train)
        y_norm = data.normalize_targets(y_train).reshape(-1, 1)

        self.model = self.build_model(data.n_inputs)
        logger.info(
            f"Training {cfg.hidden_layers}x{cfg.width} {cfg.activation} net "
            f"(l1={cfg.l1:g}, dropout={cfg.dropout_rate:g}, seed={cfg.seed})"
        )
        start = time.perf_counter()
        history = self.model.fit(
            x_norm,
            y_norm,
            batch_size=cfg.batch_size,
            epochs=cfg.epochs,
            shuffle=True,
            verbose=0,
            callbacks=[_DivergenceGuard()],
        )
        wall_time = time.perf_counter() - start

        net = fold_normalization(
            self.dense_weights(),
            cfg.activation,
            data.input_mean,
            data.input_std,
            data.target_mean,
            data.target_std,
            get_benchmark(data.function).input_bounds,
        )

        x_test, y_test = data.split("test")
        pred = net.forward(x_test)[:, 0]
        loss_trace = [float(v) for v in history.history["loss"]]
        report = TrainReport(
            final_train_loss=loss_trace[-1],
            test_mape=mape(pred, y_test),
            test_rmse=float(np.sqrt(np.mean((pred - y_test) ** 2))),
            loss_trace=loss_trace,
            wall_time=wall_time,
            config=cfg.to_dict(),
        )
        logger.info(f"Training finished in {wall_time:.1f}s, test MAPE {report.test_mape:.4f}")
        return net, report


def train(data: Dataset, config: TrainConfig) -> Tuple[Network, TrainReport]:
    return NetworkTrainer(config).train(data)


def regularized_loss(model: tf.keras.Model, x, y, l1: float) -> tf.Tensor:
    """Mean squared error plus ``l1`` times the absolute sum of all trainable variables."""
    pred = model(x, training=False)
    penalty = tf.add_n([tf.reduce_sum(tf.abs(v)) for v in model.trainable_variables])
    return tf.reduce_mean(tf.square(pred - y)) + l1 * penalty


def loss_gradients(model: tf.keras.Model, x, y, l1: float) -> List[np.ndarray]:
    """Analytic gradients of ``regularized_loss`` w.r.t. every trainable variable."""
    with tf.GradientTape() as tape:
        loss = regularized_loss(model, x, y, l1)
    return [g.numpy() for g in tape.gradient(loss, model.trainable_variables)]

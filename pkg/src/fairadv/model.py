"""Two-head classifier: shared ReLU encoder, primary head for Y, and an
adversary head for Z that sits behind a gradient-reversal layer.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from . import _kernels
from .data import BatchStream, Dataset
from .nn_core import (
    ADAGRAD_EPS,
    AdagradState,
    DenseLayer,
    GradientSet,
    ShapeError,
    adagrad_step,
    dense_backward,
    dense_forward,
    grad_reverse,
    logistic_loss,
    logistic_loss_grad,
    relu,
    relu_backward,
    sigmoid,
)

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
_CHUNK_STEPS = 1000


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    steps: int = 100_000
    batch_size: int = 32
    lam: float = 0.0
    seed: int = 0
    hidden_width: int = 128

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("reversal weight lam must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.steps < 0 or self.batch_size < 1 or self.hidden_width < 1:
            raise ValueError("steps >= 0, batch_size >= 1 and hidden_width >= 1 required")


def stream_seeds(seed: int) -> Dict[str, np.random.SeedSequence]:
    """Independent seed sequences for initialization and the two batch streams."""
    init, primary, adversary = np.random.SeedSequence(seed).spawn(3)
    return {"init": init, "primary": primary, "adversary": adversary}


@dataclass
class TwoHeadModel:
    encoder: DenseLayer
    primary_head: DenseLayer
    adversary_head: Optional[DenseLayer]
    lam: float = 0.0

    def __post_init__(self):
        width = self.encoder.out_dim
        heads = [self.primary_head]
        if self.adversary_head is not None:
            heads.append(self.adversary_head)
        for head in heads:
            if head.in_dim != width or head.out_dim != 1:
                raise ShapeError(f"head {head.weights.shape} does not fit encoder width {width}")
        if self.lam < 0:
            raise ValueError("reversal weight lam must be >= 0")

    @property
    def input_dim(self) -> int:
        return self.encoder.in_dim

    @property
    def hidden_width(self) -> int:
        return self.encoder.out_dim

    @property
    def has_adversary(self) -> bool:
        return self.adversary_head is not None

    def params(self) -> Dict[str, np.ndarray]:
        """Parameter blocks by name; the arrays are live, not copies."""
        out = {
            "encoder.weights": self.encoder.weights,
            "encoder.bias": self.encoder.bias,
            "primary.weights": self.primary_head.weights,
            "primary.bias": self.primary_head.bias,
        }
        if self.adversary_head is not None:
            out["adversary.weights"] = self.adversary_head.weights
            out["adversary.bias"] = self.adversary_head.bias
        return out


def _glorot(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_out, fan_in))


def init_model(
    input_dim: int,
    config: TrainConfig,
    seed=None,
    adversary: bool = True,
) -> TwoHeadModel:
    """Fan-scaled uniform weights, zero biases.

    ``seed`` defaults to the init stream derived from ``config.seed``. The
    adversary weights are drawn last, so encoder and primary head do not
    depend on whether an adversary is attached.
    """
    if input_dim < 1:
        raise ValueError("input_dim must be >= 1")
    if seed is None:
        seed = stream_seeds(config.seed)["init"]
    rng = np.random.default_rng(seed)
    H = config.hidden_width
    # column-major so each input feature's weights are contiguous for the kernel
    enc_w = np.asfortranarray(_glorot(rng, H, input_dim))
    encoder = DenseLayer(enc_w, np.zeros(H))
    primary = DenseLayer(_glorot(rng, 1, H), np.zeros(1))
    adv = DenseLayer(_glorot(rng, 1, H), np.zeros(1))
    return TwoHeadModel(encoder, primary, adv if adversary else None, config.lam)


def forward(model: TwoHeadModel, x: np.ndarray):
    """Return ``(h, primary_logit, adversary_logit)`` for one row or a batch.

    Gradient reversal is the identity going forward, so the adversary logit
    does not depend on ``model.lam``. ``adversary_logit`` is None without an
    adversary head.
    """
    x = np.asarray(x, dtype=np.float64)
    h = relu(dense_forward(x, model.encoder))
    primary = dense_forward(h, model.primary_head)[..., 0]
    adversary = None
    if model.adversary_head is not None:
        adversary = dense_forward(h, model.adversary_head)[..., 0]
    return h, primary, adversary


def _head_gradients(encoder, head, X, labels, reversal: Optional[float]):
    pre = dense_forward(X, encoder)
    h = relu(pre)
    logit = dense_forward(h, head)[:, 0]
    loss = float(np.mean(logistic_loss(logit, labels)))
    dlogit = logistic_loss_grad(logit, labels)[:, None] / X.shape[0]
    gw_head, gb_head, dh = dense_backward(h, dlogit, head)
    if reversal is not None:
        dh = grad_reverse(dh, reversal)
    dpre = relu_backward(dh, pre)
    gw_enc, gb_enc, _ = dense_backward(X, dpre, encoder)
    return loss, gw_enc, gb_enc, gw_head, gb_head


def primary_gradients(model: TwoHeadModel, X, y) -> Tuple[float, GradientSet]:
    """Mean L_Y over the batch and its gradient for encoder and primary head."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    loss, gwe, gbe, gwh, gbh = _head_gradients(model.encoder, model.primary_head, X, y, None)
    return loss, GradientSet(
        {"encoder.weights": gwe, "encoder.bias": gbe, "primary.weights": gwh, "primary.bias": gbh}
    )


def adversary_gradients(
    model: TwoHeadModel, X, z, lam: Optional[float] = None
) -> Tuple[float, GradientSet]:
    """Mean L_Z over the batch and its gradient for encoder and adversary head.

    With ``lam=None`` the reversal layer is skipped (plain dL_Z/dtheta);
    otherwise the encoder sees the gradient scaled by ``-lam``.
    """
    if model.adversary_head is None:
        raise ValueError("model has no adversary head")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    loss, gwe, gbe, gwh, gbh = _head_gradients(model.encoder, model.adversary_head, X, z, lam)
    return loss, GradientSet(
        {"encoder.weights": gwe, "encoder.bias": gbe, "adversary.weights": gwh, "adversary.bias": gbh}
    )


def compute_gradients(
    model: TwoHeadModel, primary_batch: Dataset, adv_batch: Optional[Dataset]
) -> Tuple[GradientSet, Tuple[float, float]]:
    """Full gradient of the combined objective for one pair of batches."""
    if len(primary_batch) == 0:
        raise ValueError("primary batch is empty")
    loss_y, grads = primary_gradients(model, primary_batch.X, primary_batch.y)
    loss_z = 0.0
    if model.adversary_head is not None:
        if adv_batch is None or len(adv_batch) == 0:
            raise ValueError("adversarial batch is empty")
        loss_z, adv = adversary_gradients(model, adv_batch.X, adv_batch.z, model.lam)
        grads["encoder.weights"] = grads["encoder.weights"] + adv["encoder.weights"]
        grads["encoder.bias"] = grads["encoder.bias"] + adv["encoder.bias"]
        grads["adversary.weights"] = adv["adversary.weights"]
        grads["adversary.bias"] = adv["adversary.bias"]
    return grads, (loss_y, loss_z)


def init_optimizer(model: TwoHeadModel) -> Dict[str, AdagradState]:
    return {name: AdagradState.like(p) for name, p in model.params().items()}


def train_step(
    model: TwoHeadModel,
    opt_state: Dict[str, AdagradState],
    primary_batch: Dataset,
    adv_batch: Optional[Dataset],
    lr: float = 0.01,
) -> Tuple[float, float]:
    """One Adagrad step on all parameter blocks, in place. Returns batch-mean losses."""
    grads, losses = compute_gradients(model, primary_batch, adv_batch)
    params = model.params()
    for name, g in grads.items():
        adagrad_step(params[name], g, opt_state[name], lr)
    return losses


def _fit_numpy(model, opt, train_set, adv_set, p_idx, a_idx, lr, losses):
    for s in range(p_idx.shape[0]):
        pb = train_set.subset(p_idx[s])
        ab = adv_set.subset(a_idx[s]) if a_idx is not None else None
        losses[s] = train_step(model, opt, pb, ab, lr)


def _fit_numba(model, opt, train_set, adv_set, p_idx, a_idx, lr, losses):
    use_adv = model.adversary_head is not None
    if use_adv:
        wa, ba = model.adversary_head.weights[0], model.adversary_head.bias
        awa = opt["adversary.weights"].accumulator[0]
        aba = opt["adversary.bias"].accumulator
        a_ptr, a_col, a_val = adv_set.csr
        a_lab = adv_set.z
    else:
        wa = ba = awa = aba = np.zeros(1)
        a_ptr, a_col, a_val = np.zeros(1, np.int64), np.zeros(0, np.int64), np.zeros(0)
        a_lab = np.zeros(0, np.int8)
        a_idx = np.zeros((p_idx.shape[0], 0), np.int64)
    p_ptr, p_col, p_val = train_set.csr
    _kernels.fit_steps(
        model.encoder.weights.T, model.encoder.bias,
        model.primary_head.weights[0], model.primary_head.bias, wa, ba,
        opt["encoder.weights"].accumulator.T, opt["encoder.bias"].accumulator,
        opt["primary.weights"].accumulator[0], opt["primary.bias"].accumulator, awa, aba,
        p_ptr, p_col, p_val, train_set.y, p_idx,
        a_ptr, a_col, a_val, a_lab, a_idx,
        use_adv, float(model.lam), float(lr), ADAGRAD_EPS, losses,
    )


def train(
    train_set: Dataset,
    adv_set: Optional[Dataset],
    config: TrainConfig,
    backend: Optional[str] = None,
    loss_log: Optional[list] = None,
) -> TwoHeadModel:
    """Train from scratch for ``config.steps`` steps.

    The primary head reads ``train_set`` and the adversary reads ``adv_set``
    through separate cycling batch streams. Passing ``adv_set=None`` trains
    a model without an adversary head. ``loss_log``, if given, receives a
    ``(steps_done, mean_loss_y, mean_loss_z)`` tuple per chunk of steps.
    """
    if len(train_set) == 0:
        raise ValueError("training set is empty")
    if adv_set is not None and len(adv_set) == 0:
        raise ValueError("adversarial set is empty")
    backend = backend or _kernels.active_backend()
    fit = {"numba": _fit_numba, "numpy": _fit_numpy}[backend]
    seeds = stream_seeds(config.seed)
    model = init_model(train_set.n_features, config, seeds["init"], adversary=adv_set is not None)
    opt = init_optimizer(model)
    p_stream = BatchStream(len(train_set), config.batch_size, seeds["primary"])
    a_stream = None
    if adv_set is not None:
        a_stream = BatchStream(len(adv_set), config.batch_size, seeds["adversary"])
    done = 0
    while done < config.steps:
        n = min(_CHUNK_STEPS, config.steps - done)
        p_idx = p_stream.next_indices(n)
        a_idx = a_stream.next_indices(n) if a_stream is not None else None
        losses = np.zeros((n, 2))
        fit(model, opt, train_set, adv_set, p_idx, a_idx, config.learning_rate, losses)
        done += n
        mean = losses.mean(axis=0)
        if loss_log is not None:
            loss_log.append((done, float(mean[0]), float(mean[1])))
        logger.debug("step %d loss_y=%.5f loss_z=%.5f", done, mean[0], mean[1])
    return model


def predict_prob(model: TwoHeadModel, X) -> np.ndarray:
    return sigmoid(forward(model, X)[1])


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def calibrate_threshold(scores, target_rate: float) -> float:
    """Cutoff so that ``score >= cutoff`` flags about ``target_rate`` of ``scores``.

    The cutoff is the k-th largest score, k = round(target_rate * N). When
    ties at the k-th score would push the positive count past k, the cutoff
    moves up to the next larger distinct score; k = 0 returns a value just
    above the maximum.
    """
    s = np.sort(np.asarray(scores, dtype=np.float64))[::-1]
    if s.size == 0:
        raise ValueError("cannot calibrate on zero scores")
    if not 0.0 <= target_rate <= 1.0:
        raise ValueError("target_rate must lie in [0, 1]")
    k = _round_half_up(target_rate * s.size)
    if k == 0:
        return float(np.nextafter(s[0], np.inf))
    cut = s[k - 1]
    if k < s.size and s[k] == cut:
        larger = s[s > cut]
        return float(larger[-1]) if larger.size else float(np.nextafter(s[0], np.inf))
    return float(cut)


def classify(model: TwoHeadModel, threshold: float, X) -> np.ndarray:
    return (predict_prob(model, X) >= threshold).astype(np.int8)


def save_model(path, model: TwoHeadModel, config: Optional[TrainConfig] = None) -> None:
    """Write every parameter block plus config to an ``.npz`` checkpoint."""
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "lam": model.lam,
        "config": asdict(config) if config is not None else None,
    }
    blocks = {k: np.ascontiguousarray(v) for k, v in model.params().items()}
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.array(json.dumps(meta)), **blocks)


def load_model(path) -> Tuple[TwoHeadModel, Optional[TrainConfig]]:
    with np.load(path, allow_pickle=False) as npz:
        meta = json.loads(str(npz["meta"]))
        if meta.get("format_version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('format_version')}")
        encoder = DenseLayer(np.asfortranarray(npz["encoder.weights"]), npz["encoder.bias"])
        primary = DenseLayer(npz["primary.weights"], npz["primary.bias"])
        adversary = None
        if "adversary.weights" in npz.files:
            adversary = DenseLayer(npz["adversary.weights"], npz["adversary.bias"])
    config = TrainConfig(**meta["config"]) if meta["config"] else None
    return TwoHeadModel(encoder, primary, adversary, meta["lam"]), config

"""Network builders for the three architectures, plus mapping training."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .nn import LayerSpec, NetworkSpec

TRACK_FILTERS = (256, 512, 1024, 1024)
ARTIST_HIDDEN = 2048
FUSION_HIDDEN = 512
FUSION_DROPOUT = 0.7
TRACK_DROPOUT = 0.5
TRACK_POOL = 4
TRACK_FINAL_STEPS = 4


@dataclass
class TrainConfig:
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0
    lr: float = 0.001
    scale: float = 1.0  # channel-width factor for desk-size convolutions

    def validate(self):
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")


@dataclass
class EmbeddingSet:
    ids: list[str]
    vectors: np.ndarray  # (len(ids), d)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


@dataclass
class TrainLog:
    epochs: list[tuple[int, float, float]] = field(default_factory=list)  # (epoch, train, val)
    best_epoch: int = -1
    best_val: float = math.inf

    def write_tsv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("epoch\ttrain_loss\tval_loss\n")
            for epoch, tr, va in self.epochs:
                fh.write(f"{epoch}\t{tr:.10f}\t{va:.10f}\n")


def build_artist_net(vocab_size: int, k: int, dropout: float = 0.0) -> NetworkSpec:
    """Feedforward text net: two wide relu layers, linear unit-norm head."""
    if vocab_size < 1:
        raise ValueError("vocab_size must be >= 1")
    trunk = []
    if dropout > 0:
        trunk.append(LayerSpec("dropout", rate=dropout))
    trunk += [
        LayerSpec("dense", units=ARTIST_HIDDEN), LayerSpec("relu"),
        LayerSpec("dense", units=ARTIST_HIDDEN), LayerSpec("relu"),
        LayerSpec("dense", units=k), LayerSpec("l2norm"),
    ]
    tap = len(trunk) - 3  # after the second relu
    return NetworkSpec(trunk=trunk, input_shapes={"": (vocab_size,)}, embed_tap=tap)


def build_track_net(bins: int, frames: int, k: int, scale: float = 1.0,
                    width: int = 4) -> NetworkSpec:
    """Time-axis CNN over spectrogram patches.

    Four conv layers with widths scaled from 256/512/1024/1024, max-pool 4
    after the first three, then a final pool down to 4 time steps so the
    flattened embedding is 4x the last filter count.
    """
    if bins < 1 or frames < 1:
        raise ValueError("bins and frames must be >= 1")
    if not 0 < scale <= 1:
        raise ValueError("scale must be in (0, 1]")
    if frames // TRACK_POOL**3 < 1:
        raise ValueError(
            f"patch of {frames} frames is too short for the pooling pyramid "
            f"(needs >= {TRACK_POOL**3})"
        )
    filters = [math.ceil(scale * f) for f in TRACK_FILTERS]
    trunk: list[LayerSpec] = []
    for layer_idx, f in enumerate(filters):
        trunk += [
            LayerSpec("conv1d_time", filters=f, width=width, padding="same"),
            LayerSpec("relu"),
            LayerSpec("dropout", rate=TRACK_DROPOUT),
        ]
        if layer_idx < 3:
            trunk.append(LayerSpec("maxpool_time", pool=TRACK_POOL))
    trunk += [
        LayerSpec("maxpool_time", output_steps=TRACK_FINAL_STEPS),
        LayerSpec("flatten"),
        LayerSpec("dense", units=k),
        LayerSpec("l2norm"),
    ]
    tap = len(trunk) - 3  # flatten output
    return NetworkSpec(trunk=trunk, input_shapes={"": (bins, frames)}, embed_tap=tap)


def build_fusion_net(variant: str, dim_a: int, dim_t: int, k: int) -> NetworkSpec:
    """Late-fusion of artist and track embeddings.

    ``lin``: per-branch l2-norm and heavy input dropout, concatenation
    straight into the linear unit-norm head. ``h1``: per-branch batchnorm,
    dropout and a 512-unit relu layer before the head.
    """
    if dim_a < 1 or dim_t < 1:
        raise ValueError("embedding dimensions must be >= 1")
    if variant == "lin":
        branch_a = [LayerSpec("l2norm"), LayerSpec("dropout", rate=FUSION_DROPOUT)]
        branch_t = [LayerSpec("l2norm"), LayerSpec("dropout", rate=FUSION_DROPOUT)]
    elif variant == "h1":
        branch_a = [
            LayerSpec("batchnorm", features=dim_a),
            LayerSpec("dropout", rate=FUSION_DROPOUT),
            LayerSpec("dense", units=FUSION_HIDDEN), LayerSpec("relu"),
        ]
        branch_t = [
            LayerSpec("batchnorm", features=dim_t),
            LayerSpec("dropout", rate=FUSION_DROPOUT),
            LayerSpec("dense", units=FUSION_HIDDEN), LayerSpec("relu"),
        ]
    else:
        raise ValueError(f"unknown fusion variant {variant!r} (expected 'lin' or 'h1')")
    trunk = [LayerSpec("concat"), LayerSpec("dense", units=k), LayerSpec("l2norm")]
    return NetworkSpec(
        trunk=trunk,
        branches={"artist": branch_a, "track": branch_t},
        input_shapes={"artist": (dim_a,), "track": (dim_t,)},
        embed_tap=0,  # concat output
    )


def build_single_branch_net(dim: int, k: int) -> NetworkSpec:
    """Linear mapping from one embedding modality to factors (sem-emb style)."""
    if dim < 1:
        raise ValueError("embedding dimension must be >= 1")
    trunk = [
        LayerSpec("l2norm"), LayerSpec("dropout", rate=FUSION_DROPOUT),
        LayerSpec("dense", units=k), LayerSpec("l2norm"),
    ]
    return NetworkSpec(trunk=trunk, input_shapes={"": (dim,)}, embed_tap=0)


# ---------------------------------------------------------------------------
# Training

def _maybe_call(features, epoch: int):
    """Features may be a fixed matrix/dict or an epoch -> features provider."""
    return features(epoch) if callable(features) else features


def _take(features, idx):
    if isinstance(features, dict):
        return {k: v[idx] for k, v in features.items()}
    return features[idx]


def _copy_params(params):
    return {layer: {k: v.copy() for k, v in tensors.items()} for layer, tensors in params.items()}


def train_mapping(net: NetworkSpec, features, targets: np.ndarray,
                  val_features, val_targets: np.ndarray,
                  cfg: TrainConfig) -> tuple[dict, TrainLog]:
    """Train a content-to-factor mapping with Adam and cosine loss.

    ``features`` is a (n, ...) matrix, a dict of branch matrices, or a
    callable epoch -> features for per-epoch resampling (audio patches).
    Returns the parameters of the best validation epoch and the loss log.
    """
    cfg.validate()
    n = targets.shape[0]
    feats0 = _maybe_call(features, 0)
    n_feat = next(iter(feats0.values())).shape[0] if isinstance(feats0, dict) else feats0.shape[0]
    if n_feat != n:
        raise ValueError(f"{n_feat} feature rows vs {n} target rows")
    params = nn.init_params(net, cfg.seed)
    state = nn.AdamState.for_params(params, lr=cfg.lr)
    shuffle_rng = np.random.default_rng([cfg.seed, 1])
    log = TrainLog()
    best_params = _copy_params(params)
    since_best = 0
    for epoch in range(cfg.max_epochs):
        feats = _maybe_call(features, epoch)
        order = shuffle_rng.permutation(n)
        train_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            out, caches, _ = net_forward_cached(net, params, _take(feats, idx),
                                                mode="train", seed=_batch_seed(cfg.seed, epoch, start))
            loss, dpred = nn.cosine_loss(out, targets[idx])
            if not math.isfinite(loss):
                raise RuntimeError(f"non-finite loss at epoch {epoch}, batch offset {start}")
            grads, _ = nn.net_backward(net, params, caches, dpred)
            nn.adam_step(params, grads, state)
            train_loss += loss * len(idx)
        train_loss /= n
        val_loss = eval_loss(net, params, _maybe_call(val_features, epoch), val_targets)
        log.epochs.append((epoch, train_loss, val_loss))
        if val_loss < log.best_val:
            log.best_val = val_loss
            log.best_epoch = epoch
            best_params = _copy_params(params)
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                break
    return best_params, log


def _batch_seed(seed: int, epoch: int, offset: int) -> int:
    return (seed * 1_000_003 + epoch * 7919 + offset) % 2**31


def net_forward_cached(net, params, x, mode, seed):
    return nn.net_forward(net, params, x, mode=mode, seed=seed)


def eval_loss(net: NetworkSpec, params, features, targets: np.ndarray) -> float:
    out, _, _ = nn.net_forward(net, params, features, mode="eval")
    return nn.cosine_loss(out, targets)[0]


def extract_embeddings(net: NetworkSpec, params, features, ids: list[str] | None = None,
                       batch_size: int = 256) -> EmbeddingSet:
    """Eval-mode penultimate activations at the network's embedding tap."""
    tap = f"trunk/{net.embed_tap % len(net.trunk)}"
    rows = []
    for idx in _batches(features, batch_size):
        _, _, acts = nn.net_forward(net, params, _take(features, idx), mode="eval")
        a = acts[tap]
        rows.append(a.reshape(a.shape[0], -1))
    vectors = np.concatenate(rows) if rows else np.zeros((0, net.embed_dim()))
    if ids is None:
        ids = [str(i) for i in range(vectors.shape[0])]
    return EmbeddingSet(list(ids), vectors)


def predict_factors(net: NetworkSpec, params, features, batch_size: int = 256) -> np.ndarray:
    """Eval-mode full forward; rows are unit-norm predicted factors."""
    rows = []
    for idx in _batches(features, batch_size):
        out, _, _ = nn.net_forward(net, params, _take(features, idx), mode="eval")
        rows.append(out)
    return np.concatenate(rows) if rows else np.zeros((0, net.output_dim()))


def _batches(features, batch_size: int):
    n = next(iter(features.values())).shape[0] if isinstance(features, dict) else features.shape[0]
    for start in range(0, n, batch_size):
        yield np.arange(start, min(start + batch_size, n))

"""Flat `key = value` configuration files with dotted names."""

from __future__ import annotations

import os
from dataclasses import dataclass, field

from .data import DataError
from .wmf import WmfConfig
from .zoo import TrainConfig


def parse_kv_file(path) -> dict[str, str]:
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DataError(f"{path}:{lineno}: expected `key = value`")
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
    return values


def write_kv_file(path, values: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in values.items():
            fh.write(f"{key} = {value}\n")


class _Reader:
    def __init__(self, values: dict[str, str], path):
        self.values = dict(values)
        self.path = path
        self.used: set[str] = set()

    def get(self, key, default=None, cast=str):
        if key not in self.values:
            if default is None:
                raise DataError(f"{self.path}: missing required key {key!r}")
            return default
        self.used.add(key)
        raw = self.values[key]
        try:
            if cast is bool:
                return raw.lower() in ("1", "true", "yes")
            return cast(raw)
        except ValueError:
            raise DataError(f"{self.path}: key {key!r} has invalid value {raw!r}") from None


@dataclass
class PipelineConfig:
    triples: str
    artist_map: str
    documents: str
    annotations: str
    kb: str
    spectrogram_dir: str
    out_dir: str

    seed: int = 0
    split_ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    eval_k: int = 500
    fusion_variant: str = "lin"
    channel_scale: float = 0.125
    vocab_cap: int = 10000
    property_map_path: str = ""

    patch_seconds: float = 15.0
    patch_frames_override: int = 0   # >0 wins over patch_seconds
    val_fraction: float = 0.1

    wmf_songs: WmfConfig = field(default_factory=WmfConfig)
    wmf_artists: WmfConfig = field(default_factory=WmfConfig)
    train_artist: TrainConfig = field(default_factory=TrainConfig)
    train_track: TrainConfig = field(default_factory=TrainConfig)
    train_fusion: TrainConfig = field(default_factory=TrainConfig)

    def out(self, *parts) -> str:
        return os.path.join(self.out_dir, *parts)


def _wmf_from(r: _Reader, prefix: str, seed: int) -> WmfConfig:
    return WmfConfig(
        k=r.get(f"{prefix}.k", 200, int),
        alpha=r.get(f"{prefix}.alpha", 40.0, float),
        lam=r.get(f"{prefix}.lambda", 0.01, float),
        iterations=r.get(f"{prefix}.iterations", 15, int),
        init_scale=r.get(f"{prefix}.init_scale", 0.01, float),
        seed=seed,
    )


def _train_from(r: _Reader, prefix: str, seed: int, scale: float) -> TrainConfig:
    return TrainConfig(
        batch_size=r.get(f"{prefix}.batch", 32, int),
        max_epochs=r.get(f"{prefix}.epochs", 100, int),
        patience=r.get(f"{prefix}.patience", 10, int),
        lr=r.get(f"{prefix}.lr", 0.001, float),
        seed=seed,
        scale=scale,
    )


def load_pipeline_config(path, out_override=None, seed_override=None) -> PipelineConfig:
    r = _Reader(parse_kv_file(path), path)
    base = os.path.dirname(os.path.abspath(path))

    def p(key, default=None):
        value = r.get(key, default)
        return os.path.join(base, value) if value and not os.path.isabs(value) else value

    seed = seed_override if seed_override is not None else r.get("seed", 0, int)
    scale = r.get("scale", 0.125, float)
    ratios = (
        r.get("split.train", 0.8, float),
        r.get("split.val", 0.1, float),
        r.get("split.test", 0.1, float),
    )
    return PipelineConfig(
        triples=p("paths.triples"),
        artist_map=p("paths.artist_map"),
        documents=p("paths.documents"),
        annotations=p("paths.annotations"),
        kb=p("paths.kb"),
        spectrogram_dir=p("paths.spectrograms"),
        out_dir=out_override or p("paths.out", "out"),
        seed=seed,
        split_ratios=ratios,
        eval_k=r.get("eval.k", 500, int),
        fusion_variant=r.get("fusion.variant", "lin"),
        channel_scale=scale,
        vocab_cap=r.get("text.vocab_cap", 10000, int),
        property_map_path=p("text.property_map", "") or "",
        patch_seconds=r.get("audio.patch_seconds", 15.0, float),
        patch_frames_override=r.get("audio.patch_frames", 0, int),
        val_fraction=r.get("train.val_fraction", 0.1, float),
        wmf_songs=_wmf_from(r, "wmf.songs", seed),
        wmf_artists=_wmf_from(r, "wmf.artists", seed),
        train_artist=_train_from(r, "train.artist", seed, scale),
        train_track=_train_from(r, "train.track", seed, scale),
        train_fusion=_train_from(r, "train.fusion", seed, scale),
    )


def load_synthetic_spec(path):
    from .synth import SyntheticSpec

    r = _Reader(parse_kv_file(path), path)
    spec = SyntheticSpec(
        n_users=r.get("users", 500, int),
        n_artists=r.get("artists", 200, int),
        songs_per_artist=r.get("songs_per_artist", 10, int),
        latent_dim=r.get("latent_dim", 16, int),
        text_noise=r.get("text_noise", 0.4, float),
        audio_noise=r.get("audio_noise", 0.2, float),
        density=r.get("density", 0.04, float),
        mean_extra_plays=r.get("mean_extra_plays", 2.0, float),
        bins=r.get("bins", 32, int),
        frames=r.get("frames", 180, int),
        n_text_terms=r.get("text_terms", 80, int),
        doc_tokens=r.get("doc_tokens", 120, int),
        n_templates=r.get("templates", 8, int),
        seed=r.get("seed", 0, int),
    )
    spec.validate()
    return spec

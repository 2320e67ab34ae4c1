"""Stage orchestration: split, factorize, enrich, train, evaluate, report."""

from __future__ import annotations

import json
import os
import zlib

import numpy as np

from . import audio as audio_mod
from . import evaluate as ev
from . import matrixio, textfeat, zoo
from .config import PipelineConfig
from .data import (ArtistMap, DataError, FeedbackMatrix, aggregate_to_artist,
                   load_artist_map, load_assignment, load_triples, save_split,
                   split_by_artist)
from .wmf import FactorModel, factorize_wmf

STAGES = (
    "split", "factorize-songs", "factorize-artists", "enrich", "vectorize",
    "train-artist", "train-track", "extract", "train-fusion", "evaluate", "report",
)

APPROACHES = ("audio", "sem-emb", "mm-lf-lin", "mm-lf-h1", "random", "upper-bound")

# artifact file -> stage that produces it, for dependency error messages
_PRODUCERS = {
    "splits/train.tsv": "split",
    "splits/test.tsv": "split",
    "splits/artist_assignment.tsv": "split",
    "factors_songs.csmx": "factorize-songs",
    "factors_artists.csmx": "factorize-artists",
    "enriched_docs.jsonl": "enrich",
    "vocab.json": "vectorize",
    "features_text.csmx": "vectorize",
    "params_artist.csmx": "train-artist",
    "params_track.csmx": "train-track",
    "embeddings_artist.csmx": "extract",
    "embeddings_track.csmx": "extract",
    "params_fusion_lin.csmx": "train-fusion",
    "params_fusion_h1.csmx": "train-fusion",
    "params_sememb.csmx": "train-fusion",
    "track_net.json": "train-track",
    "predictions_audio.csmx": "extract",
    **{f"eval_{a}.json": "evaluate" for a in
       ("audio", "sem-emb", "mm-lf-lin", "mm-lf-h1", "random", "upper-bound")},
}


class StageError(RuntimeError):
    pass


def stage_seed(cfg_seed: int, stage: str) -> int:
    """Per-stage sub-seed derived from the global seed and the stage name."""
    return (cfg_seed * 2654435761 + zlib.crc32(stage.encode())) % 2**31


def run_stage(cfg: PipelineConfig, stage: str) -> None:
    if stage not in STAGES:
        raise StageError(f"unknown stage {stage!r}; valid stages: {', '.join(STAGES)}")
    os.makedirs(cfg.out_dir, exist_ok=True)
    _STAGE_FNS[stage](cfg)


def _require(cfg: PipelineConfig, rel: str) -> str:
    path = cfg.out(rel)
    if not os.path.exists(path):
        producer = _PRODUCERS.get(rel, "?")
        raise StageError(f"missing artifact {rel!r}; run stage {producer!r} first")
    return path


def _patch_len(cfg: PipelineConfig, sample_rate: int, hop: int) -> int:
    if cfg.patch_frames_override > 0:
        return cfg.patch_frames_override
    return audio_mod.patch_frames(cfg.patch_seconds, sample_rate, hop)


# ---------------------------------------------------------------------------
# Stages

def _stage_split(cfg: PipelineConfig) -> None:
    m = load_triples(cfg.triples)
    am = load_artist_map(cfg.artist_map)
    bundle = split_by_artist(m, am, cfg.split_ratios, seed=stage_seed(cfg.seed, "split"))
    save_split(bundle, cfg.out("splits"))


def _load_split(cfg: PipelineConfig, part: str) -> FeedbackMatrix:
    return load_triples(_require(cfg, f"splits/{part}.tsv"))


def _save_factors(cfg: PipelineConfig, name: str, model: FactorModel,
                  user_ids, item_ids) -> None:
    matrixio.save_matrix(cfg.out(f"{name}.csmx"),
                         {"user_factors": model.user_factors,
                          "item_factors": model.item_factors})
    matrixio.save_ids(cfg.out(f"{name}.users.ids"), user_ids)
    matrixio.save_ids(cfg.out(f"{name}.items.ids"), item_ids)


def _load_factors(cfg: PipelineConfig, name: str):
    sections = matrixio.load_matrix(_require(cfg, f"{name}.csmx"))
    users = matrixio.load_ids(cfg.out(f"{name}.users.ids"))
    items = matrixio.load_ids(cfg.out(f"{name}.items.ids"))
    return sections["user_factors"], sections["item_factors"], users, items


def _stage_factorize_songs(cfg: PipelineConfig) -> None:
    train = _load_split(cfg, "train")
    wmf_cfg = cfg.wmf_songs
    wmf_cfg.seed = stage_seed(cfg.seed, "factorize-songs")
    model = factorize_wmf(train, wmf_cfg)
    _save_factors(cfg, "factors_songs", model, train.user_ids, train.item_ids)


def _stage_factorize_artists(cfg: PipelineConfig) -> None:
    train = _load_split(cfg, "train")
    am = load_artist_map(cfg.artist_map)
    r = aggregate_to_artist(train, am)
    wmf_cfg = cfg.wmf_artists
    wmf_cfg.seed = stage_seed(cfg.seed, "factorize-artists")
    model = factorize_wmf(r, wmf_cfg)
    _save_factors(cfg, "factors_artists", model, r.user_ids, r.item_ids)


def _stage_enrich(cfg: PipelineConfig) -> None:
    docs = textfeat.load_documents(cfg.documents)
    ann = textfeat.load_annotations(cfg.annotations)
    kb = textfeat.load_kb_snapshot(cfg.kb)
    props = (textfeat.load_property_map(cfg.property_map_path)
             if cfg.property_map_path else None)
    enriched = []
    for doc in docs:
        entities = textfeat.filter_entities(ann.entities_for(doc.artist_id), kb)
        enriched.append(textfeat.enrich_document(doc, entities, kb, props))
    textfeat.save_documents(enriched, cfg.out("enriched_docs.jsonl"))


def _stage_vectorize(cfg: PipelineConfig) -> None:
    docs = textfeat.load_documents(_require(cfg, "enriched_docs.jsonl"))
    assignment = load_assignment(_require(cfg, "splits/artist_assignment.tsv"))
    train_docs = [d for d in docs if assignment.get(d.artist_id) == "train"]
    if not train_docs:
        raise StageError("no training-artist documents to build a vocabulary from")
    vocab = textfeat.build_vocab(train_docs, cfg.vocab_cap)
    with open(cfg.out("vocab.json"), "w", encoding="utf-8") as fh:
        json.dump({"terms": vocab.terms, "df": vocab.doc_freq.tolist(),
                   "n_docs": vocab.n_docs}, fh)
        fh.write("\n")
    features = textfeat.tfidf_matrix(docs, vocab)
    matrixio.save_matrix(cfg.out("features_text.csmx"), {"tfidf": features})
    matrixio.save_ids(cfg.out("features_text.ids"), [d.artist_id for d in docs])


def _load_vocab(cfg: PipelineConfig):
    with open(_require(cfg, "vocab.json"), encoding="utf-8") as fh:
        data = json.load(fh)
    return textfeat.Vocabulary(
        terms=data["terms"],
        index={t: i for i, t in enumerate(data["terms"])},
        doc_freq=np.array(data["df"], dtype=np.int64),
        n_docs=data["n_docs"],
    )


def _fit_val_split(n: int, fraction: float, seed: int):
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_val = max(1, int(n * fraction)) if n > 1 else 0
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def _stage_train_artist(cfg: PipelineConfig) -> None:
    feats = matrixio.load_matrix(_require(cfg, "features_text.csmx"))["tfidf"]
    feat_ids = matrixio.load_ids(cfg.out("features_text.ids"))
    _, artist_factors, _, artist_ids = _load_factors(cfg, "factors_artists")
    rows = _align_rows(feat_ids, artist_ids)
    x = feats[[r[0] for r in rows]]
    y = artist_factors[[r[1] for r in rows]]
    seed = stage_seed(cfg.seed, "train-artist")
    fit, val = _fit_val_split(len(rows), cfg.val_fraction, seed)
    net = zoo.build_artist_net(x.shape[1], y.shape[1])
    tc = cfg.train_artist
    tc.seed = seed
    params, log = zoo.train_mapping(net, x[fit], y[fit], x[val], y[val], tc)
    matrixio.save_params(cfg.out("params_artist.csmx"), params)
    log.write_tsv(cfg.out("log_artist.tsv"))


def _align_rows(feature_ids: list[str], factor_ids: list[str]):
    """(feature row, factor row) index pairs for ids present in both."""
    feat_index = {fid: i for i, fid in enumerate(feature_ids)}
    return [(feat_index[fid], j) for j, fid in enumerate(factor_ids) if fid in feat_index]


class PatchProvider:
    """Per-epoch resampled spectrogram patches for a fixed list of songs."""

    def __init__(self, spectrogram_dir: str, song_ids: list[str], patch_len: int, seed: int):
        self.song_ids = list(song_ids)
        self.patch_len = patch_len
        self.seed = seed
        self.specs = []
        for sid in self.song_ids:
            path = os.path.join(spectrogram_dir, f"{sid}.cqts")
            if not os.path.exists(path):
                raise DataError(f"no spectrogram file for song {sid!r} at {path}")
            self.specs.append(audio_mod.load_spectrogram(path))

    def __call__(self, epoch: int) -> np.ndarray:
        out = np.empty((len(self.specs), self.specs[0].bins, self.patch_len))
        for i, (sid, s) in enumerate(zip(self.song_ids, self.specs)):
            patch = audio_mod.sample_patch(s, self.patch_len, self.seed + epoch, item_id=sid)
            out[i] = patch.data
        return out


def _stage_train_track(cfg: PipelineConfig) -> None:
    _, song_factors, _, song_ids = _load_factors(cfg, "factors_songs")
    seed = stage_seed(cfg.seed, "train-track")
    probe = audio_mod.load_spectrogram(
        os.path.join(cfg.spectrogram_dir, f"{song_ids[0]}.cqts"))
    patch_len = _patch_len(cfg, probe.sample_rate, probe.hop)
    fit, val = _fit_val_split(len(song_ids), cfg.val_fraction, seed)
    fit_provider = PatchProvider(cfg.spectrogram_dir, [song_ids[i] for i in fit], patch_len, seed)
    # validation patches stay fixed across epochs for a comparable loss
    val_provider = PatchProvider(cfg.spectrogram_dir, [song_ids[i] for i in val], patch_len, seed)
    val_x = val_provider(0)
    net = zoo.build_track_net(probe.bins, patch_len, song_factors.shape[1],
                              scale=cfg.channel_scale)
    tc = cfg.train_track
    tc.seed = seed
    params, log = zoo.train_mapping(net, fit_provider, song_factors[fit],
                                    val_x, song_factors[val], tc)
    matrixio.save_params(cfg.out("params_track.csmx"), params)
    log.write_tsv(cfg.out("log_track.tsv"))
    with open(cfg.out("track_net.json"), "w", encoding="utf-8") as fh:
        json.dump({"bins": probe.bins, "patch_len": patch_len,
                   "k": song_factors.shape[1], "scale": cfg.channel_scale}, fh)
        fh.write("\n")


def _track_net(cfg: PipelineConfig):
    with open(_require(cfg, "track_net.json"), encoding="utf-8") as fh:
        meta = json.load(fh)
    net = zoo.build_track_net(meta["bins"], meta["patch_len"], meta["k"],
                              scale=meta["scale"])
    return net, meta


def _all_song_ids(cfg: PipelineConfig) -> list[str]:
    ids = []
    for part in ("train", "val", "test"):
        ids.extend(_load_split(cfg, part).item_ids)
    return ids


def _stage_extract(cfg: PipelineConfig) -> None:
    # artist embeddings for every artist with a document
    feats = matrixio.load_matrix(_require(cfg, "features_text.csmx"))["tfidf"]
    feat_ids = matrixio.load_ids(cfg.out("features_text.ids"))
    _, artist_factors, _, _ = _load_factors(cfg, "factors_artists")
    artist_net = zoo.build_artist_net(feats.shape[1], artist_factors.shape[1])
    artist_params = matrixio.load_params(_require(cfg, "params_artist.csmx"))
    emb_a = zoo.extract_embeddings(artist_net, artist_params, feats, ids=feat_ids)
    matrixio.save_matrix(cfg.out("embeddings_artist.csmx"), {"embeddings": emb_a.vectors})
    matrixio.save_ids(cfg.out("embeddings_artist.ids"), emb_a.ids)

    # track embeddings for every song, one fixed eval patch each
    track_net, meta = _track_net(cfg)
    track_params = matrixio.load_params(_require(cfg, "params_track.csmx"))
    song_ids = _all_song_ids(cfg)
    seed = stage_seed(cfg.seed, "extract")
    provider = PatchProvider(cfg.spectrogram_dir, song_ids, meta["patch_len"], seed)
    patches = provider(0)
    emb_t = zoo.extract_embeddings(track_net, track_params, patches, ids=song_ids)
    matrixio.save_matrix(cfg.out("embeddings_track.csmx"), {"embeddings": emb_t.vectors})
    matrixio.save_ids(cfg.out("embeddings_track.ids"), emb_t.ids)
    # the track net's own factor predictions, reused by `evaluate`
    preds = zoo.predict_factors(track_net, track_params, patches)
    matrixio.save_matrix(cfg.out("predictions_audio.csmx"), {"factors": preds})
    matrixio.save_ids(cfg.out("predictions_audio.ids"), song_ids)


def _load_embeddings(cfg: PipelineConfig, name: str):
    vectors = matrixio.load_matrix(_require(cfg, f"{name}.csmx"))["embeddings"]
    ids = matrixio.load_ids(cfg.out(f"{name}.ids"))
    return vectors, {i: j for j, i in enumerate(ids)}


def _fusion_inputs(cfg: PipelineConfig, song_ids: list[str], am: ArtistMap):
    emb_a, a_index = _load_embeddings(cfg, "embeddings_artist")
    emb_t, t_index = _load_embeddings(cfg, "embeddings_track")
    a_rows = np.array([a_index[am.artist_of(s)] for s in song_ids])
    t_rows = np.array([t_index[s] for s in song_ids])
    return {"artist": emb_a[a_rows], "track": emb_t[t_rows]}


def _stage_train_fusion(cfg: PipelineConfig) -> None:
    _, song_factors, _, song_ids = _load_factors(cfg, "factors_songs")
    am = load_artist_map(cfg.artist_map)
    inputs = _fusion_inputs(cfg, song_ids, am)
    dim_a = inputs["artist"].shape[1]
    dim_t = inputs["track"].shape[1]
    k = song_factors.shape[1]
    seed = stage_seed(cfg.seed, "train-fusion")
    fit, val = _fit_val_split(len(song_ids), cfg.val_fraction, seed)
    jobs = {
        "params_fusion_lin": zoo.build_fusion_net("lin", dim_a, dim_t, k),
        "params_fusion_h1": zoo.build_fusion_net("h1", dim_a, dim_t, k),
        "params_sememb": zoo.build_single_branch_net(dim_a, k),
    }
    for idx, (name, net) in enumerate(jobs.items()):
        if name == "params_sememb":
            x_fit, x_val = inputs["artist"][fit], inputs["artist"][val]
        else:
            x_fit = {b: v[fit] for b, v in inputs.items()}
            x_val = {b: v[val] for b, v in inputs.items()}
        tc = zoo.TrainConfig(
            batch_size=cfg.train_fusion.batch_size,
            max_epochs=cfg.train_fusion.max_epochs,
            patience=cfg.train_fusion.patience,
            lr=cfg.train_fusion.lr,
            seed=seed + idx,
        )
        params, log = zoo.train_mapping(net, x_fit, song_factors[fit],
                                        x_val, song_factors[val], tc)
        matrixio.save_params(cfg.out(f"{name}.csmx"), params)
        log.write_tsv(cfg.out(f"log_{name.removeprefix('params_')}.tsv"))


def _stage_evaluate(cfg: PipelineConfig) -> None:
    test = _load_split(cfg, "test")
    user_factors, _, train_users, _ = _load_factors(cfg, "factors_songs")
    if train_users != test.user_ids:
        user_index = {u: i for i, u in enumerate(train_users)}
        user_factors = user_factors[[user_index[u] for u in test.user_ids]]
    am = load_artist_map(cfg.artist_map)
    k = user_factors.shape[1]

    predictions: dict[str, np.ndarray] = {}

    # audio: the track network's own factor predictions
    preds = matrixio.load_matrix(_require(cfg, "predictions_audio.csmx"))["factors"]
    pred_ids = matrixio.load_ids(cfg.out("predictions_audio.ids"))
    p_index = {s: i for i, s in enumerate(pred_ids)}
    predictions["audio"] = preds[[p_index[s] for s in test.item_ids]]

    inputs = _fusion_inputs(cfg, test.item_ids, am)
    dim_a = inputs["artist"].shape[1]
    dim_t = inputs["track"].shape[1]

    sememb_net = zoo.build_single_branch_net(dim_a, k)
    sememb_params = matrixio.load_params(_require(cfg, "params_sememb.csmx"))
    predictions["sem-emb"] = zoo.predict_factors(sememb_net, sememb_params, inputs["artist"])

    for variant in ("lin", "h1"):
        net = zoo.build_fusion_net(variant, dim_a, dim_t, k)
        params = matrixio.load_params(_require(cfg, f"params_fusion_{variant}.csmx"))
        predictions[f"mm-lf-{variant}"] = zoo.predict_factors(net, params, inputs)

    rand_f, _ = ev.make_baseline_factors("random", test, k,
                                         seed=stage_seed(cfg.seed, "baseline-random"))
    predictions["random"] = rand_f

    ub_cfg = cfg.wmf_songs
    ub_cfg.seed = stage_seed(cfg.seed, "baseline-upper")
    ub_items, ub_users = ev.make_baseline_factors("upper_bound", test, k, cfg=ub_cfg)

    for approach, item_factors in predictions.items():
        report = ev.map_at_k(user_factors, item_factors, test, cfg.eval_k)
        _write_eval(cfg, approach, report)
    report = ev.map_at_k(ub_users, ub_items, test, cfg.eval_k)
    _write_eval(cfg, "upper-bound", report)


def _write_eval(cfg: PipelineConfig, approach: str, report: ev.EvalReport) -> None:
    report.write(cfg.out(f"eval_{approach}.tsv"), cfg.out(f"eval_{approach}.json"))


def _stage_report(cfg: PipelineConfig) -> None:
    rows = []
    for approach in APPROACHES:
        path = _require(cfg, f"eval_{approach}.json")
        with open(path, encoding="utf-8") as fh:
            summary = json.load(fh)
        rows.append((approach, summary["map"], summary["users"]))
    with open(cfg.out("report.tsv"), "w", encoding="utf-8") as fh:
        fh.write("approach\tmap\tusers\n")
        for approach, map_score, users in rows:
            fh.write(f"{approach}\t{map_score:.10f}\t{users}\n")
    with open(cfg.out("report.json"), "w", encoding="utf-8") as fh:
        json.dump({a: {"map": m, "users": u} for a, m, u in rows}, fh, indent=2)
        fh.write("\n")


_STAGE_FNS = {
    "split": _stage_split,
    "factorize-songs": _stage_factorize_songs,
    "factorize-artists": _stage_factorize_artists,
    "enrich": _stage_enrich,
    "vectorize": _stage_vectorize,
    "train-artist": _stage_train_artist,
    "train-track": _stage_train_track,
    "extract": _stage_extract,
    "train-fusion": _stage_train_fusion,
    "evaluate": _stage_evaluate,
    "report": _stage_report,
}

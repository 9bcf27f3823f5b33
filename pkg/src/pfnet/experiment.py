"""End-to-end training runs: data -> network -> RMSprop -> metrics log -> checkpoint."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RESUME_IGNORES, ExperimentConfig
from .data import Corpus, prepare_frames, read_manifest, synth_corpus
from .errors import ConfigError
from .filters import filterbank_to_document
from .metrics import (MetricsReport, classification_error_rate, eer, frame_error_rate, trial_scores,
                      utterance_posteriors, utterance_predictions)
from .model import build_network, load_into, predict_proba, read_checkpoint, save_checkpoint, train_epoch
from .nn import RMSprop, softmax_cross_entropy

log = logging.getLogger(__name__)

METRICS_LOG = "metrics.jsonl"
TIMING_LOG = "timing.jsonl"
CHECKPOINT = "checkpoint.ckpt"


@dataclass
class RunRecord:
    config_hash: str
    reports: list = field(default_factory=list)
    checkpoint_path: str | None = None
    epochs_to_threshold: int | None = None
    wall_time_s: float = 0.0
    network: object = field(default=None, repr=False)

    @property
    def final(self):
        return self.reports[-1] if self.reports else None


@dataclass
class Evaluation:
    loss: float
    fer: float
    cer: float
    eer: float | None
    posteriors: np.ndarray
    utt_posteriors: np.ndarray


def load_corpus(cfg: ExperimentConfig) -> Corpus:
    if cfg.synth is not None:
        return synth_corpus(cfg.synth)
    corpus = read_manifest(cfg.manifest, cfg.filter.sample_rate)
    if corpus.num_classes > cfg.head.num_classes:
        raise ConfigError(f"manifest has {corpus.num_classes} classes, head only {cfg.head.num_classes}")
    return corpus


def frame_sets(cfg: ExperimentConfig, corpus: Corpus):
    fr = cfg.frames
    train = prepare_frames(corpus.split("train"), fr.window_ms, fr.hop_ms, fr.trim_db)
    test = prepare_frames(corpus.split("test"), fr.window_ms, fr.hop_ms, fr.trim_db)
    return train, test


def evaluate(net, frames, trials=(), vote="mean") -> Evaluation:
    post = predict_proba(net, frames.frames)
    loss, _, _ = softmax_cross_entropy(np.log(np.maximum(post, 1e-300)), frames.labels)
    n_utts = len(frames.utt_ids)
    utt_post = utterance_posteriors(post, frames.utt_index, n_utts)
    pred = utterance_predictions(post, frames.utt_index, n_utts, vote)
    usable = [t for t in trials if t.utt_id in set(frames.utt_ids)]
    e = None
    if usable and any(t.is_target for t in usable) and not all(t.is_target for t in usable):
        scores, flags = trial_scores(utt_post, frames.utt_ids, usable)
        e = eer(scores, flags)
    return Evaluation(loss, frame_error_rate(post, frames.labels), classification_error_rate(pred, frames.utt_labels),
                      e, post, utt_post)


def training_loss(net, frames):
    """Cross-entropy over the training frames with inference-mode statistics."""
    post = predict_proba(net, frames.frames)
    return softmax_cross_entropy(np.log(np.maximum(post, 1e-300)), frames.labels)[0]


def make_network(cfg: ExperimentConfig, frame_len: int):
    dtype = np.float32 if cfg.train.dtype == "float32" else np.float64
    net = build_network(cfg.front_end, cfg.filter, cfg.head, frame_len, cfg.train.seed, dtype)
    unknown = set(cfg.train.freeze) - set(net.front_end.params)
    if unknown:
        raise ConfigError(f"cannot freeze unknown front-end parameter(s) {sorted(unknown)}")
    net.front_end.frozen = set(cfg.train.freeze)
    return net


def epoch_rng(seed, epoch):
    # a fresh stream per epoch keeps resumed runs identical to uninterrupted ones
    return np.random.default_rng([seed, 2, epoch])


def train_loop(cfg: ExperimentConfig, out_dir=None, resume=None, corpus=None, write=True) -> RunRecord:
    """Train ``cfg.train.epochs`` epochs, evaluating on the test split.

    Each report's ``loss`` is the mean training mini-batch loss of that
    epoch; epoch 0 reports the initial network on the training frames.

    Writes ``metrics.jsonl`` (deterministic), ``timing.jsonl`` (wall clock),
    ``config.json`` and ``checkpoint.ckpt`` under ``out_dir``.  With
    ``resume`` the run continues from that checkpoint's epoch.
    """
    out = Path(out_dir or cfg.output_dir)
    t0 = time.perf_counter()
    corpus = corpus or load_corpus(cfg)
    train, test = frame_sets(cfg, corpus)
    net = make_network(cfg, train.frames.shape[2])
    opt = RMSprop(cfg.optim)
    start = 0
    if resume is not None:
        arrays, meta = read_checkpoint(resume)
        if meta.get("resume_hash") != cfg.config_hash(RESUME_IGNORES):
            raise ConfigError("checkpoint was produced by a different configuration")
        if int(meta["epoch"]) > cfg.train.epochs:
            raise ConfigError(f"checkpoint is at epoch {meta['epoch']}, beyond train.epochs={cfg.train.epochs}")
        load_into(net, opt, arrays)
        start = int(meta["epoch"])
    record = RunRecord(cfg.config_hash())
    if write:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=1, sort_keys=True) + "\n")
        mode = "a" if resume is not None else "w"
        mlog = open(out / METRICS_LOG, mode)
        tlog = open(out / TIMING_LOG, mode)
    try:
        for epoch in range(start, cfg.train.epochs + 1):
            if epoch == start and resume is not None:
                continue  # already trained and logged before the checkpoint
            if epoch > 0:
                loss = train_epoch(net, opt, train.frames, train.labels, epoch_rng(cfg.train.seed, epoch))
            else:
                loss = training_loss(net, train)
            if epoch % cfg.train.eval_every and epoch != cfg.train.epochs:
                continue
            ev = evaluate(net, test, corpus.trials, cfg.train.vote)
            rep = MetricsReport(epoch, loss, ev.fer, ev.cer, ev.eer,
                                round(time.perf_counter() - t0, 3))
            record.reports.append(rep)
            if record.epochs_to_threshold is None and 100.0 - ev.fer >= cfg.train.accuracy_threshold:
                record.epochs_to_threshold = epoch
            log.info("epoch %d loss %.4f FER %.2f%% CER %.2f%% EER %s", epoch, rep.loss, ev.fer, ev.cer,
                     "n/a" if ev.eer is None else f"{ev.eer:.2f}%")
            if write:
                mlog.write(rep.to_json() + "\n")
                mlog.flush()
                tlog.write(json.dumps({"epoch": epoch, "wall_time_s": rep.wall_time_s}) + "\n")
    finally:
        if write:
            mlog.close()
            tlog.close()
    if write:
        meta = {"config_hash": cfg.config_hash(), "resume_hash": cfg.config_hash(RESUME_IGNORES),
                "epoch": cfg.train.epochs, "front_end": cfg.front_end}
        record.checkpoint_path = str(save_checkpoint(out / CHECKPOINT, net, opt, meta))
        if cfg.front_end == "pfnet":
            (out / "filters.json").write_text(filterbank_to_document(net.front_end.bank, cfg.filter) + "\n")
    record.wall_time_s = time.perf_counter() - t0
    record.network = net
    return record


def load_trained(cfg: ExperimentConfig, checkpoint, frame_len=None):
    arrays, meta = read_checkpoint(checkpoint)
    if frame_len is None:
        frame_len = int(round(cfg.frames.window_ms * 1e-3 * cfg.filter.sample_rate))
    net = make_network(cfg, frame_len)
    load_into(net, None, arrays)
    return net, meta

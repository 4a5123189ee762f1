"""Training loop, optimizer, evaluation and the ablation harness.

Training is teacher-forced NLL with gradient accumulation over a batch,
global-norm clipping and Adam. The checkpoint kept is the one with the
least validation loss. Runs are reproducible from the seed: shuffling
uses a dedicated generator and batch accumulation follows a fixed
example order.
"""

import json
import logging
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .encoder import EncoderConfig
from .checkpoint import load_checkpoint, save_checkpoint
from .graphs import read_corpus
from .metrics import bleu4, rouge
from .model import Model, ModelConfig
from .synth import SynthSpec, gen_synthetic_corpus
from .tensor import Tape

log = logging.getLogger("sssgen")


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings.

    The stock learning rate suits trainable or shallow frozen embeddings;
    deep frozen embedding stacks train best around 0.004. Batch size 8 is
    the desk-scale default; 64 is the full-scale setting.
    """

    learning_rate: float = 0.0004
    batch_size: int = 8
    clip_norm: float = 2.0
    epochs: int = 15
    seed: int = 0
    max_len: int = 40
    stop_train_acc: float = None  # optional early exit on train accuracy
    checkpoint_policy: str = "least_val_loss"

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.clip_norm <= 0:
            raise ValueError("learning rate, batch size and clip norm must be positive")
        if self.epochs < 1 or self.max_len < 1:
            raise ValueError("epochs and max_len must be positive")
        if self.checkpoint_policy != "least_val_loss":
            raise ValueError("only the least-validation-loss checkpoint policy exists")

    def to_json(self):
        return {
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "clip_norm": self.clip_norm,
            "epochs": self.epochs,
            "seed": self.seed,
            "max_len": self.max_len,
            "stop_train_acc": self.stop_train_acc,
            "checkpoint_policy": self.checkpoint_policy,
        }

    @classmethod
    def from_json(cls, obj):
        return cls(**obj)


# ---------------------------------------------------------------------------
# loss and optimizer


def nll_loss(dists, target_tokens):
    """Mean negative log probability of the targets; probabilities are
    floored at 1e-12 before the log."""
    if len(dists) != len(target_tokens):
        raise ValueError(f"{len(dists)} distributions vs {len(target_tokens)} targets")
    total = None
    for dist, token in zip(dists, target_tokens):
        piece = T.scale(T.log(T.clamp_min(dist.prob_of(token), 1e-12)), -1.0)
        total = piece if total is None else T.add(total, piece)
    return T.scale(total, 1.0 / len(dists))


def clip_gradients(grads, clip_norm):
    """Scale the whole gradient map so its global norm is at most
    clip_norm; direction is preserved exactly."""
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g * g))
    norm = math.sqrt(total)
    if norm > clip_norm:
        scale = clip_norm / norm
        grads = {name: g * scale for name, g in grads.items()}
    return grads, norm


class AdamState:
    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {}
        self.v = {}
        self.t = 0


def optimizer_step(grads, params, cfg, state):
    """Clip, then apply one Adam update to every parameter.

    Parameters missing from ``grads`` get zero gradients (their moments
    still decay). Non-finite gradients abort the whole step with a logged
    skip. Returns True when the step was applied.
    """
    for name, g in grads.items():
        if not np.isfinite(g).all():
            log.warning("skipping optimizer step: non-finite gradient in %s", name)
            return False
    full = {
        name: grads.get(name, np.zeros(p.values.shape)) for name, p in params.items()
    }
    full, _ = clip_gradients(full, cfg.clip_norm)
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1 ** state.t
    correction2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = full[name]
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        v = state.v[name]
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.m[name] = m
        state.v[name] = v
        update = (m / correction1) / (np.sqrt(v / correction2) + state.eps)
        p.replace_values(p.values - cfg.learning_rate * update)
    return True


# ---------------------------------------------------------------------------
# training


def _example_gradients(model, record, force_generate):
    with Tape() as tape:
        loss, steps, correct = model.example_loss(record, force_generate=force_generate)
    grads = tape.backward(loss)
    out = {}
    for name, p in model.params.items():
        g = grads.wrt(p)
        if g is not None:
            out[name] = g.values
    return out, loss.item(), steps, correct


def _epoch_pass(model, records, tcfg, adam, rng, force_generate):
    order = rng.permutation(len(records))
    total_loss = 0.0
    total_steps = 0
    total_correct = 0
    for start in range(0, len(order), tcfg.batch_size):
        batch = order[start:start + tcfg.batch_size]
        accum = {}
        for idx in batch:
            grads, loss_val, steps, correct = _example_gradients(
                model, records[idx], force_generate
            )
            total_loss += loss_val
            total_steps += steps
            total_correct += correct
            for name, g in grads.items():
                if name in accum:
                    accum[name] = accum[name] + g
                else:
                    accum[name] = g
        mean = {name: g / len(batch) for name, g in accum.items()}
        optimizer_step(mean, model.params, tcfg, adam)
    return total_loss / len(records), total_correct / max(total_steps, 1)


def validation_loss(model, records, force_generate=False):
    """Teacher-forced mean loss without recording a tape."""
    total = 0.0
    for record in records:
        loss, _, _ = model.example_loss(record, force_generate=force_generate)
        total += loss.item()
    return total / len(records)


def train_model(model, train_records, valid_records, tcfg, ckpt_path=None,
                force_generate=False):
    """Run the configured number of epochs; keep the checkpoint with the
    least validation loss. Returns the history dict."""
    adam = AdamState()
    rng = np.random.default_rng(tcfg.seed)
    history = {"train_loss": [], "train_acc": [], "val_loss": [], "best_epoch": None,
               "epochs_run": 0}
    best_val = float("inf")
    started = time.time()
    for epoch in range(1, tcfg.epochs + 1):
        train_loss, train_acc = _epoch_pass(
            model, train_records, tcfg, adam, rng, force_generate
        )
        val_loss = validation_loss(model, valid_records, force_generate=force_generate)
        history["train_loss"].append(train_loss)
        history["train_acc"].append(train_acc)
        history["val_loss"].append(val_loss)
        history["epochs_run"] = epoch
        if val_loss < best_val:
            best_val = val_loss
            history["best_epoch"] = epoch
            if ckpt_path is not None:
                save_checkpoint(ckpt_path, model)
        log.info(
            "epoch %d: train loss %.4f acc %.3f | val loss %.4f | %.1fs",
            epoch, train_loss, train_acc, val_loss, time.time() - started,
        )
        if tcfg.stop_train_acc is not None and train_acc >= tcfg.stop_train_acc:
            log.info("early exit: train accuracy %.3f reached target", train_acc)
            break
    return history


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class MetricsReport:
    bleu: float
    rouge1: float
    rouge2: float
    rouge_l: float
    exact_match: float
    generations: list

    def __post_init__(self):
        for score in (self.bleu, self.rouge1, self.rouge2, self.rouge_l):
            if not 0.0 <= score <= 100.0:
                raise ValueError(f"score {score} outside [0, 100]")

    def to_json(self):
        return {
            "bleu4": self.bleu,
            "rouge1": self.rouge1,
            "rouge2": self.rouge2,
            "rougeL": self.rouge_l,
            "exact_match": self.exact_match,
            "generations": [" ".join(tokens) for tokens in self.generations],
        }


def evaluate_model(model, records, max_len=40, force_generate=False):
    generations = [
        model.generate(record, max_len=max_len, force_generate=force_generate)
        for record in records
    ]
    references = [list(record.response_tokens) for record in records]
    r1, r2, rl = rouge(generations, references)
    exact = sum(g == r for g, r in zip(generations, references)) / len(records)
    return MetricsReport(
        bleu=bleu4(generations, references),
        rouge1=r1,
        rouge2=r2,
        rouge_l=rl,
        exact_match=100.0 * exact,
        generations=generations,
    )


def decode_records(model, records, max_len=40):
    return [" ".join(model.generate(record, max_len=max_len)) for record in records]


# ---------------------------------------------------------------------------
# run configuration and entry points


@dataclass
class RunConfig:
    model: ModelConfig
    train: TrainConfig
    train_data: str
    valid_data: str
    embeddings: str = None
    out_dir: str = "run"

    @classmethod
    def from_json(cls, obj):
        data = obj.get("data", {})
        return cls(
            model=ModelConfig.from_json(obj.get("model", {})),
            train=TrainConfig.from_json(obj.get("train", {})),
            train_data=data["train"],
            valid_data=data["valid"],
            embeddings=data.get("embeddings"),
            out_dir=obj.get("out_dir", "run"),
        )

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def _attach_embeddings(model, run_cfg):
    if model.cfg.encoder.embedding == "file":
        if not run_cfg or not run_cfg.embeddings:
            raise ValueError("file-embedding mode needs an embeddings path")
        from .encoder import load_embeddings

        model.attach_doc_embeddings(load_embeddings(run_cfg.embeddings))


def train(run_cfg):
    """End-to-end training from a RunConfig; returns (model, history)."""
    train_records = read_corpus(run_cfg.train_data)
    valid_records = read_corpus(run_cfg.valid_data)
    model = Model.build(run_cfg.model, train_records, seed=run_cfg.train.seed)
    _attach_embeddings(model, run_cfg)
    os.makedirs(run_cfg.out_dir, exist_ok=True)
    ckpt = os.path.join(run_cfg.out_dir, "model.ckpt")
    history = train_model(model, train_records, valid_records, run_cfg.train, ckpt_path=ckpt)
    with open(os.path.join(run_cfg.out_dir, "history.json"), "w", encoding="utf-8") as fh:
        json.dump(history, fh, indent=2)
    return model, history


def evaluate(ckpt_path, data_path, max_len=40, embeddings=None):
    model = load_checkpoint(ckpt_path)
    if model.cfg.encoder.embedding == "file":
        from .encoder import load_embeddings

        if embeddings is None:
            raise ValueError("file-embedding mode needs an embeddings path")
        model.attach_doc_embeddings(load_embeddings(embeddings))
    return evaluate_model(model, read_corpus(data_path), max_len=max_len)


def decode(ckpt_path, data_path, out_path, max_len=40, embeddings=None):
    model = load_checkpoint(ckpt_path)
    if model.cfg.encoder.embedding == "file":
        from .encoder import load_embeddings

        if embeddings is None:
            raise ValueError("file-embedding mode needs an embeddings path")
        model.attach_doc_embeddings(load_embeddings(embeddings))
    lines = decode_records(model, read_corpus(data_path), max_len=max_len)
    with open(out_path, "w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(line + "\n")
    return lines


# ---------------------------------------------------------------------------
# ablation harness


ABLATION_SUBSETS = (("dep",), ("dep", "ent"), ("dep", "coref"), ("dep", "ent", "coref"))


def run_ablation(train_records, valid_records, out_path, epochs=2,
                 embedding_dim=16, lstm_hidden=12, decoder_hidden=16,
                 attn_hidden=12, max_vocab=200, seed=0, max_len=20,
                 learning_rate=0.002):
    """Train and score every encoder composition: the two baseline modes
    once each, the three hybrid modes across hop counts and graph
    subsets. Emits one row per configuration; no targets are asserted."""
    rows = []
    configs = [("sem", 1, ("dep",)), ("sem_seq", 1, ("dep",))]
    for mode in ("seq_gcn", "str_lstm", "par_gcn_lstm"):
        for hops in (1, 2, 3):
            for subset in ABLATION_SUBSETS:
                configs.append((mode, hops, subset))
    tcfg = TrainConfig(
        learning_rate=learning_rate, batch_size=8, epochs=epochs, seed=seed,
        max_len=max_len,
    )
    for mode, hops, subset in configs:
        enc = EncoderConfig(
            mode=mode, relations=subset, hops=hops,
            embedding_dim=embedding_dim, lstm_hidden=lstm_hidden,
            gcn_hidden=2 * lstm_hidden if mode == "par_gcn_lstm" else lstm_hidden,
        )
        cfg = ModelConfig(
            encoder=enc, decoder_hidden=decoder_hidden, attn_hidden=attn_hidden,
            max_vocab=max_vocab,
        )
        model = Model.build(cfg, train_records, seed=seed)
        train_model(model, train_records, valid_records, tcfg)
        report = evaluate_model(model, valid_records, max_len=max_len)
        rows.append({
            "mode": mode,
            "hops": hops if mode not in ("sem", "sem_seq") else None,
            "relations": list(subset) if mode not in ("sem", "sem_seq") else [],
            "bleu4": report.bleu,
            "rouge1": report.rouge1,
            "rouge2": report.rouge2,
            "rougeL": report.rouge_l,
            "exact_match": report.exact_match,
        })
        log.info("ablation %s hops=%s %s: BLEU %.2f", mode, hops, subset, report.bleu)
    with open(out_path, "w", encoding="utf-8") as fh:
        json.dump(rows, fh, indent=2)
    return rows


def format_ablation_table(rows):
    header = f"{'mode':<14}{'hops':<6}{'graphs':<18}{'BLEU':>7}{'R1':>7}{'R2':>7}{'RL':>7}"
    lines = [header, "-" * len(header)]
    for row in rows:
        graphs = "+".join(row["relations"]) or "-"
        hops = row["hops"] if row["hops"] is not None else "-"
        lines.append(
            f"{row['mode']:<14}{hops!s:<6}{graphs:<18}"
            f"{row['bleu4']:>7.2f}{row['rouge1']:>7.2f}{row['rouge2']:>7.2f}{row['rougeL']:>7.2f}"
        )
    return "\n".join(lines)


def make_synthetic_files(spec_obj, out_dir):
    """CLI-side synthetic corpus writer; returns the written paths."""
    from .graphs import write_corpus

    os.makedirs(out_dir, exist_ok=True)
    paths = {}
    if "docs" in spec_obj:
        spec = SynthSpec.from_json(spec_obj)
        paths["corpus"] = os.path.join(out_dir, "corpus.jsonl")
        write_corpus(paths["corpus"], gen_synthetic_corpus(spec))
        return paths
    base = {k: v for k, v in spec_obj.items() if k not in ("train_docs", "valid_docs")}
    train_spec = SynthSpec.from_json({**base, "docs": spec_obj["train_docs"]})
    valid_spec = SynthSpec.from_json(
        {**base, "docs": spec_obj["valid_docs"], "seed": train_spec.seed + 1}
    )
    paths["train"] = os.path.join(out_dir, "train.jsonl")
    paths["valid"] = os.path.join(out_dir, "valid.jsonl")
    write_corpus(paths["train"], gen_synthetic_corpus(train_spec))
    write_corpus(paths["valid"], gen_synthetic_corpus(valid_spec))
    return paths

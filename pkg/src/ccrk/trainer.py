"""Desk-scale trainer: affine per-view encoder maps optimized under the
contrastive objectives, with optional match/masked-token heads.

The model maps raw corpus embeddings through one affine map per view (one
for images, one per language) and normalizes. Losses provide gradients with
respect to the normalized outputs; this module backpropagates through the
normalization and the affine maps. Deliberately linear: the consistency
phenomena under study live in the loss geometry, not in encoder capacity.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .corpus import (
    MultilingualCorpus,
    SyntheticConfig,
    TokenCorpus,
    generate_synthetic,
    save_corpus,
)
from .errors import Divergence, InvalidConfig
from .losses import (
    CmlmHead,
    LossConfig,
    MitmHead,
    MODE_ONE_TO_K,
    MODE_ONE_TO_ONE,
    PretrainHeads,
    cl_1to1,
    combined_loss,
    kcl_i2t,
    kcl_t2i,
)
from .metrics import DIRECTION_IR, DIRECTION_TR, MetricsReport, compute_ranks, metrics_report
from .numerics import Rng, row_norms

MODE_FULL = "full"
LOSS_MODES = (MODE_ONE_TO_ONE, MODE_ONE_TO_K, MODE_FULL)

OPTIMIZERS = ("sgd", "adam")
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
ADAM_WEIGHT_DECAY = 0.01


@dataclass
class TrainConfig:
    epochs: int = 40
    batch_size: int = 64
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    tau: float = 0.07
    loss_mode: str = MODE_ONE_TO_K
    seed: int = 0
    eval_every: int = 5
    model_dim: int | None = None       # defaults to the corpus dimension
    mask_rate: float = 0.15
    mining_weighting: str = "linear_shift"
    fused_dim: int | None = None       # match head width, defaults to model_dim
    token_dim: int = 16
    init_scale: float | None = None    # defaults to 1/sqrt(input_dim)

    def validate(self) -> None:
        if self.epochs < 1 or self.batch_size < 1 or self.eval_every < 1:
            raise InvalidConfig("epochs, batch_size and eval_every must be positive")
        if not (np.isfinite(self.learning_rate) and self.learning_rate >= 0):
            raise InvalidConfig("learning_rate must be finite and >= 0")
        if self.optimizer not in OPTIMIZERS:
            raise InvalidConfig(f"unknown optimizer {self.optimizer!r}")
        if self.loss_mode not in LOSS_MODES:
            raise InvalidConfig(f"unknown loss mode {self.loss_mode!r}")
        if not (np.isfinite(self.tau) and self.tau > 0):
            raise InvalidConfig("tau must be positive")


@dataclass
class TraceStep:
    step: int
    total: float
    kcl_i2t: float
    kcl_t2i: float
    mitm: float
    cmlm: float


@dataclass
class Checkpoint:
    epoch: int
    direction: str
    mean_r1: float
    mrv: float | None
    recall_gap: float


@dataclass
class TrainTrace:
    steps: list[TraceStep] = field(default_factory=list)
    checkpoints: list[Checkpoint] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)
    epoch_loss: dict[int, float] = field(default_factory=dict)

    def write_trace_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "total_loss", "kcl_i2t", "kcl_t2i", "mitm", "cmlm"])
            for s in self.steps:
                w.writerow([s.step, f"{s.total:.12g}", f"{s.kcl_i2t:.12g}",
                            f"{s.kcl_t2i:.12g}", f"{s.mitm:.12g}", f"{s.cmlm:.12g}"])

    def write_checkpoints_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "direction", "mean_r1", "mrv", "recall_gap"])
            for c in self.checkpoints:
                mrv_s = "nan" if c.mrv is None else f"{c.mrv:.12g}"
                w.writerow([c.epoch, c.direction, f"{c.mean_r1:.12g}", mrv_s,
                            f"{c.recall_gap:.12g}"])


class ToyModel:
    """One affine map per view; outputs are row-normalized embeddings."""

    def __init__(self, w_img, b_img, w_txt, b_txt, mitm_head=None, cmlm_head=None,
                 language_codes=None):
        self.w_img = w_img            # (model_dim, input_dim)
        self.b_img = b_img            # (model_dim,)
        self.w_txt = w_txt            # (K, model_dim, input_dim)
        self.b_txt = b_txt            # (K, model_dim)
        self.mitm_head = mitm_head
        self.cmlm_head = cmlm_head
        self.language_codes = language_codes

    @classmethod
    def create(cls, input_dim: int, n_languages: int, cfg: TrainConfig, rng: Rng,
               vocab_size: int | None = None, language_codes=None) -> "ToyModel":
        model_dim = cfg.model_dim or input_dim
        scale = cfg.init_scale if cfg.init_scale is not None else 1.0 / np.sqrt(input_dim)
        g = rng.gen
        w_img = scale * g.standard_normal((model_dim, input_dim))
        b_img = np.zeros(model_dim)
        w_txt = scale * g.standard_normal((n_languages, model_dim, input_dim))
        b_txt = np.zeros((n_languages, model_dim))
        mitm = cmlm = None
        if cfg.loss_mode == MODE_FULL:
            if vocab_size is None:
                raise InvalidConfig("full mode needs a token corpus (vocab size unknown)")
            fused = cfg.fused_dim or model_dim
            mitm = MitmHead.create(model_dim, fused, rng.spawn(101))
            cmlm = CmlmHead.create(vocab_size, cfg.token_dim, model_dim, rng.spawn(102))
        return cls(w_img, b_img, w_txt, b_txt, mitm, cmlm, language_codes)

    @property
    def n_languages(self) -> int:
        return self.w_txt.shape[0]

    @property
    def n_params(self) -> int:
        base = self.w_img.size + self.b_img.size + self.w_txt.size + self.b_txt.size
        if self.mitm_head is not None:
            base += self.mitm_head.n_params + self.cmlm_head.n_params
        return base

    def params_flat(self) -> np.ndarray:
        parts = [self.w_img.ravel(), self.b_img, self.w_txt.ravel(), self.b_txt.ravel()]
        if self.mitm_head is not None:
            parts += [self.mitm_head.params_flat(), self.cmlm_head.params_flat()]
        return np.concatenate(parts)

    def set_params_flat(self, flat: np.ndarray) -> None:
        a = self.w_img.size
        b = a + self.b_img.size
        c = b + self.w_txt.size
        d = c + self.b_txt.size
        self.w_img = flat[:a].reshape(self.w_img.shape).copy()
        self.b_img = flat[a:b].copy()
        self.w_txt = flat[b:c].reshape(self.w_txt.shape).copy()
        self.b_txt = flat[c:d].reshape(self.b_txt.shape).copy()
        if self.mitm_head is not None:
            e = d + self.mitm_head.n_params
            self.mitm_head = self.mitm_head.with_params(flat[d:e])
            self.cmlm_head = self.cmlm_head.with_params(flat[e:])

    def encode_images(self, x: np.ndarray):
        z = x @ self.w_img.T + self.b_img
        norms = row_norms(z)
        return z, z / norms[:, None], norms

    def encode_texts(self, x: np.ndarray):
        n, k, _ = x.shape
        z = np.einsum("nki,kmi->nkm", x, self.w_txt) + self.b_txt[None, :, :]
        norms = row_norms(z)
        return z, z / norms[..., None], norms

    def encode_corpus(self, corpus: MultilingualCorpus) -> MultilingualCorpus:
        _, y_i, _ = self.encode_images(corpus.image_embeddings)
        _, y_t, _ = self.encode_texts(corpus.text_embeddings)
        out = MultilingualCorpus(
            image_embeddings=y_i,
            text_embeddings=y_t,
            language_codes=list(corpus.language_codes),
            instance_ids=list(corpus.instance_ids),
            normalized=True,
        )
        out.validate()
        return out


def _backprop_normalize(g_y: np.ndarray, y: np.ndarray, norms: np.ndarray) -> np.ndarray:
    # y = z/|z|; dL/dz = (dL/dy - (dL/dy . y) y) / |z|
    inner = np.sum(g_y * y, axis=-1, keepdims=True)
    return (g_y - inner * y) / norms[..., None]


def _sub_tokens(tokens: TokenCorpus, idx: np.ndarray) -> TokenCorpus:
    return TokenCorpus(
        vocab_size=tokens.vocab_size,
        sequences=[tokens.sequences[int(j)] for j in idx],
        language_vocab_ranges=tokens.language_vocab_ranges,
        concept_of_instance=[tokens.concept_of_instance[int(j)] for j in idx],
    )


def evaluate_step(model: ToyModel, corpus: MultilingualCorpus,
                  tokens: TokenCorpus | None, cfg: TrainConfig, rng: Rng,
                  idx: np.ndarray | None = None):
    """Loss, components, and flat parameter gradient for one (mini-)batch.

    idx selects the batch instances (default: all). The gradient layout
    matches ToyModel.params_flat().
    """
    if idx is None:
        idx = np.arange(corpus.n_instances)
    x_img = corpus.image_embeddings[idx]
    x_txt = corpus.text_embeddings[idx]
    _, y_i, norm_i = model.encode_images(x_img)
    _, y_t, norm_t = model.encode_texts(x_txt)
    sub = MultilingualCorpus(
        image_embeddings=y_i,
        text_embeddings=y_t,
        language_codes=list(corpus.language_codes),
        instance_ids=[corpus.instance_ids[int(j)] for j in idx],
        normalized=True,
    )
    g_heads = None
    if cfg.loss_mode == MODE_ONE_TO_K:
        lcfg = LossConfig(tau=cfg.tau, mode=MODE_ONE_TO_K)
        rep_i = kcl_i2t(sub, lcfg)
        rep_t = kcl_t2i(sub, lcfg)
        g_yi = rep_i.grad_images + rep_t.grad_images
        g_yt = rep_i.grad_texts + rep_t.grad_texts
        components = {"kcl_i2t": rep_i.value, "kcl_t2i": rep_t.value,
                      "mitm": 0.0, "cmlm": 0.0}
        value = rep_i.value + rep_t.value
    elif cfg.loss_mode == MODE_ONE_TO_ONE:
        lcfg = LossConfig(tau=cfg.tau, mode=MODE_ONE_TO_ONE)
        rep = cl_1to1(sub, lcfg, rng)
        # optimize the sum of the two directions (2x the reported mean), so a
        # K=1 run matches the one_to_k composition bit for bit
        g_yi = 2.0 * rep.grad_images
        g_yt = 2.0 * rep.grad_texts
        components = {"kcl_i2t": rep.components["i2t"], "kcl_t2i": rep.components["t2i"],
                      "mitm": 0.0, "cmlm": 0.0}
        value = 2.0 * rep.value
    elif cfg.loss_mode == MODE_FULL:
        lcfg = LossConfig(tau=cfg.tau, mode=MODE_ONE_TO_K)
        heads = PretrainHeads(model.mitm_head, model.cmlm_head)
        rep = combined_loss(sub, _sub_tokens(tokens, idx) if tokens else None,
                            heads, lcfg, rng,
                            mask_rate=cfg.mask_rate, weighting=cfg.mining_weighting)
        g_yi = rep.grad_images
        g_yt = rep.grad_texts
        g_heads = rep.grad_params
        components = {"kcl_i2t": rep.components["kcl_i2t"],
                      "kcl_t2i": rep.components["kcl_t2i"],
                      "mitm": rep.components["mitm_i2t"] + rep.components["mitm_t2i"],
                      "cmlm": rep.components["cmlm"]}
        value = rep.value
    else:
        raise InvalidConfig(f"unknown loss mode {cfg.loss_mode!r}")

    g_zi = _backprop_normalize(g_yi, y_i, norm_i)
    g_zt = _backprop_normalize(g_yt, y_t, norm_t)
    g_w_img = g_zi.T @ x_img
    g_b_img = g_zi.sum(axis=0)
    g_w_txt = np.einsum("nkm,nki->kmi", g_zt, x_txt)
    g_b_txt = g_zt.sum(axis=0)

    parts = [g_w_img.ravel(), g_b_img, g_w_txt.ravel(), g_b_txt.ravel()]
    if model.mitm_head is not None:
        if g_heads is None:
            g_heads = np.zeros(model.mitm_head.n_params + model.cmlm_head.n_params)
        parts.append(g_heads)
    return value, components, np.concatenate(parts)


class _Optimizer:
    def __init__(self, kind: str, lr: float, size: int):
        self.kind = kind
        self.lr = lr
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, flat: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.kind == "sgd":
            return flat - self.lr * grad
        self.t += 1
        self.m = ADAM_BETA1 * self.m + (1 - ADAM_BETA1) * grad
        self.v = ADAM_BETA2 * self.v + (1 - ADAM_BETA2) * grad * grad
        m_hat = self.m / (1 - ADAM_BETA1 ** self.t)
        v_hat = self.v / (1 - ADAM_BETA2 ** self.t)
        return flat - self.lr * (m_hat / (np.sqrt(v_hat) + ADAM_EPS)
                                 + ADAM_WEIGHT_DECAY * flat)


def _batches(perm: np.ndarray, batch_size: int) -> list[np.ndarray]:
    # contrastive losses need >= 2 instances, so a size-1 tail joins the
    # previous batch instead of forming its own
    batches = [perm[i:i + batch_size] for i in range(0, len(perm), batch_size)]
    if len(batches) > 1 and len(batches[-1]) == 1:
        batches[-2] = np.concatenate([batches[-2], batches[-1]])
        batches.pop()
    return batches


def _eval_checkpoint(model: ToyModel, corpus: MultilingualCorpus, epoch: int,
                     trace: TrainTrace) -> dict[str, MetricsReport]:
    encoded = model.encode_corpus(corpus)
    out = {}
    for direction in (DIRECTION_TR, DIRECTION_IR):
        report = metrics_report(compute_ranks(encoded, direction))
        out[direction.lower()] = report
        trace.checkpoints.append(Checkpoint(
            epoch=epoch,
            direction=direction,
            mean_r1=report.mean_recall["r1"],
            mrv=report.mrv,
            recall_gap=report.recall_gap,
        ))
    return out


def train(corpus: MultilingualCorpus, tokens: TokenCorpus | None,
          cfg: TrainConfig) -> tuple[ToyModel, TrainTrace]:
    """Mini-batch gradient descent on the selected loss composition.

    Deterministic under cfg.seed: model init, batch order, language
    selection, mining and masking all derive from one seed tree. Raises
    Divergence (with the failing step) if the loss becomes non-finite.
    """
    cfg.validate()
    if cfg.loss_mode == MODE_FULL and tokens is None:
        raise InvalidConfig("full mode requires a token corpus")
    root = Rng(cfg.seed)
    model = ToyModel.create(corpus.dim, corpus.n_languages, cfg, root.spawn(0),
                            vocab_size=tokens.vocab_size if tokens else None,
                            language_codes=list(corpus.language_codes))
    trace = TrainTrace()
    flat = model.params_flat()
    opt = _Optimizer(cfg.optimizer, cfg.learning_rate, flat.size)
    _eval_checkpoint(model, corpus, 0, trace)

    n = corpus.n_instances
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        perm = root.spawn(1, epoch).gen.permutation(n)
        epoch_losses = []
        for idx in _batches(perm, cfg.batch_size):
            step_rng = root.spawn(2, epoch, step)
            value, comps, grad = evaluate_step(model, corpus, tokens, cfg, step_rng, idx)
            if not np.isfinite(value):
                raise Divergence("training loss is non-finite", step=step)
            trace.steps.append(TraceStep(
                step=step, total=value,
                kcl_i2t=comps["kcl_i2t"], kcl_t2i=comps["kcl_t2i"],
                mitm=comps["mitm"], cmlm=comps["cmlm"]))
            epoch_losses.append(value)
            flat = opt.step(flat, grad)
            model.set_params_flat(flat)
            step += 1
        trace.epoch_loss[epoch] = float(np.mean(epoch_losses))
        trace.epoch_seconds.append(time.perf_counter() - t0)
        if epoch % cfg.eval_every == 0 or epoch == cfg.epochs:
            _eval_checkpoint(model, corpus, epoch, trace)
    return model, trace


def final_metrics(model: ToyModel, corpus: MultilingualCorpus) -> dict[str, MetricsReport]:
    encoded = model.encode_corpus(corpus)
    return {direction.lower(): metrics_report(compute_ranks(encoded, direction))
            for direction in (DIRECTION_TR, DIRECTION_IR)}


def export_embeddings(model: ToyModel, corpus: MultilingualCorpus, path) -> None:
    """Write the model's normalized output embeddings in the binary format."""
    save_corpus(model.encode_corpus(corpus), path, "binary")


# --------------------------------------------------------------------------
# mode comparison


@dataclass
class CompareRun:
    mode: str
    seed: int
    trace: TrainTrace
    final: dict[str, MetricsReport]

    @property
    def final_mrv(self) -> float:
        return float(np.mean([self.final["tr"].mrv, self.final["ir"].mrv]))

    @property
    def final_mean_r1(self) -> float:
        return float(np.mean([self.final["tr"].mean_recall["r1"],
                              self.final["ir"].mean_recall["r1"]]))

    @property
    def final_recall_gap(self) -> float:
        return float(np.mean([self.final["tr"].recall_gap, self.final["ir"].recall_gap]))


@dataclass
class ComparisonReport:
    runs: list[CompareRun]

    def mode_runs(self, mode: str) -> list[CompareRun]:
        return [r for r in self.runs if r.mode == mode]

    def mean_over_seeds(self, mode: str, attr: str) -> float:
        return float(np.mean([getattr(r, attr) for r in self.mode_runs(mode)]))

    def checkpoint_rows(self) -> list[dict]:
        rows = []
        for run in self.runs:
            by_epoch: dict[int, dict] = {}
            for c in run.trace.checkpoints:
                row = by_epoch.setdefault(c.epoch, {
                    "mode": run.mode, "seed": run.seed, "epoch": c.epoch,
                    "loss": run.trace.epoch_loss.get(c.epoch, float("nan")),
                })
                prefix = c.direction.lower()
                row[f"{prefix}_mean_r1"] = c.mean_r1
                row[f"{prefix}_mrv"] = c.mrv
                row[f"{prefix}_recall_gap"] = c.recall_gap
            for epoch in sorted(by_epoch):
                row = by_epoch[epoch]
                row["mean_r1"] = (row["tr_mean_r1"] + row["ir_mean_r1"]) / 2.0
                if row["tr_mrv"] is None or row["ir_mrv"] is None:
                    row["mrv"] = float("nan")
                else:
                    row["mrv"] = (row["tr_mrv"] + row["ir_mrv"]) / 2.0
                row["recall_gap"] = (row["tr_recall_gap"] + row["ir_recall_gap"]) / 2.0
                rows.append(row)
        return rows

    def summary(self) -> dict:
        out = {}
        for mode in sorted({r.mode for r in self.runs}):
            out[mode] = {
                "per_seed": [{
                    "seed": r.seed,
                    "final_mrv": r.final_mrv,
                    "final_mean_r1": r.final_mean_r1,
                    "final_recall_gap": r.final_recall_gap,
                } for r in self.mode_runs(mode)],
                "mean_final_mrv": self.mean_over_seeds(mode, "final_mrv"),
                "mean_final_r1": self.mean_over_seeds(mode, "final_mean_r1"),
                "mean_final_recall_gap": self.mean_over_seeds(mode, "final_recall_gap"),
            }
        return out

    def write_checkpoints_csv(self, path) -> None:
        rows = self.checkpoint_rows()
        cols = ["mode", "seed", "epoch", "loss", "mean_r1", "mrv", "recall_gap",
                "tr_mean_r1", "ir_mean_r1", "tr_mrv", "ir_mrv",
                "tr_recall_gap", "ir_recall_gap"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for row in rows:
                w.writerow(["nan" if row[c] is None else row[c] for c in cols])


def compare_modes(cfg_one_to_one: TrainConfig, cfg_one_to_k: TrainConfig,
                  corpus_cfg: SyntheticConfig, n_seeds: int) -> ComparisonReport:
    """Train both contrastive modes on identical per-seed corpora.

    The two configs must be identical apart from loss_mode. Seed s uses the
    synthetic corpus seeded corpus_cfg.seed + s and training seed
    cfg.seed + s, shared by both modes, so every difference comes from the
    objective.
    """
    if replace(cfg_one_to_one, loss_mode=MODE_ONE_TO_K) != cfg_one_to_k:
        raise InvalidConfig("configs must be identical apart from loss_mode")
    if cfg_one_to_one.loss_mode != MODE_ONE_TO_ONE or cfg_one_to_k.loss_mode != MODE_ONE_TO_K:
        raise InvalidConfig("expected one one_to_one and one one_to_k config")
    if n_seeds < 1:
        raise InvalidConfig("n_seeds must be >= 1")
    runs = []
    for s in range(n_seeds):
        corpus, tokens = generate_synthetic(replace(corpus_cfg, seed=corpus_cfg.seed + s))
        for cfg in (cfg_one_to_one, cfg_one_to_k):
            run_cfg = replace(cfg, seed=cfg.seed + s)
            model, trace = train(corpus, tokens, run_cfg)
            runs.append(CompareRun(
                mode=cfg.loss_mode, seed=run_cfg.seed, trace=trace,
                final=final_metrics(model, corpus)))
    return ComparisonReport(runs=runs)

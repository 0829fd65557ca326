"""Training objectives with analytic gradients.

Four objectives and their sum:

* one-to-K contrastive (image-to-text): each image treats its K texts as
  positives with soft label 1/K each, against all N*K in-batch texts.
* one-to-K contrastive (text-to-image): each text competes for its image
  against all N in-batch images.
* one-to-one contrastive baseline: one uniformly sampled language per
  instance, symmetric InfoNCE over the N selected pairs.
* match classification (i2t and t2i terms) over fused pairs, and masked
  token reconstruction with image context.

All gradients are with respect to the normalized embeddings fed in;
backpropagation through normalization belongs to the encoder maps in the
trainer. Every loss is checked against central finite differences in the
test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import MultilingualCorpus, TokenCorpus
from .errors import (
    AllMasked,
    DegenerateBatch,
    EmptySequence,
    InvalidConfig,
    NotNormalized,
)
from . import mining
from .numerics import Rng, log_sum_exp_rows, softmax_rows

MODE_ONE_TO_K = "one_to_k"
MODE_ONE_TO_ONE = "one_to_one"

DEFAULT_TAU = 0.07
DEFAULT_MASK_RATE = 0.15
HEAD_INIT_SCALE = 0.02


@dataclass
class LossConfig:
    tau: float = DEFAULT_TAU
    mode: str = MODE_ONE_TO_K

    def __post_init__(self):
        if not (np.isfinite(self.tau) and self.tau > 0):
            raise InvalidConfig(f"temperature must be finite and positive, got {self.tau}")
        if self.mode not in (MODE_ONE_TO_K, MODE_ONE_TO_ONE):
            raise InvalidConfig(f"unknown loss mode {self.mode!r}")


@dataclass
class LossReport:
    """Scalar loss plus gradients for everything it touches.

    grad_images / grad_texts mirror the corpus layout; grad_params is the
    flat parameter gradient of a parametric head; grad_inputs carries
    per-vector gradients for losses taking individual vectors. components
    holds named sub-values when the loss is a composite.
    """

    value: float
    grad_images: np.ndarray | None = None
    grad_texts: np.ndarray | None = None
    grad_params: np.ndarray | None = None
    grad_inputs: dict[str, np.ndarray] | None = None
    components: dict[str, float] = field(default_factory=dict)


def _require_normalized(corpus: MultilingualCorpus) -> None:
    if not corpus.normalized:
        raise NotNormalized("corpus embeddings must be unit-norm (normalized flag unset)")


# --------------------------------------------------------------------------
# one-to-K contrastive


def kcl_i2t_from_arrays(images: np.ndarray, texts: np.ndarray, tau: float) -> LossReport:
    """Array kernel for the image-to-text objective; no normalization check."""
    n, k, d = texts.shape
    if n * k < 2:
        raise DegenerateBatch(f"need at least 2 texts in batch, got {n * k}")
    t_flat = texts.reshape(n * k, d)
    logits = (images @ t_flat.T) / tau                 # (N, N*K)
    lse = log_sum_exp_rows(logits)
    pos_cols = (np.arange(n)[:, None] * k + np.arange(k)[None, :])
    pos_mean = logits[np.arange(n)[:, None], pos_cols].mean(axis=1)
    value = float(np.mean(lse - pos_mean))

    g = softmax_rows(logits)
    g[np.arange(n)[:, None], pos_cols] -= 1.0 / k
    g /= n
    grad_images = (g @ t_flat) / tau
    grad_texts = ((g.T @ images) / tau).reshape(n, k, d)
    return LossReport(value=value, grad_images=grad_images, grad_texts=grad_texts)


def kcl_t2i_from_arrays(images: np.ndarray, texts: np.ndarray, tau: float) -> LossReport:
    """Array kernel for the text-to-image objective; no normalization check."""
    n, k, d = texts.shape
    if n < 2:
        raise DegenerateBatch(f"need at least 2 images in batch, got {n}")
    t_flat = texts.reshape(n * k, d)
    logits = (t_flat @ images.T) / tau                 # (N*K, N)
    lse = log_sum_exp_rows(logits)
    owners = np.repeat(np.arange(n), k)
    value = float(np.mean(lse - logits[np.arange(n * k), owners]))

    g = softmax_rows(logits)
    g[np.arange(n * k), owners] -= 1.0
    g /= n * k
    grad_texts = ((g @ images) / tau).reshape(n, k, d)
    grad_images = (g.T @ t_flat) / tau
    return LossReport(value=value, grad_images=grad_images, grad_texts=grad_texts)


def kcl_i2t(corpus: MultilingualCorpus, cfg: LossConfig) -> LossReport:
    """Image-to-text one-to-K contrastive loss, mean over instances."""
    _require_normalized(corpus)
    if cfg.mode != MODE_ONE_TO_K:
        raise InvalidConfig("kcl_i2t requires mode=one_to_k")
    return kcl_i2t_from_arrays(corpus.image_embeddings, corpus.text_embeddings, cfg.tau)


def kcl_t2i(corpus: MultilingualCorpus, cfg: LossConfig) -> LossReport:
    """Text-to-image contrastive loss, mean over all N*K texts."""
    _require_normalized(corpus)
    return kcl_t2i_from_arrays(corpus.image_embeddings, corpus.text_embeddings, cfg.tau)


def cl_1to1(corpus: MultilingualCorpus, cfg: LossConfig, rng: Rng) -> LossReport:
    """One-to-one baseline: one random language per instance, symmetric InfoNCE.

    Returns the mean of the two directions; gradients touch only the
    selected texts. Components "i2t" and "t2i" carry the per-direction
    values.
    """
    _require_normalized(corpus)
    if cfg.mode != MODE_ONE_TO_ONE:
        raise InvalidConfig("cl_1to1 requires mode=one_to_one")
    n, k, d = corpus.text_embeddings.shape
    selected = rng.gen.integers(0, k, size=n)
    t_sel = corpus.text_embeddings[np.arange(n), selected][:, None, :]  # (N, 1, d)

    rep_i = kcl_i2t_from_arrays(corpus.image_embeddings, t_sel, cfg.tau)
    rep_t = kcl_t2i_from_arrays(corpus.image_embeddings, t_sel, cfg.tau)

    grad_images = (rep_i.grad_images + rep_t.grad_images) / 2.0
    grad_texts = np.zeros_like(corpus.text_embeddings)
    grad_texts[np.arange(n), selected] = (
        rep_i.grad_texts[:, 0, :] + rep_t.grad_texts[:, 0, :]) / 2.0
    return LossReport(
        value=(rep_i.value + rep_t.value) / 2.0,
        grad_images=grad_images,
        grad_texts=grad_texts,
        components={"i2t": rep_i.value, "t2i": rep_t.value},
    )


# --------------------------------------------------------------------------
# match classification over fused pairs


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + np.exp(-x))
    e = np.exp(x)
    return e / (1.0 + e)


def _softplus(x: float) -> float:
    return float(np.logaddexp(0.0, x))


@dataclass
class MitmHead:
    """Affine fusion of a concatenated (text, image) pair plus a scalar match logit.

    The fused vector is w_fuse @ [text; image] + b_fuse; the match score is
    w_score . fused + b_score. The two-class head reduces to a scalar logit
    because the loss only ever compares scores of two candidate pairs.
    """

    w_fuse: np.ndarray    # (fused_dim, 2*dim)
    b_fuse: np.ndarray    # (fused_dim,)
    w_score: np.ndarray   # (fused_dim,)
    b_score: float

    @classmethod
    def create(cls, dim: int, fused_dim: int, rng: Rng,
               scale: float = HEAD_INIT_SCALE) -> "MitmHead":
        g = rng.gen
        return cls(
            w_fuse=scale * g.standard_normal((fused_dim, 2 * dim)),
            b_fuse=np.zeros(fused_dim),
            w_score=scale * g.standard_normal(fused_dim),
            b_score=0.0,
        )

    @property
    def n_params(self) -> int:
        return self.w_fuse.size + self.b_fuse.size + self.w_score.size + 1

    def params_flat(self) -> np.ndarray:
        return np.concatenate([self.w_fuse.ravel(), self.b_fuse,
                               self.w_score, [self.b_score]])

    def with_params(self, flat: np.ndarray) -> "MitmHead":
        flat = np.asarray(flat, dtype=np.float64)
        fd, d2 = self.w_fuse.shape
        a = fd * d2
        return MitmHead(
            w_fuse=flat[:a].reshape(fd, d2).copy(),
            b_fuse=flat[a:a + fd].copy(),
            w_score=flat[a + fd:a + 2 * fd].copy(),
            b_score=float(flat[a + 2 * fd]),
        )

    def fuse(self, text: np.ndarray, image: np.ndarray) -> np.ndarray:
        return self.w_fuse @ np.concatenate([text, image]) + self.b_fuse

    def score(self, fused: np.ndarray) -> float:
        return float(self.w_score @ fused + self.b_score)

    def score_pair(self, text: np.ndarray, image: np.ndarray) -> float:
        return self.score(self.fuse(text, image))


def mitm_loss(head: MitmHead, positive_text: np.ndarray, image: np.ndarray,
              negative_text: np.ndarray, negative_image: np.ndarray) -> LossReport:
    """Two-term match classification loss over one mined quadruple.

    The i2t term asks the head to prefer (positive_text, image) over
    (negative_text, image); the t2i term prefers it over
    (positive_text, negative_image). Returns the sum of both terms plus
    gradients for the head parameters and all four input vectors.
    """
    pairs = {
        "p": (positive_text, image),
        "nt": (negative_text, image),
        "ni": (positive_text, negative_image),
    }
    xs = {name: np.concatenate([t, i]) for name, (t, i) in pairs.items()}
    us = {name: head.w_fuse @ x + head.b_fuse for name, x in xs.items()}
    ss = {name: float(head.w_score @ u + head.b_score) for name, u in us.items()}

    value_i2t = _softplus(ss["nt"] - ss["p"])
    value_t2i = _softplus(ss["ni"] - ss["p"])

    # d(loss)/d(score) per fused pair
    coeff = {
        "p": -_sigmoid(ss["nt"] - ss["p"]) - _sigmoid(ss["ni"] - ss["p"]),
        "nt": _sigmoid(ss["nt"] - ss["p"]),
        "ni": _sigmoid(ss["ni"] - ss["p"]),
    }

    g_wf = np.zeros_like(head.w_fuse)
    g_bf = np.zeros_like(head.b_fuse)
    g_ws = np.zeros_like(head.w_score)
    g_bs = 0.0
    g_x = {}
    back = head.w_fuse.T @ head.w_score  # ds/dx, shared by every pair
    for name in pairs:
        c = coeff[name]
        g_wf += c * np.outer(head.w_score, xs[name])
        g_bf += c * head.w_score
        g_ws += c * us[name]
        g_bs += c
        g_x[name] = c * back

    dim = image.size
    grad_inputs = {
        "positive_text": g_x["p"][:dim] + g_x["ni"][:dim],
        "image": g_x["p"][dim:] + g_x["nt"][dim:],
        "negative_text": g_x["nt"][:dim],
        "negative_image": g_x["ni"][dim:],
    }
    return LossReport(
        value=value_i2t + value_t2i,
        grad_params=np.concatenate([g_wf.ravel(), g_bf, g_ws, [g_bs]]),
        grad_inputs=grad_inputs,
        components={"i2t": value_i2t, "t2i": value_t2i},
    )


# --------------------------------------------------------------------------
# masked token reconstruction


@dataclass
class CmlmHead:
    """Toy masked-token model: token table, image projection, output table.

    The context vector is the mean of unmasked token embeddings plus the
    projected image; the score of candidate token w is the dot product of
    the context with output_embeddings[w].
    """

    token_embeddings: np.ndarray    # (V, dt)
    image_projection: np.ndarray    # (dt, d)
    output_embeddings: np.ndarray   # (V, dt)

    @classmethod
    def create(cls, vocab_size: int, token_dim: int, image_dim: int, rng: Rng,
               scale: float = HEAD_INIT_SCALE) -> "CmlmHead":
        g = rng.gen
        return cls(
            token_embeddings=scale * g.standard_normal((vocab_size, token_dim)),
            image_projection=scale * g.standard_normal((token_dim, image_dim)),
            output_embeddings=scale * g.standard_normal((vocab_size, token_dim)),
        )

    @property
    def vocab_size(self) -> int:
        return self.token_embeddings.shape[0]

    @property
    def n_params(self) -> int:
        return (self.token_embeddings.size + self.image_projection.size
                + self.output_embeddings.size)

    def params_flat(self) -> np.ndarray:
        return np.concatenate([self.token_embeddings.ravel(),
                               self.image_projection.ravel(),
                               self.output_embeddings.ravel()])

    def with_params(self, flat: np.ndarray) -> "CmlmHead":
        flat = np.asarray(flat, dtype=np.float64)
        a = self.token_embeddings.size
        b = a + self.image_projection.size
        return CmlmHead(
            token_embeddings=flat[:a].reshape(self.token_embeddings.shape).copy(),
            image_projection=flat[a:b].reshape(self.image_projection.shape).copy(),
            output_embeddings=flat[b:].reshape(self.output_embeddings.shape).copy(),
        )


def cmlm_loss(head: CmlmHead, tokens, image: np.ndarray, mask) -> LossReport:
    """Masked-token reconstruction loss, mean over masked positions.

    `tokens` is the original (unmasked) sequence; `mask` the set of hidden
    positions. Gradients cover the head parameters only.
    """
    tokens = [int(t) for t in tokens]
    if not tokens:
        raise EmptySequence("cannot mask an empty sequence")
    positions = sorted(set(int(p) for p in mask))
    if not positions:
        raise InvalidConfig("mask must be non-empty")
    if positions[0] < 0 or positions[-1] >= len(tokens):
        raise InvalidConfig(f"mask positions out of range for length {len(tokens)}")
    unmasked = [p for p in range(len(tokens)) if p not in set(positions)]
    if not unmasked:
        raise AllMasked("every position is masked; no context remains")
    for t in tokens:
        if not (0 <= t < head.vocab_size):
            raise InvalidConfig(f"token id {t} outside vocabulary {head.vocab_size}")

    ctx_ids = [tokens[p] for p in unmasked]
    u = head.token_embeddings[ctx_ids].mean(axis=0) + head.image_projection @ image
    z = head.output_embeddings @ u
    m = float(np.max(z))
    lse = m + float(np.log(np.sum(np.exp(z - m))))
    targets = [tokens[p] for p in positions]
    value = float(np.mean([lse - z[w] for w in targets]))

    sm = np.exp(z - lse)
    dz = sm.copy()
    for w in targets:
        dz[w] -= 1.0 / len(targets)
    g_out = np.outer(dz, u)
    g_u = head.output_embeddings.T @ dz
    g_proj = np.outer(g_u, image)
    g_tok = np.zeros_like(head.token_embeddings)
    np.add.at(g_tok, ctx_ids, g_u / len(unmasked))
    return LossReport(
        value=value,
        grad_params=np.concatenate([g_tok.ravel(), g_proj.ravel(), g_out.ravel()]),
    )


def mask_tokens(tokens, rate: float, rng: Rng, mask_id: int):
    """Mask round(rate * length) positions (at least 1), without replacement.

    Returns (masked sequence, mask position set); masked positions hold
    mask_id.
    """
    tokens = list(tokens)
    if not tokens:
        raise EmptySequence("cannot mask an empty sequence")
    if not (0.0 < rate < 1.0):
        raise InvalidConfig(f"mask rate must lie in (0,1), got {rate}")
    count = max(1, int(np.floor(rate * len(tokens) + 0.5)))
    positions = rng.gen.choice(len(tokens), size=count, replace=False)
    mask = set(int(p) for p in positions)
    masked = [mask_id if p in mask else t for p, t in enumerate(tokens)]
    return masked, mask


# --------------------------------------------------------------------------
# summed objective


@dataclass
class PretrainHeads:
    mitm: MitmHead
    cmlm: CmlmHead


def combined_loss(corpus: MultilingualCorpus, tokens: TokenCorpus | None,
                  heads: PretrainHeads | None, cfg: LossConfig, rng: Rng,
                  mask_rate: float = DEFAULT_MASK_RATE,
                  weighting: str = "linear_shift") -> LossReport:
    """Unit-weight sum of the five objectives; pure contrastive when heads is None.

    Match and masked-token inputs come from one hard-mining draw per
    instance (consuming `rng`). The value equals the sum of the component
    values; gradients are the sums of the component gradients, with the
    match loss contributions scattered back onto the mined embeddings.
    """
    kcfg = LossConfig(tau=cfg.tau, mode=MODE_ONE_TO_K)
    rep_i = kcl_i2t(corpus, kcfg)
    rep_t = kcl_t2i(corpus, kcfg)
    grad_images = rep_i.grad_images + rep_t.grad_images
    grad_texts = rep_i.grad_texts + rep_t.grad_texts
    components = {"kcl_i2t": rep_i.value, "kcl_t2i": rep_t.value}

    if heads is None:
        return LossReport(
            value=rep_i.value + rep_t.value,
            grad_images=grad_images, grad_texts=grad_texts,
            components=components,
        )

    if tokens is None:
        raise InvalidConfig("token corpus required when heads are enabled")
    n = corpus.n_instances
    mined = mining.mine_batch(corpus, rng, weighting)
    mitm_i2t_sum = 0.0
    mitm_t2i_sum = 0.0
    cmlm_sum = 0.0
    g_mitm = np.zeros(heads.mitm.n_params)
    g_cmlm = np.zeros(heads.cmlm.n_params)
    for j in range(n):
        k_pos = mined.positive_language[j]
        nt_j, nt_k = mined.negative_text[j]
        ni = mined.negative_image[j]
        rep_m = mitm_loss(
            heads.mitm,
            corpus.text_embeddings[j, k_pos],
            corpus.image_embeddings[j],
            corpus.text_embeddings[nt_j, nt_k],
            corpus.image_embeddings[ni],
        )
        mitm_i2t_sum += rep_m.components["i2t"]
        mitm_t2i_sum += rep_m.components["t2i"]
        g_mitm += rep_m.grad_params
        gi = rep_m.grad_inputs
        grad_texts[j, k_pos] += gi["positive_text"] / n
        grad_images[j] += gi["image"] / n
        grad_texts[nt_j, nt_k] += gi["negative_text"] / n
        grad_images[ni] += gi["negative_image"] / n

        seq = tokens.sequences[j][k_pos]
        _, mask = mask_tokens(seq, mask_rate, rng, tokens.mask_token_id)
        if len(mask) == len(seq):
            raise InvalidConfig(
                "sequence too short for masked training (everything got masked)")
        rep_c = cmlm_loss(heads.cmlm, seq, corpus.image_embeddings[j], mask)
        cmlm_sum += rep_c.value
        g_cmlm += rep_c.grad_params

    components.update({
        "mitm_i2t": mitm_i2t_sum / n,
        "mitm_t2i": mitm_t2i_sum / n,
        "cmlm": cmlm_sum / n,
    })
    value = sum(components.values())
    return LossReport(
        value=value,
        grad_images=grad_images,
        grad_texts=grad_texts,
        grad_params=np.concatenate([g_mitm / n, g_cmlm / n]),
        components=components,
    )

"""Finite-difference verification of every analytic gradient.

Random small configurations (N <= 6, K <= 4, d <= 8) are drawn per trial;
the analytic gradients are compared against central differences with the
relative error measured as |a - n| / max(1, |a|).
"""

from __future__ import annotations

import numpy as np

from .losses import (
    CmlmHead,
    MitmHead,
    cmlm_loss,
    kcl_i2t_from_arrays,
    kcl_t2i_from_arrays,
    mitm_loss,
)
from .numerics import Rng, finite_diff_grad, grad_rel_error, normalize_rows

GRAD_TOLERANCE = 1e-4

_TAUS = (0.07, 0.5, 1.0)


def _random_embeddings(gen, n, k, d):
    images = normalize_rows(gen.standard_normal((n, d)))
    texts = normalize_rows(gen.standard_normal((n, k, d)))
    return images, texts


def check_kcl(rng: Rng) -> float:
    """Max relative gradient error of both contrastive directions, one config."""
    gen = rng.gen
    n = int(gen.integers(2, 7))
    k = int(gen.integers(1, 5))
    d = int(gen.integers(2, 9))
    tau = float(gen.choice(_TAUS))
    images, texts = _random_embeddings(gen, n, k, d)
    worst = 0.0
    for kernel in (kcl_i2t_from_arrays, kcl_t2i_from_arrays):
        rep = kernel(images, texts, tau)
        analytic = np.concatenate([rep.grad_images.ravel(), rep.grad_texts.ravel()])

        def f(flat, kernel=kernel):
            im = flat[:n * d].reshape(n, d)
            tx = flat[n * d:].reshape(n, k, d)
            return kernel(im, tx, tau).value

        numeric = finite_diff_grad(f, np.concatenate([images.ravel(), texts.ravel()]))
        worst = max(worst, grad_rel_error(analytic, numeric))
    return worst


def check_mitm(rng: Rng) -> float:
    """Max relative gradient error over head parameters and the four inputs."""
    gen = rng.gen
    d = int(gen.integers(2, 9))
    fused = int(gen.integers(2, 7))
    head = MitmHead.create(d, fused, rng.spawn(1), scale=0.5)
    vecs = normalize_rows(gen.standard_normal((4, d)))
    rep = mitm_loss(head, vecs[0], vecs[1], vecs[2], vecs[3])
    analytic = np.concatenate([
        rep.grad_params,
        rep.grad_inputs["positive_text"],
        rep.grad_inputs["image"],
        rep.grad_inputs["negative_text"],
        rep.grad_inputs["negative_image"],
    ])
    p0 = head.params_flat()

    def f(flat):
        h = head.with_params(flat[:p0.size])
        v = flat[p0.size:].reshape(4, d)
        return mitm_loss(h, v[0], v[1], v[2], v[3]).value

    numeric = finite_diff_grad(f, np.concatenate([p0, vecs.ravel()]))
    return grad_rel_error(analytic, numeric)


def check_cmlm(rng: Rng) -> float:
    """Max relative gradient error over all masked-token head parameters."""
    gen = rng.gen
    vocab = int(gen.integers(3, 8))
    token_dim = int(gen.integers(2, 6))
    d = int(gen.integers(2, 9))
    length = int(gen.integers(3, 9))
    head = CmlmHead.create(vocab, token_dim, d, rng.spawn(1), scale=0.5)
    tokens = gen.integers(0, vocab, size=length).tolist()
    n_masked = int(gen.integers(1, length))
    mask = set(gen.choice(length, size=n_masked, replace=False).tolist())
    image = normalize_rows(gen.standard_normal((1, d)))[0]
    rep = cmlm_loss(head, tokens, image, mask)

    def f(flat):
        return cmlm_loss(head.with_params(flat), tokens, image, mask).value

    numeric = finite_diff_grad(f, head.params_flat())
    return grad_rel_error(rep.grad_params, numeric)


CHECKS = {"kcl": check_kcl, "mitm": check_mitm, "cmlm": check_cmlm}


def run_gradcheck(which: str, trials: int, seed: int) -> dict[str, float]:
    """Max relative error per selected loss family over `trials` random configs."""
    names = list(CHECKS) if which == "all" else [which]
    root = Rng(seed)
    out = {}
    for li, name in enumerate(names):
        worst = 0.0
        for t in range(trials):
            worst = max(worst, CHECKS[name](root.spawn(li, t)))
        out[name] = worst
    return out

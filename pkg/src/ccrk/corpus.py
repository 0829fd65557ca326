"""Multilingual image-text corpora: data model, file I/O, synthetic generator.

An instance couples one image embedding with K text embeddings, one per
language. Texts exist at two levels: dense vectors (used by the contrastive
losses and retrieval metrics) and discrete token sequences (used only by the
masked-token objective).

Binary corpus format (little-endian), extension `.ccrk`:

    magic   4 bytes  "CCRK"
    u32     version, currently 1
    u32     N  (instances)
    u32     K  (languages)
    u32     d  (embedding dimension)
    f32     N*d image block, instance-major
    f32     N*K*d text block, instance-major then language-major
    u32     metadata byte length
    bytes   UTF-8 JSON {"languages": [...], "instance_ids": [...]}

Values are stored as f32 on disk; in memory everything is f64. Loading is
exact (f32 embeds in f64), saving rounds once, so any corpus that has been
through one save/load cycle round-trips bit-exactly thereafter.

CSV format: header `instance_id,language,e0..e{d-1}`, one embedding per row,
with the reserved language code "IMG" marking image rows. JSONL: one object
per line, keys instance_id / language / embedding, same IMG convention.
"""

from __future__ import annotations

import csv
import io
import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatch,
    FormatError,
    InvalidConfig,
    UnknownMagic,
)
from .numerics import Rng, normalize_rows, row_norms

BINARY_MAGIC = b"CCRK"
BINARY_VERSION = 1
IMAGE_LANGUAGE = "IMG"

# Norm tolerance for flagging a corpus as normalized on load. f32 storage
# perturbs unit rows by up to ~1e-6, so this sits well above that but far
# below any genuinely unnormalized data.
NORMALIZED_FLAG_TOL = 1e-4

DEFAULT_LANGUAGES = ["en", "de", "fr", "cs", "ja", "zh", "es", "id", "ru", "tr"]

# Token layout inside each language's vocabulary range: every concept owns a
# small contiguous block, the remainder of the range is filler.
CONCEPT_BLOCK = 4
FILLER_BLOCK = 16
CONCEPT_TOKEN_RATE = 0.8


@dataclass
class MultilingualCorpus:
    """N instances of (image embedding, K per-language text embeddings)."""

    image_embeddings: np.ndarray  # (N, d) float64
    text_embeddings: np.ndarray   # (N, K, d) float64
    language_codes: list[str]
    instance_ids: list[str]
    normalized: bool = False

    @property
    def n_instances(self) -> int:
        return self.image_embeddings.shape[0]

    @property
    def n_languages(self) -> int:
        return self.text_embeddings.shape[1]

    @property
    def dim(self) -> int:
        return self.image_embeddings.shape[1]

    def validate(self) -> None:
        n, d = self.image_embeddings.shape
        if self.text_embeddings.shape[0] != n or self.text_embeddings.shape[2] != d:
            raise DimensionMismatch(
                f"text block {self.text_embeddings.shape} does not match image block {(n, d)}")
        k = self.text_embeddings.shape[1]
        if n < 1 or k < 1:
            raise InvalidConfig("corpus needs at least one instance and one language")
        if len(self.language_codes) != k:
            raise DimensionMismatch(f"{len(self.language_codes)} language codes for K={k}")
        if len(set(self.language_codes)) != k:
            raise InvalidConfig("language codes must be distinct")
        if len(self.instance_ids) != n:
            raise DimensionMismatch(f"{len(self.instance_ids)} instance ids for N={n}")
        if self.normalized:
            worst = self._max_norm_error()
            if worst > NORMALIZED_FLAG_TOL:
                raise InvalidConfig(
                    f"normalized flag set but a row norm deviates by {worst:.2e}")

    def _max_norm_error(self) -> float:
        errs = [np.max(np.abs(row_norms(self.image_embeddings) - 1.0)),
                np.max(np.abs(row_norms(self.text_embeddings.reshape(-1, self.dim)) - 1.0))]
        return float(max(errs))

    def text_matrix(self) -> np.ndarray:
        """Texts flattened to (N*K, d), instance-major then language-major."""
        return self.text_embeddings.reshape(-1, self.dim)

    def equals(self, other: "MultilingualCorpus", atol: float = 0.0) -> bool:
        if (self.language_codes != other.language_codes
                or self.instance_ids != other.instance_ids):
            return False
        if atol == 0.0:
            return (np.array_equal(self.image_embeddings, other.image_embeddings)
                    and np.array_equal(self.text_embeddings, other.text_embeddings))
        return (np.allclose(self.image_embeddings, other.image_embeddings, atol=atol, rtol=0)
                and np.allclose(self.text_embeddings, other.text_embeddings, atol=atol, rtol=0))


@dataclass
class TokenCorpus:
    """Discrete token view of the texts, for the masked-token objective.

    Languages own disjoint id ranges (half-open [lo, hi)), simulating
    distinct scripts. The reserved mask id is vocab_size: it lies outside
    every range and is never embedded.
    """

    vocab_size: int
    sequences: list[list[list[int]]]          # N x K x length
    language_vocab_ranges: list[tuple[int, int]]
    concept_of_instance: list[int]

    @property
    def mask_token_id(self) -> int:
        return self.vocab_size

    def validate(self) -> None:
        k = len(self.language_vocab_ranges)
        spans = sorted(self.language_vocab_ranges)
        for (lo, hi), (lo2, _hi2) in zip(spans, spans[1:]):
            if lo2 < hi:
                raise InvalidConfig("language vocabulary ranges overlap")
        for j, per_lang in enumerate(self.sequences):
            if len(per_lang) != k:
                raise DimensionMismatch(f"instance {j} has {len(per_lang)} languages, expected {k}")
            for kk, seq in enumerate(per_lang):
                if len(seq) == 0:
                    raise InvalidConfig(f"sequence ({j},{kk}) is empty")
                lo, hi = self.language_vocab_ranges[kk]
                for t in seq:
                    if not (0 <= t < self.vocab_size):
                        raise InvalidConfig(f"token {t} outside vocabulary of size {self.vocab_size}")
                    if not (lo <= t < hi):
                        raise InvalidConfig(f"token {t} outside language range [{lo},{hi})")


@dataclass
class SyntheticConfig:
    """Generator settings for a seeded synthetic corpus.

    Embeddings come from a shared latent point per instance: each view
    (image, or one language) lifts the latent vector through its own
    orthonormal map and adds Gaussian noise. lift_spread controls how far
    the per-view maps deviate from a common map: 0 means every view shares
    one map (noiseless generation then aligns all views exactly), larger
    values decorrelate the views while keeping matched pairs the most
    similar in raw cosine space.
    """

    n_instances: int = 128
    n_languages: int = 4
    dim: int = 64
    latent_dim: int = 16
    noise_sigma: float = 0.1
    n_concepts: int = 8
    tokens_per_text: int = 12
    seed: int = 0
    lift_spread: float = 0.5

    def validate(self) -> None:
        counts = {
            "n_instances": self.n_instances,
            "n_languages": self.n_languages,
            "dim": self.dim,
            "latent_dim": self.latent_dim,
            "n_concepts": self.n_concepts,
            "tokens_per_text": self.tokens_per_text,
        }
        for name, v in counts.items():
            if int(v) != v or v < 1:
                raise InvalidConfig(f"{name} must be a positive integer, got {v!r}")
        if self.latent_dim > self.dim:
            raise InvalidConfig(f"latent_dim {self.latent_dim} exceeds dim {self.dim}")
        if self.noise_sigma < 0 or not np.isfinite(self.noise_sigma):
            raise InvalidConfig(f"noise_sigma must be finite and >= 0, got {self.noise_sigma}")
        if self.lift_spread < 0 or not np.isfinite(self.lift_spread):
            raise InvalidConfig(f"lift_spread must be finite and >= 0, got {self.lift_spread}")

    def language_codes(self) -> list[str]:
        codes = list(DEFAULT_LANGUAGES)
        while len(codes) < self.n_languages:
            codes.append(f"x{len(codes):02d}")
        return codes[: self.n_languages]


def _orthonormal_lift(base: np.ndarray, spread: float, rng: np.random.Generator) -> np.ndarray:
    g = base + spread * rng.standard_normal(base.shape)
    q, r = np.linalg.qr(g)
    # Fix the QR sign convention so lifts are reproducible across BLAS builds.
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs[None, :]


def generate_synthetic(cfg: SyntheticConfig) -> tuple[MultilingualCorpus, TokenCorpus]:
    """Draw a seeded synthetic corpus of aligned image/text views plus tokens.

    Latents are uniform on the unit sphere in latent_dim. Each view lifts
    them through an orthonormal map derived from a shared Gaussian base
    (see SyntheticConfig.lift_spread), adds isotropic noise, and normalizes.
    Token sequences draw 80% of tokens from the instance's concept block in
    the language's vocabulary range and 20% uniformly from the rest of it.
    """
    cfg.validate()
    rng = Rng(cfg.seed)
    g_lift = rng.spawn(0).gen
    g_latent = rng.spawn(1).gen
    g_noise = rng.spawn(2).gen
    g_tokens = rng.spawn(3).gen

    n, k, d, ld = cfg.n_instances, cfg.n_languages, cfg.dim, cfg.latent_dim
    base = g_lift.standard_normal((d, ld))
    image_lift = _orthonormal_lift(base, cfg.lift_spread, g_lift)
    text_lifts = [_orthonormal_lift(base, cfg.lift_spread, g_lift) for _ in range(k)]

    latents = normalize_rows(g_latent.standard_normal((n, ld)))

    images = latents @ image_lift.T
    if cfg.noise_sigma > 0:
        images = images + cfg.noise_sigma * g_noise.standard_normal((n, d))
    images = normalize_rows(images)

    texts = np.empty((n, k, d))
    for kk in range(k):
        t = latents @ text_lifts[kk].T
        if cfg.noise_sigma > 0:
            t = t + cfg.noise_sigma * g_noise.standard_normal((n, d))
        texts[:, kk, :] = normalize_rows(t)

    corpus = MultilingualCorpus(
        image_embeddings=images,
        text_embeddings=texts,
        language_codes=cfg.language_codes(),
        instance_ids=[f"i{j:06d}" for j in range(n)],
        normalized=True,
    )
    corpus.validate()

    lang_span = cfg.n_concepts * CONCEPT_BLOCK + FILLER_BLOCK
    ranges = [(kk * lang_span, (kk + 1) * lang_span) for kk in range(k)]
    concepts = g_tokens.integers(0, cfg.n_concepts, size=n).tolist()
    sequences = []
    for j in range(n):
        per_lang = []
        for kk in range(k):
            lo, hi = ranges[kk]
            block_lo = lo + concepts[j] * CONCEPT_BLOCK
            seq = []
            for _ in range(cfg.tokens_per_text):
                if g_tokens.random() < CONCEPT_TOKEN_RATE:
                    seq.append(int(g_tokens.integers(block_lo, block_lo + CONCEPT_BLOCK)))
                else:
                    # uniform over the language range minus the concept block
                    t = int(g_tokens.integers(lo, hi - CONCEPT_BLOCK))
                    if t >= block_lo:
                        t += CONCEPT_BLOCK
                    seq.append(t)
            per_lang.append(seq)
        sequences.append(per_lang)

    tokens = TokenCorpus(
        vocab_size=k * lang_span,
        sequences=sequences,
        language_vocab_ranges=ranges,
        concept_of_instance=concepts,
    )
    tokens.validate()
    return corpus, tokens


def normalize_corpus(c: MultilingualCorpus) -> MultilingualCorpus:
    """Copy of the corpus with unit-norm rows and the normalized flag set."""
    out = MultilingualCorpus(
        image_embeddings=normalize_rows(c.image_embeddings),
        text_embeddings=normalize_rows(c.text_embeddings),
        language_codes=list(c.language_codes),
        instance_ids=list(c.instance_ids),
        normalized=True,
    )
    out.validate()
    return out


# --------------------------------------------------------------------------
# binary format


def save_corpus(c: MultilingualCorpus, path, format: str = "binary") -> None:
    if format == "binary":
        _save_binary(c, path)
    elif format == "csv":
        _save_csv(c, path)
    elif format == "jsonl":
        _save_jsonl(c, path)
    else:
        raise InvalidConfig(f"unknown corpus format {format!r}")


def load_corpus(path, format: str = "binary") -> MultilingualCorpus:
    if format == "binary":
        return _load_binary(path)
    if format == "csv":
        return _load_csv(path)
    if format == "jsonl":
        return _load_jsonl(path)
    raise InvalidConfig(f"unknown corpus format {format!r}")


def _save_binary(c: MultilingualCorpus, path) -> None:
    c.validate()
    meta = json.dumps(
        {"languages": list(c.language_codes), "instance_ids": list(c.instance_ids)}
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(BINARY_MAGIC)
        fh.write(struct.pack("<IIII", BINARY_VERSION, c.n_instances, c.n_languages, c.dim))
        fh.write(np.ascontiguousarray(c.image_embeddings, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(c.text_embeddings, dtype="<f4").tobytes())
        fh.write(struct.pack("<I", len(meta)))
        fh.write(meta)


def _take(buf: bytes, offset: int, count: int, what: str) -> tuple[bytes, int]:
    if offset + count > len(buf):
        raise FormatError(f"truncated file while reading {what}", offset=offset)
    return buf[offset:offset + count], offset + count


def _load_binary(path) -> MultilingualCorpus:
    with open(path, "rb") as fh:
        buf = fh.read()
    magic, off = _take(buf, 0, 4, "magic")
    if magic != BINARY_MAGIC:
        raise UnknownMagic(f"bad magic {magic!r}, expected {BINARY_MAGIC!r}", offset=0)
    header, off = _take(buf, off, 16, "header")
    version, n, k, d = struct.unpack("<IIII", header)
    if version != BINARY_VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    img_bytes, off = _take(buf, off, 4 * n * d, "image block")
    txt_bytes, off = _take(buf, off, 4 * n * k * d, "text block")
    meta_len_b, off = _take(buf, off, 4, "metadata length")
    (meta_len,) = struct.unpack("<I", meta_len_b)
    meta_b, off = _take(buf, off, meta_len, "metadata")
    try:
        meta = json.loads(meta_b.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"bad metadata JSON: {exc}", offset=off - meta_len) from exc
    languages = meta.get("languages")
    instance_ids = meta.get("instance_ids")
    if not isinstance(languages, list) or len(languages) != k:
        raise DimensionMismatch(f"metadata lists {languages!r} languages, header says K={k}")
    if not isinstance(instance_ids, list) or len(instance_ids) != n:
        raise DimensionMismatch(f"metadata instance_ids length != N={n}")
    images = np.frombuffer(img_bytes, dtype="<f4").astype(np.float64).reshape(n, d)
    texts = np.frombuffer(txt_bytes, dtype="<f4").astype(np.float64).reshape(n, k, d)
    c = MultilingualCorpus(
        image_embeddings=images,
        text_embeddings=texts,
        language_codes=[str(x) for x in languages],
        instance_ids=[str(x) for x in instance_ids],
        normalized=False,
    )
    c.normalized = c._max_norm_error() <= NORMALIZED_FLAG_TOL
    c.validate()
    return c


# --------------------------------------------------------------------------
# delimited formats

_FLOAT_FMT = "%.9g"


def _save_csv(c: MultilingualCorpus, path) -> None:
    c.validate()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["instance_id", "language"] + [f"e{i}" for i in range(c.dim)])
        for j in range(c.n_instances):
            writer.writerow([c.instance_ids[j], IMAGE_LANGUAGE]
                            + [_FLOAT_FMT % v for v in c.image_embeddings[j]])
            for kk, lang in enumerate(c.language_codes):
                writer.writerow([c.instance_ids[j], lang]
                                + [_FLOAT_FMT % v for v in c.text_embeddings[j, kk]])


def _save_jsonl(c: MultilingualCorpus, path) -> None:
    c.validate()
    with open(path, "w") as fh:
        for j in range(c.n_instances):
            fh.write(json.dumps({"instance_id": c.instance_ids[j],
                                 "language": IMAGE_LANGUAGE,
                                 "embedding": c.image_embeddings[j].tolist()}) + "\n")
            for kk, lang in enumerate(c.language_codes):
                fh.write(json.dumps({"instance_id": c.instance_ids[j],
                                     "language": lang,
                                     "embedding": c.text_embeddings[j, kk].tolist()}) + "\n")


def _rows_to_corpus(rows: list[tuple[str, str, np.ndarray]], where: str) -> MultilingualCorpus:
    """Assemble (instance_id, language, vector) rows into a corpus.

    Instance and language order follow first appearance in the file; every
    instance must supply an IMG row plus one row per language.
    """
    if not rows:
        raise FormatError(f"no embedding rows in {where}", offset=0)
    dim = rows[0][2].size
    instance_order: list[str] = []
    language_order: list[str] = []
    by_key: dict[tuple[str, str], np.ndarray] = {}
    for iid, lang, vec in rows:
        if vec.size != dim:
            raise DimensionMismatch(
                f"row ({iid},{lang}) has {vec.size} values, expected {dim}")
        if iid not in instance_order:
            instance_order.append(iid)
        if lang != IMAGE_LANGUAGE and lang not in language_order:
            language_order.append(lang)
        key = (iid, lang)
        if key in by_key:
            raise FormatError(f"duplicate row for ({iid},{lang})", offset=0)
        by_key[key] = vec
    n, k = len(instance_order), len(language_order)
    if k == 0:
        raise DimensionMismatch("file contains no text rows")
    images = np.empty((n, dim))
    texts = np.empty((n, k, dim))
    for j, iid in enumerate(instance_order):
        if (iid, IMAGE_LANGUAGE) not in by_key:
            raise DimensionMismatch(f"instance {iid} has no {IMAGE_LANGUAGE} row")
        images[j] = by_key[(iid, IMAGE_LANGUAGE)]
        for kk, lang in enumerate(language_order):
            if (iid, lang) not in by_key:
                raise DimensionMismatch(f"instance {iid} is missing language {lang}")
            texts[j, kk] = by_key[(iid, lang)]
    c = MultilingualCorpus(
        image_embeddings=images,
        text_embeddings=texts,
        language_codes=language_order,
        instance_ids=instance_order,
        normalized=False,
    )
    c.normalized = c._max_norm_error() <= NORMALIZED_FLAG_TOL
    c.validate()
    return c


def _load_csv(path) -> MultilingualCorpus:
    with open(path, "rb") as fh:
        raw = fh.read()
    offset = 0
    rows = []
    lines = raw.split(b"\n")
    header: list[str] | None = None
    for line in lines:
        if line.strip():
            text = line.decode("utf-8", errors="replace")
            fields = next(csv.reader(io.StringIO(text)))
            if header is None:
                header = fields
                if fields[:2] != ["instance_id", "language"]:
                    raise FormatError("CSV header must start with instance_id,language",
                                      offset=offset)
            else:
                if len(fields) < 3:
                    raise FormatError("embedding row has fewer than 3 fields", offset=offset)
                try:
                    vec = np.array([float(x) for x in fields[2:]], dtype=np.float64)
                except ValueError as exc:
                    raise FormatError(f"bad float: {exc}", offset=offset) from exc
                rows.append((fields[0], fields[1], vec))
        offset += len(line) + 1
    if header is None:
        raise FormatError("empty CSV file", offset=0)
    return _rows_to_corpus(rows, where="CSV")


def _load_jsonl(path) -> MultilingualCorpus:
    with open(path, "rb") as fh:
        raw = fh.read()
    offset = 0
    rows = []
    for line in raw.split(b"\n"):
        if line.strip():
            try:
                obj = json.loads(line.decode("utf-8"))
                rows.append((str(obj["instance_id"]), str(obj["language"]),
                             np.asarray(obj["embedding"], dtype=np.float64)))
            except (json.JSONDecodeError, KeyError, UnicodeDecodeError, TypeError) as exc:
                raise FormatError(f"bad JSONL record: {exc}", offset=offset) from exc
        offset += len(line) + 1
    return _rows_to_corpus(rows, where="JSONL")


# --------------------------------------------------------------------------
# token corpus I/O (JSON sidecar)


def save_tokens(t: TokenCorpus, path) -> None:
    t.validate()
    with open(path, "w") as fh:
        json.dump({
            "vocab_size": t.vocab_size,
            "mask_token_id": t.mask_token_id,
            "language_vocab_ranges": [list(r) for r in t.language_vocab_ranges],
            "concept_of_instance": list(t.concept_of_instance),
            "sequences": t.sequences,
        }, fh)


def load_tokens(path) -> TokenCorpus:
    with open(path) as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"bad token JSON: {exc}", offset=int(exc.pos)) from exc
    try:
        t = TokenCorpus(
            vocab_size=int(obj["vocab_size"]),
            sequences=[[list(map(int, seq)) for seq in per] for per in obj["sequences"]],
            language_vocab_ranges=[(int(lo), int(hi)) for lo, hi in obj["language_vocab_ranges"]],
            concept_of_instance=[int(x) for x in obj["concept_of_instance"]],
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad token JSON structure: {exc}", offset=0) from exc
    t.validate()
    return t

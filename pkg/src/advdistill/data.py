"""Synthetic domain pairs, JSONL corpora, and the train/dev/eval split protocol."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from .models import MAX_SEQ_LEN

logger = logging.getLogger(__name__)

SOURCE, TARGET = "source", "target"
SPLITS = ("source_train", "source_dev", "target_train", "target_eval")
MANIFEST_FORMAT = "advdistill-dataset-v1"


@dataclass(frozen=True)
class Example:
    tokens: tuple[int, ...]
    label: Optional[int] = None
    domain: str = SOURCE


@dataclass
class DomainPairDataset:
    """Labeled source train/dev, unlabeled target train, labeled target eval."""

    source_train: list[Example]
    source_dev: list[Example]
    target_train: list[Example]
    target_eval: list[Example]
    vocab_size: int = 2000
    num_classes: int = 2
    name: str = "pair"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for split in ("source_train", "source_dev", "target_eval"):
            if any(ex.label is None for ex in getattr(self, split)):
                raise ValueError(f"{split} must be fully labeled")
        if any(ex.label is not None for ex in self.target_train):
            raise ValueError("target_train must not carry labels")

    def sizes(self) -> dict[str, int]:
        return {s: len(getattr(self, s)) for s in SPLITS}


@dataclass
class GeneratorConfig:
    """Knobs of the synthetic pivot/non-pivot domain-pair generator.

    Each class owns ``class_words`` indicative tokens per domain, of which a
    ``pivot_fraction`` share is common to both domains.  The remaining
    vocabulary is neutral noise shared by both domains.  Each position of a
    document is class-indicative with probability
    ``class_token_rate / (class_token_rate + noise_rate)``.  The defaults are
    calibrated so that at ``pivot_fraction = 0.3`` the source-only model
    loses well over 10 points on the target domain.
    """

    vocab_size: int = 2000
    pivot_fraction: float = 0.3
    per_class: int = 1000
    min_len: int = 20
    max_len: int = 128
    class_token_rate: float = 0.06
    noise_rate: float = 0.94
    class_words: int = 40
    num_classes: int = 2
    target_train_fraction: float = 0.8
    seed: int = 0

    def validate(self) -> None:
        if not 0.0 <= self.pivot_fraction <= 1.0:
            raise ValueError("pivot_fraction must lie in [0, 1]")
        if not 1 <= self.min_len <= self.max_len <= MAX_SEQ_LEN:
            raise ValueError(f"need 1 <= min_len <= max_len <= {MAX_SEQ_LEN}")
        if self.class_token_rate < 0 or self.noise_rate < 0 or self.class_token_rate + self.noise_rate <= 0:
            raise ValueError("token rates must be non-negative and not both zero")
        if self.per_class < 5 or self.num_classes < 2 or self.class_words < 1:
            raise ValueError("per_class >= 5, num_classes >= 2 and class_words >= 1 required")
        if self.vocab_size - self.class_vocab_size() < 1:
            raise ValueError(
                f"vocab_size {self.vocab_size} cannot host {self.class_vocab_size()} class tokens plus noise")

    def pivots_per_class(self) -> int:
        return int(round(self.pivot_fraction * self.class_words))

    def class_vocab_size(self) -> int:
        p = self.pivots_per_class()
        return self.num_classes * (p + 2 * (self.class_words - p))


@dataclass
class Vocabulary:
    """Token-id layout of a generated pair."""

    pivots: list[np.ndarray]
    source_specific: list[np.ndarray]
    target_specific: list[np.ndarray]
    noise: np.ndarray

    def class_tokens(self, domain: str, k: int) -> np.ndarray:
        spec = self.source_specific if domain == SOURCE else self.target_specific
        return np.concatenate([self.pivots[k], spec[k]])


def build_vocabulary(cfg: GeneratorConfig, rng: np.random.Generator) -> Vocabulary:
    perm = rng.permutation(cfg.vocab_size)
    p = cfg.pivots_per_class()
    s = cfg.class_words - p
    pos = 0
    pivots, src, tgt = [], [], []
    for _ in range(cfg.num_classes):
        pivots.append(np.sort(perm[pos:pos + p]))
        pos += p
    for bucket in (src, tgt):
        for _ in range(cfg.num_classes):
            bucket.append(np.sort(perm[pos:pos + s]))
            pos += s
    return Vocabulary(pivots, src, tgt, np.sort(perm[pos:]))


def _sample_docs(cfg: GeneratorConfig, vocab: Vocabulary, domain: str, per_class: int,
                 rng: np.random.Generator) -> list[Example]:
    p_class = cfg.class_token_rate / (cfg.class_token_rate + cfg.noise_rate)
    docs = []
    for k in range(cfg.num_classes):
        pool = vocab.class_tokens(domain, k)
        for _ in range(per_class):
            n = int(rng.integers(cfg.min_len, cfg.max_len + 1))
            is_class = rng.random(n) < p_class
            tokens = rng.choice(vocab.noise, size=n)
            if is_class.any():
                tokens[is_class] = rng.choice(pool, size=int(is_class.sum()))
            docs.append(Example(tuple(int(t) for t in tokens), k, domain))
    return docs


def _strip(examples: Sequence[Example]) -> list[Example]:
    return [Example(ex.tokens, None, ex.domain) for ex in examples]


def generate_domain_pair(cfg: GeneratorConfig | None = None) -> DomainPairDataset:
    """Deterministic synthetic source/target pair.

    Source documents are split 80/20 (stratified) into train/dev.  Target
    train and target eval are independent draws, so no document is shared
    between splits.
    """
    cfg = cfg or GeneratorConfig()
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    vocab = build_vocabulary(cfg, rng)
    source = _sample_docs(cfg, vocab, SOURCE, cfg.per_class, rng)
    n_tgt = max(1, int(round(cfg.target_train_fraction * cfg.per_class)))
    target_train = _sample_docs(cfg, vocab, TARGET, n_tgt, rng)
    target_eval = _sample_docs(cfg, vocab, TARGET, cfg.per_class, rng)
    ds = split_protocol(source, target_train, target_eval, seed=cfg.seed)
    ds.vocab_size = cfg.vocab_size
    ds.num_classes = cfg.num_classes
    ds.name = f"synthetic-rho{cfg.pivot_fraction:g}-seed{cfg.seed}"
    ds.meta = {"generator": asdict(cfg)}
    return ds


def split_protocol(labeled_source: Sequence[Example], unlabeled_target: Sequence[Example],
                   labeled_target: Sequence[Example], seed: int = 0,
                   dev_fraction: float = 0.2) -> DomainPairDataset:
    """Stratified shuffled 80/20 source train/dev split; target labels stripped from training data."""
    if len(labeled_source) < 10:
        raise ValueError(f"need at least 10 labeled source examples, got {len(labeled_source)}")
    labels = np.array([ex.label for ex in labeled_source])
    if any(ex.label is None for ex in labeled_source):
        raise ValueError("labeled_source contains unlabeled examples")
    if any(ex.label is None for ex in labeled_target):
        raise ValueError("labeled_target contains unlabeled examples")
    classes, counts = np.unique(labels, return_counts=True)
    if counts.max() - counts.min() > 1:
        raise ValueError(f"labeled source is class-imbalanced: {dict(zip(classes.tolist(), counts.tolist()))}")

    rng = np.random.default_rng(seed)
    n_dev = int(round(dev_fraction * len(labeled_source)))
    train_idx, dev_idx = [], []
    # largest-remainder allocation of dev slots per class
    quotas = counts * n_dev / len(labeled_source)
    per_class_dev = np.floor(quotas).astype(int)
    short = n_dev - per_class_dev.sum()
    for j in np.argsort(-(quotas - per_class_dev), kind="stable")[:short]:
        per_class_dev[j] += 1
    for c, k_dev in zip(classes, per_class_dev):
        idx = rng.permutation(np.flatnonzero(labels == c))
        dev_idx.extend(idx[:k_dev].tolist())
        train_idx.extend(idx[k_dev:].tolist())
    train_idx = rng.permutation(train_idx)
    dev_idx = rng.permutation(dev_idx)
    num_classes = int(max(labels.max(), max((ex.label for ex in labeled_target), default=0)) + 1)
    return DomainPairDataset(
        source_train=[labeled_source[i] for i in train_idx],
        source_dev=[labeled_source[i] for i in dev_idx],
        target_train=_strip(unlabeled_target),
        target_eval=list(labeled_target),
        num_classes=max(num_classes, 2),
    )


def batch_indices(n: int, batch_size: int, seed: int, epoch: int, stream: int = 0) -> list[np.ndarray]:
    """Index batches of a fresh permutation keyed by ``(seed, epoch, stream)``."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.random.default_rng([seed, epoch, stream]).permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def batch_iter(examples: Sequence, batch_size: int, seed: int, epoch: int) -> Iterator[list]:
    """Shuffle keyed by ``(seed, epoch)`` and yield batches; the short final batch is kept."""
    for idx in batch_indices(len(examples), batch_size, seed, epoch):
        yield [examples[i] for i in idx]


# ---------------------------------------------------------------------------
# external corpora

def hash_token(token: str, vocab_size: int) -> int:
    """64-bit FNV-1a of the UTF-8 token, reduced modulo ``vocab_size``."""
    h = 0xCBF29CE484222325
    for byte in token.encode("utf-8"):
        h ^= byte
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h % vocab_size


def tokenize(text: str, vocab_size: int) -> list[int]:
    return [hash_token(tok, vocab_size) for tok in text.split()]


def _parse_record(rec, lineno: int, path, vocab_size: int, max_len: int, default_domain: str) -> Example:
    where = f"{path}:{lineno}"
    if not isinstance(rec, dict):
        raise ValueError(f"{where}: expected a JSON object")
    if "tokens" in rec:
        tokens = rec["tokens"]
        if not isinstance(tokens, list) or not all(isinstance(t, int) and not isinstance(t, bool)
                                                   for t in tokens):
            raise ValueError(f"{where}: 'tokens' must be a list of integers")
        if any(t < 0 or t >= vocab_size for t in tokens):
            raise ValueError(f"{where}: token id outside [0, {vocab_size})")
    elif "text" in rec:
        if not isinstance(rec["text"], str):
            raise ValueError(f"{where}: 'text' must be a string")
        tokens = tokenize(rec["text"], vocab_size)
    else:
        raise ValueError(f"{where}: record needs 'text' or 'tokens'")
    if not tokens:
        raise ValueError(f"{where}: empty token sequence")
    label = rec.get("label")
    if label is not None and (not isinstance(label, int) or isinstance(label, bool) or label < 0):
        raise ValueError(f"{where}: 'label' must be a non-negative integer")
    domain = rec.get("domain", default_domain)
    if not isinstance(domain, str):
        raise ValueError(f"{where}: 'domain' must be a string")
    return Example(tuple(tokens[:max_len]), label, domain)


def load_jsonl(path, vocab_size: int = 2000, max_len: int = MAX_SEQ_LEN,
               default_domain: str = SOURCE) -> list[Example]:
    """Read one example per line; raw text is whitespace-split and hashed into ``[0, vocab_size)``."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
            out.append(_parse_record(rec, lineno, path, vocab_size, max_len, default_domain))
    return out


def write_jsonl(examples: Sequence[Example], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            rec = {"tokens": list(ex.tokens)}
            if ex.label is not None:
                rec["label"] = ex.label
            rec["domain"] = ex.domain
            fh.write(json.dumps(rec) + "\n")


def write_dataset(ds: DomainPairDataset, out_dir) -> Path:
    """Write the four split files and a manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = {}
    for split in SPLITS:
        name = f"{split}.jsonl"
        write_jsonl(getattr(ds, split), out_dir / name)
        files[split] = name
    manifest = {
        "format": MANIFEST_FORMAT,
        "name": ds.name,
        "vocab_size": ds.vocab_size,
        "num_classes": ds.num_classes,
        "splits": files,
        "sizes": ds.sizes(),
        "meta": ds.meta,
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_manifest(path) -> DomainPairDataset:
    path = Path(path)
    doc = json.loads(path.read_text())
    if doc.get("format") != MANIFEST_FORMAT:
        raise ValueError(f"{path}: not a {MANIFEST_FORMAT} manifest")
    vocab_size = int(doc.get("vocab_size", 2000))
    splits = {}
    for split in SPLITS:
        try:
            rel = doc["splits"][split]
        except KeyError:
            raise ValueError(f"{path}: manifest lacks split {split!r}") from None
        domain = SOURCE if split.startswith("source") else TARGET
        splits[split] = load_jsonl(path.parent / rel, vocab_size, default_domain=domain)
    splits["target_train"] = _strip(splits["target_train"])
    return DomainPairDataset(**splits, vocab_size=vocab_size,
                             num_classes=int(doc.get("num_classes", 2)),
                             name=doc.get("name", path.parent.name), meta=doc.get("meta", {}))

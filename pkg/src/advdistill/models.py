"""Encoder, classifier and discriminator parameter sets plus checkpoint IO."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .autodiff import ShapeError, Tensor, ops
from .validation import pad_batch

MAX_SEQ_LEN = 128


@dataclass
class ModelConfig:
    vocab_size: int = 2000
    embed_dim: int = 32
    hidden_dim: int = 64
    num_classes: int = 2
    max_seq_len: int = MAX_SEQ_LEN
    disc_width_ratio: int = 4

    def validate(self) -> None:
        for name in ("vocab_size", "embed_dim", "hidden_dim", "num_classes", "max_seq_len",
                     "disc_width_ratio"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=(fan_in, fan_out))


class Module:
    """A named collection of leaf tensors."""

    def parameters(self) -> dict[str, Tensor]:
        return {k: v for k, v in vars(self).items() if isinstance(v, Tensor)}

    def named_parameters(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        for k, v in self.parameters().items():
            yield f"{prefix}.{k}", v

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.zero_grad()

    def set_trainable(self, flag: bool) -> None:
        for p in self.parameters().values():
            p.requires_grad = flag
            p.zero_grad()


class EncoderParams(Module):
    """Bag-of-embeddings encoder: mean-pooled embeddings, affine, relu, affine."""

    def __init__(self, embedding, w1, b1, w2, b2, max_seq_len: int = MAX_SEQ_LEN):
        self.embedding = embedding
        self.w1, self.b1 = w1, b1
        self.w2, self.b2 = w2, b2
        self.max_seq_len = max_seq_len

    @property
    def vocab_size(self) -> int:
        return self.embedding.shape[0]

    @property
    def output_dim(self) -> int:
        return self.w2.shape[1]

    def encode_padded(self, ids: np.ndarray, lengths: np.ndarray) -> Tensor:
        emb = ops.embedding_gather(self.embedding, ids)
        pooled = ops.mean_pool(emb, lengths)
        hidden = ops.relu(ops.add(ops.matmul(pooled, self.w1), self.b1))
        return ops.add(ops.matmul(hidden, self.w2), self.b2)

    def encode_batch(self, sequences) -> Tensor:
        ids, lengths = pad_batch(sequences, self.vocab_size, self.max_seq_len)
        return self.encode_padded(ids, lengths)


class ClassifierParams(Module):
    def __init__(self, w, b):
        self.w, self.b = w, b

    @property
    def input_dim(self) -> int:
        return self.w.shape[0]

    def __call__(self, reps: Tensor) -> Tensor:
        return classify_logits(self, reps)


class DiscriminatorParams(Module):
    """Three affine layers with leaky-relu(0.01) between and a sigmoid output."""

    def __init__(self, w1, b1, w2, b2, w3, b3, alpha: float = 0.01):
        self.w1, self.b1 = w1, b1
        self.w2, self.b2 = w2, b2
        self.w3, self.b3 = w3, b3
        self.alpha = alpha

    @property
    def input_dim(self) -> int:
        return self.w1.shape[0]

    def widths(self) -> list[int]:
        return [self.w1.shape[0], self.w1.shape[1], self.w2.shape[1], self.w3.shape[1]]

    def __call__(self, reps: Tensor) -> Tensor:
        return discriminate(self, reps)


def _affine_params(rng, fan_in, fan_out, prefix):
    return (Tensor(_glorot(rng, fan_in, fan_out), requires_grad=True, name=f"{prefix}.w"),
            Tensor(np.zeros(fan_out), requires_grad=True, name=f"{prefix}.b"))


def init_encoder(cfg: ModelConfig, rng: np.random.Generator) -> EncoderParams:
    emb = Tensor(_glorot(rng, cfg.vocab_size, cfg.embed_dim), requires_grad=True)
    w1, b1 = _affine_params(rng, cfg.embed_dim, cfg.hidden_dim, "l1")
    w2, b2 = _affine_params(rng, cfg.hidden_dim, cfg.hidden_dim, "l2")
    return EncoderParams(emb, w1, b1, w2, b2, cfg.max_seq_len)


def init_classifier(cfg: ModelConfig, rng: np.random.Generator) -> ClassifierParams:
    return ClassifierParams(*_affine_params(rng, cfg.hidden_dim, cfg.num_classes, "cls"))


def init_discriminator(cfg: ModelConfig, rng: np.random.Generator) -> DiscriminatorParams:
    wide = cfg.disc_width_ratio * cfg.hidden_dim
    w1, b1 = _affine_params(rng, cfg.hidden_dim, wide, "d1")
    w2, b2 = _affine_params(rng, wide, wide, "d2")
    w3, b3 = _affine_params(rng, wide, 1, "d3")
    return DiscriminatorParams(w1, b1, w2, b2, w3, b3)


@dataclass
class ModelBundle:
    """Source/target encoders, classifier and discriminator with freeze flags."""

    source_encoder: EncoderParams
    target_encoder: EncoderParams
    classifier: ClassifierParams
    discriminator: DiscriminatorParams
    config: ModelConfig = field(default_factory=ModelConfig)
    frozen: dict[str, bool] = field(default_factory=lambda: dict.fromkeys(COMPONENTS, False))

    def component(self, name: str) -> Module:
        return getattr(self, name)

    def freeze(self, *names: str) -> None:
        for name in names:
            self.frozen[name] = True
            self.component(name).set_trainable(False)

    def unfreeze(self, *names: str) -> None:
        for name in names:
            self.frozen[name] = False
            self.component(name).set_trainable(True)

    def trainable(self, *names: str) -> dict[str, Tensor]:
        """Named leaves of the listed components, skipping frozen ones."""
        out = {}
        for name in names:
            if self.frozen[name]:
                continue
            out.update(self.component(name).named_parameters(name))
        return out

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {}
        for name in COMPONENTS:
            for k, p in self.component(name).named_parameters(name):
                out[k] = p.values
        return out


COMPONENTS = ("source_encoder", "target_encoder", "classifier", "discriminator")


def init_params(config: ModelConfig | None = None, seed: int = 0) -> ModelBundle:
    """Freshly initialised bundle; the target encoder starts as a copy of the source encoder."""
    config = config or ModelConfig()
    config.validate()
    rng = np.random.default_rng(seed)
    enc = init_encoder(config, rng)
    cls = init_classifier(config, rng)
    dis = init_discriminator(config, rng)
    return ModelBundle(enc, copy_params(enc), cls, dis, config)


def encode(enc: EncoderParams, tokens) -> Tensor:
    """Representation of a single token sequence, shape [h]."""
    rep = enc.encode_batch([tokens])
    return ops.reshape(rep, (rep.shape[1],))


def encode_batch(enc: EncoderParams, sequences) -> Tensor:
    return enc.encode_batch(sequences)


def _as_matrix(op: str, rep: Tensor, dim: int) -> tuple[Tensor, bool]:
    if rep.ndim == 1:
        rep, single = ops.reshape(rep, (1, rep.shape[0])), True
    else:
        single = False
    if rep.ndim != 2 or rep.shape[1] != dim:
        raise ShapeError(f"{op}: expected representation size {dim}, got shape {rep.shape}")
    return rep, single


def classify_logits(cls: ClassifierParams, rep: Tensor) -> Tensor:
    """Raw class logits for a [h] or [B, h] representation."""
    x, single = _as_matrix("classify_logits", rep, cls.input_dim)
    out = ops.add(ops.matmul(x, cls.w), cls.b)
    return ops.reshape(out, (out.shape[1],)) if single else out


def discriminate(dis: DiscriminatorParams, rep: Tensor) -> Tensor:
    """Probability that each representation came from the source domain; shape [] or [B]."""
    x, single = _as_matrix("discriminate", rep, dis.input_dim)
    h = ops.leaky_relu(ops.add(ops.matmul(x, dis.w1), dis.b1), dis.alpha)
    h = ops.leaky_relu(ops.add(ops.matmul(h, dis.w2), dis.b2), dis.alpha)
    p = ops.sigmoid(ops.add(ops.matmul(h, dis.w3), dis.b3))
    return ops.reshape(p, ()) if single else ops.reshape(p, (p.shape[0],))


def copy_params(src: EncoderParams) -> EncoderParams:
    """Deep copy with fresh, trainable leaves."""
    def leaf(t: Tensor) -> Tensor:
        return Tensor(t.values.copy(), requires_grad=True, name=t.name)

    return EncoderParams(leaf(src.embedding), leaf(src.w1), leaf(src.b1), leaf(src.w2),
                         leaf(src.b2), src.max_seq_len)


def clone_bundle(bundle: ModelBundle) -> ModelBundle:
    return copy.deepcopy(bundle)


# checkpoint format: JSON {"format": ..., "config": {...}, "frozen": {...},
# "params": [{"name", "shape", "values"}]}; floats are written via repr so
# the round trip is bit-exact.
CHECKPOINT_FORMAT = "advdistill-checkpoint-v1"


def save_checkpoint(bundle: ModelBundle, path) -> None:
    params = [
        {"name": name, "shape": list(values.shape), "values": [float(v) for v in values.reshape(-1)]}
        for name, values in bundle.state_dict().items()
    ]
    doc = {
        "format": CHECKPOINT_FORMAT,
        "config": vars(bundle.config),
        "frozen": bundle.frozen,
        "params": params,
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path) -> ModelBundle:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    bundle = init_params(ModelConfig(**doc["config"]), seed=0)
    targets = {}
    for name in COMPONENTS:
        targets.update(bundle.component(name).named_parameters(name))
    for rec in doc["params"]:
        t = targets.get(rec["name"])
        if t is None:
            raise ValueError(f"{path}: unknown parameter {rec['name']!r}")
        values = np.array(rec["values"], dtype=np.float64).reshape(rec["shape"])
        if values.shape != t.shape:
            raise ValueError(f"{path}: {rec['name']} has shape {values.shape}, expected {t.shape}")
        t.values = values
    for name, flag in doc["frozen"].items():
        if flag:
            bundle.freeze(name)
    return bundle

"""scikit-learn style wrappers around the training pipeline.

Inputs are ragged collections of token-id sequences.  Every estimator
learns from labeled source sequences ``X, y``; the adapting ones also take
unlabeled target sequences through ``fit(X, y, X_target=...)``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .autodiff import Tensor, ops
from .config import JOINT_METHODS, AdaptConfig
from .data import SOURCE, TARGET, DomainPairDataset, Example
from .models import MAX_SEQ_LEN, classify_logits, init_params
from .pipeline import prepare, run_baseline_method, step1_finetune, step2_adapt_aad
from .validation import check_choice, check_labels, check_positive, check_sequences, pad_batch

_OBJECTIVES = ("kd", "supervised", "none")


class _SequenceClassifier(ClassifierMixin, BaseEstimator):
    """Shared plumbing: validation, label encoding, prediction."""

    def _config(self, **extra) -> AdaptConfig:
        check_positive("epochs", self.epochs, integer=True)
        check_positive("lr", self.lr)
        check_positive("batch_size", self.batch_size, integer=True)
        check_positive("vocab_size", self.vocab_size, integer=True)
        if not 1 <= self.max_seq_len <= MAX_SEQ_LEN:
            raise ValueError(f"max_seq_len must lie in [1, {MAX_SEQ_LEN}], got {self.max_seq_len!r}")
        cfg = AdaptConfig(epochs1=self.epochs, lr1=self.lr, batch=self.batch_size,
                          vocab_size=self.vocab_size, embed_dim=self.embed_dim,
                          hidden_dim=self.hidden_dim, num_classes=len(self.classes_),
                          max_seq_len=self.max_seq_len, seed=int(self.random_state))
        return cfg.replace(**extra)

    def _check_X(self, X) -> list[np.ndarray]:
        return check_sequences(X, self.vocab_size, self.max_seq_len, truncate=True)

    def _dataset(self, X, y, X_target=None) -> DomainPairDataset:
        seqs = self._check_X(X)
        y = check_labels(y, len(seqs))
        if len(seqs) == 0:
            raise ValueError("fit needs at least one labeled sequence")
        self.classes_, encoded = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes in y")
        self.n_features_in_ = 1
        source = [Example(tuple(s.tolist()), int(k), SOURCE) for s, k in zip(seqs, encoded)]
        target = [] if X_target is None else \
            [Example(tuple(s.tolist()), None, TARGET) for s in self._check_X(X_target)]
        # dev and eval splits are unused by the estimators; source stands in for both
        return DomainPairDataset(source, source, target, source, vocab_size=self.vocab_size,
                                 num_classes=len(self.classes_), name="estimator")

    def _encoder(self):
        return self.bundle_.source_encoder

    def decision_function(self, X) -> np.ndarray:
        """Class logits, shape ``[n, n_classes]``."""
        check_is_fitted(self, "bundle_")
        seqs = self._check_X(X)
        out = []
        for start in range(0, len(seqs), 512):
            ids, lengths = pad_batch(seqs[start:start + 512], self.vocab_size, self.max_seq_len)
            out.append(classify_logits(self.bundle_.classifier,
                                       self._encoder().encode_padded(ids, lengths)).values)
        return np.concatenate(out, axis=0) if out else np.zeros((0, len(self.classes_)))

    def predict_proba(self, X) -> np.ndarray:
        logits = self.decision_function(X)
        return ops.softmax(Tensor(logits), axis=1).values if len(logits) else logits

    def predict(self, X) -> np.ndarray:
        scores = self.decision_function(X)
        # argmax picks the first maximum, i.e. the lower class index on ties
        return self.classes_[np.argmax(scores, axis=1)]


class SourceOnlyClassifier(_SequenceClassifier):
    """Encoder plus linear classifier trained on source cross-entropy only."""

    def __init__(self, epochs=3, lr=5e-5, batch_size=64, vocab_size=2000, embed_dim=32,
                 hidden_dim=64, max_seq_len=MAX_SEQ_LEN, random_state=0):
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.vocab_size = vocab_size
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.max_seq_len = max_seq_len
        self.random_state = random_state

    def fit(self, X, y, X_target=None):
        ds = self._dataset(X, y)
        cfg = self._config(method="baseline")
        self.bundle_, self.train_accuracy_, self.trace_ = step1_finetune(
            init_params(cfg.model_config(), cfg.seed), prepare(ds, cfg.max_seq_len), cfg)
        return self


class AADClassifier(_SequenceClassifier):
    """Adversarial adaptation with distillation.

    ``fit`` first trains a source encoder and classifier, then adapts a copy
    of the encoder to ``X_target`` against a domain discriminator while the
    ``objective`` term keeps it close to the source pipeline: ``"kd"``
    distills with ``temperature``, ``"supervised"`` uses source labels and
    ``"none"`` is plain adversarial adaptation.  Prediction uses the adapted
    encoder.
    """

    def __init__(self, temperature=20.0, objective="kd", kd_weight=1.0, epochs=3, lr=5e-5,
                 adapt_epochs=3, adapt_lr=1e-5, disc_lr=None, clip_norm=1.0, clip_value=0.01,
                 weight_clip=False, d_steps_per_g_step=1, batch_size=64, vocab_size=2000,
                 embed_dim=32, hidden_dim=64, max_seq_len=MAX_SEQ_LEN, random_state=0):
        self.temperature = temperature
        self.objective = objective
        self.kd_weight = kd_weight
        self.epochs = epochs
        self.lr = lr
        self.adapt_epochs = adapt_epochs
        self.adapt_lr = adapt_lr
        self.disc_lr = disc_lr
        self.clip_norm = clip_norm
        self.clip_value = clip_value
        self.weight_clip = weight_clip
        self.d_steps_per_g_step = d_steps_per_g_step
        self.batch_size = batch_size
        self.vocab_size = vocab_size
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.max_seq_len = max_seq_len
        self.random_state = random_state

    def fit(self, X, y, X_target=None):
        if X_target is None:
            raise ValueError("AADClassifier.fit needs unlabeled target sequences (X_target)")
        check_choice("objective", self.objective, _OBJECTIVES)
        ds = self._dataset(X, y, X_target)
        if not ds.target_train:
            raise ValueError("X_target is empty")
        method = {"kd": "aad", "supervised": "aad-supervised", "none": "adda"}[self.objective]
        cfg = self._config(method=method, temperature=self.temperature, kd_weight=self.kd_weight,
                           epochs2=self.adapt_epochs, lr2=self.adapt_lr, lr_disc=self.disc_lr,
                           clip_norm=self.clip_norm, clip_value=self.clip_value,
                           weight_clip=self.weight_clip,
                           d_steps_per_g_step=self.d_steps_per_g_step)
        data = prepare(ds, cfg.max_seq_len)
        bundle, self.source_accuracy_, trace1 = step1_finetune(
            init_params(cfg.model_config(), cfg.seed), data, cfg)
        self.bundle_, trace2 = step2_adapt_aad(bundle, data, cfg, self.objective)
        self.trace_ = {**{f"step1.{k}": v for k, v in trace1.items()},
                       **{f"step2.{k}": v for k, v in trace2.items()}}
        return self

    def _encoder(self):
        return self.bundle_.target_encoder


class AlignmentClassifier(_SequenceClassifier):
    """Shared encoder trained on source cross-entropy plus a domain-alignment loss.

    ``method`` is ``"ddc"`` (Gaussian MMD), ``"dann"`` (gradient reversal
    against a domain discriminator) or ``"coral"`` (covariance matching).
    """

    def __init__(self, method="coral", align_weight=1.0, dann_lambda=1.0, mmd_bandwidth=None,
                 epochs=3, lr=5e-5, batch_size=64, vocab_size=2000, embed_dim=32, hidden_dim=64,
                 max_seq_len=MAX_SEQ_LEN, random_state=0):
        self.method = method
        self.align_weight = align_weight
        self.dann_lambda = dann_lambda
        self.mmd_bandwidth = mmd_bandwidth
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.vocab_size = vocab_size
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.max_seq_len = max_seq_len
        self.random_state = random_state

    def fit(self, X, y, X_target=None):
        check_choice("method", self.method, JOINT_METHODS)
        if X_target is None:
            raise ValueError(f"{self.method} needs unlabeled target sequences (X_target)")
        ds = self._dataset(X, y, X_target)
        if not ds.target_train:
            raise ValueError("X_target is empty")
        cfg = self._config(method=self.method, align_weight=self.align_weight,
                           dann_lambda=self.dann_lambda, mmd_bandwidth=self.mmd_bandwidth)
        bundle = init_params(cfg.model_config(), cfg.seed)
        result = run_baseline_method(self.method, bundle, prepare(ds, cfg.max_seq_len), cfg)
        self.bundle_, self.trace_ = bundle, result.traces
        return self

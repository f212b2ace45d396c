"""Source fine-tuning, adversarial adaptation with distillation, and the joint baselines."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import losses
from .autodiff import Adam, NonFiniteGradientError, Tensor, ops
from .config import JOINT_METHODS, METHODS, STEP2_METHODS, AdaptConfig
from .data import DomainPairDataset, batch_indices
from .models import (
    ModelBundle,
    classify_logits,
    clone_bundle,
    copy_params,
    discriminate,
    init_params,
    save_checkpoint,
)

logger = logging.getLogger(__name__)

# independent shuffling streams
_STEP1, _STEP2_SRC, _STEP2_TGT, _JOINT_SRC, _JOINT_TGT = range(5)


class DivergenceError(RuntimeError):
    """A training loss became non-finite."""

    def __init__(self, message: str, trace: Mapping[str, list]):
        super().__init__(message)
        self.trace = {k: list(v) for k, v in trace.items()}


class FrozenParameterError(AssertionError):
    """A frozen component changed during adaptation."""


class PaddedSplit:
    """A split pre-padded to ``[N, max_len]`` token ids plus lengths (and labels, if any)."""

    def __init__(self, examples, max_len: int, with_labels: bool = True):
        n = len(examples)
        self.lengths = np.array([min(len(ex.tokens), max_len) for ex in examples], dtype=np.int64)
        width = int(self.lengths.max()) if n else 1
        self.ids = np.zeros((n, width), dtype=np.int64)
        for i, ex in enumerate(examples):
            self.ids[i, :self.lengths[i]] = ex.tokens[:max_len]
        self.labels = np.array([ex.label for ex in examples], dtype=np.int64) if with_labels else None

    def __len__(self) -> int:
        return len(self.lengths)

    def batch(self, idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        lengths = self.lengths[idx]
        return self.ids[idx, :int(lengths.max())], lengths


class PreparedPair:
    """Padded views of a dataset.  ``target_train`` carries no label array."""

    def __init__(self, ds: DomainPairDataset, max_len: int = 128):
        self.name = ds.name
        self.source_train = PaddedSplit(ds.source_train, max_len)
        self.source_dev = PaddedSplit(ds.source_dev, max_len)
        self.target_train = PaddedSplit(ds.target_train, max_len, with_labels=False)
        self.target_eval = PaddedSplit(ds.target_eval, max_len)


def prepare(dataset, max_len: int = 128) -> PreparedPair:
    return dataset if isinstance(dataset, PreparedPair) else PreparedPair(dataset, max_len)


@dataclass
class RunResult:
    method: str
    pair: str
    seed: int
    target_accuracy: float | None = None
    source_dev_before: float | None = None
    source_dev_after: float | None = None
    traces: dict[str, list[float]] = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None

    def to_dict(self) -> dict:
        return asdict(self)


def _finite(trace: Mapping[str, list], **values: float) -> None:
    for key, v in values.items():
        trace.setdefault(key, []).append(v)
        if not np.isfinite(v):
            raise DivergenceError(f"non-finite {key} at update {len(trace[key])}", trace)


def _update(opt: Adam, trace: Mapping[str, list]) -> None:
    try:
        opt.step()
    except NonFiniteGradientError as exc:
        raise DivergenceError(str(exc), trace) from exc


def predict_logits(encoder, classifier, split: PaddedSplit, chunk: int = 512) -> np.ndarray:
    out = []
    for start in range(0, len(split), chunk):
        idx = np.arange(start, min(start + chunk, len(split)))
        ids, lengths = split.batch(idx)
        out.append(classify_logits(classifier, encoder.encode_padded(ids, lengths)).values)
    return np.concatenate(out, axis=0)


def accuracy_on(encoder, classifier, split: PaddedSplit) -> float:
    pred = np.argmax(predict_logits(encoder, classifier, split), axis=1)
    return float(np.mean(pred == split.labels))


def step1_finetune(bundle: ModelBundle, dataset, cfg: AdaptConfig) -> tuple[ModelBundle, float, dict]:
    """Train source encoder and classifier on source cross-entropy, then copy and freeze.

    Returns ``(bundle, source_dev_accuracy, trace)``.
    """
    data = prepare(dataset, cfg.max_seq_len)
    enc, cls = bundle.source_encoder, bundle.classifier
    bundle.unfreeze("source_encoder", "classifier")
    opt = Adam(bundle.trainable("source_encoder", "classifier"), lr=cfg.lr1)
    trace: dict[str, list] = {}
    for epoch in range(cfg.epochs1):
        epoch_losses = []
        for idx in batch_indices(len(data.source_train), cfg.batch, cfg.seed, epoch, _STEP1):
            ids, lengths = data.source_train.batch(idx)
            loss = losses.source_ce(classify_logits(cls, enc.encode_padded(ids, lengths)),
                                    data.source_train.labels[idx])
            _finite(trace, source_ce=loss.item())
            opt.zero_grad()
            loss.backward()
            _update(opt, trace)
            epoch_losses.append(loss.item())
        trace.setdefault("source_ce_epoch", []).append(float(np.mean(epoch_losses)))

    bundle.target_encoder = copy_params(enc)
    bundle.frozen["target_encoder"] = False
    bundle.freeze("source_encoder", "classifier")
    dev_acc = accuracy_on(enc, cls, data.source_dev)
    trace["source_dev_accuracy"] = [dev_acc]
    return bundle, dev_acc, trace


def _snapshot(bundle: ModelBundle, *names: str) -> dict[str, np.ndarray]:
    out = {}
    for name in names:
        for k, p in bundle.component(name).named_parameters(name):
            out[k] = p.values.copy()
    return out


def frozen_drift(before: Mapping[str, np.ndarray], bundle: ModelBundle) -> float:
    """Largest absolute change of any parameter listed in ``before``."""
    now = bundle.state_dict()
    return max((float(np.max(np.abs(now[k] - v))) for k, v in before.items()), default=0.0)


def step2_adapt_aad(bundle: ModelBundle, dataset, cfg: AdaptConfig,
                    objective: str = "kd") -> tuple[ModelBundle, dict]:
    """Alternate discriminator and target-encoder updates over lockstep source/target batches.

    ``objective`` selects the second term of the target-encoder loss:
    ``"kd"`` (distillation from the frozen source pipeline, weighted by
    ``cfg.kd_weight``), ``"supervised"`` (source cross-entropy through the
    target encoder) or ``"none"`` (adversarial loss only).  Each epoch runs
    ``min(#source batches, #target batches)`` pairs.
    """
    if objective not in ("kd", "supervised", "none"):
        raise ValueError(f"unknown step-2 objective {objective!r}")
    if not (bundle.frozen["source_encoder"] and bundle.frozen["classifier"]):
        raise RuntimeError("step 2 requires a frozen source encoder and classifier (run step 1 first)")
    data = prepare(dataset, cfg.max_seq_len)
    src_enc, tgt_enc = bundle.source_encoder, bundle.target_encoder
    cls, dis = bundle.classifier, bundle.discriminator
    frozen_before = _snapshot(bundle, "source_encoder", "classifier")

    bundle.unfreeze("target_encoder", "discriminator")
    opt_d = Adam(bundle.trainable("discriminator"), lr=cfg.disc_lr,
                 clip_value=None if cfg.weight_clip else cfg.clip_value)
    opt_e = Adam(bundle.trainable("target_encoder"), lr=cfg.lr2, clip_norm=cfg.clip_norm)
    d_params = list(bundle.trainable("discriminator").values())
    trace: dict[str, list] = {}
    n_updates_d = n_updates_e = 0

    for epoch in range(cfg.epochs2):
        src_batches = batch_indices(len(data.source_train), cfg.batch, cfg.seed, epoch, _STEP2_SRC)
        tgt_batches = batch_indices(len(data.target_train), cfg.batch, cfg.seed, epoch, _STEP2_TGT)
        for s_idx, t_idx in zip(src_batches, tgt_batches):
            s_ids, s_len = data.source_train.batch(s_idx)
            t_ids, t_len = data.target_train.batch(t_idx)
            src_rep = src_enc.encode_padded(s_ids, s_len)

            # (a) discriminator
            for _ in range(cfg.d_steps_per_g_step):
                tgt_rep = tgt_enc.encode_padded(t_ids, t_len).detach()
                loss_d = losses.dis_loss(discriminate(dis, src_rep), discriminate(dis, tgt_rep))
                _finite(trace, dis_loss=loss_d.item())
                opt_d.zero_grad()
                loss_d.backward()
                _update(opt_d, trace)
                if cfg.weight_clip:
                    for p in d_params:
                        np.clip(p.values, -cfg.clip_value, cfg.clip_value, out=p.values)
                n_updates_d += 1

            # (b) target encoder
            gen = losses.gen_loss(discriminate(dis, tgt_enc.encode_padded(t_ids, t_len)))
            if objective == "kd":
                teacher = classify_logits(cls, src_rep)
                student = classify_logits(cls, tgt_enc.encode_padded(s_ids, s_len))
                kd = losses.kd_loss(teacher, student, cfg.temperature)
                total = losses.target_objective(gen, ops.scale(kd, cfg.kd_weight)) \
                    if cfg.kd_weight != 1.0 else losses.target_objective(gen, kd)
                _finite(trace, gen_loss=gen.item(), kd_loss=kd.item(), target_loss=total.item())
            elif objective == "supervised":
                student = classify_logits(cls, tgt_enc.encode_padded(s_ids, s_len))
                total = losses.target_objective_supervised(gen, student, data.source_train.labels[s_idx])
                _finite(trace, gen_loss=gen.item(), target_loss=total.item())
            else:
                total = gen
                _finite(trace, gen_loss=gen.item(), target_loss=total.item())
            opt_e.zero_grad()
            total.backward()
            _update(opt_e, trace)
            n_updates_e += 1

    for p in d_params:
        p.zero_grad()
    drift = frozen_drift(frozen_before, bundle)
    if drift != 0.0:
        raise FrozenParameterError(f"frozen source encoder / classifier moved by {drift}")
    trace["d_updates"] = [n_updates_d]
    trace["e_updates"] = [n_updates_e]
    return bundle, trace


def step3_evaluate(bundle: ModelBundle, dataset, use_source_encoder: bool = False) -> float:
    """Target-eval accuracy of argmax C(E(x)); ties go to the lower class index."""
    data = prepare(dataset, bundle.config.max_seq_len)
    enc = bundle.source_encoder if use_source_encoder else bundle.target_encoder
    return accuracy_on(enc, bundle.classifier, data.target_eval)


def alignment_loss(method: str, src_rep: Tensor, tgt_rep: Tensor, bundle: ModelBundle,
                   cfg: AdaptConfig) -> Tensor:
    if method == "ddc":
        bw = None if cfg.mmd_bandwidth is None else [cfg.mmd_bandwidth]
        return losses.mmd_gaussian(src_rep, tgt_rep, bw)
    if method == "coral":
        return losses.coral_loss(src_rep, tgt_rep)
    if method == "dann":
        dis = bundle.discriminator
        return losses.domain_ce(discriminate(dis, losses.reverse(src_rep, cfg.dann_lambda)),
                                discriminate(dis, losses.reverse(tgt_rep, cfg.dann_lambda)))
    raise ValueError(f"not a joint alignment method: {method!r}")


def run_baseline_method(method: str, bundle: ModelBundle, dataset, cfg: AdaptConfig,
                        pair: str | None = None) -> RunResult:
    """Single-phase training of a shared encoder on source CE plus an alignment loss."""
    if method not in JOINT_METHODS:
        raise ValueError(f"method must be one of {JOINT_METHODS}, got {method!r}")
    data = prepare(dataset, cfg.max_seq_len)
    enc, cls = bundle.source_encoder, bundle.classifier
    bundle.unfreeze("source_encoder", "classifier")
    names = ("source_encoder", "classifier", "discriminator") if method == "dann" \
        else ("source_encoder", "classifier")
    opt = Adam(bundle.trainable(*names), lr=cfg.lr1)
    trace: dict[str, list] = {}
    for epoch in range(cfg.epochs1):
        src_batches = batch_indices(len(data.source_train), cfg.batch, cfg.seed, epoch, _STEP1)
        tgt_batches = batch_indices(len(data.target_train), cfg.batch, cfg.seed, epoch, _JOINT_TGT)
        for j, s_idx in enumerate(src_batches):
            t_idx = tgt_batches[j % len(tgt_batches)]
            s_ids, s_len = data.source_train.batch(s_idx)
            src_rep = enc.encode_padded(s_ids, s_len)
            ce = losses.source_ce(classify_logits(cls, src_rep), data.source_train.labels[s_idx])
            if cfg.align_weight == 0.0:
                total = ce
                _finite(trace, source_ce=ce.item())
            else:
                t_ids, t_len = data.target_train.batch(t_idx)
                align = alignment_loss(method, src_rep, enc.encode_padded(t_ids, t_len), bundle, cfg)
                if method == "dann":
                    total = losses.dann_objective(ce, ops.scale(align, cfg.align_weight), cfg.dann_lambda)
                else:
                    total = ops.add(ce, ops.scale(align, cfg.align_weight))
                _finite(trace, source_ce=ce.item(), align_loss=align.item(), total_loss=total.item())
            opt.zero_grad()
            total.backward()
            _update(opt, trace)
    bundle.target_encoder = copy_params(enc)
    bundle.freeze("source_encoder", "classifier")
    dev = accuracy_on(enc, cls, data.source_dev)
    return RunResult(method=method, pair=pair or data.name, seed=cfg.seed,
                     target_accuracy=step3_evaluate(bundle, data, use_source_encoder=True),
                     source_dev_before=dev, source_dev_after=dev, traces=trace,
                     config=cfg.to_dict())


def run_method(method: str, dataset, cfg: AdaptConfig, pair: str | None = None,
               step1: tuple[ModelBundle, float, dict] | None = None,
               checkpoint=None) -> RunResult:
    """One (method, seed) run from fresh initialisation.

    ``step1`` may carry a cached fine-tuned bundle for this seed; it is
    cloned, never mutated.  ``checkpoint`` names a file for the final bundle.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    cfg = cfg.replace(method=method)
    data = prepare(dataset, cfg.max_seq_len)
    pair = pair or data.name
    if method in JOINT_METHODS:
        bundle = init_params(cfg.model_config(), cfg.seed)
        result = run_baseline_method(method, bundle, data, cfg, pair)
        if checkpoint is not None:
            save_checkpoint(bundle, checkpoint)
        return result

    if step1 is None:
        step1 = step1_finetune(init_params(cfg.model_config(), cfg.seed), data, cfg)
    bundle, dev_before, trace1 = clone_bundle(step1[0]), step1[1], step1[2]
    traces = {f"step1.{k}": v for k, v in trace1.items()}
    if method == "baseline":
        if checkpoint is not None:
            save_checkpoint(bundle, checkpoint)
        return RunResult(method, pair, cfg.seed, step3_evaluate(bundle, data, use_source_encoder=True),
                         dev_before, dev_before, traces, cfg.to_dict())

    objective = {"aad": "kd", "aad-supervised": "supervised", "adda": "none"}[method]
    bundle, trace2 = step2_adapt_aad(bundle, data, cfg, objective)
    traces.update({f"step2.{k}": v for k, v in trace2.items()})
    dev_after = accuracy_on(bundle.target_encoder, bundle.classifier, data.source_dev)
    if checkpoint is not None:
        save_checkpoint(bundle, checkpoint)
    return RunResult(method, pair, cfg.seed, step3_evaluate(bundle, data), dev_before, dev_after,
                     traces, cfg.to_dict())


@dataclass(frozen=True)
class MethodSpec:
    """A table column: a method name plus config overrides, e.g. ``aad:t=5``."""

    label: str
    method: str
    overrides: tuple[tuple[str, object], ...] = ()

    @classmethod
    def parse(cls, text: str) -> "MethodSpec":
        text = text.strip()
        name, _, rest = text.partition(":")
        if name not in METHODS:
            raise ValueError(f"unknown method {name!r}; choose from {METHODS}")
        overrides = []
        for item in filter(None, (s.strip() for s in rest.split(","))):
            key, eq, value = item.partition("=")
            if not eq:
                raise ValueError(f"bad method override {item!r} in {text!r}")
            key = {"t": "temperature"}.get(key.strip(), key.strip())
            overrides.append((key, value.strip()))
        return cls(text, name, tuple(overrides))


def _as_spec(m) -> MethodSpec:
    return m if isinstance(m, MethodSpec) else MethodSpec.parse(m)


def checkpoint_name(pair: str, label: str, seed: int) -> str:
    """Filesystem-safe file stem for one run."""
    safe = "".join(c if c.isalnum() or c in "-_." else "_" for c in f"{pair}__{label}")
    return f"{safe}__seed{seed}"


def _run_group(pair: str, dataset, specs: Sequence[MethodSpec], seed: int,
               cfg: AdaptConfig, checkpoint_dir=None) -> list[RunResult]:
    """All methods for one (pair, seed); Step 1 is computed once and shared."""
    cfg = cfg.replace(seed=seed)
    data = prepare(dataset, cfg.max_seq_len)
    cached = None
    out = []
    for spec in specs:
        run_cfg = cfg.replace(**dict(spec.overrides))
        try:
            if spec.method not in JOINT_METHODS and cached is None:
                step1_cfg = run_cfg.replace(method="baseline")
                cached = step1_finetune(init_params(step1_cfg.model_config(), seed), data, step1_cfg)
            ckpt = None if checkpoint_dir is None else \
                Path(checkpoint_dir) / (checkpoint_name(pair, spec.label, seed) + ".json")
            res = run_method(spec.method, data, run_cfg, pair,
                             step1=None if spec.method in JOINT_METHODS else cached, checkpoint=ckpt)
        except Exception as exc:  # recorded, not dropped
            logger.warning("run failed: pair=%s method=%s seed=%d: %s", pair, spec.label, seed, exc)
            res = RunResult(spec.method, pair, seed, config=run_cfg.to_dict(),
                            error=f"{type(exc).__name__}: {exc}")
            if isinstance(exc, DivergenceError):
                res.traces = exc.trace
        res.method = spec.label
        out.append(res)
    return out


def run_experiment(pairs: Mapping[str, DomainPairDataset], methods: Sequence, seeds: Sequence[int],
                   cfg: AdaptConfig | None = None, jobs: int = 1, checkpoint_dir=None):
    """Run the full pair x method x seed product and aggregate it.

    Step 1 depends only on the seed (and step-1 hyperparameters), so it is
    shared by every two-step method of a (pair, seed) group.  Returns a
    :class:`~advdistill.evaluation.ResultsTable` whose ``runs`` are sorted
    by (pair, method order, seed).  With ``checkpoint_dir`` every run's
    final bundle is saved there.
    """
    from .evaluation import aggregate

    cfg = cfg or AdaptConfig()
    cfg.validate()
    specs = [_as_spec(m) for m in methods]
    if not pairs or not specs or not seeds:
        raise ValueError("need at least one pair, one method and one seed")
    _check_step1_shared(specs, cfg)
    groups = [(p, s) for p in pairs for s in seeds]
    if jobs > 1 and len(groups) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_group, p, pairs[p], specs, s, cfg, checkpoint_dir) for p, s in groups]
            results = [r for f in futures for r in f.result()]
    else:
        results = [r for p, s in groups for r in _run_group(p, prepare(pairs[p], cfg.max_seq_len),
                                                             specs, s, cfg, checkpoint_dir)]
    order = {spec.label: i for i, spec in enumerate(specs)}
    pair_order = {p: i for i, p in enumerate(pairs)}
    results.sort(key=lambda r: (pair_order[r.pair], order[r.method], r.seed))
    baseline = next((s.label for s in specs if s.method == "baseline"), None)
    labels = [s.label for s in specs]
    try:
        return aggregate(results, baseline=baseline, method_order=labels)
    except ValueError as exc:
        # every baseline run of some pair failed: keep the table, drop the stars
        logger.warning("%s; significance not computed", exc)
        return aggregate(results, baseline=None, method_order=labels)


_STEP1_KEYS = ("epochs1", "lr1", "batch", "vocab_size", "embed_dim", "hidden_dim", "num_classes",
               "max_seq_len")


def _check_step1_shared(specs: Sequence[MethodSpec], cfg: AdaptConfig) -> None:
    for spec in specs:
        if spec.method in JOINT_METHODS:
            continue
        for key, _ in spec.overrides:
            if key.replace("-", "_") in _STEP1_KEYS:
                raise ValueError(f"{spec.label}: step-1 settings cannot vary per method ({key})")

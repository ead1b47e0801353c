"""Adam with cosine annealing, per-domain training and the incremental
protocol runner."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .data import DomainData, DomainDataset, batch_iter, read_dataset
from .errors import ConfigError, DataError, ShapeError
from .inference import bank_probabilities, predict_domain_agnostic
from .layers import TRAIN, binary_cross_entropy_loss, cross_entropy_loss
from .metrics import ACCURACY, LWLRAP, MetricsReport, accuracy, build_report, lwlrap
from .model import (
    ArchConfig,
    DilModel,
    DomainSpec,
    Strategy,
    TaskKind,
    add_domain,
    build_model,
    forward,
    trainable_params,
)
from .tensor import Tensor, backward, no_grad

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 32
    lr_base: float = 1e-3
    lr_incremental: float = 1e-4
    epochs: int = 20
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    eta_min: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.lr_base <= 0 or self.lr_incremental <= 0:
            raise ConfigError("learning rates must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray | None],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update, in place. A missing gradient counts as zero."""
    state.step += 1
    t = state.step
    c1, c2 = 1.0 - beta1**t, 1.0 - beta2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        elif g.shape != p.shape:
            raise ShapeError(f"adam: gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype)


def cosine_lr(epoch: int, total: int, lr_max: float, eta_min: float = 0.0) -> float:
    if total <= 0:
        raise ValueError("cosine schedule needs total > 0")
    if not 0 <= epoch <= total:
        raise ValueError(f"epoch {epoch} outside [0, {total}]")
    return eta_min + 0.5 * (lr_max - eta_min) * (1.0 + math.cos(math.pi * epoch / total))


@dataclass
class TrainLog:
    epochs: list[dict] = field(default_factory=list)

    @property
    def final_score(self) -> float:
        return self.epochs[-1]["score"]


def _loss(logits: Tensor, targets: np.ndarray, kind: TaskKind) -> Tensor:
    if kind == TaskKind.SINGLE:
        return cross_entropy_loss(logits, targets)
    return binary_cross_entropy_loss(logits, targets)


def score_outputs(outputs: np.ndarray, targets: np.ndarray, kind: TaskKind) -> float:
    if kind == TaskKind.SINGLE:
        return accuracy(outputs.argmax(axis=1), targets)
    if not targets.any():
        return float("nan")
    return lwlrap(outputs, targets)


def train_domain(
    model: DilModel,
    bank_id: int,
    dataset: DomainData,
    strategy,
    config: TrainConfig,
    lr: float | None = None,
    step: int | None = None,
    classes: Sequence[str] | None = None,
    stream: int = 0,
) -> TrainLog:
    """Train the parameters ``strategy`` unlocks on one domain.

    ``step`` selects which bank's parameters are trainable (defaults to
    ``bank_id``); ``classes`` restricts the logits, as used when several
    domains share bank 0. Shuffling is seeded by ``(config.seed, stream,
    epoch)``. Everything outside the trainable set is left bit-identical.
    """
    strategy = Strategy.parse(strategy)
    if len(dataset) == 0:
        raise DataError(f"domain {dataset.name!r} has no training samples")
    bank = model.bank(bank_id)
    class_list = tuple(classes) if classes is not None else bank.spec.class_list
    kind = bank.spec.task_kind
    targets = dataset.targets(class_list)
    lr = config.lr_incremental if lr is None else lr
    params = trainable_params(model, strategy, bank_id if step is None else step)
    mode = strategy.bn_mode
    update_stats = mode == TRAIN

    all_params = model.named_parameters()
    saved_flags = {k: p.requires_grad for k, p in all_params.items()}
    for k, p in all_params.items():
        p.requires_grad = k in params
    state = AdamState()
    log_ = TrainLog()
    data = DomainData(dataset.name, class_list, dataset.features, targets, dataset.task_kind)
    try:
        for epoch in range(config.epochs):
            lr_e = cosine_lr(epoch, config.epochs, lr, config.eta_min)
            total_loss, outputs, seen_targets = 0.0, [], []
            for batch in batch_iter(data, config.batch_size, (config.seed, stream, epoch)):
                x = Tensor(batch.features)
                if params:
                    logits = forward(model, bank_id, x, mode, update_stats, classes)
                    loss = _loss(logits, batch.labels, kind)
                    backward(loss)
                    adam_step(
                        {k: p.data for k, p in params.items()},
                        {k: p.grad for k, p in params.items()},
                        state,
                        lr_e,
                        config.beta1,
                        config.beta2,
                        config.adam_eps,
                    )
                    for p in params.values():
                        p.grad = None
                else:
                    with no_grad():
                        logits = forward(model, bank_id, x, mode, update_stats, classes)
                        loss = _loss(logits, batch.labels, kind)
                total_loss += loss.item() * len(batch)
                outputs.append(logits.data)
                seen_targets.append(batch.labels)
            score = score_outputs(np.concatenate(outputs), np.concatenate(seen_targets), kind)
            log_.epochs.append({"epoch": epoch, "lr": lr_e, "loss": total_loss / len(data), "score": score})
    finally:
        for k, p in all_params.items():
            p.requires_grad = saved_flags[k]
    return log_


def evaluate(model: DilModel, bank_id: int, data: DomainData, classes: Sequence[str] | None = None) -> float:
    """Accuracy (single-label) or lwlrap (multi-label) of one bank on a test set."""
    class_list = tuple(classes) if classes is not None else model.bank(bank_id).spec.class_list
    targets = data.targets(class_list)
    probs = np.concatenate(
        [bank_probabilities(model, bank_id, data.features[k : k + 256], classes) for k in range(0, len(data), 256)]
    )
    return score_outputs(probs, targets, data.task_kind)


# ------------------------------------------------------------------ protocol


@dataclass
class ProtocolConfig:
    domains: list[DomainSpec]
    strategy: Strategy = Strategy.ADIL
    arch: ArchConfig = field(default_factory=ArchConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    vocabulary: tuple[str, ...] | None = None
    seed: int = 0
    agnostic: bool = False
    normalize_entropy: bool = False

    def __post_init__(self):
        self.strategy = Strategy.parse(self.strategy)
        if not self.domains:
            raise ConfigError("protocol needs at least one domain")
        names = [d.name for d in self.domains]
        if len(set(names)) != len(names):
            raise ConfigError("domain names must be unique")
        for t, d in enumerate(self.domains):
            if d.domain_id != t:
                raise ConfigError(f"domain {d.name!r} has id {d.domain_id}, expected {t}")
        if len({d.task_kind for d in self.domains}) != 1:
            raise ConfigError("all domains of a protocol must share one task kind")
        if self.vocabulary is None:
            vocab: list[str] = []
            for d in self.domains:
                vocab += [c for c in d.class_list if c not in vocab]
            self.vocabulary = tuple(vocab)
        for d in self.domains:
            d.check_vocabulary(self.vocabulary)
        if not self.strategy.banked and self.strategy != Strategy.SINGLE:
            base = set(self.domains[0].class_list)
            for d in self.domains[1:]:
                if not set(d.class_list) <= base:
                    raise ConfigError(
                        f"strategy {self.strategy.value} shares one classifier, so domain {d.name!r}"
                        " may only use classes of the first domain"
                    )
        self.train = replace(self.train, seed=self.seed)

    @property
    def metric(self) -> str:
        return LWLRAP if self.domains[0].task_kind == TaskKind.MULTI else ACCURACY


@dataclass
class ProtocolResult:
    report: MetricsReport
    models: list[DilModel]
    logs: list[TrainLog]
    agnostic: MetricsReport | None = None
    selection: dict[tuple[int, int], float] = field(default_factory=dict)
    frozen_checks: list[tuple[int, str, str]] = field(default_factory=list)


def _resolve_data(protocol: ProtocolConfig, data, domains=None) -> dict[str, DomainDataset]:
    out = {}
    for spec in protocol.domains if domains is None else domains:
        if isinstance(data, Mapping):
            if spec.name not in data:
                raise DataError(f"no data for domain {spec.name!r}")
            out[spec.name] = data[spec.name]
            continue
        directory = Path(data) / spec.name
        if not directory.is_dir():
            raise DataError(f"no data for domain {spec.name!r} (expected directory {directory})")
        out[spec.name] = read_dataset(
            directory, spec.class_list, spec.task_kind, protocol.arch.n_freq, protocol.arch.n_frames
        )
    return out


def _merge(parts: Sequence[DomainData], class_list: Sequence[str]) -> DomainData:
    return DomainData(
        "+".join(p.name for p in parts),
        tuple(class_list),
        np.concatenate([p.features for p in parts]),
        np.concatenate([p.targets(class_list) for p in parts]),
        parts[0].task_kind,
    )


def agnostic_score(
    model: DilModel, data: DomainData, n_banks: int | None = None, normalize: bool = False
) -> tuple[float, np.ndarray]:
    """Score when the bank is picked by entropy, plus the chosen bank per sample.

    Only the first ``n_banks`` banks compete (all by default). A chosen bank's
    probabilities count for the classes it shares with ``data``.
    """
    n_banks = model.n_banks if n_banks is None else n_banks
    pred = predict_domain_agnostic(model, data.features, range(n_banks), normalize)
    own = data.classes
    outputs = np.zeros((len(data), len(own)))
    for n, (b, p) in enumerate(zip(pred.chosen_bank, pred.probabilities)):
        bank_classes = model.banks[b].spec.class_list
        for k, c in enumerate(own):
            if c in bank_classes:
                outputs[n, k] = p[bank_classes.index(c)]
    targets = data.targets(own)
    return score_outputs(outputs, targets, data.task_kind), pred.chosen_bank


def train_base(protocol: ProtocolConfig, data) -> tuple[DilModel, TrainLog]:
    """Build and train the base model on the first domain (all parameters, base lr)."""
    base_spec = protocol.domains[0]
    train = _resolve_data(protocol, data, [base_spec])[base_spec.name].train
    model = build_model(protocol.arch, base_spec, protocol.seed, protocol.vocabulary)
    cfg = protocol.train
    return model, train_domain(model, 0, train, Strategy.FT, cfg, lr=cfg.lr_base, stream=0)


def run_protocol(protocol: ProtocolConfig, data, base: tuple[DilModel, TrainLog] | None = None) -> ProtocolResult:
    """Learn the domains in order and evaluate every seen domain after each step.

    ``data`` is either a directory holding one sub-directory per domain (with
    ``train.csv`` / ``test.csv`` manifests) or a mapping from domain name to
    :class:`DomainDataset`. Only the MULTI strategy reads earlier domains'
    training data. ``base`` is an optional result of :func:`train_base` for
    the same protocol settings; it is copied, so one base can serve several
    strategies.
    """
    datasets = _resolve_data(protocol, data)
    domains, strategy, cfg = protocol.domains, protocol.strategy, protocol.train
    arch, vocab, seed = protocol.arch, protocol.vocabulary, protocol.seed
    base_spec = domains[0]

    model, base_log = train_base(protocol, datasets) if base is None else base
    model = model.copy()
    logs = [base_log]
    base_model = model.copy() if strategy == Strategy.MULTI else None
    single_models = [model]
    snapshots = [model.copy()]
    frozen_checks = []

    def route(i: int) -> tuple[DilModel, int, tuple[str, ...] | None]:
        if strategy.banked:
            return model, i, None
        if strategy == Strategy.SINGLE:
            return single_models[i], 0, None
        return model, 0, domains[i].class_list

    aware: dict[tuple[int, int], float] = {}
    agnostic: dict[tuple[int, int], float] = {}
    selection: dict[tuple[int, int], float] = {}

    def evaluate_step(t: int) -> None:
        for i in range(t + 1):
            m, b, classes = route(i)
            test = datasets[domains[i].name].test
            aware[(t + 1, i + 1)] = 100.0 * evaluate(m, b, test, classes)
            if protocol.agnostic and strategy != Strategy.SINGLE:
                n_banks = t + 1 if strategy.banked else 1
                score, chosen = agnostic_score(m, test, n_banks, protocol.normalize_entropy)
                agnostic[(t + 1, i + 1)] = 100.0 * score
                selection[(t + 1, i + 1)] = float((chosen == (i if strategy.banked else 0)).mean())
        log.info("step %d (%s): %s", t + 1, domains[t].name, [aware[(t + 1, i + 1)] for i in range(t + 1)])

    evaluate_step(0)
    for t in range(1, len(domains)):
        spec = domains[t]
        train = datasets[spec.name].train
        if strategy.banked:
            before = model.frozen_digest(t)
            bank = add_domain(model, spec, strategy.head_mode)
            logs.append(train_domain(model, bank, train, strategy, cfg, lr=cfg.lr_incremental, stream=t))
            frozen_checks.append((t + 1, before, model.frozen_digest(t)))
        elif strategy == Strategy.SINGLE:
            fresh = build_model(arch, DomainSpec(0, spec.name, spec.class_list, spec.task_kind), seed, vocab)
            logs.append(train_domain(fresh, 0, train, Strategy.SINGLE, cfg, lr=cfg.lr_base, stream=t))
            single_models.append(fresh)
        elif strategy == Strategy.MULTI:
            model = base_model.copy()
            seen = _merge([datasets[d.name].train for d in domains[: t + 1]], base_spec.class_list)
            logs.append(train_domain(model, 0, seen, Strategy.MULTI, cfg, lr=cfg.lr_incremental, stream=t))
        else:
            logs.append(
                train_domain(
                    model, 0, train, strategy, cfg, lr=cfg.lr_incremental, classes=spec.class_list, stream=t
                )
            )
        snapshots.append((single_models[-1] if strategy == Strategy.SINGLE else model).copy())
        evaluate_step(t)

    names = [d.name for d in domains]
    report = build_report(aware, names, protocol.metric)
    report.extras["strategy"] = strategy.value
    agnostic_report = None
    if agnostic:
        agnostic_report = build_report(agnostic, names, protocol.metric)
        report.extras["agnostic"] = agnostic_report.to_dict()
        report.extras["bank_selection"] = [
            {"step": t, "domain": names[i - 1], "accuracy": acc} for (t, i), acc in sorted(selection.items())
        ]
    return ProtocolResult(report, snapshots, logs, agnostic_report, selection, frozen_checks)

"""Shared convolutional trunk with per-domain BatchNorm/classifier banks.

The conv kernels and the base classifier are shared by every domain. Each
domain owns a bank holding BatchNorm parameters and statistics, plus
(depending on the strategy) its own classifier head. Forward passes pick a
bank, so switching domains never touches the shared weights.
"""

from __future__ import annotations

import copy
import hashlib
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import BankError, ConfigError, ShapeError
from .layers import EVAL, TRAIN, BnParams, LinearParams, batchnorm_forward, linear_forward
from .tensor import Tensor, avg_pool2d, conv2d, gather_columns, global_pool, relu

HEAD_BASE = "base"  # logits come from the base classifier, gathered to this bank's classes
HEAD_OWN = "own"  # the bank's own classifier alone
HEAD_RESIDUAL = "residual"  # own classifier added to the gathered base logits
HEAD_MODES = (HEAD_BASE, HEAD_OWN, HEAD_RESIDUAL)


class TaskKind(str, Enum):
    SINGLE = "single"
    MULTI = "multi"


class Strategy(str, Enum):
    FE = "fe"
    FT = "ft"
    SINGLE = "single"
    MULTI = "multi"
    BN_STATS = "bn_stats"
    CLF = "clf"
    BN = "bn"
    BN_CLF = "bn_clf"
    ADIL = "adil"

    @classmethod
    def parse(cls, name) -> "Strategy":
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).strip().lower())
        except ValueError:
            valid = ", ".join(s.value for s in cls)
            raise ConfigError(f"unknown strategy {name!r}; valid strategies: {valid}") from None

    @property
    def head_mode(self) -> str | None:
        """Head routing for banks created by this strategy; None if it adds no banks."""
        return _HEAD_MODE.get(self)

    @property
    def banked(self) -> bool:
        return self in _HEAD_MODE

    @property
    def frozen_trunk(self) -> bool:
        return self.banked

    @property
    def bn_mode(self) -> str:
        """BatchNorm mode used while training an incremental step."""
        return EVAL if self in (Strategy.FE, Strategy.CLF) else TRAIN


_HEAD_MODE = {
    Strategy.BN_STATS: HEAD_BASE,
    Strategy.CLF: HEAD_OWN,
    Strategy.BN: HEAD_BASE,
    Strategy.BN_CLF: HEAD_OWN,
    Strategy.ADIL: HEAD_RESIDUAL,
}


@dataclass(frozen=True)
class ArchConfig:
    n_freq: int = 16
    n_frames: int = 16
    channels: tuple[int, ...] = (8, 16, 32)
    convs_per_block: int = 2
    in_channels: int = 1

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if not self.channels or min(self.channels) < 1:
            raise ConfigError("arch needs at least one block with positive channel count")
        if self.convs_per_block < 1 or self.in_channels < 1:
            raise ConfigError("convs_per_block and in_channels must be >= 1")
        f, t = self.n_freq, self.n_frames
        for b in range(self.n_blocks):
            f, t = f // 2, t // 2
            if f < 1 or t < 1:
                raise ShapeError(
                    f"input {self.n_freq}x{self.n_frames} underflows to zero size after block {b + 1} pooling"
                )

    @property
    def n_blocks(self) -> int:
        return len(self.channels)

    @property
    def n_bn_layers(self) -> int:
        return self.n_blocks * self.convs_per_block

    @property
    def feature_dim(self) -> int:
        return self.channels[-1]

    def conv_shapes(self) -> list[tuple[int, int, int, int]]:
        shapes, c_in = [], self.in_channels
        for c in self.channels:
            for _ in range(self.convs_per_block):
                shapes.append((c, c_in, 3, 3))
                c_in = c
        return shapes

    def bn_channels(self) -> list[int]:
        return [shape[0] for shape in self.conv_shapes()]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        return cls(**{**d, "channels": tuple(d["channels"])})


@dataclass(frozen=True)
class DomainSpec:
    domain_id: int
    name: str
    class_list: tuple[str, ...]
    task_kind: TaskKind = TaskKind.SINGLE

    def __post_init__(self):
        object.__setattr__(self, "class_list", tuple(self.class_list))
        object.__setattr__(self, "task_kind", TaskKind(self.task_kind))
        if not self.class_list:
            raise ConfigError(f"domain {self.name!r} has an empty class list")
        if len(set(self.class_list)) != len(self.class_list):
            raise ConfigError(f"domain {self.name!r} lists a class twice")

    def check_vocabulary(self, vocabulary: Sequence[str]) -> None:
        missing = [c for c in self.class_list if c not in vocabulary]
        if missing:
            raise ConfigError(f"domain {self.name!r}: classes {missing} are not in the vocabulary")

    def to_dict(self) -> dict:
        return {
            "domain_id": self.domain_id,
            "name": self.name,
            "class_list": list(self.class_list),
            "task_kind": self.task_kind.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DomainSpec":
        return cls(d["domain_id"], d["name"], tuple(d["class_list"]), TaskKind(d["task_kind"]))


@dataclass
class DomainBank:
    spec: DomainSpec
    bn: list[BnParams]
    head: LinearParams | None
    class_map: np.ndarray
    head_mode: str = HEAD_BASE


class DilModel:
    def __init__(
        self,
        arch: ArchConfig,
        vocabulary: Sequence[str],
        convs: list[Tensor],
        base_head: LinearParams,
        banks: list[DomainBank],
    ):
        self.arch = arch
        self.vocabulary = tuple(vocabulary)
        self.convs = convs
        self.base_head = base_head
        self.banks = banks

    @property
    def n_banks(self) -> int:
        return len(self.banks)

    @property
    def base_classes(self) -> tuple[str, ...]:
        return self.banks[0].spec.class_list

    def bank(self, bank_id: int) -> DomainBank:
        if not 0 <= bank_id < len(self.banks):
            raise BankError(f"bank {bank_id} out of range; model has {len(self.banks)} bank(s)")
        return self.banks[bank_id]

    def named_parameters(self) -> dict[str, Tensor]:
        out = {f"trunk.conv{k}.weight": w for k, w in enumerate(self.convs)}
        out["base_head.weight"] = self.base_head.weight
        out["base_head.bias"] = self.base_head.bias
        for t, bank in enumerate(self.banks):
            for k, bn in enumerate(bank.bn):
                out[f"bank{t}.bn{k}.gamma"] = bn.gamma
                out[f"bank{t}.bn{k}.beta"] = bn.beta
            if bank.head is not None:
                out[f"bank{t}.head.weight"] = bank.head.weight
                out[f"bank{t}.head.bias"] = bank.head.bias
        return out

    def named_buffers(self) -> dict[str, np.ndarray]:
        out = {}
        for t, bank in enumerate(self.banks):
            for k, bn in enumerate(bank.bn):
                out[f"bank{t}.bn{k}.running_mean"] = bn.running_mean
                out[f"bank{t}.bn{k}.running_var"] = bn.running_var
        return out

    def named_tensors(self) -> dict[str, np.ndarray]:
        """Every parameter and buffer, sorted by name."""
        merged = {k: v.data for k, v in self.named_parameters().items()}
        merged.update(self.named_buffers())
        return dict(sorted(merged.items()))

    def digest(self, prefixes: Sequence[str] | None = None) -> str:
        """SHA-256 over names and raw bytes of the selected tensors."""
        h = hashlib.sha256()
        for name, arr in self.named_tensors().items():
            if prefixes is None or any(name.startswith(p) for p in prefixes):
                h.update(name.encode())
                h.update(str(arr.dtype).encode())
                h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    def frozen_digest(self, step: int) -> str:
        """Digest of the shared weights and every bank before ``step``."""
        return self.digest(["trunk.", "base_head."] + [f"bank{t}." for t in range(step)])

    def copy(self) -> "DilModel":
        return copy.deepcopy(self)


def _class_map(classes: Sequence[str], base_classes: Sequence[str]) -> np.ndarray:
    return np.array([base_classes.index(c) if c in base_classes else -1 for c in classes], dtype=np.int64)


def build_model(
    arch: ArchConfig,
    base_domain: DomainSpec,
    seed: int,
    vocabulary: Sequence[str] | None = None,
) -> DilModel:
    """Fresh model with bank 0 for the base domain.

    Convs use He-uniform init, the base classifier Xavier-uniform weights and
    zero bias; BatchNorm starts at gamma=1, beta=0, mean 0, var 1.
    """
    vocabulary = tuple(vocabulary) if vocabulary is not None else base_domain.class_list
    base_domain.check_vocabulary(vocabulary)
    if base_domain.domain_id != 0:
        raise ConfigError(f"base domain must have domain_id 0, got {base_domain.domain_id}")
    rng = np.random.default_rng(seed)
    convs = []
    for shape in arch.conv_shapes():
        bound = np.sqrt(6.0 / (shape[1] * shape[2] * shape[3]))
        convs.append(Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True))
    n_cls, feat = len(base_domain.class_list), arch.feature_dim
    bound = np.sqrt(6.0 / (n_cls + feat))
    base_head = LinearParams(
        Tensor(rng.uniform(-bound, bound, size=(n_cls, feat)), requires_grad=True),
        Tensor(np.zeros(n_cls), requires_grad=True),
    )
    bank0 = DomainBank(
        base_domain,
        [BnParams.init(c) for c in arch.bn_channels()],
        None,
        np.arange(n_cls, dtype=np.int64),
        HEAD_BASE,
    )
    return DilModel(arch, vocabulary, convs, base_head, [bank0])


def add_domain(model: DilModel, spec: DomainSpec, head_mode: str = HEAD_RESIDUAL) -> int:
    """Append a bank whose BatchNorm starts as a copy of the previous bank.

    Own/residual heads start at zero, so a fresh residual bank reproduces
    the base classifier on every mapped class.
    """
    if head_mode not in HEAD_MODES:
        raise ConfigError(f"unknown head mode {head_mode!r}")
    if spec.domain_id != model.n_banks:
        raise ConfigError(
            f"domain {spec.name!r} has domain_id {spec.domain_id}, expected {model.n_banks}"
            " (ids must be unique and consecutive)"
        )
    spec.check_vocabulary(model.vocabulary)
    class_map = _class_map(spec.class_list, model.base_classes)
    if head_mode == HEAD_BASE and (class_map < 0).any():
        raise ConfigError(f"domain {spec.name!r} has classes outside the base classifier; needs its own head")
    head = None if head_mode == HEAD_BASE else LinearParams.zeros(len(spec.class_list), model.arch.feature_dim)
    previous = model.banks[-1]
    model.banks.append(DomainBank(spec, [bn.copy() for bn in previous.bn], head, class_map, head_mode))
    return model.n_banks - 1


def features(model: DilModel, bank_id: int, x: Tensor, mode: str = EVAL, update_stats: bool = False) -> Tensor:
    arch = model.arch
    expected = (arch.in_channels, arch.n_freq, arch.n_frames)
    if x.ndim != 4 or x.shape[1:] != expected:
        raise ShapeError(f"model expects input N x {expected[0]} x {expected[1]} x {expected[2]}, got {x.shape}")
    bank = model.bank(bank_id)
    h, k = x, 0
    for _ in range(arch.n_blocks):
        for _ in range(arch.convs_per_block):
            h = conv2d(h, model.convs[k], padding=1)
            h = relu(batchnorm_forward(h, bank.bn[k], mode, update_stats))
            k += 1
        h = avg_pool2d(h, 2)
    return global_pool(h)


def forward(
    model: DilModel,
    bank_id: int,
    x: Tensor,
    mode: str = EVAL,
    update_stats: bool = False,
    classes: Sequence[str] | None = None,
) -> Tensor:
    """Logits over the bank's class list (or the ``classes`` subset of it)."""
    bank = model.bank(bank_id)
    f = features(model, bank_id, x, mode, update_stats)
    if bank.head_mode == HEAD_BASE:
        logits = linear_forward(f, model.base_head)
        if bank_id != 0:
            logits = gather_columns(logits, bank.class_map)
    elif bank.head_mode == HEAD_OWN:
        logits = linear_forward(f, bank.head)
    else:
        logits = linear_forward(f, bank.head) + gather_columns(linear_forward(f, model.base_head), bank.class_map)
    if classes is not None:
        own = bank.spec.class_list
        missing = [c for c in classes if c not in own]
        if missing:
            raise ConfigError(f"bank {bank_id} has no outputs for classes {missing}")
        logits = gather_columns(logits, [own.index(c) for c in classes])
    return logits


def trainable_params(model: DilModel, strategy, step: int) -> dict[str, Tensor]:
    """The parameters a strategy may update at incremental ``step``."""
    strategy = Strategy.parse(strategy)
    named = model.named_parameters()
    bank = f"bank{step}."
    if strategy in (Strategy.FT, Strategy.SINGLE, Strategy.MULTI):
        return named
    if strategy == Strategy.FE:
        return {k: v for k, v in named.items() if k.startswith("base_head.")}
    if strategy == Strategy.BN_STATS:
        return {}
    wants_bn = strategy in (Strategy.ADIL, Strategy.BN_CLF, Strategy.BN)
    wants_head = strategy in (Strategy.ADIL, Strategy.BN_CLF, Strategy.CLF)
    return {
        k: v
        for k, v in named.items()
        if k.startswith(bank)
        and ((wants_bn and ".bn" in k) or (wants_head and k.startswith(bank + "head.")))
    }


@dataclass(frozen=True)
class ParamAudit:
    shared_count: int
    per_domain_count: int
    shared_fraction: float


def shared_fraction(shared_count: int, per_domain_count: int) -> float:
    return shared_count / (shared_count + per_domain_count)


def arch_param_audit(arch: ArchConfig, n_classes: int) -> ParamAudit:
    """Closed-form counts for an architecture with ``n_classes`` base classes.

    A full bank is BatchNorm gamma/beta for every layer plus a classifier over
    the base classes; running statistics are buffers and not counted.
    """
    head = n_classes * arch.feature_dim + n_classes
    shared = sum(int(np.prod(s)) for s in arch.conv_shapes()) + head
    per_domain = 2 * sum(arch.bn_channels()) + head
    return ParamAudit(shared, per_domain, shared_fraction(shared, per_domain))


def param_audit(model: DilModel) -> ParamAudit:
    """Shared parameter count versus the trainable parameters of one full bank."""
    return arch_param_audit(model.arch, len(model.base_classes))

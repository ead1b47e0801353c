"""INI run configuration shared by the ``generate`` and ``protocol`` commands.

Sections::

    [protocol]        strategy, seed, agnostic, normalize_entropy, task_kind, vocabulary
    [arch]            n_freq, n_frames, channels, convs_per_block
    [train]           batch_size, lr_base, lr_incremental, epochs, beta1, beta2, adam_eps, eta_min
    [domain:NAME]     classes, plus the synthetic generator settings for that domain

Domains are learned in the order their sections appear. Unknown sections or
keys are rejected so that typos do not silently fall back to defaults.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, fields
from pathlib import Path

from .data import SyntheticDomainSpec
from .errors import ConfigError
from .model import ArchConfig, DomainSpec, Strategy, TaskKind
from .train import ProtocolConfig, TrainConfig

_PROTOCOL_KEYS = {"strategy", "seed", "agnostic", "normalize_entropy", "task_kind", "vocabulary"}
_ARCH_KEYS = {"n_freq", "n_frames", "channels", "convs_per_block"}
_TRAIN_KEYS = {f.name for f in fields(TrainConfig)} - {"seed"}
_SYNTH_INT = {"n_train", "n_test", "prototype_seed", "background_seed", "variant_seed"}
_SYNTH_FLOAT = {"scale", "noise", "smoothness", "background", "variant_weight"}
_SYNTH_VECTOR = {"offset", "band_emphasis"}
_DOMAIN_KEYS = {"classes"} | _SYNTH_INT | _SYNTH_FLOAT | _SYNTH_VECTOR


@dataclass
class RunConfig:
    protocol: ProtocolConfig
    synthetic: list[SyntheticDomainSpec]

    @property
    def domain_names(self) -> list[str]:
        return [d.name for d in self.protocol.domains]


def _names(text: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _number(section: str, key: str, text: str, kind):
    try:
        return kind(text)
    except ValueError:
        raise ConfigError(f"[{section}] {key} = {text!r} is not a valid {kind.__name__}") from None


def _bool(section: str, key: str, text: str) -> bool:
    value = text.strip().lower()
    if value in ("1", "yes", "true", "on"):
        return True
    if value in ("0", "no", "false", "off"):
        return False
    raise ConfigError(f"[{section}] {key} = {text!r} is not a boolean")


def _vector(section: str, key: str, text: str):
    values = tuple(_number(section, key, v, float) for v in _names(text))
    if not values:
        raise ConfigError(f"[{section}] {key} is empty")
    return values[0] if len(values) == 1 else values


def _check_keys(section: str, present, allowed: set[str]) -> None:
    unknown = sorted(set(present) - allowed)
    if unknown:
        raise ConfigError(f"[{section}] unknown key(s) {unknown}; allowed: {sorted(allowed)}")


def parse_config(text: str, seed: int | None = None, strategy: str | None = None, epochs: int | None = None) -> RunConfig:
    """Parse INI text; the keyword arguments override the file's values."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config does not parse: {exc}".splitlines()[0]) from None

    domain_sections = [s for s in parser.sections() if s.startswith("domain:")]
    stray = [s for s in parser.sections() if s not in ("protocol", "arch", "train") and s not in domain_sections]
    if stray:
        raise ConfigError(f"unknown section(s) {stray}")
    if not domain_sections:
        raise ConfigError("config defines no [domain:NAME] sections")

    proto = parser["protocol"] if parser.has_section("protocol") else {}
    _check_keys("protocol", proto, _PROTOCOL_KEYS)
    kind = proto.get("task_kind", "single")
    if kind not in ("single", "multi"):
        raise ConfigError(f"[protocol] task_kind must be 'single' or 'multi', got {kind!r}")
    task_kind = TaskKind(kind)

    arch_kw = {}
    if parser.has_section("arch"):
        sec = parser["arch"]
        _check_keys("arch", sec, _ARCH_KEYS)
        for key in ("n_freq", "n_frames", "convs_per_block"):
            if key in sec:
                arch_kw[key] = _number("arch", key, sec[key], int)
        if "channels" in sec:
            arch_kw["channels"] = tuple(_number("arch", "channels", v, int) for v in _names(sec["channels"]))
    try:
        arch = ArchConfig(**arch_kw)
    except ValueError as exc:
        raise ConfigError(f"[arch] {exc}") from None

    train_kw = {}
    if parser.has_section("train"):
        sec = parser["train"]
        _check_keys("train", sec, _TRAIN_KEYS)
        for key in sec:
            kind = int if key in ("batch_size", "epochs") else float
            train_kw[key] = _number("train", key, sec[key], kind)
    if epochs is not None:
        train_kw["epochs"] = epochs
    train = TrainConfig(**train_kw)

    domains, synthetic = [], []
    for t, section in enumerate(domain_sections):
        name = section.split(":", 1)[1].strip()
        sec = parser[section]
        _check_keys(section, sec, _DOMAIN_KEYS)
        if "classes" not in sec:
            raise ConfigError(f"[{section}] needs a classes list")
        classes = _names(sec["classes"])
        domains.append(DomainSpec(t, name, classes, task_kind))
        synth = {"n_freq": arch.n_freq, "n_frames": arch.n_frames, "task_kind": task_kind}
        for key in sec:
            if key in _SYNTH_INT:
                synth[key] = _number(section, key, sec[key], int)
            elif key in _SYNTH_FLOAT:
                synth[key] = _number(section, key, sec[key], float)
            elif key in _SYNTH_VECTOR:
                synth[key] = _vector(section, key, sec[key])
        synthetic.append(SyntheticDomainSpec(name, classes, **synth))

    run_seed = seed if seed is not None else _number("protocol", "seed", proto.get("seed", "0"), int)
    protocol = ProtocolConfig(
        domains,
        Strategy.parse(strategy if strategy is not None else proto.get("strategy", "adil")),
        arch,
        train,
        _names(proto["vocabulary"]) if "vocabulary" in proto else None,
        run_seed,
        _bool("protocol", "agnostic", proto.get("agnostic", "no")),
        _bool("protocol", "normalize_entropy", proto.get("normalize_entropy", "no")),
    )
    return RunConfig(protocol, synthetic)


def load_config(path, **overrides) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, **overrides)

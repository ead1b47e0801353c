from dataclasses import replace
from pathlib import Path

import pytest

from dilearn.config import load_config, parse_config
from dilearn.errors import ConfigError
from dilearn.model import Strategy
from dilearn.scenarios import scenario

BASIC = """
[protocol]
strategy = bn_clf
seed = 4
agnostic = yes

[arch]
n_freq = 16
n_frames = 16
channels = 4, 8

[train]
epochs = 3
lr_incremental = 0.01

[domain:A]
classes = dog, rain

[domain:B]
classes = rain, bird
offset = -2
variant_weight = 0.5   # blended class patterns
variant_seed = 1
"""


class TestParse:
    def test_basic(self):
        run = parse_config(BASIC)
        p = run.protocol
        assert p.strategy == Strategy.BN_CLF and p.seed == 4 and p.agnostic
        assert p.arch.channels == (4, 8) and p.train.epochs == 3 and p.train.lr_incremental == 0.01
        assert run.domain_names == ["A", "B"]
        assert p.vocabulary == ("dog", "rain", "bird")
        b = run.synthetic[1]
        assert b.offset == -2.0 and b.variant_weight == 0.5 and b.n_freq == 16

    def test_overrides(self):
        p = parse_config(BASIC, seed=9, strategy="adil", epochs=1).protocol
        assert (p.seed, p.strategy, p.train.epochs, p.train.seed) == (9, Strategy.ADIL, 1, 9)

    def test_vector_offset(self):
        text = BASIC.replace("offset = -2", "offset = " + ", ".join(["0.5"] * 16))
        assert parse_config(text).synthetic[1].offset == (0.5,) * 16

    def test_defaults(self):
        run = parse_config("[domain:A]\nclasses = x, y\n")
        assert run.protocol.strategy == Strategy.ADIL and run.protocol.seed == 0


class TestErrors:
    @pytest.mark.parametrize(
        "edit, match",
        [
            (("[train]", "[trian]"), "unknown section"),
            (("seed = 4", "sed = 4"), "unknown key"),
            (("epochs = 3", "epochs = three"), "not a valid int"),
            (("agnostic = yes", "agnostic = maybe"), "boolean"),
            (("strategy = bn_clf", "strategy = bogus"), "valid strategies"),
            (("channels = 4, 8", "channels = 4, 8, 8, 8, 8"), r"\[arch\]"),
            (("variant_weight = 0.5", "variant_weight = 2"), "variant_weight"),
            (("classes = dog, rain\n", "labels = dog\n"), "unknown key"),
        ],
    )
    def test_rejected(self, edit, match):
        with pytest.raises(ConfigError, match=match):
            parse_config(BASIC.replace(*edit, 1))

    def test_no_domains(self):
        with pytest.raises(ConfigError, match="no \\[domain"):
            parse_config("[protocol]\nseed = 1\n")

    def test_unparseable(self):
        with pytest.raises(ConfigError, match="does not parse"):
            parse_config("seed = 1\n")

    def test_unreadable_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(tmp_path / "missing.ini")

    @pytest.mark.parametrize("name, preset", [("example.ini", "plasticity"), ("gated.ini", "gated")])
    def test_shipped_configs_match_scenarios(self, name, preset):
        sc = scenario(preset)
        run = load_config(Path(__file__).resolve().parents[1] / "configs" / name)
        assert run.synthetic == sc.domains
        assert run.protocol.train == replace(sc.train, seed=run.protocol.seed)
        assert run.protocol.arch == sc.arch

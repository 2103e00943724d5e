"""INI-style experiment configuration.

Every key is optional; missing keys take the defaults below, which follow
the reported settings where there are any (5 local epochs, target norm 1.0,
60% sparsity, 10,000 construction steps at lr 1e-4, 15 finetune epochs).
Unknown sections or keys are rejected so typos fail loudly.

Example::

    [experiment]
    method = fedloge        ; fedloge | fedavg | dense_etf_frozen
    seed = 0

    [dataset]
    n_classes = 10
    feature_dim = 20
    n_max = 500
    imbalance_factor = 100

    [partition]
    n_clients = 8
    alpha = 0.5

    [federation]
    rounds = 200
"""
from __future__ import annotations

import configparser
import io

from .datagen import DatasetSpec
from .errors import ConfigError, FedLoGeError
from .federation import FedConfig
from .model import TrainConfig
from .numerics import SgdConfig
from .pipeline import METHODS, DataConfig, ExperimentConfig, ModelConfig, RealignConfig
from .ssec import SsecConfig


def _ints(text):
    text = text.strip()
    return tuple(int(v) for v in text.split(",")) if text else ()


# section -> key -> (parser, default)
SCHEMA = {
    "experiment": {
        "method": (str, "fedloge"),
        "seed": (int, 0),
        "eval_every": (int, 1),
        "workers": (int, 1),
        "out": (str, "runs/experiment"),
    },
    "dataset": {
        "n_classes": (int, 10),
        "feature_dim": (int, 20),
        "n_max": (int, 500),
        "imbalance_factor": (float, 100.0),
        "class_separation": (float, 3.0),
        "noise_scale": (float, 1.0),
        "test_per_class": (int, 250),
        "local_test_budget": (int, 200),
    },
    "partition": {
        "n_clients": (int, 8),
        "alpha": (float, 0.5),
    },
    "federation": {
        "rounds": (int, 200),
        "local_epochs": (int, 5),
        "participation": (float, 1.0),
        "learning_rate": (float, 0.05),
        "momentum": (float, 0.0),
        "weight_decay": (float, 0.0),
        "batch_size": (int, 32),
        "head_features": (str, "post"),
    },
    "model": {
        "hidden": (_ints, "64,64"),
        "feature_dim": (int, 64),
        "output_activation": (str, "relu"),
    },
    "ssec": {
        "gamma": (float, 1.0),
        "beta": (float, 0.6),
        "steps": (int, 10_000),
        "learning_rate": (float, 1e-4),
        "momentum": (float, 0.9),
        "eps": (float, 1e-7),
        "angle_weight": (float, 1.0),
    },
    "realign": {
        "finetune_epochs": (int, 15),
        "finetune_lr": (float, 0.05),
        "direction": (str, "normalized"),
    },
}


def _read(parser: configparser.ConfigParser, overrides=None):
    values = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(section, "unknown section")
        for key in parser[section]:
            if key not in SCHEMA[section]:
                raise ConfigError(f"{section}.{key}", "unknown key")
    for section, keys in SCHEMA.items():
        for key, (conv, default) in keys.items():
            raw = parser.get(section, key, fallback=None)
            path = f"{section}.{key}"
            if overrides and path in overrides and overrides[path] is not None:
                raw = str(overrides[path])
            if raw is None:
                values[path] = conv(default) if isinstance(default, str) and conv is not str else default
                continue
            try:
                values[path] = conv(raw.strip())
            except ValueError:
                raise ConfigError(path, f"cannot parse {raw!r} as {conv.__name__.lstrip('_')}") from None
    return values


def build(values) -> tuple[ExperimentConfig, dict]:
    v = values
    method = v["experiment.method"]
    if method not in METHODS:
        raise ConfigError("experiment.method", f"must be one of {', '.join(METHODS)}")
    if v["realign.direction"] not in ("normalized", "raw"):
        raise ConfigError("realign.direction", "must be 'normalized' or 'raw'")
    if v["model.output_activation"] not in ("relu", "identity"):
        raise ConfigError("model.output_activation", "must be 'relu' or 'identity'")
    if v["model.feature_dim"] < v["dataset.n_classes"]:
        raise ConfigError("model.feature_dim", "must be >= dataset.n_classes")
    section = "dataset"
    try:
        spec = DatasetSpec(v["dataset.n_classes"], v["dataset.feature_dim"], v["dataset.n_max"],
                           v["dataset.imbalance_factor"], v["dataset.class_separation"],
                           v["dataset.noise_scale"])
        section = "federation"
        train = TrainConfig(SgdConfig(learning_rate=v["federation.learning_rate"],
                                      momentum=v["federation.momentum"],
                                      weight_decay=v["federation.weight_decay"],
                                      batch_size=v["federation.batch_size"]),
                            epochs=v["federation.local_epochs"],
                            head_features=v["federation.head_features"])
        fed = FedConfig(n_clients=v["partition.n_clients"], rounds=v["federation.rounds"],
                        participation=v["federation.participation"], train=train,
                        seed=v["experiment.seed"], workers=v["experiment.workers"])
        section = "ssec"
        ssec = SsecConfig(gamma=v["ssec.gamma"], beta=v["ssec.beta"],
                          sgd=SgdConfig(learning_rate=v["ssec.learning_rate"], steps=v["ssec.steps"],
                                        momentum=v["ssec.momentum"]),
                          eps=v["ssec.eps"], angle_weight=v["ssec.angle_weight"])
        section = "realign"
        realign = RealignConfig(v["realign.finetune_epochs"],
                                SgdConfig(learning_rate=v["realign.finetune_lr"],
                                          batch_size=v["federation.batch_size"]),
                                v["realign.direction"])
        section = "partition"
        if not v["partition.alpha"] > 0:
            raise ValueError("alpha must be positive")
    except ConfigError:
        raise
    except (FedLoGeError, ValueError) as exc:
        raise ConfigError(section, str(exc)) from None
    cfg = ExperimentConfig(
        method=method, seed=v["experiment.seed"],
        data=DataConfig(spec, v["dataset.test_per_class"], v["dataset.local_test_budget"],
                        v["partition.alpha"]),
        model=ModelConfig(tuple(v["model.hidden"]), v["model.feature_dim"], v["model.output_activation"]),
        fed=fed, ssec=ssec, realign=realign, eval_every=v["experiment.eval_every"])
    return cfg, v


def load(path, overrides=None):
    """Parse a config file; returns ``(ExperimentConfig, flat values)``.

    ``overrides`` maps ``"section.key"`` to a value (CLI flags).
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read config ({exc.strerror})") from None
    except configparser.Error as exc:
        raise ConfigError(str(path), str(exc).splitlines()[0]) from None
    return build(_read(parser, overrides))


def loads(text, overrides=None):
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("<string>", str(exc).splitlines()[0]) from None
    return build(_read(parser, overrides))


def dump(values) -> str:
    """Render flat values as a complete config file (the run snapshot)."""
    parser = configparser.ConfigParser()
    for section, keys in SCHEMA.items():
        parser[section] = {}
        for key in keys:
            val = values[f"{section}.{key}"]
            if isinstance(val, tuple):
                val = ",".join(str(x) for x in val)
            elif isinstance(val, float):
                val = repr(val)
            parser[section][key] = str(val)
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()

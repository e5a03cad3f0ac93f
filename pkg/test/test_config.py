import pytest

from cbsurv.config import (
    LazyConstructor,
    apply_overrides,
    build,
    load_config,
    section_defaults,
)
from cbsurv.errors import UsageError
from cbsurv.simulate import Bernoulli, Exponential, Gompertz, TruthSpec
from cbsurv.slogging import Logger


def write(tmp_path, text):
    path = tmp_path / "config.yml"
    path.write_text(text)
    return str(path)


def test_lazy_constructor():
    lazy = LazyConstructor(Exponential, {"rate": 0.1})
    lazy["rate"] = 0.3

    assert lazy["class"] is Exponential
    assert lazy.keys() == ["class", "rate"]
    assert lazy() == Exponential(0.3)

    nested = LazyConstructor(TruthSpec, {"causes": [lazy], "covariates": {"x": LazyConstructor(Bernoulli, {})}})
    truth = build(nested)
    assert truth.causes == [Exponential(0.3)]
    assert truth.covariates == {"x": Bernoulli(0.5)}


def test_load_config(tmp_path):
    path = write(
        tmp_path,
        "simulate:\n"
        "    truth: !TruthSpec\n"
        "        causes:\n"
        "            - !Gompertz {a: -2.0, b: 0.1}\n"
        "        n: 50\n"
        "    output: out.csv\n",
    )
    config = load_config(path)

    truth = build(config["simulate"]["truth"])
    assert truth.causes == [Gompertz(-2.0, 0.1)]
    assert truth.n == 50
    assert config["simulate"]["output"] == "out.csv"


def test_load_config_errors(tmp_path):
    with pytest.raises(UsageError, match="unknown config section"):
        load_config(write(tmp_path, "train:\n    lr: 0.1\n"))
    with pytest.raises(UsageError, match="mapping"):
        load_config(write(tmp_path, "- simulate\n"))
    with pytest.raises(UsageError, match="cannot parse"):
        load_config(write(tmp_path, "simulate: [\n"))
    with pytest.raises(UsageError, match="cannot read"):
        load_config(str(tmp_path / "missing.yml"))

    assert load_config(write(tmp_path, "")) == {}


def test_logging_section(tmp_path):
    path = write(
        tmp_path,
        "logging: !Logger\n"
        f"    output_dir: {tmp_path / 'logs'}\n"
        "    log_file: run.log\n"
        "    overwrite: True\n",
    )
    try:
        load_config(path)
        Logger.info("FIT", "hello")
    finally:
        Logger.close()

    with open(tmp_path / "logs" / "run.log") as f:
        line = f.read()
    assert line.startswith("FIT ")
    assert line.rstrip().endswith("hello")


def test_section_defaults():
    config = {"sample": {"ratio": 50, "output-file": "x"}}

    with pytest.raises(UsageError, match="unknown key"):
        section_defaults(config, "sample", {"ratio", "output"})

    config = {"sample": {"ratio": 50, "seed": 3}}
    assert section_defaults(config, "sample", {"ratio", "seed"}) == {"ratio": 50, "seed": 3}
    assert section_defaults(config, "fit", {"ratio"}) == {}


def test_apply_overrides():
    values = {"ratio": 50, "truth": LazyConstructor(TruthSpec, {"n": 10})}
    apply_overrides(values, ["ratio=20", "truth.n=500", "truth.tau=2.5"])

    assert values["ratio"] == 20
    assert values["truth"]["n"] == 500
    assert values["truth"]["tau"] == 2.5

    with pytest.raises(UsageError):
        apply_overrides(values, ["ratio"])
    with pytest.raises(UsageError):
        apply_overrides(values, ["missing.key=1"])

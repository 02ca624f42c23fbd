import json
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from ouswitch import config as config_mod
from ouswitch import limits
from ouswitch.cli import main
from ouswitch.errors import ConfigError

OU_CONFIG = """
# minimal switching OU experiment
[chain]
states = 2
rates = 1, 2

[model]
kind = ou
a = 2, -1
b = 1, 2
y0 = 0

[run]
horizon = 5
record = 1, 5
replicates = 20
seed = 7
"""

NULL_CONFIG = """
[chain]
states = 2
rates = 1, 2

[model]
kind = ou
a = 1, -2
b = 1, 1

[run]
grid = 25, 100
replicates = 200
seed = 3
cycles_per_state = 5000
draws = 20000
"""


def write(tmp_path, text, name="exp.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return p


class TestConfigParsing:
    def test_round_trip_echo(self):
        cfg = config_mod.parse_config(OU_CONFIG)
        echo = cfg.echo()
        assert echo["chain"]["states"] == 2
        assert echo["model"]["kind"] == "ou"
        assert echo["run"]["replicates"] == 20
        # parsing the echo of a config yields the same echo
        text = "\n".join(
            f"[{sec}]\n" + "\n".join(
                f"{k} = {', '.join(map(str, v)) if isinstance(v, list) else v}"
                for k, v in body.items()
            )
            for sec, body in echo.items()
        )
        assert config_mod.parse_config(text).echo() == echo

    def test_rationals_parse_exactly(self):
        cfg = config_mod.parse_config(
            "[chain]\nstates = 2\nrates = 1/3, 2\n[model]\nkind = ou\na = 1, -1/2\nb = 1, 1\n"
        )
        assert cfg.chain["rates"][0] == Fraction(1, 3)
        assert cfg.model["a"][1] == Fraction(-1, 2)

    def test_rejects_supplied_diagonal(self):
        cfg = config_mod.parse_config(
            "[chain]\nstates = 2\nrates = 0, 1, 2, 0\n[model]\nkind = ou\na = 1, 1\nb = 1, 1\n"
        )
        with pytest.raises(ConfigError, match="diagonal"):
            config_mod.build_chain(cfg)

    def test_rejects_unknown_section(self):
        with pytest.raises(ConfigError):
            config_mod.parse_config("[bogus]\nx = 1\n")

    def test_rejects_duplicate_key(self):
        with pytest.raises(ConfigError):
            config_mod.parse_config("[chain]\nstates = 2\nstates = 3\n")

    def test_exact_null_classification(self):
        cfg = config_mod.parse_config(
            "[chain]\nstates = 2\nrates = 1, 2\n[model]\nkind = ou\na = 1, -2\nb = 1, 1\n"
        )
        q = config_mod.build_chain(cfg)
        rc = config_mod.classify_config(cfg, q)
        assert rc.regime == limits.NULL_RECURRENT
        assert rc.exact

    def test_float_rates_fall_back_to_tolerance(self):
        cfg = config_mod.parse_config(
            "[chain]\nstates = 2\nrates = 1e0, 2\n[model]\nkind = ou\na = 1, -2\nb = 1, 1\n"
        )
        q = config_mod.build_chain(cfg)
        rc = config_mod.classify_config(cfg, q)
        assert rc.regime == limits.NULL_RECURRENT
        assert not rc.exact

    def test_sis_gamma_regime(self):
        cfg = config_mod.parse_config(
            "[chain]\nstates = 2\nrates = 1, 2\n"
            "[model]\nkind = sis\nalpha = 1, 3\nbeta = 1/500, 1/1000\nn_pop = 1000\ni0 = 10\n"
        )
        q = config_mod.build_chain(cfg)
        rc = config_mod.classify_config(cfg, q)
        assert rc.regime == limits.NULL_RECURRENT  # gamma = (1, -2) exactly
        assert rc.exact


class TestSimulateCommand:
    def test_csv_contract(self, tmp_path):
        cfg = write(tmp_path, OU_CONFIG)
        out = tmp_path / "out"
        assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
        lines = (out / "trajectory.csv").read_text().splitlines()
        assert lines[0] == "time,replicate,value,state"
        assert len(lines) == 1 + 20 * 2
        summary = json.loads((out / "manifest.json").read_text())
        assert summary["manifest"]["seed"] == 7
        assert summary["manifest"]["derived"]["regime"] == "stable"
        assert summary["manifest"]["derived"]["pi"] == pytest.approx([2 / 3, 1 / 3])

    def test_deterministic_across_runs_and_threads(self, tmp_path):
        cfg = write(tmp_path, OU_CONFIG)
        blobs = []
        for name, threads in (("a", "1"), ("b", "1"), ("c", "8")):
            out = tmp_path / name
            assert main(
                ["simulate", "--config", str(cfg), "--out", str(out), "--threads", threads]
            ) == 0
            blobs.append((out / "trajectory.csv").read_bytes())
        assert blobs[0] == blobs[1] == blobs[2]

    def test_seed_flag_overrides(self, tmp_path):
        cfg = write(tmp_path, OU_CONFIG)
        out1, out2 = tmp_path / "s1", tmp_path / "s2"
        main(["simulate", "--config", str(cfg), "--out", str(out1), "--seed", "99"])
        main(["simulate", "--config", str(cfg), "--out", str(out2)])
        assert (out1 / "trajectory.csv").read_bytes() != (out2 / "trajectory.csv").read_bytes()

    def test_zero_replicates_exits_1(self, tmp_path):
        cfg = write(tmp_path, OU_CONFIG.replace("replicates = 20", "replicates = 0"))
        assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1

    def test_missing_config_exits_1(self, tmp_path):
        assert main(["simulate", "--config", str(tmp_path / "nope.cfg")]) == 1

    def test_sis_kind_runs(self, tmp_path):
        cfg = write(
            tmp_path,
            "[chain]\nstates = 2\nrates = 1, 2\n"
            "[model]\nkind = sis\nalpha = 1, 1\nbeta = 1/500, 1/1250\nn_pop = 1000\ni0 = 10\n"
            "[run]\nhorizon = 20\nrecord = 20\nreplicates = 5\nseed = 1\n",
        )
        out = tmp_path / "sis"
        assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
        rows = (out / "trajectory.csv").read_text().splitlines()[1:]
        values = [float(r.split(",")[2]) for r in rows]
        assert all(0.0 < v <= 1000.0 for v in values)

    def test_functional_kind_runs(self, tmp_path):
        cfg = write(
            tmp_path,
            "[chain]\nstates = 2\nrates = 1, 2\n"
            "[model]\nkind = functional\nc = 2, 1\nd = 1, 3\n"
            "[run]\nhorizon = 10\nrecord = 1, 10\nreplicates = 5\nseed = 2\n",
        )
        out = tmp_path / "fn"
        assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0


class TestStationaryCommand:
    def test_draws_and_ks(self, tmp_path):
        text = OU_CONFIG.replace("replicates = 20", "replicates = 2000") + (
            "draws = 2000\ncompare = true\ncycles_per_state = 2000\n"
        )
        text = text.replace("horizon = 5", "horizon = 30")
        cfg = write(tmp_path, text)
        out = tmp_path / "st"
        assert main(["stationary", "--config", str(cfg), "--out", str(out)]) == 0
        summary = json.loads((out / "manifest.json").read_text())
        assert summary["metrics"]["ks_vs_simulation"] < 0.06
        assert (out / "draws.csv").read_text().splitlines()[0] == "draw,value"

    def test_unstable_exits_2(self, tmp_path):
        cfg = write(tmp_path, OU_CONFIG.replace("a = 2, -1", "a = -2, 1"))
        assert main(["stationary", "--config", str(cfg), "--out", str(tmp_path / "u")]) == 2


class TestLimitsCommand:
    def test_null_recurrent_run(self, tmp_path):
        cfg = write(tmp_path, NULL_CONFIG)
        out = tmp_path / "lim"
        assert main(["limits", "--config", str(cfg), "--out", str(out)]) == 0
        summary = json.loads((out / "manifest.json").read_text())
        assert summary["metrics"]["regime"] == "null_recurrent"
        assert summary["metrics"]["limit_kind"] == "mixture_halfnormal"
        lines = (out / "statistics.csv").read_text().splitlines()
        assert lines[0] == "t,replicate,statistic"
        assert len(lines) == 1 + 2 * 200

    def test_stable_exits_2(self, tmp_path):
        cfg = write(tmp_path, NULL_CONFIG.replace("a = 1, -2", "a = 2, -1"))
        assert main(["limits", "--config", str(cfg), "--out", str(tmp_path / "x")]) == 2

    def test_cir_variant(self, tmp_path):
        cfg = write(
            tmp_path,
            "[chain]\nstates = 2\nrates = 1, 2\n"
            "[model]\nkind = cir\na = -1, 1/2\nb = 1, 1\nn_factors = 2\n"
            "[run]\ngrid = 25, 100\nreplicates = 150\nseed = 11\n"
            "cycles_per_state = 3000\ndraws = 10000\n",
        )
        out = tmp_path / "cl"
        assert main(["limits", "--config", str(cfg), "--out", str(out)]) == 0
        summary = json.loads((out / "manifest.json").read_text())
        assert summary["metrics"]["regime"] == "transient"
        assert summary["manifest"]["derived"]["e_pi_kappa"] == pytest.approx(-1.0)

    def test_sis_variant(self, tmp_path):
        cfg = write(
            tmp_path,
            "[chain]\nstates = 2\nrates = 1, 2\n"
            "[model]\nkind = sis\nalpha = 4, 1\nbeta = 1/500, 1/500\nn_pop = 1000\ni0 = 10\n"
            "[run]\ngrid = 25, 100\nreplicates = 150\nseed = 12\n"
            "cycles_per_state = 3000\ndraws = 10000\n",
        )
        out = tmp_path / "sl"
        assert main(["limits", "--config", str(cfg), "--out", str(out)]) == 0
        summary = json.loads((out / "manifest.json").read_text())
        assert summary["metrics"]["regime"] == "transient"
        assert summary["metrics"]["limit_kind"] == "mixture_normal"


class TestTailindexCommand:
    def test_two_state_benchmark(self, tmp_path):
        text = OU_CONFIG + "cycles_per_state = 50000\n"
        cfg = write(tmp_path, text)
        out = tmp_path / "ti"
        assert main(["tailindex", "--config", str(cfg), "--out", str(out)]) == 0
        summary = json.loads((out / "manifest.json").read_text())
        # nu solves E exp(-c int a) = 1: (1+c)(2-c) = 2 per anchor -> c = 3/2... ...
        # anchor cycles: E e^{-c(2 T0 - T1)} = [1/(1+2c)][2/(2-c)] = 1 -> c = 3/2
        assert summary["metrics"]["nu_star"] == pytest.approx(1.5, abs=0.05)
        assert "exponent_convention" in summary["metrics"]


class TestManifest:
    def test_reproducible_from_manifest(self, tmp_path):
        cfg = write(tmp_path, OU_CONFIG)
        out1 = tmp_path / "m1"
        main(["simulate", "--config", str(cfg), "--out", str(out1)])
        summary = json.loads((out1 / "manifest.json").read_text())
        echo = summary["manifest"]["config"]
        # rebuild a config file from the manifest echo and rerun
        text = "\n".join(
            f"[{sec}]\n" + "\n".join(
                f"{k} = {', '.join(map(str, v)) if isinstance(v, list) else v}"
                for k, v in body.items()
            )
            for sec, body in echo.items()
        )
        cfg2 = write(tmp_path, text, name="fromman.cfg")
        out2 = tmp_path / "m2"
        main(["simulate", "--config", str(cfg2), "--out", str(out2),
              "--seed", str(summary["manifest"]["seed"])])
        assert (out1 / "trajectory.csv").read_bytes() == (out2 / "trajectory.csv").read_bytes()

"""Line-oriented experiment configuration.

Format: ``[section]`` headers followed by ``key = value`` lines; ``#``
starts a comment.  Values are scalars or comma lists.  Numeric tokens
are kept as exact rationals whenever they parse as integers, decimals
or ``p/q`` fractions, so a null-recurrent drift (E_pi a = 0) can be
declared exactly rather than guessed from floating point.

Sections and keys
-----------------
[chain]   states = n
          rates  = comma list of the n(n-1) off-diagonal generator
                   entries, row-major, diagonal skipped (supplying n^2
                   entries is rejected: the diagonal is always derived)
[model]   kind   = ou | cir | sis | functional
          ou:          a, b per-state lists; optional c, y0
          cir:         a, b, n_factors; optional r0
          sis:         alpha, beta, n_pop, i0
          functional:  c, d
[run]     horizon, record (times), grid (times for limit experiments),
          replicates, seed, cycles_per_state, draws, dt (Euler
          reference step), compare (true/false), initial_state
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import appmodels, limits, ou
from .chain import RateMatrix, validate_rates
from .errors import ConfigError
from .pathfunc import FunctionalModel

Number = Fraction | float

_FRACTION_RE = re.compile(r"^[+-]?\d+\s*/\s*\d+$")
_DECIMAL_RE = re.compile(r"^[+-]?(\d+(\.\d*)?|\.\d+)$")


def _parse_number(token: str) -> Number:
    token = token.strip()
    if _FRACTION_RE.match(token):
        return Fraction(token.replace(" ", ""))
    if _DECIMAL_RE.match(token):
        return Fraction(token)
    try:
        return float(token)
    except ValueError as exc:
        raise ConfigError(f"cannot parse number {token!r}") from exc


def _parse_value(raw: str):
    raw = raw.strip()
    if raw == "":
        return []
    if raw.lower() in ("true", "false"):
        return raw.lower() == "true"
    if "," in raw:
        return [_parse_number(tok) for tok in raw.split(",") if tok.strip()]
    return _parse_number(raw)


@dataclass
class ExperimentConfig:
    chain: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    run: dict = field(default_factory=dict)

    def section(self, name: str) -> dict:
        return getattr(self, name)

    def echo(self) -> dict:
        """JSON-ready copy of the resolved configuration."""

        def enc(v):
            if isinstance(v, Fraction):
                return str(v) if v.denominator != 1 else int(v)
            if isinstance(v, list):
                return [enc(x) for x in v]
            return v

        return {
            sec: {k: enc(v) for k, v in getattr(self, sec).items()}
            for sec in ("chain", "model", "run")
        }


def parse_config(text: str) -> ExperimentConfig:
    cfg = ExperimentConfig()
    section: dict | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip().lower()
            if name not in ("chain", "model", "run"):
                raise ConfigError(f"line {lineno}: unknown section [{name}]")
            section = cfg.section(name)
            continue
        if section is None:
            raise ConfigError(f"line {lineno}: key outside any section")
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, _, value = line.partition("=")
        key = key.strip().lower()
        if key in section:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        section[key] = _parse_value(value) if key != "kind" else value.strip().lower()
    if not cfg.chain:
        raise ConfigError("missing [chain] section")
    if not cfg.model:
        raise ConfigError("missing [model] section")
    return cfg


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def _as_list(value, name: str) -> list:
    if isinstance(value, list):
        return value
    if isinstance(value, (Fraction, float)):
        return [value]
    raise ConfigError(f"{name} must be a number or comma list")


def _floats(values) -> list[float]:
    return [float(v) for v in values]


def _int(value, name: str) -> int:
    f = float(value)
    if f != int(f):
        raise ConfigError(f"{name} must be an integer")
    return int(f)


def build_chain(cfg: ExperimentConfig) -> RateMatrix:
    try:
        n = _int(cfg.chain["states"], "states")
    except KeyError as exc:
        raise ConfigError("chain section needs 'states'") from exc
    if n < 1:
        raise ConfigError("states must be >= 1")
    entries = _as_list(cfg.chain.get("rates", []), "rates") if n > 1 else []
    expected = n * (n - 1)
    if n > 1 and len(entries) == n * n:
        raise ConfigError(
            "rates must list only the off-diagonal entries; "
            "diagonal entries are derived and must not be supplied"
        )
    if len(entries) != expected:
        raise ConfigError(f"rates needs {expected} off-diagonal entries, got {len(entries)}")
    full = np.zeros((n, n))
    it = iter(_floats(entries))
    for i in range(n):
        for j in range(n):
            if i != j:
                full[i, j] = next(it)
    return validate_rates(full)


def rational_rates(cfg: ExperimentConfig) -> list[list[Fraction]] | None:
    """Full off-diagonal rate table as Fractions, or None if any float."""
    n = _int(cfg.chain["states"], "states")
    entries = _as_list(cfg.chain.get("rates", []), "rates") if n > 1 else []
    if not all(isinstance(e, Fraction) for e in entries):
        return None
    table = [[Fraction(0)] * n for _ in range(n)]
    it = iter(entries)
    for i in range(n):
        for j in range(n):
            if i != j:
                table[i][j] = next(it)
    return table


def _table(cfg: ExperimentConfig, key: str, n: int, required=True):
    if key not in cfg.model:
        if required:
            raise ConfigError(f"model kind {cfg.model.get('kind')!r} needs table {key!r}")
        return None
    vals = _as_list(cfg.model[key], key)
    if len(vals) != n:
        raise ConfigError(f"table {key!r} needs {n} entries, got {len(vals)}")
    return vals


def build_model(cfg: ExperimentConfig, q: RateMatrix):
    kind = cfg.model.get("kind")
    n = q.n_states
    if kind == "ou":
        c_tab = _table(cfg, "c", n, required=False)
        return ou.OUModel.build(
            q,
            _floats(_table(cfg, "a", n)),
            _floats(_table(cfg, "b", n)),
            None if c_tab is None else _floats(c_tab),
            y0=float(cfg.model.get("y0", 0.0)),
        )
    if kind == "cir":
        return appmodels.CIRModel.build(
            q,
            _floats(_table(cfg, "a", n)),
            _floats(_table(cfg, "b", n)),
            n_factors=_int(cfg.model.get("n_factors", 2), "n_factors"),
            r0=float(cfg.model.get("r0", 1.0)),
        )
    if kind == "sis":
        for key in ("n_pop", "i0"):
            if key not in cfg.model:
                raise ConfigError(f"sis model needs {key!r}")
        return appmodels.SISModel.build(
            q,
            _floats(_table(cfg, "alpha", n)),
            _floats(_table(cfg, "beta", n)),
            n_pop=float(cfg.model["n_pop"]),
            i0=float(cfg.model["i0"]),
        )
    if kind == "functional":
        return FunctionalModel.build(
            q, _floats(_table(cfg, "c", n)), _floats(_table(cfg, "d", n))
        )
    raise ConfigError(f"unknown model kind {kind!r} (want ou|cir|sis|functional)")


def drift_entries(cfg: ExperimentConfig) -> tuple[str, list[Number]]:
    """(label, per-state drift entries) whose pi-mean decides the regime."""
    kind = cfg.model.get("kind")
    n = _int(cfg.chain["states"], "states")
    if kind in ("ou", "cir"):
        return ("e_pi_a" if kind == "ou" else "e_pi_kappa"), _table(cfg, "a", n)
    if kind == "functional":
        return "e_pi_c", _table(cfg, "c", n)
    if kind == "sis":
        alpha = _table(cfg, "alpha", n)
        beta = _table(cfg, "beta", n)
        n_pop = cfg.model["n_pop"]
        gamma = []
        for al, be in zip(alpha, beta):
            if isinstance(al, Fraction) and isinstance(be, Fraction) and isinstance(n_pop, Fraction):
                gamma.append(be * n_pop - al)
            else:
                gamma.append(float(be) * float(n_pop) - float(al))
        return "e_pi_gamma", gamma
    raise ConfigError(f"unknown model kind {kind!r}")


def classify_config(cfg: ExperimentConfig, q: RateMatrix) -> limits.RegimeClass:
    """Regime of the configured model, exact when the inputs are rational.

    The null regime is a measure-zero specification, so it is declared
    from exact arithmetic whenever rates and the drift table were given
    as rationals; otherwise the 1e-12 float tolerance applies.
    """
    label, entries = drift_entries(cfg)
    rates = rational_rates(cfg)
    if rates is not None and all(isinstance(e, Fraction) for e in entries):
        rc = limits.classify_exact([Fraction(e) for e in entries], rates)
    else:
        from .chain import stationary_distribution

        rc = limits.classify(_floats(entries), stationary_distribution(q))
    scale = 2.0 if cfg.model.get("kind") == "cir" else 1.0  # kappa = 2a
    return limits.RegimeClass(e_pi_a=scale * rc.e_pi_a, regime=rc.regime, exact=rc.exact)

"""TOML scenario files: parsing and consolidated validation."""
from __future__ import annotations

import re
from dataclasses import asdict, dataclass, field
from fractions import Fraction

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .capacity import SolverConfig
from .geometry import DomainError, shape_from_dict
from .hardy_sobolev import HSParams
from .maximal import ConvolutionConfig, MaximalConfig

MODES = ("ambient", "qregular")


class ScenarioError(ValueError):
    """Syntax error or a list of constraint violations."""

    def __init__(self, messages):
        self.messages = list(messages)
        super().__init__("\n".join(self.messages))


@dataclass
class Scenario:
    seed: int
    shape: dict
    h: float
    params: HSParams = field(default_factory=HSParams)
    c: float = 1 / 54
    solver: SolverConfig = field(default_factory=lambda: SolverConfig(method="auto"))
    maximal: MaximalConfig = field(default_factory=MaximalConfig)
    convolution: ConvolutionConfig = field(default_factory=ConvolutionConfig)
    trials: int = 20
    ceiling: float = 10.0
    samples: int = 10
    condenser: dict | None = None
    example62: dict = field(default_factory=lambda: {"p": 2.0, "beta": 1.5, "j_min": 2, "j_max": 6, "h": 1 / 1024})
    rayleigh_hs: list | None = None
    mode: str = "ambient"
    out: str | None = None
    warnings: list = field(default_factory=list)

    def record(self) -> dict:
        d = asdict(self)
        d.pop("warnings")
        return d

    def build_shape(self):
        return shape_from_dict(self.shape)


def _number(v):
    """Accept numbers and fraction strings such as ``"1/64"``."""
    if isinstance(v, bool):
        raise TypeError("expected a number")
    if isinstance(v, (int, float)):
        return float(v)
    if isinstance(v, str):
        return float(Fraction(v.strip()))
    raise TypeError("expected a number")


def _locate(text: str, section: str | None, key: str) -> str:
    """``line N`` of ``key`` in ``section`` (best effort)."""
    current = None
    pat = re.compile(rf"^\s*{re.escape(key)}\s*=")
    for i, line in enumerate(text.splitlines(), 1):
        m = re.match(r"^\s*\[([^\]]+)\]", line)
        if m:
            current = m.group(1).strip()
            continue
        if current == section and pat.match(line):
            return f"line {i}"
    return f"[{section}]" if section else "top level"


def parse_scenario(text: str) -> Scenario:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError([f"syntax error: {exc}"]) from None
    errs: list = []
    warns: list = []

    def get(section, key, default=None, conv=_number, required=False):
        table = raw if section is None else raw.get(section, {})
        if key not in table:
            if required:
                errs.append(f"{_locate(text, section, key)}: missing required key "
                            f"{(section + '.') if section else ''}{key}")
            return default
        try:
            return conv(table[key])
        except (TypeError, ValueError, ZeroDivisionError):
            errs.append(f"{_locate(text, section, key)}: {key} has an invalid value {table[key]!r}")
            return default

    known = {"seed", "mode", "domain", "params", "whitney", "solver", "maximal", "convolution",
             "samples", "condenser", "example62", "rayleigh", "output"}
    for k in raw:
        if k not in known:
            errs.append(f"unknown key or section {k!r}")

    seed = get(None, "seed", 0, conv=int, required=True)
    if seed is not None and seed < 0:
        errs.append(f"{_locate(text, None, 'seed')}: seed must be a nonnegative integer")
    mode = get(None, "mode", "ambient", conv=str)
    if mode not in MODES:
        errs.append(f"{_locate(text, None, 'mode')}: mode must be one of {MODES}")

    dom = raw.get("domain")
    shape = None
    h = None
    if not isinstance(dom, dict):
        errs.append("missing [domain] section")
    else:
        h = get("domain", "h", None, required=True)
        shape = {k: v for k, v in dom.items() if k != "h"}
        try:
            sh = shape_from_dict(shape)
            if sh.dim not in (2, 3):
                errs.append("domain dimension must be 2 or 3")
        except (DomainError, KeyError, TypeError, ValueError) as exc:
            errs.append(f"{_locate(text, 'domain', 'kind')}: invalid shape: {exc}")
        if h is not None and not h > 0:
            errs.append(f"{_locate(text, 'domain', 'h')}: h must be positive")

    params = HSParams(p=get("params", "p", 2.0), q=get("params", "q", 2.0), beta=get("params", "beta", 0.0))
    n = len(shape.get("center", shape.get("lo", [0, 0]))) if shape else 2
    for msg in params.validate(n, qregular=mode == "qregular"):
        errs.append(f"{_locate(text, 'params', 'p')}: {msg}")

    c = get("whitney", "c", 1 / 54)
    if c is not None:
        if not 0 < c < 1 / 3:
            errs.append(f"{_locate(text, 'whitney', 'c')}: Whitney parameter c must satisfy 0 < c < 1/3")
        elif c >= 1 / 53:
            warns.append("c must be < 1/53 for the quasiadditivity equivalence hypothesis; results outside its range")

    solver = SolverConfig(tol=get("solver", "tol", 1e-6), max_iter=get("solver", "max_iter", 20000, conv=int),
                          eps=get("solver", "eps", 1e-6), window=get("solver", "window", 50, conv=int),
                          method=get("solver", "method", "auto", conv=str))
    errs += [f"[solver] {m}" for m in solver.validate()]

    mx = MaximalConfig(kappa=get("maximal", "kappa", 0.18), s=get("maximal", "s", 1.5))
    errs += [f"[maximal] {m}" for m in mx.validate(strict_kappa=True)]
    trials = get("maximal", "trials", 20, conv=int)
    ceiling = get("maximal", "ceiling", 10.0)

    conv = ConvolutionConfig(t=get("convolution", "t", 0.1), kappa=get("convolution", "kappa", mx.kappa),
                             s=get("convolution", "s", mx.s))
    errs += [f"[convolution] {m}" for m in conv.validate()]
    if not conv.s < params.p:
        errs.append(f"{_locate(text, 'convolution', 's')}: requires s < p")

    samples = get("samples", "count", 10, conv=int)
    if samples is not None and samples < 1:
        errs.append("[samples] count must be >= 1")

    condenser = raw.get("condenser")
    if condenser is not None:
        try:
            condenser = {"center": [float(v) for v in condenser["center"]], "radius": _number(condenser["radius"])}
            if condenser["radius"] <= 0:
                errs.append("[condenser] radius must be positive")
        except (KeyError, TypeError, ValueError):
            errs.append("[condenser] needs center = [..] and radius")
            condenser = None

    ex = {"p": get("example62", "p", 2.0), "beta": get("example62", "beta", 1.5),
          "j_min": get("example62", "j_min", 2, conv=int), "j_max": get("example62", "j_max", 6, conv=int),
          "h": get("example62", "h", 1 / 1024)}
    if ex["p"] is not None and not ex["p"] > 1:
        errs.append(f"{_locate(text, 'example62', 'p')}: requires 1 < p")
    if ex["j_max"] is not None and ex["h"] and 2.0 ** (-ex["j_max"] - 1) < 4 * ex["h"]:
        errs.append(f"{_locate(text, 'example62', 'j_max')}: j_max too large for h (need 2^-(j+1) >= 4h)")

    ray = raw.get("rayleigh", {}).get("hs")
    if ray is not None:
        try:
            ray = [_number(v) for v in ray]
        except (TypeError, ValueError):
            errs.append("[rayleigh] hs must be a list of grid steps")
            ray = None

    out = raw.get("output", {}).get("dir")
    if errs:
        raise ScenarioError(errs)
    return Scenario(seed=seed, shape=shape, h=h, params=params, c=c, solver=solver, maximal=mx,
                    convolution=conv, trials=trials, ceiling=ceiling, samples=samples, condenser=condenser,
                    example62=ex, rayleigh_hs=ray, mode=mode, out=out, warnings=warns)


def load_scenario(path) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return parse_scenario(fh.read())

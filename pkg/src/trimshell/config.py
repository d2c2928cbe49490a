"""Run configuration: a flat ``key = value`` text format.

One assignment per line; lists are space-separated; ``#`` starts a comment.
Example::

    benchmark = circular
    n = 4 8 16
    p = 3 4
    alpha = 0.4
    out = results/circular
    plot = true

``benchmark`` is either a built-in name or ``module:function`` naming a
zero-argument callable that returns a
:class:`~trimshell.benchmarks.BenchmarkDefinition` (a custom problem).
"""
import importlib
from dataclasses import dataclass, field, fields

P_RANGE = (3, 6)

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


class ConfigError(ValueError):
    """Malformed or out-of-range configuration."""


@dataclass
class RunConfig:
    """Parameters of one convergence study.

    Empty ``n``/``p`` lists and ``alpha=None`` mean "use the benchmark defaults".
    """

    benchmark: str
    n: list = field(default_factory=list)
    p: list = field(default_factory=list)
    alpha: float | None = None
    g: int | None = None
    q: int = 3
    out: str = "."
    plot: bool = False
    run_id: str = ""

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not self.benchmark:
            raise ConfigError("benchmark must be given")
        self.n = [int(v) for v in self.n]
        self.p = [int(v) for v in self.p]
        if any(v < 1 for v in self.n):
            raise ConfigError("n values must be positive")
        lo, hi = P_RANGE
        if any(not lo <= v <= hi for v in self.p):
            raise ConfigError(f"p values must lie in [{lo}, {hi}]")
        if self.alpha is not None and not 0.0 < float(self.alpha) <= 1.0:
            raise ConfigError("alpha must lie in (0, 1]")
        if self.g is not None and int(self.g) < 1:
            raise ConfigError("g must be positive")
        if int(self.q) < 1:
            raise ConfigError("q must be positive")

    def definition(self):
        """Resolve ``benchmark`` to a :class:`BenchmarkDefinition`."""
        from .benchmarks import get_benchmark

        if ":" not in self.benchmark:
            return get_benchmark(self.benchmark)
        mod, _, attr = self.benchmark.partition(":")
        try:
            factory = getattr(importlib.import_module(mod), attr)
        except (ImportError, AttributeError) as exc:
            raise ConfigError(f"cannot load custom problem {self.benchmark!r}: {exc}") from exc
        return factory()


def _parse_value(key: str, text: str):
    if key in ("n", "p"):
        try:
            return [int(v) for v in text.split()]
        except ValueError:
            raise ConfigError(f"{key} must be a list of integers") from None
    if key in ("alpha",):
        return None if text.lower() == "default" else float(text)
    if key in ("g",):
        return None if text.lower() == "default" else int(text)
    if key == "q":
        return int(text)
    if key == "plot":
        low = text.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ConfigError(f"plot must be a boolean, got {text!r}")
    return text


def parse_config(text: str) -> RunConfig:
    """Parse configuration text into a validated :class:`RunConfig`."""
    known = {f.name for f in fields(RunConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            values[key] = _parse_value(key, val)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: {exc}") from None
    if "benchmark" not in values:
        raise ConfigError("missing required key 'benchmark'")
    return RunConfig(**values)


def format_config(cfg: RunConfig) -> str:
    """Serialize ``cfg``; :func:`parse_config` inverts it exactly."""
    lines = []
    for f in fields(RunConfig):
        v = getattr(cfg, f.name)
        if isinstance(v, list):
            text = " ".join(str(x) for x in v)
        elif isinstance(v, bool):
            text = "true" if v else "false"
        elif v is None:
            text = "default"
        elif isinstance(v, float):
            text = repr(v)
        else:
            text = str(v)
        lines.append(f"{f.name} = {text}")
    return "\n".join(lines) + "\n"


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def save_config(cfg: RunConfig, path) -> None:
    with open(path, "w") as fh:
        fh.write(format_config(cfg))

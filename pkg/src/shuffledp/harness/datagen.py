"""Synthetic inputs.

Source specs are strings:

``uniform``
    Elements uniform over ``[1, B]``.
``zipf(a)``
    ``P(j)`` proportional to ``j^-a`` over ``[1, B]``, drawn by inverse CDF.
``point-mass(j)``
    Every user holds ``j``.
``planted(m, c[, a])``
    ``m`` distinct random elements held by ``c`` users each; the other users
    follow ``zipf(a)`` (default ``a = 1.1``).
``file:PATH``
    One user per line, see :func:`shuffledp.core.read_dataset`.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from ..core import ConfigError, Dataset, RandomStream, Role, read_dataset, read_points

_CALL = re.compile(r"^\s*([a-z][a-z-]*)\s*(?:\(([^()]*)\))?\s*$")


@dataclass(frozen=True)
class DataSource:
    kind: str
    args: tuple = ()
    path: str | None = None

    def __str__(self) -> str:
        if self.kind == "file":
            return f"file:{self.path}"
        if not self.args:
            return self.kind
        return f"{self.kind}({','.join(repr(a) if isinstance(a, float) else str(a) for a in self.args)})"


def _num(text: str, spec: str):
    try:
        v = float(text)
    except ValueError:
        raise ConfigError(f"malformed data source {spec!r}: {text!r} is not a number") from None
    return int(v) if v.is_integer() and "." not in text and "e" not in text.lower() else v


def parse_source(spec: str | DataSource) -> DataSource:
    if isinstance(spec, DataSource):
        return spec
    if not isinstance(spec, str) or not spec.strip():
        raise ConfigError(f"malformed data source {spec!r}")
    if spec.startswith("file:"):
        path = spec[5:]
        if not path:
            raise ConfigError("file: source needs a path")
        return DataSource("file", (), path)
    m = _CALL.match(spec)
    if not m:
        raise ConfigError(f"malformed data source {spec!r}")
    kind, inner = m.group(1), m.group(2)
    args = tuple(_num(t.strip(), spec) for t in inner.split(",")) if inner and inner.strip() else ()
    arity = {"uniform": (0, 0), "zipf": (1, 1), "point-mass": (1, 1), "planted": (2, 3)}
    if kind not in arity:
        raise ConfigError(f"unknown data source {kind!r}")
    lo, hi = arity[kind]
    if not lo <= len(args) <= hi:
        raise ConfigError(f"{kind} takes {lo}..{hi} arguments, got {len(args)}")
    if kind == "zipf" and not args[0] >= 0:
        raise ConfigError("zipf exponent must be non-negative")
    if kind == "planted" and (
        not isinstance(args[0], int) or not isinstance(args[1], int) or args[0] < 0 or args[1] < 0
    ):
        raise ConfigError("planted(m, c) needs non-negative integers")
    return DataSource(kind, args)


def _zipf(g: np.random.Generator, a: float, size: int, B: int) -> np.ndarray:
    w = np.arange(1, B + 1, dtype=np.float64) ** (-float(a))
    cdf = np.cumsum(w)
    cdf /= cdf[-1]
    u = g.random(size)
    return np.minimum(np.searchsorted(cdf, u, side="right"), B - 1) + 1


def _draw(src: DataSource, g: np.random.Generator, size: int, B: int) -> np.ndarray:
    if src.kind == "uniform":
        return g.integers(1, B + 1, size=size)
    if src.kind == "zipf":
        return _zipf(g, src.args[0], size, B)
    if src.kind == "point-mass":
        j = src.args[0]
        if not isinstance(j, int) or not 1 <= j <= B:
            raise ConfigError(f"point-mass({j}) outside [1, {B}]")
        return np.full(size, j, dtype=np.int64)
    raise ConfigError(f"cannot draw from {src}")


def _generator(seed: int) -> np.random.Generator:
    return RandomStream(seed, 0, Role.DATA_GEN).generator


def generate_data(source, n: int, B: int, d: int = 1, seed: int = 0, *, k: int = 1):
    """A deterministic synthetic dataset.

    Returns a :class:`Dataset` over ``[1, B]`` when ``d == 1`` (``k > 1``
    gives each user up to ``k`` distinct draws), and an ``(n, d)`` array of
    points over ``[1, B]^d`` otherwise.
    """
    src = parse_source(source)
    if d > 1:
        return generate_points(src, n, B, d, seed)
    if n < 0 or B < 1 or k < 1:
        raise ConfigError(f"invalid n={n}, B={B}, k={k}")
    if src.kind == "file":
        ds = read_dataset(src.path, B, k)
        if ds.n != n:
            raise ConfigError(f"{src.path} has {ds.n} users, expected n={n}")
        return ds
    g = _generator(seed)
    if src.kind == "planted":
        m, c = src.args[0], src.args[1]
        a = src.args[2] if len(src.args) > 2 else 1.1
        if m > B or m * c > n:
            raise ConfigError(f"cannot plant {m} elements x {c} users in n={n}, B={B}")
        heavy = g.choice(B, size=m, replace=False) + 1
        rest = _zipf(g, a, n - m * c, B)
        el = np.concatenate([np.repeat(heavy, c), rest])
        return Dataset.from_elements(el[g.permutation(n)], B)
    if k == 1:
        return Dataset.from_elements(_draw(src, g, n, B), B)
    draws = _draw(src, g, n * k, B).reshape(n, k)
    return Dataset.from_sets([set(row.tolist()) for row in draws], B, k)


def planted_elements(source, n: int, B: int, seed: int = 0) -> np.ndarray:
    """The elements a ``planted`` source plants, in draw order."""
    src = parse_source(source)
    if src.kind != "planted":
        raise ConfigError("not a planted source")
    return _generator(seed).choice(B, size=src.args[0], replace=False) + 1


def generate_points(source, n: int, B0: int, d: int, seed: int = 0) -> np.ndarray:
    """``(n, d)`` points; each coordinate is an independent draw from the source."""
    src = parse_source(source)
    if src.kind == "file":
        pts = read_points(src.path, d)
        if len(pts) != n:
            raise ConfigError(f"{src.path} has {len(pts)} points, expected n={n}")
        return pts
    if src.kind == "planted":
        raise ConfigError("planted sources produce sets, not points")
    return _draw(src, _generator(seed), n * d, B0).reshape(n, d).astype(np.int64)


def generate_values(source, n: int, B: int, seed: int = 0) -> np.ndarray:
    """Values in ``[0, 1]`` for quantile estimation.

    ``uniform`` is continuous on ``[0, 1]``; grid sources give ``j / B`` and
    ``point-mass(x)`` with a fractional ``x`` gives the constant ``x``.
    """
    src = parse_source(source)
    if src.kind == "file":
        from pathlib import Path

        vals = np.array([float(t) for t in Path(src.path).read_text(encoding="utf-8").split()])
        if len(vals) != n:
            raise ConfigError(f"{src.path} has {len(vals)} values, expected n={n}")
        if vals.size and (vals.min() < 0 or vals.max() > 1):
            raise ConfigError("values must lie in [0, 1]")
        return vals
    g = _generator(seed)
    if src.kind == "uniform":
        return g.random(n)
    if src.kind == "point-mass" and isinstance(src.args[0], float):
        x = src.args[0]
        if not 0 <= x <= 1:
            raise ConfigError(f"point-mass({x}) outside [0, 1]")
        return np.full(n, x)
    if src.kind == "planted":
        raise ConfigError("planted sources produce sets, not values")
    return _draw(src, g, n, B) / B

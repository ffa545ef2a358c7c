"""Input coercion shared by the estimators and the command line."""

from __future__ import annotations

import json
import numbers
from pathlib import Path

import numpy as np
from sklearn.utils.validation import check_array

from .archspec import ArchSpec, SpecError, parse_spec, spec_from_dict, validate_spec


def check_spec(obj) -> ArchSpec:
    """Coerce an ArchSpec, a mapping, JSON text or a path to a JSON file into a validated spec."""
    if isinstance(obj, ArchSpec):
        validate_spec(obj)
        return obj
    if isinstance(obj, dict):
        return spec_from_dict(obj)
    if isinstance(obj, Path) or (isinstance(obj, str) and not obj.lstrip().startswith("{")):
        path = Path(obj)
        if not path.is_file():
            raise SpecError("$", f"no such spec file: {path}")
        return parse_spec(path.read_text(encoding="utf-8"))
    if isinstance(obj, str):
        return parse_spec(obj)
    raise TypeError(f"cannot interpret {type(obj).__name__} as an architecture spec")


def check_specs(objs) -> list[ArchSpec]:
    if isinstance(objs, (ArchSpec, dict, str, Path)):
        objs = [objs]
    specs = [check_spec(o) for o in objs]
    if not specs:
        raise ValueError("need at least one spec")
    return specs


def check_positive(name: str, value, allow_zero: bool = False, integer: bool = False):
    kind = numbers.Integral if integer else numbers.Real
    if not isinstance(value, kind) or isinstance(value, bool):
        raise TypeError(f"{name} must be {'an integer' if integer else 'a real number'}")
    if value < 0 or (value == 0 and not allow_zero) or not np.isfinite(value):
        raise ValueError(f"{name} must be {'nonnegative' if allow_zero else 'positive'}, got {value}")
    return value


def check_inputs(X, n_features: int) -> np.ndarray:
    """2D float array of inputs with ``n_features`` columns."""
    X = check_array(X, dtype=np.float64, ensure_2d=True)
    if X.shape[1] != n_features:
        raise ValueError(f"X has {X.shape[1]} features, the architecture expects {n_features}")
    return X


def load_spec_lines(path: str | Path) -> list[ArchSpec]:
    """Specs from a JSON-lines file, one object per nonblank line."""
    specs = []
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SpecError(f"line {n}", f"invalid JSON ({exc.msg})") from None
        specs.append(spec_from_dict(doc))
    return specs

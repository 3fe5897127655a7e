"""TOML experiment configuration: schema, validation with line numbers, hashing."""
from __future__ import annotations

import hashlib
import json
import math
import re
import sys
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from pydantic_core import PydanticCustomError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from rgstat.errors import ConfigError
from rgstat.generators import MarkovTreeModel, Model, OffspringLaw, TransitiveGraphSpec
from rgstat.graph import DEFAULT_CANON_BUDGET, RootedPatch
from rgstat.sampling import DEFAULT_REGION_BUDGET, RadiusSchedule

PROB_SUM_TOL = 1e-9


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True, protected_namespaces=())


def _check_probs(values: list[float] | None) -> list[float] | None:
    if values is None:
        return None
    if not values:
        raise ValueError("probability vector is empty")
    if any(not math.isfinite(p) or p < 0 for p in values):
        raise ValueError("probabilities must be finite and non-negative")
    total = math.fsum(values)
    if abs(total - 1.0) > PROB_SUM_TOL:
        raise ValueError(f"probabilities sum to {total:g}, not 1")
    return values


def parse_symbol(text: str) -> tuple[int, int]:
    """``"c"`` or ``"c:m"`` to a (child count, mark) pair."""
    parts = text.strip().split(":")
    if len(parts) > 2 or not all(p.strip().isdigit() for p in parts):
        raise ValueError(f"bad symbol {text!r}; expected 'c' or 'c:m'")
    c = int(parts[0])
    return c, int(parts[1]) if len(parts) == 2 else 0


def parse_context(text: str) -> tuple[tuple[int, int], ...]:
    """Comma-separated symbols, oldest ancestor first; ``""`` is the empty context."""
    text = text.strip()
    return tuple(parse_symbol(s) for s in text.split(",")) if text else ()


class ModelConfig(_Section):
    family: Literal["agw", "markov-tree", "cayley-integers", "regular-tree", "grid"]
    name: Optional[str] = None
    degree_bound: int = Field(ge=2)
    alphabet_size: Optional[int] = Field(default=None, ge=1)
    offspring: Optional[list[float]] = None
    marks: Optional[list[float]] = None
    order: Optional[int] = Field(default=None, ge=0)
    kernel: Optional[dict[str, dict[str, float]]] = None
    generators: Optional[list[int]] = None
    degree: Optional[int] = Field(default=None, ge=1)
    dimension: Optional[int] = Field(default=None, ge=1)
    mark_pattern: Optional[list[int]] = None

    @field_validator("offspring", "marks")
    @classmethod
    def _check_laws(cls, values):
        return _check_probs(values)

    @field_validator("kernel")
    @classmethod
    def _check_kernel(cls, kernel):
        if kernel is None:
            return None
        for ctx, row in kernel.items():
            parse_context(ctx)
            for sym in row:
                parse_symbol(sym)
            try:
                _check_probs(list(row.values()))
            except ValueError as exc:
                raise ValueError(f"row {ctx!r}: {exc}") from None
        return kernel

    @model_validator(mode="after")
    def _check_family(self):
        required = {
            "agw": ("offspring",),
            "markov-tree": ("order", "kernel"),
            "cayley-integers": ("generators",),
            "regular-tree": ("degree",),
            "grid": ("dimension",),
        }[self.family]
        missing = [f for f in required if getattr(self, f) is None]
        if missing:
            # the ctx entry lets the error point at the absent key instead of the whole table
            raise PydanticCustomError("missing_for_family", "family {family} needs {names}",
                                      {"family": repr(self.family), "names": ", ".join(missing),
                                       "field": missing[0]})
        return self

    def primary_field(self) -> str:
        return {
            "agw": "offspring",
            "markov-tree": "kernel",
            "cayley-integers": "generators",
            "regular-tree": "degree",
            "grid": "dimension",
        }[self.family]

    def build(self) -> Model:
        if self.family == "agw":
            return OffspringLaw(tuple(self.offspring), self.degree_bound, tuple(self.marks or (1.0,)))
        if self.family == "markov-tree":
            kernel = {
                parse_context(ctx): {parse_symbol(s): p for s, p in row.items()}
                for ctx, row in self.kernel.items()
            }
            return MarkovTreeModel(self.order, kernel, self.degree_bound, self.alphabet_size or 1)
        return TransitiveGraphSpec(
            family=self.family,
            degree_bound=self.degree_bound,
            generators=tuple(self.generators or ()),
            degree=self.degree or 0,
            dimension=self.dimension or 0,
            mark_pattern=tuple(self.mark_pattern or (0,)),
            alphabet_size=self.alphabet_size or 1,
        )


class ScheduleConfig(_Section):
    kind: Literal["log2", "loglog"] = "log2"
    scale: float = Field(default=1.0, gt=0)
    offset: int = Field(default=0, ge=0)

    def build(self) -> RadiusSchedule:
        return RadiusSchedule(self.kind, self.scale, self.offset)


class SamplerConfig(_Section):
    n_grid: list[int] = Field(default=[1000], min_length=1)
    seed: int = Field(default=0, ge=0)
    runs: int = Field(default=1, ge=1)
    schedule: ScheduleConfig = ScheduleConfig()
    max_radius: int = Field(default=2, ge=0)
    canon_budget: int = Field(default=DEFAULT_CANON_BUDGET, ge=1)
    region_budget: int = Field(default=DEFAULT_REGION_BUDGET, ge=1)

    @field_validator("n_grid")
    @classmethod
    def _check_grid(cls, grid):
        if any(n < 1 for n in grid):
            raise ValueError("walk lengths must be >= 1")
        if sorted(set(grid)) != grid:
            raise ValueError("n_grid must be strictly increasing")
        return grid


class EstimateConfig(_Section):
    model_replicates: int = Field(default=10_000, ge=1)
    reference: Optional[ModelConfig] = None


class TestConfig(_Section):
    __test__ = False

    kind: Literal["zero-frequency", "markov-order"]
    alpha: float = Field(default=0.05, gt=0, lt=1)
    order: int = Field(default=0, ge=0)
    j_max: Optional[int] = Field(default=None, ge=1)
    drop: int = Field(default=1, ge=0)
    null: Literal["ml", "kt"] = "ml"
    forbidden: list[str] = []
    forbidden_builtin: list[Literal["radius1-triangles"]] = []

    @model_validator(mode="after")
    def _check_forbidden(self):
        if self.kind == "zero-frequency" and not (self.forbidden or self.forbidden_builtin):
            raise ValueError("zero-frequency test needs forbidden or forbidden_builtin")
        if self.j_max is not None and self.j_max < self.order + 1:
            raise ValueError(f"j_max must be >= order + 1 = {self.order + 1}")
        return self


class EntropyConfig(_Section):
    max_order: int = Field(default=4, ge=0)
    drop: int = Field(default=1, ge=0)


class HarnessConfig(_Section):
    h0: list[ModelConfig] = []
    h1: list[ModelConfig] = []
    n_grid: Optional[list[int]] = None
    runs: Optional[int] = Field(default=None, ge=1)

    @model_validator(mode="after")
    def _check_models(self):
        if not self.h0 and not self.h1:
            raise ValueError("harness needs at least one h0 or h1 model")
        return self


class OutputConfig(_Section):
    dir: str = "out"


class ExperimentConfig(_Section):
    model: Optional[ModelConfig] = None
    sampler: SamplerConfig = SamplerConfig()
    estimate: EstimateConfig = EstimateConfig()
    test: Optional[TestConfig] = None
    entropy: EntropyConfig = EntropyConfig()
    harness: Optional[HarnessConfig] = None
    output: OutputConfig = OutputConfig()


class LoadedConfig:
    """Validated config plus its source location, built models and forbidden patches."""

    def __init__(self, config: ExperimentConfig, base_dir: Path, text: str = ""):
        self.config = config
        self.base_dir = base_dir
        self._text = text
        self.model = _build(config.model, ("model",), text) if config.model else None
        self.reference = (
            _build(config.estimate.reference, ("estimate", "reference"), text)
            if config.estimate.reference else None
        )
        self.forbidden_patches: tuple[RootedPatch, ...] = ()
        self._forbidden_texts: list[str] = []
        if config.test is not None:
            for i, rel in enumerate(config.test.forbidden):
                path = (base_dir / rel)
                try:
                    body = path.read_text()
                    patch = RootedPatch.from_text(body)
                except (OSError, ValueError) as exc:
                    raise ConfigError(f"cannot load patch {rel!r}: {exc}", field=f"test.forbidden[{i}]",
                                      line=_locate(text, ("test", "forbidden"))) from None
                self._forbidden_texts.append(patch.to_text())
                self.forbidden_patches += (patch,)
        self.harness_models: dict[str, dict[str, Model]] = {"h0": {}, "h1": {}}
        if config.harness is not None:
            for hyp in ("h0", "h1"):
                for i, mc in enumerate(getattr(config.harness, hyp)):
                    name = mc.name or f"{hyp}-{i}"
                    if name in self.harness_models[hyp]:
                        raise ConfigError(f"duplicate model name {name!r}", field=f"harness.{hyp}[{i}].name",
                                          line=_locate(text, ("harness", hyp, i, "name")))
                    self.harness_models[hyp][name] = _build(mc, ("harness", hyp, i), text)

    def with_overrides(self, seed: int | None = None, radius: int | None = None,
                       out: str | None = None) -> LoadedConfig:
        sampler = self.config.sampler
        updates = {}
        if seed is not None:
            if seed < 0:
                raise ConfigError("seed override must be >= 0", field="sampler.seed")
            updates["seed"] = seed
        if radius is not None:
            if radius < 0:
                raise ConfigError("radius budget must be >= 0", field="sampler.max_radius")
            updates["max_radius"] = radius
        cfg = self.config.model_copy(update={"sampler": sampler.model_copy(update=updates)})
        if out is not None:
            cfg = cfg.model_copy(update={"output": OutputConfig(dir=out)})
        return LoadedConfig(cfg, self.base_dir, self._text)

    def config_hash(self) -> str:
        """sha256 over the canonical JSON of every setting plus forbidden patch contents.

        The output directory is excluded: it does not affect any result.
        """
        payload = self.config.model_dump(mode="json", exclude={"output"})
        payload["forbidden_patches"] = self._forbidden_texts
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _build(mc: ModelConfig, path: tuple, text: str) -> Model:
    try:
        return mc.build()
    except ValueError as exc:
        loc = path + (mc.primary_field(),)
        raise ConfigError(str(exc), field=_dotted(loc), line=_locate(text, loc)) from None


def _dotted(loc) -> str:
    out = ""
    for part in loc:
        out += f"[{part}]" if isinstance(part, int) else (f".{part}" if out else str(part))
    return out


_HEADER = re.compile(r"^\s*(\[\[?)\s*([^\]]+?)\s*\]\]?\s*(#.*)?$")
_KEY = re.compile(r"""^\s*("([^"]*)"|'([^']*)'|[A-Za-z0-9_\-]+)\s*=""")


def _locate(text: str, loc: tuple) -> int | None:
    """Best-effort source line for a validation location such as ``("model", "offspring")``."""
    if not text:
        return None
    table: tuple = ()
    counts: dict[tuple, int] = {}
    best, best_len = None, 0
    for lineno, line in enumerate(text.splitlines(), 1):
        header = _HEADER.match(line)
        if header:
            names = tuple(p.strip().strip('"') for p in header.group(2).split("."))
            if header.group(1) == "[[":
                idx = counts.get(names, 0)
                counts[names] = idx + 1
                table = names + (idx,)
            else:
                table = names
            candidate = table
        else:
            key = _KEY.match(line)
            if not key:
                continue
            name = key.group(2) if key.group(2) is not None else key.group(3)
            name = name if name is not None else key.group(1)
            candidate = table + (name,)
        if len(candidate) > best_len and tuple(loc[:len(candidate)]) == candidate:
            best, best_len = lineno, len(candidate)
    return best


def _pydantic_error(exc: ValidationError, text: str) -> ConfigError:
    err = exc.errors()[0]
    loc = tuple(err["loc"])
    if "field" in err.get("ctx", {}):
        loc += (err["ctx"]["field"],)
    msg = err["msg"].removeprefix("Value error, ")
    more = len(exc.errors()) - 1
    if more:
        msg += f" (and {more} more error{'s' if more > 1 else ''})"
    return ConfigError(msg, field=_dotted(loc) or "<root>", line=_locate(text, loc))


def parse_config(text: str, base_dir: Path | str = ".") -> LoadedConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        line = getattr(exc, "lineno", None)
        if line is None:
            m = re.search(r"line (\d+)", str(exc))
            line = int(m.group(1)) if m else None
        raise ConfigError(f"invalid TOML: {exc}", field="<toml>", line=line) from None
    try:
        cfg = ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        raise _pydantic_error(exc, text) from None
    return LoadedConfig(cfg, Path(base_dir), text)


def load_config(path: Path | str) -> LoadedConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", field="<file>") from None
    return parse_config(text, path.parent)

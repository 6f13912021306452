"""Plain-text run configuration.

One `section.field = value` assignment per line, `#` starts a comment.
Sections map onto the package's config dataclasses; every field of every
section is settable. The report fingerprint is the SHA-256 of the exact
config text, so byte-identical files hash identically.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field

from .codebook import CodebookConfig
from .encoders import ModelConfig
from .errors import ConfigError
from .matching import MatchConfig
from .ntcl import NtclConfig
from .synthdata import SynthConfig
from .trainer import TrainConfig

_SECTIONS = (
    ("synth", SynthConfig),
    ("model", ModelConfig),
    ("ntcl", NtclConfig),
    ("match", MatchConfig),
    ("book", CodebookConfig),
    ("train", TrainConfig),
)

_TRUE = {"true", "1", "yes", "on"}
_FALSE = {"false", "0", "no", "off"}


@dataclass
class RunConfig:
    synth: SynthConfig = field(default_factory=SynthConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    ntcl: NtclConfig = field(default_factory=NtclConfig)
    match: MatchConfig = field(default_factory=MatchConfig)
    book: CodebookConfig = field(default_factory=CodebookConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    text: str = ""

    def __post_init__(self) -> None:
        if not self.text:
            self.text = render_config(self)

    def fingerprint(self) -> str:
        return config_fingerprint(self.text)

    def validate(self) -> "RunConfig":
        for name, _ in _SECTIONS:
            section = getattr(self, name)
            check = getattr(section, "validate", None)
            if check is not None:
                check()
        return self


def _coerce(section: str, f: dataclasses.Field, raw: str, line_no: int):
    kind = f.type if isinstance(f.type, str) else f.type.__name__
    try:
        if kind == "bool":
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(
            f"config line {line_no}: {section}.{f.name} expects {kind}, got {raw!r}"
        ) from None


def parse_config(text: str) -> RunConfig:
    cfg = RunConfig(text=text)
    fields_by_section = {
        name: {f.name: f for f in dataclasses.fields(cls)} for name, cls in _SECTIONS
    }
    for line_no, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"config line {line_no}: expected key = value, got {body!r}")
        key, raw = (part.strip() for part in body.split("=", 1))
        if "." not in key:
            raise ConfigError(f"config line {line_no}: key {key!r} lacks a section prefix")
        section, name = key.split(".", 1)
        if section not in fields_by_section:
            raise ConfigError(f"config line {line_no}: unknown section {section!r}")
        if name not in fields_by_section[section]:
            raise ConfigError(f"config line {line_no}: unknown key {key!r}")
        f = fields_by_section[section][name]
        setattr(getattr(cfg, section), name, _coerce(section, f, raw, line_no))
    return cfg


def load_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    with open(path, "r") as fh:
        return parse_config(fh.read())


def _render_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def render_config(cfg: RunConfig) -> str:
    lines = []
    for name, cls in _SECTIONS:
        section = getattr(cfg, name)
        for f in dataclasses.fields(cls):
            lines.append(f"{name}.{f.name} = {_render_value(getattr(section, f.name))}")
    return "\n".join(lines) + "\n"


def default_config_text() -> str:
    return render_config(RunConfig())


def config_fingerprint(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()

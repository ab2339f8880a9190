"""Model / training configuration records and the ``key = value`` file grammar.

A config file is UTF-8 text, one ``key = value`` per line; ``#`` starts a
comment.  Keys are the field names of :class:`ModelConfig` and
:class:`TrainConfig`.  ``depths`` is a comma-separated list.
"""
from dataclasses import asdict, dataclass, field, fields

from .errors import ConfigError

VARIANTS = ("B", "D")
RECONSTRUCTIONS = ("transposed", "bilinear", "linear")
LOSSES = ("L2", "L1+L2")
DTYPES = ("float32", "float64")


@dataclass
class ModelConfig:
    variant: str = "D"
    input_channels: int = 1
    height: int = 64
    width: int = 64
    patch_size: int = 2
    embed_dim: int = 128
    window_size: int = 4
    heads: int = 4
    depths: tuple = (2, 6, 6, 2)
    reconstruction: str = "transposed"
    loss: str = "L2"
    mlp_ratio: float = 4.0
    dropout: float = 0.0
    rel_pos_bias: bool = True

    def __post_init__(self):
        self.depths = tuple(int(d) for d in self.depths)

    def problems(self):
        out = []
        if self.variant not in VARIANTS:
            out.append(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.reconstruction not in RECONSTRUCTIONS:
            out.append(f"reconstruction must be one of {RECONSTRUCTIONS}, got {self.reconstruction!r}")
        if self.loss not in LOSSES:
            out.append(f"loss must be one of {LOSSES}, got {self.loss!r}")
        for name in ("input_channels", "height", "width", "patch_size", "embed_dim",
                     "window_size", "heads"):
            if getattr(self, name) < 1:
                out.append(f"{name} must be positive")
        if not 0.0 <= self.dropout < 1.0:
            out.append("dropout must lie in [0, 1)")
        want = {"B": 1, "D": 4}.get(self.variant)
        if want is not None and len(self.depths) != want:
            out.append(f"variant {self.variant} needs {want} depth entr{'y' if want == 1 else 'ies'}, "
                       f"got {len(self.depths)}")
        for d in self.depths:
            if d < 2 or d % 2:
                out.append(f"block depth {d} must be a positive even number")
        if self.patch_size >= 1 and (self.height % self.patch_size or self.width % self.patch_size):
            out.append(f"height {self.height} / width {self.width} not divisible by patch size "
                       f"{self.patch_size}")
            return out
        if min(self.patch_size, self.window_size, self.heads, self.embed_dim) < 1:
            return out
        for (gh, gw), dim, heads in self.stages():
            if gh % self.window_size or gw % self.window_size:
                out.append(f"token grid {gh}x{gw} not divisible by window size {self.window_size}")
            if dim % heads:
                out.append(f"stage dim {dim} not divisible by {heads} heads")
        if self.variant == "D":
            gh, gw = self.grid
            if gh % 2 or gw % 2:
                out.append(f"token grid {gh}x{gw} must be even for patch merging")
        return out

    def validate(self):
        errs = self.problems()
        if errs:
            raise ConfigError(errs)
        return self

    @property
    def grid(self):
        return self.height // self.patch_size, self.width // self.patch_size

    def stages(self):
        """((grid), dim, heads) per cell, in layer order."""
        g, D, h = self.grid, self.embed_dim, self.heads
        if self.variant == "B":
            return [(g, D, h)]
        half = (g[0] // 2, g[1] // 2)
        return [(g, D, h), (half, 2 * D, 2 * h), (half, 2 * D, 2 * h), (g, D, h)]


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 4
    epochs: int = 1
    frames_per_phase: int = 10
    seed: int = 0
    checkpoint_interval: int = 1
    dtype: str = "float32"

    def problems(self):
        out = []
        if not self.learning_rate > 0:
            out.append("learning_rate must be > 0")
        if self.batch_size < 1:
            out.append("batch_size must be >= 1")
        if self.epochs < 0:
            out.append("epochs must be >= 0")
        if self.frames_per_phase < 2:
            out.append("frames_per_phase must be >= 2")
        if self.checkpoint_interval < 1:
            out.append("checkpoint_interval must be >= 1")
        if self.dtype not in DTYPES:
            out.append(f"dtype must be one of {DTYPES}")
        return out

    def validate(self):
        errs = self.problems()
        if errs:
            raise ConfigError(errs)
        return self


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def validate(self):
        errs = self.model.problems() + self.train.problems()
        if errs:
            raise ConfigError(errs)
        return self


def _convert(kind, raw):
    if kind is bool:
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if kind is tuple:
        return tuple(int(p) for p in raw.replace("(", "").replace(")", "").split(",") if p.strip())
    if kind is int:
        return int(raw)
    if kind is float:
        return float(raw)
    return raw.strip()


_TYPES = {}
for _cls in (ModelConfig, TrainConfig):
    for _f in fields(_cls):
        _TYPES[_f.name] = (_cls, type(_f.default))


def parse_text(text):
    """Parse ``key = value`` text into a dict of raw strings."""
    out = {}
    errs = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            errs.append(f"line {lineno}: expected 'key = value'")
            continue
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    if errs:
        raise ConfigError(errs)
    return out


def build(values, base=None):
    """Apply raw ``values`` over ``base`` (a RunConfig); all problems reported together."""
    run = base or RunConfig()
    m, t = asdict(run.model), asdict(run.train)
    errs = []
    for k, raw in values.items():
        if k not in _TYPES:
            errs.append(f"unknown key {k!r}")
            continue
        cls, kind = _TYPES[k]
        try:
            val = raw if not isinstance(raw, str) else _convert(kind, raw)
        except ValueError as exc:
            errs.append(f"{k}: {exc}")
            continue
        (m if cls is ModelConfig else t)[k] = val
    run = RunConfig(ModelConfig(**m), TrainConfig(**t))
    try:
        errs += run.model.problems() + run.train.problems()
    except TypeError as exc:
        errs.append(str(exc))
    if errs:
        raise ConfigError(errs)
    return run


def load(path, overrides=None):
    with open(path, encoding="utf-8") as fh:
        values = parse_text(fh.read())
    values.update(overrides or {})
    return build(values)


def to_text(obj):
    lines = []
    for f in fields(obj):
        v = getattr(obj, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


def model_from_text(text):
    values = parse_text(text)
    m = {}
    errs = []
    for k, raw in values.items():
        if k not in _TYPES or _TYPES[k][0] is not ModelConfig:
            errs.append(f"unknown model key {k!r}")
            continue
        m[k] = _convert(_TYPES[k][1], raw)
    if errs:
        raise ConfigError(errs)
    return ModelConfig(**m)

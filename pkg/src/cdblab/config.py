"""Flat key-value run configuration.

Config files are plain text: one ``key = value`` per line, ``#`` comments,
blank lines ignored.  List values join with ``&`` (e.g. ``cdb.insert_pos =
v2&v3``).  Grid files for ablation reuse the same syntax plus ``grid.<key>``
lines whose comma-separated alternatives span the grid, and ``grid.seeds``
for replicate seeds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .baselines import BaselineConfig, BaselineKind
from .cdb import CdbConfig, Guidance
from .correlation import Metric
from .data import SyntheticSpec
from .network import DEFAULT_WIDTHS, NetworkSpec
from .optim import OptimConfig

DATASETS = ("synth", "c10", "c100")

_SCALAR_KEYS = {
    "dataset", "data.dir", "data.train_subset", "data.test_subset",
    "data.augment", "data.flip",
    "synth.num_classes", "synth.patches_per_class", "synth.glyph_size",
    "synth.noise", "synth.samples_per_class", "synth.test_per_class",
    "synth.image_size", "synth.seed",
    "net.widths",
    "optim.lr0", "optim.momentum", "optim.weight_decay",
    "optim.epochs", "optim.batch_size",
    "cdb.gamma", "cdb.metric", "cdb.guidance", "cdb.insert_pos",
    "reg.kind", "reg.rate", "reg.block_size", "reg.insert_pos",
    "seed", "out.dir",
}
_GRID_ONLY_KEYS = {"grid.seeds", "grid.regularizer"}


class ConfigError(ValueError):
    pass


def parse_kv(text: str, allow_grid: bool = False) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = key.strip(), value.strip()
        base = key[5:] if key.startswith("grid.") else key
        known = base in _SCALAR_KEYS or key in _GRID_ONLY_KEYS
        if key.startswith("grid.") and not allow_grid:
            raise ConfigError(f"line {lineno}: grid keys only belong in grid files")
        if not known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def _get_bool(raw, key, default):
    value = raw.get(key)
    if value is None:
        return default
    low = value.lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {value!r}")


def _get_int(raw, key, default):
    value = raw.get(key)
    if value is None:
        return default
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {value!r}") from None


def _get_float(raw, key, default):
    value = raw.get(key)
    if value is None:
        return default
    try:
        return float(value)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {value!r}") from None


def _get_list(raw, key, default):
    value = raw.get(key)
    if value is None:
        return default
    return tuple(part.strip() for part in value.split("&") if part.strip())


@dataclass(frozen=True)
class TrainConfig:
    net: NetworkSpec
    optim: OptimConfig = OptimConfig()
    cdb: CdbConfig | None = None
    baseline: BaselineConfig | None = None
    epochs: int = 20
    batch_size: int = 128
    seed: int = 0
    out_dir: str | None = None
    dataset: str = "synth"
    data_dir: str | None = None
    synth: SyntheticSpec = field(default_factory=SyntheticSpec)
    train_subset: int | None = None
    test_subset: int | None = None
    augment: bool = False
    flip: bool = False

    def __post_init__(self):
        if self.cdb is not None and self.baseline is not None:
            raise ConfigError("cdb.* and reg.* are mutually exclusive")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be nonnegative, got {self.epochs}")
        if self.batch_size < 2:
            raise ConfigError(
                f"batch_size must be at least 2 (batch norm), got {self.batch_size}"
            )
        if self.dataset not in DATASETS:
            raise ConfigError(f"dataset must be one of {DATASETS}, got {self.dataset!r}")
        if self.dataset != "synth" and not self.data_dir:
            raise ConfigError(f"dataset {self.dataset} needs data.dir")


def _build_synth(raw) -> SyntheticSpec:
    base = SyntheticSpec()
    return SyntheticSpec(
        num_classes=_get_int(raw, "synth.num_classes", base.num_classes),
        patches_per_class=_get_int(raw, "synth.patches_per_class", base.patches_per_class),
        glyph_size=_get_int(raw, "synth.glyph_size", base.glyph_size),
        noise=_get_float(raw, "synth.noise", base.noise),
        samples_per_class=_get_int(raw, "synth.samples_per_class", base.samples_per_class),
        test_per_class=_get_int(raw, "synth.test_per_class", base.test_per_class),
        image_size=_get_int(raw, "synth.image_size", base.image_size),
        seed=_get_int(raw, "synth.seed", base.seed),
    )


def _build_cdb(raw) -> CdbConfig:
    try:
        metric = Metric(raw.get("cdb.metric", "ma"))
    except ValueError:
        raise ConfigError(f"cdb.metric must be ma or bp, got {raw['cdb.metric']!r}") from None
    try:
        guidance = Guidance(raw.get("cdb.guidance", "random"))
    except ValueError:
        raise ConfigError(
            f"cdb.guidance must be random or attention, got {raw['cdb.guidance']!r}"
        ) from None
    gamma = raw.get("cdb.gamma")
    return CdbConfig(
        metric=metric,
        gamma=None if gamma is None else _get_float(raw, "cdb.gamma", None),
        guidance=guidance,
        insert_pos=_get_list(raw, "cdb.insert_pos", ("v2", "v3")),
    )


def _build_baseline(raw) -> BaselineConfig:
    if "reg.kind" not in raw:
        raise ConfigError("reg.kind is required when reg.* keys are present")
    try:
        kind = BaselineKind(raw["reg.kind"])
    except ValueError:
        raise ConfigError(f"unknown reg.kind {raw['reg.kind']!r}") from None
    defaults = BaselineConfig(kind=BaselineKind.DROPOUT)
    return BaselineConfig(
        kind=kind,
        rate=_get_float(raw, "reg.rate", defaults.rate),
        block_size=_get_int(raw, "reg.block_size", defaults.block_size),
        insert_pos=_get_list(raw, "reg.insert_pos", defaults.insert_pos),
    )


def build_train_config(raw: dict[str, str], seed: int | None = None,
                       out_dir: str | None = None) -> TrainConfig:
    has_cdb = any(k.startswith("cdb.") for k in raw)
    has_reg = any(k.startswith("reg.") for k in raw)
    if has_cdb and has_reg:
        raise ConfigError("cdb.* and reg.* are mutually exclusive")
    widths = _get_list(raw, "net.widths", None)
    if widths is not None:
        try:
            widths = tuple(int(w) for w in widths)
        except ValueError:
            raise ConfigError(f"net.widths: expected integers, got {raw['net.widths']!r}") from None
    dataset = raw.get("dataset", "synth")
    synth = _build_synth(raw)
    if widths is None:
        widths = DEFAULT_WIDTHS
    num_classes = {"c10": 10, "c100": 100}.get(dataset, synth.num_classes)
    return TrainConfig(
        net=NetworkSpec(widths=widths, num_classes=num_classes),
        optim=OptimConfig(
            lr0=_get_float(raw, "optim.lr0", 0.1),
            momentum=_get_float(raw, "optim.momentum", 0.9),
            weight_decay=_get_float(raw, "optim.weight_decay", 5e-4),
        ),
        cdb=_build_cdb(raw) if has_cdb else None,
        baseline=_build_baseline(raw) if has_reg else None,
        epochs=_get_int(raw, "optim.epochs", 20),
        batch_size=_get_int(raw, "optim.batch_size", 128),
        seed=seed if seed is not None else _get_int(raw, "seed", 0),
        out_dir=out_dir if out_dir is not None else raw.get("out.dir"),
        dataset=dataset,
        data_dir=raw.get("data.dir"),
        synth=synth,
        train_subset=_get_int(raw, "data.train_subset", None),
        test_subset=_get_int(raw, "data.test_subset", None),
        augment=_get_bool(raw, "data.augment", dataset != "synth"),
        flip=_get_bool(raw, "data.flip", False),
    )


def load_train_config(path, seed: int | None = None) -> TrainConfig:
    with open(path, encoding="utf-8") as fh:
        return build_train_config(parse_kv(fh.read()), seed=seed)


def load_synth_spec(path) -> SyntheticSpec:
    """Read a file holding only synth.* keys."""
    with open(path, encoding="utf-8") as fh:
        raw = parse_kv(fh.read())
    stray = [k for k in raw if not k.startswith("synth.")]
    if stray:
        raise ConfigError(f"synth spec file holds non-synth keys: {stray}")
    return _build_synth(raw)


# -- ablation grids --------------------------------------------------------------

_REG_FAMILY = ("none", "cdb") + tuple(k.value for k in BaselineKind)


@dataclass(frozen=True)
class GridSpec:
    base: dict[str, str]
    axes: dict[str, tuple[str, ...]]  # key -> alternatives, insertion-ordered
    seeds: tuple[int, ...]


def parse_grid(text: str) -> GridSpec:
    raw = parse_kv(text, allow_grid=True)
    base, axes = {}, {}
    seeds = (0,)
    for key, value in raw.items():
        if key == "grid.seeds":
            try:
                seeds = tuple(int(s) for s in value.split(","))
            except ValueError:
                raise ConfigError(f"grid.seeds: expected integers, got {value!r}") from None
        elif key.startswith("grid."):
            cells = tuple(part.strip() for part in value.split(",") if part.strip())
            if not cells:
                raise ConfigError(f"{key}: empty grid axis")
            axes[key[5:]] = cells
        else:
            base[key] = value
    if "regularizer" in axes:
        bad = set(axes["regularizer"]) - set(_REG_FAMILY)
        if bad:
            raise ConfigError(f"grid.regularizer: unknown values {sorted(bad)}")
    return GridSpec(base, axes, seeds)


def grid_cells(grid: GridSpec):
    """Yield (cell_label: dict, raw_config: dict) per grid point, in
    row-major order over the axes as written."""
    keys = list(grid.axes)
    def expand(i, label, raw):
        if i == len(keys):
            yield dict(label), raw
            return
        key = keys[i]
        for value in grid.axes[key]:
            cell = dict(raw)
            if key == "regularizer":
                cell = {k: v for k, v in cell.items()
                        if not k.startswith("cdb.") and not k.startswith("reg.")}
                if value == "cdb":
                    cell.update({k: v for k, v in raw.items() if k.startswith("cdb.")})
                elif value != "none":
                    cell.update({k: v for k, v in raw.items()
                                 if k.startswith("reg.") and k != "reg.kind"})
                    cell["reg.kind"] = value
            else:
                cell[key] = value
            yield from expand(i + 1, {**label, key: value}, cell)
    yield from expand(0, {}, dict(grid.base))


def write_config(path, raw: dict[str, str]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in raw.items():
            fh.write(f"{key} = {value}\n")

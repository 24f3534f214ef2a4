"""Multi-domain classification data with a planted additive domain shift.

Every sample is ``prototype[class] + shift[domain] + noise``, optionally
followed by a per-domain diagonal rescaling.  Class prototypes and domain
shifts lie along distinct columns of one random orthonormal basis, so class
identity and domain identity live in independent subspaces.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ConfigError, DataError
from ..tensor_core import SeededRng

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class DomainShiftConfig:
    classes: int = 7
    domains: int = 4
    dim: int = 32
    train_per_class: int = 100
    val_per_class: int = 30
    test_per_class: int = 50
    signal: float = 4.0
    shift: float = 12.0
    noise: float = 1.0
    scale_jitter: float = 0.0
    source: int = 0
    seed: int = 0

    def validate(self) -> None:
        if self.classes < 2 or self.domains < 2:
            raise ConfigError("need at least 2 classes and 2 domains")
        if self.dim < self.classes + self.domains:
            raise ConfigError(f"dim must be >= classes + domains ({self.classes + self.domains})")
        for name in ("train_per_class", "val_per_class", "test_per_class"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.shift < 0 or self.noise < 0 or self.signal <= 0 or self.scale_jitter < 0:
            raise ConfigError("signal must be > 0; shift, noise and scale_jitter must be >= 0")
        if not 0 <= self.source < self.domains:
            raise ConfigError(f"source domain {self.source} out of range")


@dataclass
class Split:
    X: np.ndarray
    y: np.ndarray
    domain: np.ndarray

    def __len__(self) -> int:
        return len(self.y)

    def for_domain(self, k: int) -> "Split":
        mask = self.domain == k
        return Split(self.X[mask], self.y[mask], self.domain[mask])

    def domains(self) -> list[int]:
        return sorted(int(d) for d in np.unique(self.domain))


@dataclass
class DomainShiftDataset:
    config: DomainShiftConfig
    prototypes: np.ndarray
    shifts: np.ndarray
    scales: np.ndarray
    splits: dict[str, Split] = field(default_factory=dict)

    @property
    def train(self) -> Split:
        return self.splits["train"]

    @property
    def val(self) -> Split:
        return self.splits["val"]

    @property
    def test(self) -> Split:
        return self.splits["test"]

    @property
    def domain_names(self) -> list[str]:
        return [f"domain{k}" for k in range(self.config.domains)]

    def planted_shift(self, a: int, b: int) -> np.ndarray:
        """Expected difference of domain means (domain ``b`` minus domain ``a``)."""
        center = self.prototypes.mean(axis=0)
        return (center + self.shifts[b]) * self.scales[b] - (center + self.shifts[a]) * self.scales[a]

    def to_csv(self, split: str, tag: str = "") -> str:
        s = self.splits[split]
        buf = io.StringIO()
        buf.write(f"# contxt-dataset schema={SCHEMA_VERSION} split={split}{' ' + tag if tag else ''}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow([f"x{i}" for i in range(s.X.shape[1])] + ["label", "domain"])
        for row, label, dom in zip(s.X, s.y, s.domain):
            writer.writerow([repr(float(v)) for v in row] + [int(label), int(dom)])
        return buf.getvalue()

    def save(self, directory, tag: str = "") -> list[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = []
        for name in ("train", "val", "test"):
            p = directory / f"{name}.csv"
            p.write_text(self.to_csv(name, tag))
            paths.append(p)
        return paths


def read_split_csv(path) -> Split:
    """Load one exported split table."""
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read dataset table {path}: {exc}") from exc
    if not lines or not lines[0].startswith("# contxt-dataset"):
        raise DataError(f"{path}: missing dataset schema header")
    if f"schema={SCHEMA_VERSION}" not in lines[0]:
        raise DataError(f"{path}: unsupported schema ({lines[0]})")
    rows = list(csv.reader(lines[2:]))
    if not rows:
        raise DataError(f"{path}: no samples")
    X = np.array([[float(v) for v in r[:-2]] for r in rows])
    y = np.array([int(r[-2]) for r in rows], dtype=np.int64)
    d = np.array([int(r[-1]) for r in rows], dtype=np.int64)
    return Split(X, y, d)


def load_dataset(directory, config: DomainShiftConfig) -> DomainShiftDataset:
    """Rebuild a dataset from exported tables; generator parameters are not stored."""
    directory = Path(directory)
    splits = {name: read_split_csv(directory / f"{name}.csv") for name in ("train", "val", "test")}
    return DomainShiftDataset(config, None, None, None, splits)


def _draw(cfg, rng, protos, shifts, scales, domains, per_class) -> Split:
    xs, ys, ds = [], [], []
    for k in domains:
        for c in range(cfg.classes):
            noise = rng.normal((per_class, cfg.dim), scale=cfg.noise)
            xs.append((protos[c] + shifts[k] + noise) * scales[k])
            ys.append(np.full(per_class, c))
            ds.append(np.full(per_class, k))
    return Split(np.concatenate(xs), np.concatenate(ys).astype(np.int64), np.concatenate(ds).astype(np.int64))


def gen_domain_shift(config: DomainShiftConfig | None = None) -> DomainShiftDataset:
    cfg = config or DomainShiftConfig()
    cfg.validate()
    rng = SeededRng(cfg.seed, "domain_shift")
    basis, _ = np.linalg.qr(rng.substream("basis").normal((cfg.dim, cfg.dim)))
    protos = cfg.signal * basis[:, :cfg.classes].T
    shifts = cfg.shift * basis[:, cfg.classes:cfg.classes + cfg.domains].T
    scales = np.ones((cfg.domains, cfg.dim))
    if cfg.scale_jitter > 0:
        jitter = rng.substream("scales").uniform(-cfg.scale_jitter, cfg.scale_jitter, (cfg.domains, cfg.dim))
        scales = np.exp(jitter)
        scales[cfg.source] = 1.0
    splits = {
        "train": _draw(cfg, rng.substream("train"), protos, shifts, scales, [cfg.source], cfg.train_per_class),
        "val": _draw(cfg, rng.substream("val"), protos, shifts, scales, range(cfg.domains), cfg.val_per_class),
        "test": _draw(cfg, rng.substream("test"), protos, shifts, scales, range(cfg.domains), cfg.test_per_class),
    }
    return DomainShiftDataset(cfg, protos, shifts, scales, splits)

"""Train/validation/test splitting and the five train/val strategies.

Real images are split 60:20:20 and each generated subset 80:20, with the
held-out parts taking ``floor(ratio * N)`` and training absorbing the
remainder.  Strategies pair the resulting sets:

====  ======================  =================
id    train                   val
====  ======================  =================
RR    real                    real
RG    real                    generated
GG    generated               generated
GR    generated               real
MR    real + generated        real
====  ======================  =================

The two test sets (normal and difficult) are the same for every strategy.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path, PurePosixPath
from typing import Dict, List, Optional, Sequence, Tuple

from PIL import Image

from .annotations import ImageEntry, Origin, parse_label_file
from .errors import ParseError, SplitError
from .seeding import rng_for

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")
SPLIT_GROUPS = (Origin.REAL_NORMAL, Origin.REAL_DIFFICULT, Origin.GEN_REAL, Origin.GEN_RENDER)


class StrategyId(str, enum.Enum):
    RR = "RR"
    RG = "RG"
    GG = "GG"
    GR = "GR"
    MR = "MR"

    @classmethod
    def parse(cls, value) -> "StrategyId":
        if isinstance(value, cls):
            return value
        return cls(str(value).upper().replace("-", ""))


@dataclass(frozen=True)
class SplitSpec:
    real_ratios: Tuple[float, float, float] = (0.6, 0.2, 0.2)
    gen_ratios: Tuple[float, float] = (0.8, 0.2)
    seed: int = 0

    def __post_init__(self):
        for name in ("real_ratios", "gen_ratios"):
            ratios = getattr(self, name)
            if abs(sum(ratios) - 1.0) > 1e-9 or any(r < 0 for r in ratios):
                raise ValueError(f"{name} {ratios} must be non-negative and sum to 1")


@dataclass
class Inventory:
    entries: List[ImageEntry]

    def __post_init__(self):
        seen = set()
        for e in self.entries:
            if e.path in seen:
                raise SplitError(f"duplicate image path in inventory: {e.path}")
            seen.add(e.path)

    def group(self, origin: Origin) -> List[ImageEntry]:
        return [e for e in self.entries if e.origin is origin]

    def content_hash(self) -> str:
        rows = sorted(
            [e.path, e.origin.value, e.width, e.height,
             [[g.class_id, g.box.cx, g.box.cy, g.box.w, g.box.h] for g in e.ground_truth]]
            for e in self.entries
        )
        return hashlib.sha256(json.dumps(rows, separators=(",", ":")).encode()).hexdigest()


@dataclass
class SplitSets:
    real_train: List[str] = field(default_factory=list)
    real_val: List[str] = field(default_factory=list)
    real_test: List[str] = field(default_factory=list)
    real_difficult: List[str] = field(default_factory=list)
    gen_real_train: List[str] = field(default_factory=list)
    gen_real_val: List[str] = field(default_factory=list)
    gen_render_train: List[str] = field(default_factory=list)
    gen_render_val: List[str] = field(default_factory=list)
    seed: int = 0
    spec: SplitSpec = field(default_factory=SplitSpec)
    inventory_hash: str = ""

    @property
    def gen_train(self) -> List[str]:
        return self.gen_real_train + self.gen_render_train

    @property
    def gen_val(self) -> List[str]:
        return self.gen_real_val + self.gen_render_val

    _LISTS = ("real_train", "real_val", "real_test", "real_difficult",
              "gen_real_train", "gen_real_val", "gen_render_train", "gen_render_val")

    def to_dict(self) -> dict:
        d = {name: list(getattr(self, name)) for name in self._LISTS}
        d.update(seed=self.seed, real_ratios=list(self.spec.real_ratios),
                 gen_ratios=list(self.spec.gen_ratios), inventory_hash=self.inventory_hash)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SplitSets":
        spec = SplitSpec(tuple(d["real_ratios"]), tuple(d["gen_ratios"]), d["seed"])
        return cls(**{name: list(d.get(name, [])) for name in cls._LISTS},
                   seed=d["seed"], spec=spec, inventory_hash=d.get("inventory_hash", ""))


def _shuffled(entries: Sequence[ImageEntry], seed: int, stream: int) -> List[str]:
    paths = sorted(e.path for e in entries)
    order = rng_for(seed, stream).permutation(len(paths))
    return [paths[i] for i in order]


def _held_out(n: int, ratio: float) -> int:
    # ratio * n may land just below an integer in floating point
    return int(math.floor(ratio * n + 1e-9))


def split(inventory: Inventory, spec: SplitSpec = SplitSpec(),
          required: Sequence[Origin] = (Origin.REAL_NORMAL,)) -> SplitSets:
    """Partition the inventory; every group is shuffled independently by seed."""
    for origin in required:
        if not inventory.group(Origin(origin)):
            raise SplitError(f"inventory has no {Origin(origin).value} images")
    sets = SplitSets(seed=spec.seed, spec=spec, inventory_hash=inventory.content_hash())

    real = _shuffled(inventory.group(Origin.REAL_NORMAL), spec.seed, 0)
    n = len(real)
    n_val, n_test = _held_out(n, spec.real_ratios[1]), _held_out(n, spec.real_ratios[2])
    n_train = n - n_val - n_test
    sets.real_train = real[:n_train]
    sets.real_val = real[n_train:n_train + n_val]
    sets.real_test = real[n_train + n_val:]
    sets.real_difficult = sorted(e.path for e in inventory.group(Origin.REAL_DIFFICULT))

    for stream, (origin, prefix) in enumerate(((Origin.GEN_REAL, "gen_real"), (Origin.GEN_RENDER, "gen_render")), 1):
        paths = _shuffled(inventory.group(origin), spec.seed, stream)
        m_val = _held_out(len(paths), spec.gen_ratios[1])
        setattr(sets, f"{prefix}_train", paths[:len(paths) - m_val])
        setattr(sets, f"{prefix}_val", paths[len(paths) - m_val:])
    return sets


@dataclass
class ExperimentManifest:
    strategy: StrategyId
    train: List[str]
    val: List[str]
    test_normal: List[str]
    test_difficult: List[str]
    seed: int = 0
    real_ratios: Tuple[float, ...] = (0.6, 0.2, 0.2)
    gen_ratios: Tuple[float, ...] = (0.8, 0.2)
    inventory_hash: str = ""

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy.value,
            "seed": self.seed,
            "real_ratios": list(self.real_ratios),
            "gen_ratios": list(self.gen_ratios),
            "inventory_hash": self.inventory_hash,
            "train": list(self.train),
            "val": list(self.val),
            "test_normal": list(self.test_normal),
            "test_difficult": list(self.test_difficult),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentManifest":
        return cls(
            StrategyId.parse(d["strategy"]), list(d["train"]), list(d["val"]),
            list(d["test_normal"]), list(d["test_difficult"]), d.get("seed", 0),
            tuple(d.get("real_ratios", (0.6, 0.2, 0.2))), tuple(d.get("gen_ratios", (0.8, 0.2))),
            d.get("inventory_hash", ""),
        )


def build_manifest(strategy, splits: SplitSets) -> ExperimentManifest:
    strategy = StrategyId.parse(strategy)
    real_train, real_val = splits.real_train, splits.real_val
    gen_train, gen_val = splits.gen_train, splits.gen_val
    needs_real = strategy in (StrategyId.RR, StrategyId.RG, StrategyId.GR, StrategyId.MR)
    needs_gen = strategy in (StrategyId.RG, StrategyId.GG, StrategyId.GR, StrategyId.MR)
    if needs_real and not (real_train and real_val):
        raise SplitError(f"strategy {strategy.value} needs real train/val images")
    if needs_gen and not (gen_train and gen_val):
        raise SplitError(f"strategy {strategy.value} needs generated train/val images")
    train, val = {
        StrategyId.RR: (real_train, real_val),
        StrategyId.RG: (real_train, gen_val),
        StrategyId.GG: (gen_train, gen_val),
        StrategyId.GR: (gen_train, real_val),
        StrategyId.MR: (real_train + gen_train, real_val),
    }[strategy]
    return ExperimentManifest(
        strategy, list(train), list(val), list(splits.real_test), list(splits.real_difficult),
        splits.seed, splits.spec.real_ratios, splits.spec.gen_ratios, splits.inventory_hash,
    )


def label_path_for(image_path) -> PurePosixPath:
    p = PurePosixPath(image_path)
    return p.with_suffix(".txt")


@dataclass
class Violation:
    kind: str
    path: str
    detail: str = ""


@dataclass
class VerifyReport:
    violations: List[Violation]

    @property
    def passed(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "violations": [{"kind": v.kind, "path": v.path, "detail": v.detail} for v in self.violations],
        }


def verify_manifest(manifest: ExperimentManifest, root=None) -> VerifyReport:
    """Re-check disjointness and, when ``root`` is given, files on disk."""
    violations: List[Violation] = []
    lists = {"train": manifest.train, "val": manifest.val,
             "test_normal": manifest.test_normal, "test_difficult": manifest.test_difficult}
    for name, items in lists.items():
        seen = set()
        for p in items:
            if p in seen:
                violations.append(Violation("duplicate", p, f"listed twice in {name}"))
            seen.add(p)
    train, val = set(manifest.train), set(manifest.val)
    tests = {p: name for name in ("test_normal", "test_difficult") for p in lists[name]}
    for p in sorted(train & val):
        violations.append(Violation("overlap", p, "in both train and val"))
    for name, members in (("train", train), ("val", val)):
        for p in sorted(members & set(tests)):
            violations.append(Violation("leak", p, f"in both {name} and {tests[p]}"))
    for p in sorted(set(manifest.test_normal) & set(manifest.test_difficult)):
        violations.append(Violation("overlap", p, "in both test_normal and test_difficult"))
    if root is not None:
        root = Path(root)
        for p in sorted(set().union(*map(set, lists.values()))):
            if not (root / p).is_file():
                violations.append(Violation("missing-image", p))
            label = root / label_path_for(p)
            if not label.is_file():
                violations.append(Violation("missing-label", p, str(label_path_for(p))))
                continue
            try:
                parse_label_file(label.read_text(encoding="utf-8"))
            except ParseError as exc:
                violations.append(Violation("bad-label", p, str(exc)))
    return VerifyReport(violations)


def scan_inventory(root) -> Inventory:
    """Read ``root/<origin>/**/<image>`` with sibling ``.txt`` labels.

    Origin directories are ``real-normal``, ``real-difficult``, ``gen-real``,
    ``gen-render`` and ``background-only``; paths are stored relative to root.
    """
    root = Path(root)
    entries = []
    for origin in Origin:
        base = root / origin.value
        if not base.is_dir():
            continue
        for img in sorted(p for p in base.rglob("*") if p.suffix.lower() in IMAGE_SUFFIXES):
            rel = img.relative_to(root).as_posix()
            label = img.with_suffix(".txt")
            gts = []
            if label.is_file():
                try:
                    gts = parse_label_file(label.read_text(encoding="utf-8"))
                except ParseError as exc:
                    err = ParseError(f"{label}: {exc}")
                    err.line_no = exc.line_no
                    raise err from None
            with Image.open(img) as im:
                w, h = im.size
            entries.append(ImageEntry(rel, w, h, tuple(gts), origin))
    if not entries:
        raise SplitError(f"no images found under {root}")
    return Inventory(entries)

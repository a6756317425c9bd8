"""Empirical quantification of the perturbable feature space.

Every (probe app, perturbation) pair where the perturbation applies
contributes the feature delta between the app's vector before and after
application. The union of those deltas is the perturbable space (PS); its
complement is the imperturbable space (IPS). Inapplicable pairs are skipped,
which is exactly why more than one probe app can be necessary: a
perturbation requiring a feature absent from every probe would otherwise
never reveal its delta.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

from malguard import problem_space, storage
from malguard.data import FORMAT_HEADER, FeatureSpace, FormatError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SpacePartition:
    """Disjoint perturbable/imperturbable index sets covering [0, dim)."""

    ps: tuple[int, ...]
    ips: tuple[int, ...]
    dim: int

    def __post_init__(self):
        ps = set(self.ps)
        ips = set(self.ips)
        if len(ps) != len(self.ps) or len(ips) != len(self.ips):
            raise ValueError("partition index lists contain duplicates")
        if ps & ips:
            raise ValueError(f"partition overlaps on {sorted(ps & ips)[:5]}...")
        if ps | ips != set(range(self.dim)):
            raise ValueError("partition does not cover the feature space exactly")
        if tuple(sorted(self.ps)) != self.ps or tuple(sorted(self.ips)) != self.ips:
            raise ValueError("partition index lists must be sorted")

    @classmethod
    def from_ps(cls, ps, dim: int) -> "SpacePartition":
        ps_set = set(int(i) for i in ps)
        ips = tuple(i for i in range(dim) if i not in ps_set)
        return cls(tuple(sorted(ps_set)), ips, dim)

    def ps_array(self) -> np.ndarray:
        return np.asarray(self.ps, dtype=np.int64)

    def ips_array(self) -> np.ndarray:
        return np.asarray(self.ips, dtype=np.int64)

    def digest(self) -> str:
        canonical = f"dim={self.dim};ps={','.join(map(str, self.ps))}"
        return storage.sha256_hex(canonical.encode("utf-8"))


def quantify(
    space: FeatureSpace,
    quant_apps: list[problem_space.AppModel],
    perturbations: list[problem_space.Perturbation],
) -> SpacePartition:
    """Measure PS as the union of observed feature deltas over all probe apps."""
    if not quant_apps:
        raise ValueError("at least one quantification app is required")
    dim = space.dim
    ps: set[int] = set()
    for app in quant_apps:
        if app.dim != dim:
            raise ValueError(f"quantification app dim {app.dim} != space dim {dim}")
        before = app.effective()
        for p in perturbations:
            if not p.applicable(before):
                log.debug("skipping inapplicable pair (app base %s, %s)", sorted(before), p.id)
                continue
            after = problem_space.apply(app, p).effective()
            ps |= before.symmetric_difference(after)
    return SpacePartition.from_ps(ps, dim)


def save_partition(partition: SpacePartition, path) -> None:
    doc = {"dim": partition.dim, "ips": list(partition.ips), "ps": list(partition.ps)}
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(FORMAT_HEADER + "\n")
        fh.write(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n")


def load_partition(path) -> SpacePartition:
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().rstrip("\n")
        if first != FORMAT_HEADER:
            raise FormatError(path, 1, f"missing header {FORMAT_HEADER!r}")
        try:
            doc = json.loads(fh.readline())
        except json.JSONDecodeError as exc:
            raise FormatError(path, 2, f"invalid JSON: {exc.msg}") from exc
    try:
        return SpacePartition(
            tuple(int(i) for i in doc["ps"]),
            tuple(int(i) for i in doc["ips"]),
            int(doc["dim"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(path, 2, f"invalid partition document: {exc}") from exc

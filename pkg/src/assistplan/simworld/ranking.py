"""Score and rank aggregation across evaluation conditions."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from ..domain import ContractViolation, dumps, loads


class Scale(str, Enum):
    RANK = "rank"
    SEVEN_POINT = "seven_point"


@dataclass(frozen=True)
class RankingTable:
    conditions: tuple[str, ...]
    scores: tuple[tuple[float, ...], ...]  # one list per condition, scene order
    ranks: tuple[tuple[float, ...], ...]  # one row per scene; empty for seven_point
    average: tuple[float, ...]
    scale: Scale

    def to_dict(self) -> dict:
        return {
            "scale": self.scale.value,
            "conditions": list(self.conditions),
            "scores": {c: list(s) for c, s in zip(self.conditions, self.scores)},
            "ranks": [list(r) for r in self.ranks],
            "average": {c: a for c, a in zip(self.conditions, self.average)},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RankingTable":
        conditions = tuple(data["conditions"])
        return cls(
            conditions=conditions,
            scores=tuple(tuple(float(v) for v in data["scores"][c]) for c in conditions),
            ranks=tuple(tuple(float(v) for v in r) for r in data["ranks"]),
            average=tuple(float(data["average"][c]) for c in conditions),
            scale=Scale(data["scale"]),
        )


def aggregate_rankings(
    score_matrix: Sequence[Sequence[float]],
    scale: Scale | str = Scale.RANK,
    conditions: Sequence[str] | None = None,
    higher_is_better: bool = False,
) -> RankingTable:
    """Aggregate a scenes x conditions matrix.

    On the rank scale each row is ranked 1..k (ties share the average rank)
    and ranks are averaged per column. By default the smallest value ranks 1,
    which suits matrices that already hold positions; pass
    ``higher_is_better`` for raw quality scores. The seven-point scale averages
    the raw 1-7 scores.
    """
    scale = Scale(scale)
    rows = [list(r) for r in score_matrix]
    if not rows:
        raise ContractViolation("score matrix is empty")
    width = len(rows[0])
    if width == 0 or any(len(r) != width for r in rows):
        raise ContractViolation("score matrix must be rectangular with at least one condition")
    m = np.asarray(rows, dtype=float)
    if not np.isfinite(m).all():
        raise ContractViolation("score matrix contains non-finite entries")
    names = tuple(conditions) if conditions is not None else tuple(f"c{i + 1}" for i in range(width))
    if len(names) != width:
        raise ContractViolation("condition names do not match matrix width")
    if scale == Scale.RANK:
        keyed = -m if higher_is_better else m
        ranks = rankdata(keyed, method="average", axis=1)
        average = ranks.mean(axis=0)
        rank_rows = tuple(tuple(float(v) for v in r) for r in ranks)
    else:
        if ((m < 1) | (m > 7)).any():
            raise ContractViolation("seven-point scores must lie in [1, 7]")
        average = m.mean(axis=0)
        rank_rows = ()
    return RankingTable(
        conditions=names,
        scores=tuple(tuple(float(v) for v in m[:, j]) for j in range(width)),
        ranks=rank_rows,
        average=tuple(float(v) for v in average),
        scale=scale,
    )


def emit_ranking_file(table: RankingTable) -> bytes:
    return dumps(table.to_dict())


def parse_ranking_file(data: bytes | str) -> RankingTable:
    return RankingTable.from_dict(loads(data))

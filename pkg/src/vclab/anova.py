"""Classical ANOVA decomposition and method-of-moments estimation.

Sums of squares are computed by orthogonal projection: each source's
effect subspace is the span of its membership indicators after removing
the subspaces of all coarser sources (and the grand mean).  For balanced
designs this reproduces the textbook factorial decomposition exactly;
for one-way layouts it is valid whether or not the groups are balanced.
Unbalanced multi-way designs are rejected.

Expected mean squares use the standard balanced all-random rule: the
coefficient of component k in E(MS_m) is the number of observations per
level combination of k (N / J_k) whenever partition k refines partition
m, zero otherwise, with the residual treated as the partition into
singletons.  Method-of-moments estimates invert that linear map; raw
(possibly negative) estimates are preserved alongside their truncation.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

from .design import (
    RESIDUAL,
    Dataset,
    FactorDecl,
    FactorLayout,
    Observation,
    Source,
    build_layout,
    is_balanced,
    refines,
)
from .errors import SingularModelError, UnsupportedDesignError

SS_REL_TOL = 1e-9  # balanced decomposition identity tolerance


@dataclass(frozen=True)
class AnovaRow:
    name: str
    df: int
    ss: float
    ms: float


@dataclass(frozen=True)
class MomEstimates:
    raw: Mapping[str, float]
    truncated: Mapping[str, float]


@dataclass(frozen=True)
class AnovaTable:
    """Per-source df/SS/MS rows plus (optionally) EMS matrix and MoM estimates.

    ``ems[m][k]`` is the coefficient of component k in E(MS_m); rows and
    columns follow ``source_names``.  ``ems_heuristic`` marks the
    unbalanced one-way case where the classical n0 coefficient is used.
    """

    rows: tuple[AnovaRow, ...]
    total_ss: float
    balanced: bool
    ems: np.ndarray | None = None
    ems_heuristic: bool = False
    mom: MomEstimates | None = None

    @property
    def source_names(self) -> tuple[str, ...]:
        return tuple(r.name for r in self.rows)

    def row(self, name: str) -> AnovaRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def ms_vector(self) -> np.ndarray:
        return np.array([r.ms for r in self.rows], dtype=float)


class DesignDecomposition:
    """Precomputed projection bases for one design, reusable across responses.

    Construction is O(n * (sum J_m)^2); evaluating the decomposition for a
    new response (or a whole matrix of responses) is a handful of GEMMs,
    which is what makes the replicate studies cheap.
    """

    def __init__(self, dataset: Dataset):
        self.dataset = dataset
        self.layout = dataset.layout
        self.n = dataset.n
        self.balance = is_balanced(dataset)
        non_resid = [s for s in self.layout.sources if not s.is_residual]
        if not self.balance and len(non_resid) > 1:
            raise UnsupportedDesignError(
                "sums of squares beyond one-way layouts require a balanced design; "
                "this dataset is unbalanced multi-way"
            )
        self._ordered = _containment_order(dataset, non_resid)
        self._build_bases()
        if self.df[RESIDUAL] < 1:
            raise UnsupportedDesignError(
                "saturated design: the residual would have zero degrees of freedom "
                "(add replicates or drop the highest-order interaction)"
            )

    def _build_bases(self) -> None:
        n = self.n
        basis = np.ones((n, 1)) / np.sqrt(n)
        self.effect_basis: dict[str, np.ndarray] = {}
        self.df: dict[str, int] = {}
        for s in self._ordered:
            idx = self.dataset.membership(s)
            j = int(idx.max()) + 1
            x = np.zeros((n, j))
            x[np.arange(n), idx] = 1.0
            r = x - basis @ (basis.T @ x)
            u, sv, _ = np.linalg.svd(r, full_matrices=False)
            tol = max(r.shape) * np.finfo(float).eps * (sv[0] if sv.size else 0.0)
            rank = int(np.sum(sv > tol))
            if rank == 0:
                raise UnsupportedDesignError(
                    f"source {s.name!r} is aliased with coarser sources "
                    "(no degrees of freedom of its own)"
                )
            q = u[:, :rank]
            self.effect_basis[s.name] = q
            self.df[s.name] = rank
            basis = np.hstack([basis, q])
        self._model_basis = basis  # grand mean + all effect subspaces
        self.df[RESIDUAL] = n - basis.shape[1]

    @cached_property
    def _source_order(self) -> tuple[str, ...]:
        return self.layout.source_names()

    def ss_components(self, y: np.ndarray) -> dict[str, float]:
        """SS per source (layout order, residual included) for one response."""
        y = np.asarray(y, dtype=float)
        out = {}
        for s in self._ordered:
            proj = self.effect_basis[s.name].T @ y
            out[s.name] = float(proj @ proj)
        resid = y - self._model_basis @ (self._model_basis.T @ y)
        out[RESIDUAL] = float(resid @ resid)
        return {name: out[name] for name in self._source_order}

    def ss_matrix(self, responses: np.ndarray) -> dict[str, np.ndarray]:
        """Vectorized ``ss_components`` for a (R, n) response matrix."""
        yy = np.asarray(responses, dtype=float)
        out = {}
        for s in self._ordered:
            proj = yy @ self.effect_basis[s.name]
            out[s.name] = np.einsum("rj,rj->r", proj, proj)
        resid = yy - (yy @ self._model_basis) @ self._model_basis.T
        out[RESIDUAL] = np.einsum("rn,rn->r", resid, resid)
        return {name: out[name] for name in self._source_order}

    def table(self, y: np.ndarray | None = None) -> AnovaTable:
        y = self.dataset.response if y is None else np.asarray(y, dtype=float)
        ss = self.ss_components(y)
        ybar = float(y.mean())
        total = float(((y - ybar) ** 2).sum())
        rows = tuple(
            AnovaRow(name, self.df[name], ss[name], ss[name] / self.df[name])
            for name in self._source_order
        )
        return AnovaTable(rows=rows, total_ss=total, balanced=bool(self.balance))

    @cached_property
    def effect_counts(self) -> dict[str, int]:
        out = {
            s.name: self.dataset.effect_count(s)
            for s in self._ordered
        }
        out[RESIDUAL] = self.n
        return out

    @cached_property
    def ems(self) -> tuple[np.ndarray, bool]:
        """(EMS matrix, heuristic flag) for this design."""
        names = self._source_order
        m = len(names)
        c = np.zeros((m, m))
        if self.balance:
            counts = self.effect_counts
            for i, row in enumerate(names):
                for k, col in enumerate(names):
                    if refines(self.dataset, col, row):
                        c[i, k] = self.n / counts[col]
            return c, False
        # unbalanced one-way: classical n0 coefficient, flagged heuristic
        factor = self._ordered[0]
        idx = self.dataset.membership(factor)
        nj = np.bincount(idx).astype(float)
        j = nj.size
        n0 = (self.n - float(nj @ nj) / self.n) / (j - 1)
        c[0, 0] = n0
        c[0, 1] = 1.0
        c[1, 1] = 1.0
        return c, True


def _containment_order(dataset: Dataset, sources: Sequence[Source]) -> list[Source]:
    """Sources sorted so every partition comes after all partitions it refines."""
    remaining = list(sources)
    ordered: list[Source] = []
    while remaining:
        for s in remaining:
            others = [t for t in remaining if t is not s]
            if not any(refines(dataset, s, t) for t in others):
                ordered.append(s)
                remaining.remove(s)
                break
        else:
            # mutually refining partitions (aliased sources); keep layout order
            ordered.append(remaining.pop(0))
    return ordered


# ---------------------------------------------------------------------------
# public operations


def sums_of_squares(dataset: Dataset) -> AnovaTable:
    """Classical decomposition about the grand mean (ss/df/ms rows).

    Supports balanced designs of any supported structure and one-way
    layouts with unequal group sizes; unbalanced multi-way data raises
    ``UnsupportedDesignError``.
    """
    return DesignDecomposition(dataset).table()


def expected_mean_squares(layout: FactorLayout, replicates: int) -> np.ndarray:
    """EMS coefficient matrix for a balanced design with ``replicates`` per cell.

    Nested factors are interpreted per parent: every level listed for a
    nested factor is assumed to occur within each parent combination,
    which is the natural reading of a balanced nested design described by
    a layout alone.
    """
    if replicates < 1:
        raise UnsupportedDesignError("replicate count must be >= 1")
    skeleton = _balanced_skeleton(layout, replicates)
    decomp = DesignDecomposition(skeleton)
    ems, heuristic = decomp.ems
    assert not heuristic
    return ems


def ems_matrix(dataset: Dataset) -> tuple[np.ndarray, bool]:
    """EMS matrix derived from the dataset itself; returns (C, heuristic flag)."""
    return DesignDecomposition(dataset).ems


def mom_estimates(table: AnovaTable) -> MomEstimates:
    """Solve MS = C sigma2 for the raw estimates; truncate at zero for display.

    Raw estimates may be negative; both values are reported because the
    raw value is the unbiased, directly data-linked quantity.
    """
    if table.ems is None:
        raise ValueError("AnovaTable has no EMS matrix; run anova_table() first")
    names = table.source_names
    ms = table.ms_vector()
    try:
        raw = np.linalg.solve(table.ems, ms)
    except np.linalg.LinAlgError as exc:
        raise SingularModelError(f"EMS matrix is singular: {exc}") from exc
    cond = np.linalg.cond(table.ems)
    if not np.isfinite(cond) or cond > 1e12:
        raise SingularModelError("EMS matrix is numerically singular")
    truncated = np.maximum(raw, 0.0)
    return MomEstimates(
        raw={n: float(v) for n, v in zip(names, raw)},
        truncated={n: float(v) for n, v in zip(names, truncated)},
    )


def anova_table(dataset: Dataset) -> AnovaTable:
    """Complete table: rows, EMS matrix, and MoM estimates in one pass."""
    decomp = DesignDecomposition(dataset)
    table = decomp.table()
    ems, heuristic = decomp.ems
    table = replace(table, ems=ems, ems_heuristic=heuristic)
    return replace(table, mom=mom_estimates(table))


def _balanced_skeleton(layout: FactorLayout, replicates: int) -> Dataset:
    """All-zero dataset realizing the layout's balanced full cross."""
    cells: list[dict[str, str]] = [{}]
    for f in layout.factors:
        cells = [
            {**cell, f: lev} for cell in cells for lev in layout.levels[f]
        ]
    obs = tuple(
        Observation(0.0, dict(cell)) for cell in cells for _ in range(replicates)
    )
    return Dataset(obs, layout)


# ---------------------------------------------------------------------------
# convenience constructors used throughout tests and the lab module


def one_way_dataset(groups: Sequence[Sequence[float]], factor: str = "group") -> Dataset:
    """Dataset from per-group response lists (group labels g0, g1, ...)."""
    width = len(str(len(groups) - 1))
    obs = []
    for j, vals in enumerate(groups):
        for v in vals:
            obs.append(Observation(float(v), {factor: f"g{j:0{width}d}"}))
    layout = build_layout([FactorDecl(factor)], obs)
    return Dataset(tuple(obs), layout)

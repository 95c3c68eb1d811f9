"""Datasets and their exchangeable-batch structure.

A dataset is a flat sequence of labeled observations plus a
``FactorLayout`` describing which batches of exchangeable effects act on
it: one variance source per factor main effect, per admissible
interaction, and one residual source (always last).  Nested factors are
supported through an explicit ``nested_in`` relation; an effect of a
nested factor is identified by the level chain down from its outermost
ancestor, so level labels may be reused across parents.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DesignError

RESIDUAL = "residual"


@dataclass(frozen=True)
class FactorDecl:
    """Declaration of one factor: its name and (optionally) what it is nested in."""

    name: str
    nested_in: str | None = None


@dataclass(frozen=True)
class Source:
    """One variance source: a batch of exchangeable effects.

    ``factors`` is the set of factors whose level combination indexes the
    effects; it is empty for the residual source.
    """

    name: str
    factors: tuple[str, ...]

    @property
    def is_residual(self) -> bool:
        return not self.factors


@dataclass(frozen=True)
class Observation:
    response: float
    labels: Mapping[str, str]

    def __post_init__(self):
        if not np.isfinite(self.response):
            raise DesignError(f"non-finite response {self.response!r}")


@dataclass(frozen=True)
class FactorLayout:
    """Factor structure of a dataset: levels, nesting, and the source list."""

    factors: tuple[str, ...]
    levels: Mapping[str, tuple[str, ...]]
    nested_in: Mapping[str, str | None]
    sources: tuple[Source, ...]

    def __post_init__(self):
        resid = [s for s in self.sources if s.is_residual]
        if len(resid) != 1 or not self.sources[-1].is_residual:
            raise DesignError("layout must contain exactly one residual source, last")
        for s in self.sources:
            if not set(s.factors) <= set(self.factors):
                raise DesignError(f"source {s.name!r} uses undeclared factors")
        for f in self.factors:
            if not self.levels.get(f):
                raise DesignError(f"factor {f!r} has an empty level list")

    def source(self, name: str) -> Source:
        for s in self.sources:
            if s.name == name:
                return s
        raise DesignError(f"unknown source {name!r}")

    def source_names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.sources)

    def ancestors(self, factor: str) -> tuple[str, ...]:
        """Nesting ancestors of ``factor``, outermost first."""
        chain: list[str] = []
        parent = self.nested_in.get(factor)
        while parent is not None:
            chain.append(parent)
            parent = self.nested_in.get(parent)
        return tuple(reversed(chain))

    def chain(self, factor: str) -> tuple[str, ...]:
        """Ancestors plus the factor itself, outermost first."""
        return self.ancestors(factor) + (factor,)

    def key_factors(self, source: Source) -> tuple[str, ...]:
        """Factors whose labels identify one effect of ``source`` (declaration order)."""
        if source.is_residual:
            raise DesignError("residual source has no effect key")
        needed = set()
        for f in source.factors:
            needed.update(self.chain(f))
        return tuple(f for f in self.factors if f in needed)


@dataclass(frozen=True)
class Dataset:
    """Observations plus the layout that assigns them to effect batches."""

    observations: tuple[Observation, ...]
    layout: FactorLayout
    source_rows: tuple[int, ...] | None = field(default=None, compare=False)

    def __post_init__(self):
        if len(self.observations) < 2:
            raise DesignError("a dataset needs at least 2 observations")
        for i, obs in enumerate(self.observations):
            for f in self.layout.factors:
                lab = obs.labels.get(f)
                if lab is None:
                    raise DesignError(f"observation {i} is missing a label for factor {f!r}")
                if lab not in self.layout.levels[f]:
                    raise DesignError(
                        f"observation {i} has unknown level {lab!r} for factor {f!r}"
                    )
        for f in self.layout.factors:
            chain = self.layout.chain(f)
            combos = {
                tuple(obs.labels[g] for g in chain) for obs in self.observations
            }
            if len(combos) < 2:
                raise DesignError(f"factor {f!r} defines fewer than 2 effects")

    @property
    def n(self) -> int:
        return len(self.observations)

    @cached_property
    def response(self) -> np.ndarray:
        return np.array([obs.response for obs in self.observations], dtype=float)

    @cached_property
    def _memberships(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for s in self.layout.sources:
            if not s.is_residual:
                out[s.name] = _membership_indices(self, s)
        return out

    def membership(self, source: Source | str) -> np.ndarray:
        name = source if isinstance(source, str) else source.name
        if name == RESIDUAL:
            raise DesignError("membership is undefined for the residual source")
        return self._memberships[name]

    def effect_count(self, source: Source | str) -> int:
        return int(self.membership(source).max()) + 1

    def with_response(self, values: Sequence[float]) -> "Dataset":
        """Same design, new response vector (used for replicated datasets)."""
        if len(values) != self.n:
            raise DesignError("replacement response has wrong length")
        obs = tuple(
            Observation(float(v), o.labels) for v, o in zip(values, self.observations)
        )
        return Dataset(obs, self.layout, self.source_rows)


@dataclass(frozen=True)
class BalanceCheck:
    """Result of a balance check; truthy iff the design is balanced."""

    balanced: bool
    replicates: int | None
    empty_cells: bool

    def __bool__(self) -> bool:
        return self.balanced


# ---------------------------------------------------------------------------
# layout construction


def build_layout(
    declarations: Sequence[FactorDecl | str],
    observations: Sequence[Observation],
    *,
    max_interaction_order: int = 2,
    interactions: Sequence[Sequence[str]] | None = None,
) -> FactorLayout:
    """Build a layout from factor declarations and the observed labels.

    Sources are enumerated deterministically: main effects in declaration
    order, then admissible interactions ordered by size and then
    lexicographically by factor names, then the residual.  Interactions
    involving a factor and one of its nesting ancestors are never
    admissible.  ``interactions`` overrides the automatic enumeration
    (an empty list suppresses interactions entirely).
    """
    decls = [FactorDecl(d) if isinstance(d, str) else d for d in declarations]
    if not decls:
        raise DesignError("at least one factor must be declared")
    if not observations:
        raise DesignError("cannot build a layout from zero observations")

    names = [d.name for d in decls]
    if len(set(names)) != len(names):
        raise DesignError("duplicate factor declarations")
    if RESIDUAL in names:
        raise DesignError(f"factor name {RESIDUAL!r} is reserved")
    nested_in = {d.name: d.nested_in for d in decls}
    for d in decls:
        if d.nested_in is not None and d.nested_in not in names:
            raise DesignError(
                f"factor {d.name!r} is nested in undeclared factor {d.nested_in!r}"
            )
    _check_acyclic(nested_in)

    def chain_of(f: str) -> list[str]:
        out = [f]
        parent = nested_in[f]
        while parent is not None:
            out.append(parent)
            parent = nested_in[parent]
        return list(reversed(out))

    levels: dict[str, tuple[str, ...]] = {}
    for f in names:
        seen = set()
        combos = set()
        chain = chain_of(f)
        for i, obs in enumerate(observations):
            lab = obs.labels.get(f)
            if lab is None or lab == "":
                raise DesignError(f"observation {i} is missing a label for factor {f!r}")
            for g in chain:
                if obs.labels.get(g) in (None, ""):
                    raise DesignError(
                        f"observation {i} is missing a label for factor {g!r}"
                    )
            seen.add(lab)
            combos.add(tuple(obs.labels[g] for g in chain))
        # nested factors count effects per ancestor chain, so a reused
        # single label is fine as long as there are >= 2 effects overall
        if len(combos) < 2:
            raise DesignError(
                f"factor {f!r} defines a single effect {sorted(seen)!r}; "
                "a one-level factor carries no variance component"
            )
        levels[f] = tuple(sorted(seen))

    if interactions is None:
        inter = _auto_interactions(names, nested_in, max_interaction_order)
    else:
        inter = []
        for combo in interactions:
            combo = tuple(sorted(combo))
            if len(combo) < 2 or len(set(combo)) != len(combo):
                raise DesignError(f"invalid interaction {combo!r}")
            for f in combo:
                if f not in names:
                    raise DesignError(f"interaction names unknown factor {f!r}")
            if _has_ancestor_pair(combo, nested_in):
                raise DesignError(
                    f"interaction {combo!r} mixes a factor with its nesting ancestor"
                )
            inter.append(combo)
        inter.sort(key=lambda c: (len(c), c))

    sources = [Source(f, (f,)) for f in names]
    sources += [Source(":".join(c), c) for c in inter]
    sources.append(Source(RESIDUAL, ()))
    return FactorLayout(tuple(names), levels, nested_in, tuple(sources))


def _check_acyclic(nested_in: Mapping[str, str | None]) -> None:
    for start in nested_in:
        seen = {start}
        parent = nested_in[start]
        while parent is not None:
            if parent in seen:
                raise DesignError(f"cyclic nesting involving factor {start!r}")
            seen.add(parent)
            parent = nested_in[parent]


def _ancestors(factor: str, nested_in: Mapping[str, str | None]) -> set[str]:
    out: set[str] = set()
    parent = nested_in.get(factor)
    while parent is not None:
        out.add(parent)
        parent = nested_in.get(parent)
    return out


def _has_ancestor_pair(combo: Iterable[str], nested_in: Mapping[str, str | None]) -> bool:
    combo = set(combo)
    return any(_ancestors(f, nested_in) & combo for f in combo)


def _auto_interactions(
    names: Sequence[str],
    nested_in: Mapping[str, str | None],
    max_order: int,
) -> list[tuple[str, ...]]:
    out: list[tuple[str, ...]] = []
    for order in range(2, max(2, max_order) + 1):
        if max_order < 2:
            break
        tier = []
        for combo in combinations(sorted(names), order):
            if not _has_ancestor_pair(combo, nested_in):
                tier.append(combo)
        out.extend(sorted(tier))
    return out if max_order >= 2 else []


# ---------------------------------------------------------------------------
# membership and balance


def _membership_indices(dataset: Dataset, source: Source) -> np.ndarray:
    key_factors = dataset.layout.key_factors(source)
    keys = [
        tuple(obs.labels[f] for f in key_factors) for obs in dataset.observations
    ]
    index = {k: i for i, k in enumerate(sorted(set(keys)))}
    return np.array([index[k] for k in keys], dtype=np.intp)


def membership(dataset: Dataset, source: Source | str) -> np.ndarray:
    """Map observation index to effect index within ``source`` (0..J_m-1).

    Effect indices follow the lexicographic order of the defining level
    combinations, so they are stable under permutation of observations.
    """
    return dataset.membership(source)


def is_balanced(dataset: Dataset) -> BalanceCheck:
    """True iff every cell of the nesting-respecting full cross has equal count.

    Empty cells make the design unbalanced and set ``empty_cells``; so do
    nested factors with unequal child counts across parents.
    """
    layout = dataset.layout
    cells = [
        tuple(obs.labels[f] for f in layout.factors) for obs in dataset.observations
    ]
    counts: dict[tuple[str, ...], int] = {}
    for c in cells:
        counts[c] = counts.get(c, 0) + 1

    expected = 1
    structural_ok = True
    for f in layout.factors:
        parent = layout.nested_in.get(f)
        if parent is None:
            expected *= len(layout.levels[f])
        else:
            chain = layout.ancestors(f)
            groups: dict[tuple[str, ...], set[str]] = {}
            for obs in dataset.observations:
                pkey = tuple(obs.labels[a] for a in chain)
                groups.setdefault(pkey, set()).add(obs.labels[f])
            sizes = {len(v) for v in groups.values()}
            if len(sizes) != 1:
                structural_ok = False
                break
            expected *= sizes.pop()

    if not structural_ok:
        return BalanceCheck(False, None, empty_cells=False)
    empty = len(counts) < expected
    reps = set(counts.values())
    if empty or len(reps) != 1:
        return BalanceCheck(False, None, empty_cells=empty)
    return BalanceCheck(True, reps.pop(), empty_cells=False)


def refines(dataset: Dataset, finer: Source | str, coarser: Source | str) -> bool:
    """True iff the effect partition of ``finer`` refines that of ``coarser``.

    Equivalently: knowing the ``finer`` effect index determines the
    ``coarser`` effect index.  The residual partition (singletons)
    refines everything and is refined only by itself.
    """
    fname = finer if isinstance(finer, str) else finer.name
    cname = coarser if isinstance(coarser, str) else coarser.name
    if fname == RESIDUAL:
        return True
    if cname == RESIDUAL:
        return False
    a = dataset.membership(fname)
    b = dataset.membership(cname)
    lo = np.full(int(a.max()) + 1, np.iinfo(np.intp).max, dtype=np.intp)
    hi = np.full(int(a.max()) + 1, -1, dtype=np.intp)
    np.minimum.at(lo, a, b)
    np.maximum.at(hi, a, b)
    seen = hi >= 0
    return bool(np.all(lo[seen] == hi[seen]))

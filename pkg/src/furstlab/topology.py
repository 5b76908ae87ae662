"""Admissible topologies on {1,...,d}: enumeration, refinement order, one-step
arrows, filtered topologies and chain decompositions.

A topology here is always stored by its atoms T(1),...,T(d), each a subset of
{i,...,d} containing i, closed in the sense that j in T(i) implies
T(j) subset of T(i).  These are exactly the suborders of the natural linear
order on {1,...,d} (OEIS A006455 counts them).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from itertools import combinations

from .errors import DimensionTooLarge, NotComparable

MAX_ENUM_D = 6


@dataclass(frozen=True)
class AdmissibleTopology:
    """Suborder of the linear order on {1..d}, stored by atoms (1-based)."""

    d: int
    atoms: tuple  # atoms[i-1] = frozenset T(i)

    def __post_init__(self):
        atoms = tuple(frozenset(a) for a in self.atoms)
        object.__setattr__(self, "atoms", atoms)
        if len(atoms) != self.d:
            raise ValueError("need one atom per point")
        for i in range(1, self.d + 1):
            ti = atoms[i - 1]
            if i not in ti or not ti.issubset(range(i, self.d + 1)):
                raise ValueError(f"atom T({i})={set(ti)} not within {{{i}..{self.d}}}")
            for j in ti:
                if not atoms[j - 1].issubset(ti):
                    raise ValueError(f"closure fails: {j} in T({i}) but T({j}) not in T({i})")

    def atom(self, i: int) -> frozenset:
        return self.atoms[i - 1]

    def open_sets(self) -> list:
        """All nonempty open sets (unions of atoms), sorted for determinism."""
        sets = set()
        items = list(self.atoms)
        # Unions of atoms; d <= 8 so the powerset walk is cheap.
        for r in range(1, self.d + 1):
            for combo in combinations(items, r):
                u = frozenset().union(*combo)
                sets.add(u)
        return sorted(sets, key=lambda s: (len(s), sorted(s)))

    def sort_key(self):
        return tuple(tuple(sorted(a)) for a in self.atoms)

    def to_json(self) -> str:
        return json.dumps({"d": self.d, "atoms": [sorted(a) for a in self.atoms]})

    @classmethod
    def from_json(cls, text: str) -> "AdmissibleTopology":
        obj = json.loads(text)
        return cls(obj["d"], tuple(frozenset(a) for a in obj["atoms"]))

    @classmethod
    def coarsest(cls, d: int) -> "AdmissibleTopology":
        return cls(d, tuple(frozenset(range(i, d + 1)) for i in range(1, d + 1)))

    @classmethod
    def finest(cls, d: int) -> "AdmissibleTopology":
        return cls(d, tuple(frozenset([i]) for i in range(1, d + 1)))

    @classmethod
    def from_pairs(cls, d: int, pairs) -> "AdmissibleTopology":
        """Topology whose order relation is the transitive closure of i<j pairs."""
        rel = {i: {i} for i in range(1, d + 1)}
        for i, j in pairs:
            rel[i].add(j)
        changed = True
        while changed:
            changed = False
            for i in range(1, d + 1):
                for j in list(rel[i]):
                    if not rel[j].issubset(rel[i]):
                        rel[i] |= rel[j]
                        changed = True
        return cls(d, tuple(frozenset(rel[i]) for i in range(1, d + 1)))


@dataclass(frozen=True)
class IntervalPartition:
    """Partition of {0..d} into intervals, stored by the cut points."""

    d: int
    cuts: tuple  # strictly increasing, cuts[0] = 0, cuts[-1] = d

    def __post_init__(self):
        cuts = tuple(int(c) for c in self.cuts)
        object.__setattr__(self, "cuts", cuts)
        if cuts[0] != 0 or cuts[-1] != self.d or any(
            a >= b for a, b in zip(cuts, cuts[1:])
        ):
            raise ValueError(f"invalid interval partition cuts {cuts} for d={self.d}")

    @classmethod
    def full(cls, d: int) -> "IntervalPartition":
        return cls(d, tuple(range(d + 1)))

    @classmethod
    def trivial(cls, d: int) -> "IntervalPartition":
        return cls(d, (0, d))

    @classmethod
    def grassmannian(cls, d: int, k: int) -> "IntervalPartition":
        return cls(d, (0, k, d)) if 0 < k < d else cls.trivial(d)

    @property
    def levels(self) -> tuple:
        """Interior cut points q_1 < ... < q_{k-1} (the stored flag dimensions)."""
        return self.cuts[1:-1]

    def level_of(self, i: int) -> int:
        """Index l with q_{l-1} < i <= q_l."""
        for l in range(1, len(self.cuts)):
            if self.cuts[l - 1] < i <= self.cuts[l]:
                return l
        raise ValueError(f"index {i} outside 1..{self.d}")

    def pairs_split(self):
        """All (i, j) with level(i) < level(j)."""
        return [
            (i, j)
            for i in range(1, self.d + 1)
            for j in range(i + 1, self.d + 1)
            if self.level_of(i) < self.level_of(j)
        ]


@dataclass(frozen=True)
class PairSet:
    """A set of index pairs (i, j) with i < j."""

    pairs: frozenset

    def __post_init__(self):
        pairs = frozenset((int(i), int(j)) for i, j in self.pairs)
        object.__setattr__(self, "pairs", pairs)
        if any(i >= j or i < 1 for i, j in pairs):
            raise ValueError("pairs must satisfy 1 <= i < j")

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        return iter(sorted(self.pairs))


def enumerate_admissible(d: int) -> list:
    """All admissible topologies on {1..d}, deterministic order.

    Counts for d = 1..6 are 1, 2, 7, 40, 357, 4824.
    """
    if d < 1 or d > MAX_ENUM_D:
        raise DimensionTooLarge(f"enumeration supported for 1 <= d <= {MAX_ENUM_D}")
    pairs = [(i, j) for i in range(1, d + 1) for j in range(i + 1, d + 1)]
    found = []
    for mask in range(1 << len(pairs)):
        chosen = {pairs[k] for k in range(len(pairs)) if mask >> k & 1}
        # Keep only transitively closed relations so each topology shows once.
        if any(
            (i, j) in chosen and (j, k) in chosen and (i, k) not in chosen
            for (i, j) in chosen
            for k in range(j + 1, d + 1)
            if (j, k) in chosen
        ):
            continue
        atoms = tuple(
            frozenset({i} | {j for j in range(i + 1, d + 1) if (i, j) in chosen})
            for i in range(1, d + 1)
        )
        found.append(AdmissibleTopology(d, atoms))
    found.sort(key=lambda t: t.sort_key())
    return found


def is_finer(t: AdmissibleTopology, t2: AdmissibleTopology) -> bool:
    """True iff t refines t2, i.e. T(i) subset of T'(i) for all i."""
    if t.d != t2.d:
        raise NotComparable("topologies on different ground sets")
    return all(t.atom(i) <= t2.atom(i) for i in range(1, t.d + 1))


def one_step(t: AdmissibleTopology, t2: AdmissibleTopology):
    """The unique arrow pair (i, j) when t is one step finer than t2, else None."""
    if t.d != t2.d:
        raise NotComparable("topologies on different ground sets")
    changed = [i for i in range(1, t.d + 1) if t.atom(i) != t2.atom(i)]
    if len(changed) != 1:
        return None
    i = changed[0]
    diff = t2.atom(i) - t.atom(i)
    if len(diff) != 1 or not t.atom(i) <= t2.atom(i):
        return None
    (j,) = diff
    return (i, j)


def removed_pairs(t: AdmissibleTopology, t2: AdmissibleTopology) -> PairSet:
    """D_{T,T'}: pairs (i, j) with j in T'(i) minus T(i).  Requires t finer."""
    if not is_finer(t, t2):
        raise NotComparable("removed_pairs requires the first topology to be finer")
    return PairSet(
        frozenset(
            (i, j)
            for i in range(1, t.d + 1)
            for j in t2.atom(i) - t.atom(i)
        )
    )


def chain_decompose(t: AdmissibleTopology, t2: AdmissibleTopology, chi) -> list:
    """One-step chain T^0 = t2, ..., T^N = t with nondecreasing pair exponents.

    Pairs of D_{T,T'} are removed in ascending order of chi_i - chi_j, ties
    broken lexicographically on (i, j); chi must be strictly decreasing with
    zero sum.
    """
    chi = list(chi)
    if any(a <= b for a, b in zip(chi, chi[1:])):
        raise ValueError("exponent vector must be strictly decreasing")
    if abs(sum(chi)) > 1e-9 * max(1.0, max(abs(c) for c in chi)):
        raise ValueError("exponent vector must sum to zero")
    pairs = sorted(removed_pairs(t, t2), key=lambda ij: (chi[ij[0] - 1] - chi[ij[1] - 1], ij))
    chain = [t2]
    current = t2
    for (i, j) in pairs:
        atoms = list(current.atoms)
        atoms[i - 1] = current.atom(i) - {j}
        nxt = AdmissibleTopology(t.d, tuple(atoms))
        if one_step(nxt, current) != (i, j):
            raise NotComparable(f"chain construction broke at pair ({i},{j})")
        chain.append(nxt)
        current = nxt
    if current != t:
        raise NotComparable("chain did not terminate at the finer topology")
    return chain


def chain_arrows(chain: list, chi) -> list:
    """(i, j, chi_i - chi_j) per consecutive pair of a one-step chain."""
    out = []
    for prev, nxt in zip(chain, chain[1:]):
        i, j = one_step(nxt, prev)
        out.append((i, j, chi[i - 1] - chi[j - 1]))
    return out


def filtered_from_partition(q: IntervalPartition) -> AdmissibleTopology:
    """The filtered topology T_Q generated by T_0 and the prefixes {1..q_j}.

    Its atoms come out as T_Q(i) = {i, ..., q_{level(i)}}.
    """
    d = q.d
    generators = [frozenset(range(i, d + 1)) for i in range(1, d + 1)]
    generators += [frozenset(range(1, c + 1)) for c in q.cuts[1:]]
    atoms = []
    for i in range(1, d + 1):
        atom = frozenset(range(1, d + 1))
        for g in generators:
            if i in g:
                atom &= g
        atoms.append(atom)
    return AdmissibleTopology(d, tuple(atoms))


def count_one_step_arrows(topologies: list) -> int:
    """Number of ordered pairs (T, T') with T one step finer than T'."""
    return sum(
        1
        for t in topologies
        for t2 in topologies
        if t is not t2 and one_step(t, t2) is not None
    )


def to_dot(topologies: list) -> str:
    """DOT digraph of the one-step relation (arrow from finer to coarser)."""
    names = {t: f"t{k}" for k, t in enumerate(topologies)}
    lines = ["digraph admissible {"]
    for t in topologies:
        label = " ".join("{" + ",".join(map(str, sorted(a))) + "}" for a in t.atoms)
        lines.append(f'  {names[t]} [label="{label}"];')
    for t in topologies:
        for t2 in topologies:
            if t is not t2 and one_step(t, t2) is not None:
                lines.append(f"  {names[t]} -> {names[t2]};")
    lines.append("}")
    return "\n".join(lines)

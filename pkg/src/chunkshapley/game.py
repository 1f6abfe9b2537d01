"""Closed-form surrogate coalition game and exact Shapley attribution.

Players are retrieved chunks, indexed 1..K. A coalition is a subset of
players, represented internally as a bitmask (bit i-1 set means player i
is in). Two game representations are supported:

- SurrogateGame: the logistic vote-aggregation utility built from
  single-chunk probe effects. Cheap enough to enumerate all 2^K subsets.
- TabulatedGame: an explicit utility table over every coalition, used for
  alternative utilities (decode-metric gains) and as the oracle path.

All functions here are pure; inputs are immutable.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import GameSizeError

# 2^K float64 utility table; 20 players = 8 MiB, the hard ceiling.
MAX_ENUM_PLAYERS = 20
# K! permutations for the brute-force oracle.
MAX_ORACLE_PLAYERS = 8


@dataclass(frozen=True)
class Vote:
    """Signed, weighted effect of one chunk: sign in {-1, 0, +1}, weight >= 0 (nats)."""

    y: int
    weight: float

    def __post_init__(self):
        if self.y not in (-1, 0, 1):
            raise ValueError(f"vote sign must be -1, 0 or +1, got {self.y!r}")
        if not math.isfinite(self.weight) or self.weight < 0.0:
            raise ValueError(f"vote weight must be finite and >= 0, got {self.weight!r}")

    @property
    def signed_weight(self) -> float:
        return self.y * self.weight


@dataclass(frozen=True)
class Coalition:
    """Immutable player subset backed by a bitmask (player i <-> bit i-1)."""

    mask: int

    def __post_init__(self):
        if self.mask < 0:
            raise ValueError("coalition mask must be non-negative")

    @classmethod
    def from_members(cls, members: Iterable[int]) -> "Coalition":
        mask = 0
        for m in members:
            if m < 1:
                raise ValueError(f"player indices are 1-based, got {m}")
            mask |= 1 << (m - 1)
        return cls(mask)

    @property
    def members(self) -> tuple[int, ...]:
        out = []
        mask = self.mask
        i = 1
        while mask:
            if mask & 1:
                out.append(i)
            mask >>= 1
            i += 1
        return tuple(out)

    @property
    def size(self) -> int:
        return bin(self.mask).count("1")

    def __contains__(self, player: int) -> bool:
        return player >= 1 and bool(self.mask >> (player - 1) & 1)

    def __len__(self) -> int:
        return self.size


EMPTY_COALITION = Coalition(0)


@dataclass(frozen=True)
class SurrogateGame:
    """Logistic vote game: v(S) = sigmoid(beta * sum of signed weights in S) - 1/2."""

    beta: float
    votes: tuple[Vote, ...]

    def __post_init__(self):
        if not math.isfinite(self.beta) or self.beta <= 0.0:
            raise ValueError(f"beta must be finite and > 0, got {self.beta!r}")
        k = len(self.votes)
        if k < 1:
            raise ValueError("game needs at least one player")
        if k > MAX_ENUM_PLAYERS:
            raise GameSizeError(
                f"{k} players would need 2^{k} subset evaluations "
                f"(guard is {MAX_ENUM_PLAYERS})"
            )
        object.__setattr__(self, "votes", tuple(self.votes))

    @property
    def num_players(self) -> int:
        return len(self.votes)


@dataclass(frozen=True)
class TabulatedGame:
    """Explicit utility table: values[mask] for every coalition mask, values[0] == 0."""

    num_players: int
    values: tuple[float, ...]

    def __post_init__(self):
        k = self.num_players
        if k < 1:
            raise ValueError("game needs at least one player")
        if k > MAX_ENUM_PLAYERS:
            raise GameSizeError(f"{k} players exceeds the guard of {MAX_ENUM_PLAYERS}")
        vals = tuple(float(v) for v in self.values)
        if len(vals) != 1 << k:
            raise ValueError(
                f"need exactly 2^{k} = {1 << k} coalition values, got {len(vals)}"
            )
        if any(not math.isfinite(v) for v in vals):
            raise ValueError("coalition values must be finite")
        if vals[0] != 0.0:
            raise ValueError("empty coalition must have value 0")
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_function(cls, num_players: int, fn) -> "TabulatedGame":
        """Tabulate fn(Coalition) over every subset. fn(empty) must be 0."""
        return cls(num_players, tuple(fn(Coalition(m)) for m in range(1 << num_players)))


@dataclass(frozen=True)
class ShapleyAttribution:
    """Per-player Shapley values plus the efficiency residual sum(phi) - v(D)."""

    phi: tuple[float, ...]
    efficiency_residual: float

    @property
    def num_players(self) -> int:
        return len(self.phi)


def _check_coalition(s: Coalition, num_players: int) -> None:
    if s.mask >> num_players:
        raise ValueError(
            f"coalition members {s.members} out of range for a {num_players}-player game"
        )


def vote_sum(game: SurrogateGame, s: Coalition) -> float:
    """Weighted vote g(S): sum of signed weights over members of S."""
    _check_coalition(s, game.num_players)
    return sum(game.votes[i - 1].signed_weight for i in s.members)


def _centered_sigmoid(x: float) -> float:
    # sigmoid(x) - 1/2 == tanh(x/2)/2; the tanh form keeps tiny x accurate
    # and is exactly antisymmetric.
    return 0.5 * math.tanh(0.5 * x)


def surrogate_value(game: SurrogateGame, s: Coalition) -> float:
    """Coalition utility sigmoid(beta * g(S)) - sigmoid(0); zero on the empty set."""
    return _centered_sigmoid(game.beta * vote_sum(game, s))


def surrogate_table(game: SurrogateGame) -> np.ndarray:
    """Utility of every coalition, indexed by bitmask (length 2^K float64)."""
    k = game.num_players
    masks = np.arange(1 << k, dtype=np.int64)
    g = np.zeros(1 << k, dtype=np.float64)
    for i, vote in enumerate(game.votes):
        w = vote.signed_weight
        if w != 0.0:
            g += ((masks >> i) & 1) * w
    return 0.5 * np.tanh(0.5 * game.beta * g)


def tabulate_surrogate(game: SurrogateGame) -> TabulatedGame:
    """Materialize a SurrogateGame as a TabulatedGame (oracle cross-checks, ablations)."""
    return TabulatedGame(game.num_players, tuple(surrogate_table(game).tolist()))


def _order_weights(k: int) -> np.ndarray:
    # w[s] = s! (k-1-s)! / k!  -- exact integer ratio, rounded once to float64.
    fact = [math.factorial(n) for n in range(k + 1)]
    return np.array([fact[s] * fact[k - 1 - s] / fact[k] for s in range(k)])


def _shapley_from_table(values: np.ndarray, k: int) -> ShapleyAttribution:
    masks = np.arange(1 << k, dtype=np.int64)
    popcount = np.zeros(1 << k, dtype=np.int64)
    for b in range(k):
        popcount += (masks >> b) & 1
    weights = _order_weights(k)
    phi = []
    for i in range(k):
        bit = 1 << i
        without = masks[(masks & bit) == 0]
        marginals = values[without | bit] - values[without]
        phi.append(float(np.dot(weights[popcount[without]], marginals)))
    residual = math.fsum(phi) - float(values[-1])
    return ShapleyAttribution(tuple(phi), residual)


def exact_shapley_surrogate(game: SurrogateGame) -> ShapleyAttribution:
    """Exact Shapley values under the surrogate utility, enumerating all 2^K subsets."""
    return _shapley_from_table(surrogate_table(game), game.num_players)


def exact_shapley_tabulated(tab: TabulatedGame) -> ShapleyAttribution:
    """Exact Shapley values for an arbitrary tabulated utility (same subset form)."""
    return _shapley_from_table(np.asarray(tab.values, dtype=np.float64), tab.num_players)


def permutation_shapley_oracle(tab: TabulatedGame) -> ShapleyAttribution:
    """Brute-force oracle: average marginal contribution over all K! orderings.

    Independent of the subset-form computation; K is capped at
    MAX_ORACLE_PLAYERS because the cost is K! * K.
    """
    k = tab.num_players
    if k > MAX_ORACLE_PLAYERS:
        raise GameSizeError(f"permutation oracle is limited to {MAX_ORACLE_PLAYERS} players")
    totals = [0.0] * k
    values = tab.values
    for perm in itertools.permutations(range(k)):
        mask = 0
        prev = 0.0
        for p in perm:
            mask |= 1 << p
            val = values[mask]
            totals[p] += val - prev
            prev = val
    n_perm = math.factorial(k)
    phi = tuple(t / n_perm for t in totals)
    residual = math.fsum(phi) - values[-1]
    return ShapleyAttribution(phi, residual)


def rank_descending(values: Sequence[float]) -> list[int]:
    """1-based indices sorted by value descending; ties keep original (retrieval) order."""
    vals = [float(v) for v in values]
    if any(math.isnan(v) for v in vals):
        raise ValueError("cannot rank NaN values")
    order = sorted(range(len(vals)), key=lambda i: (-vals[i], i))
    return [i + 1 for i in order]

"""Superimposed guard-pilot patterns, measurement matrices and pilot-position search.

Each pilot group is one nonzero pilot flanked by ``D-1`` zero guards on either
side. All antennas share the nonzero positions ``S_cen`` and are told apart by
their +/-1 pilot values. Positions are circular modulo N.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from bdcs._random import stream
from bdcs.errors import DegenerateInputError, DimensionError, InfeasibleError, ParameterError

MAX_REDRAWS = 16


@dataclass
class PilotPattern:
    n_subcarriers: int
    n_groups: int
    bem_order: int
    center_indices: np.ndarray
    pilot_values: np.ndarray  # N_B x G, entries +/-1

    def __post_init__(self):
        self.center_indices = np.asarray(self.center_indices, dtype=int)
        self.pilot_values = np.atleast_2d(np.asarray(self.pilot_values, dtype=int))
        if self.center_indices.shape != (self.n_groups,):
            raise DimensionError(f"expected {self.n_groups} pilot positions, got {self.center_indices.shape}")
        if self.pilot_values.shape[1] != self.n_groups:
            raise DimensionError(f"pilot values have {self.pilot_values.shape[1]} columns, expected {self.n_groups}")
        order = np.argsort(self.center_indices, kind="stable")
        self.center_indices = self.center_indices[order]
        self.pilot_values = self.pilot_values[:, order]

    @property
    def n_antennas(self) -> int:
        return self.pilot_values.shape[0]

    @property
    def center(self) -> int:
        return (self.bem_order - 1) // 2

    def derived_sets(self, offset_sign: int = 1) -> np.ndarray:
        """``D x G`` array whose row d is ``S_d = S_cen + d - (D-1)/2 (mod N)``.

        ``offset_sign=-1`` mirrors the offsets; it exists only so the
        verification suite can check that it catches a wrong index map.
        """
        offsets = offset_sign * (np.arange(self.bem_order) - self.center)
        return (self.center_indices[None, :] + offsets[:, None]) % self.n_subcarriers

    def guard_indices(self) -> np.ndarray:
        """Positions of the zero guards, ``D-1`` on each side of every pilot."""
        D = self.bem_order
        offsets = np.concatenate([np.arange(-(D - 1), 0), np.arange(1, D)])
        return np.sort(((self.center_indices[:, None] + offsets[None, :]) % self.n_subcarriers).ravel())

    def validate(self) -> None:
        if self.center_indices.min() < 0 or self.center_indices.max() >= self.n_subcarriers:
            raise ParameterError("pilot positions outside [0, N-1]")
        if self.n_groups > 1 and min_circular_distance(self.center_indices, self.n_subcarriers) < 2 * self.bem_order - 1:
            raise ParameterError("pilot groups overlap: spacing below 2D-1")
        if not np.all(np.abs(self.pilot_values) == 1):
            raise ParameterError("pilot values must be +1 or -1")


@dataclass
class MeasurementSystem:
    z: np.ndarray  # G x (N_B * L)
    z_s: np.ndarray  # (G * N_B) x L
    n_antennas: int
    channel_length: int
    block_index: list = field(default_factory=list)

    def block(self, l: int) -> np.ndarray:
        """Columns of ``z`` belonging to tap ``l``, one per antenna."""
        return self.z[:, self.block_index[l]]


@dataclass
class OptimizationResult:
    positions: np.ndarray
    mu_trace: np.ndarray
    accepted_mu: np.ndarray = field(default_factory=lambda: np.zeros(0))


def circular_distance(a, b, n: int):
    d = np.abs(np.asarray(a) - np.asarray(b)) % n
    return np.minimum(d, n - d)


def min_circular_distance(positions, n: int) -> int:
    p = np.sort(np.asarray(positions))
    if len(p) < 2:
        return n
    gaps = np.diff(np.concatenate([p, [p[0] + n]]))
    return int(gaps.min())


def equidistant_positions(n: int, g: int, d: int) -> np.ndarray:
    """G pilot positions spaced ``N // G`` apart, starting at ``D-1``."""
    if g < 1 or d < 1:
        raise ParameterError("group count and BEM order must be positive")
    spacing = n // g
    if g * (2 * d - 1) > n or spacing < 2 * d - 1:
        raise InfeasibleError(f"cannot place {g} groups of width {2 * d - 1} in {n} subcarriers")
    return (d - 1) + spacing * np.arange(g)


def random_sign_sequences(n_antennas: int, g: int, rng_seed: int) -> np.ndarray:
    rng = stream(rng_seed, "pilot-signs")
    return rng.choice(np.array([-1, 1]), size=(n_antennas, g))


def _feasible_slots(others: np.ndarray, n: int, min_gap: int) -> np.ndarray:
    cand = np.arange(n)
    if len(others) == 0:
        return cand
    ok = np.all(circular_distance(cand[:, None], others[None, :], n) >= min_gap, axis=1)
    return cand[ok]


def random_feasible_positions(n: int, g: int, d: int, rng: np.random.Generator, attempts: int = 100) -> np.ndarray:
    """Uniform sequential placement of G non-overlapping pilot groups."""
    gap = 2 * d - 1
    if g * gap > n:
        raise InfeasibleError(f"cannot place {g} groups of width {gap} in {n} subcarriers")
    for _ in range(attempts):
        chosen = np.zeros(0, dtype=int)
        for _ in range(g):
            slots = _feasible_slots(chosen, n, gap)
            if len(slots) == 0:
                break
            chosen = np.append(chosen, rng.choice(slots))
        if len(chosen) == g:
            return np.sort(chosen)
    raise InfeasibleError(f"random placement of {g} groups in {n} subcarriers failed after {attempts} attempts")


def pilot_rows(positions, channel_length: int, n: int) -> np.ndarray:
    """DFT rows ``exp(-2j*pi*s*l/N)`` for pilot positions s and taps l < L.

    Unnormalized, which is the scale at which the received pilots equal
    ``Z @ Lambda`` when the channel matrix is built with the unitary DFT.
    """
    s = np.asarray(positions)[:, None]
    return np.exp(-2j * np.pi * s * np.arange(channel_length)[None, :] / n)


def block_flatten(z: np.ndarray, n_antennas: int, channel_length: int) -> np.ndarray:
    """Stack each tap's ``G x N_B`` block column-wise into one column of ``z_s``."""
    G = z.shape[0]
    if z.shape[1] != n_antennas * channel_length:
        raise DimensionError(f"z has {z.shape[1]} columns, expected {n_antennas * channel_length}")
    return z.reshape(G, n_antennas, channel_length).transpose(1, 0, 2).reshape(n_antennas * G, channel_length)


def measurement_matrix(positions, pilot_values: np.ndarray, channel_length: int, n: int) -> np.ndarray:
    """``Z = [diag(P_1) F, ..., diag(P_NB) F]`` with ``F`` the pilot DFT rows."""
    F = pilot_rows(positions, channel_length, n)
    P = np.atleast_2d(pilot_values)
    return np.concatenate([P[nb][:, None] * F for nb in range(P.shape[0])], axis=1)


def assemble_measurement_matrix(pattern: PilotPattern, channel_length: int) -> MeasurementSystem:
    N, L, NB = pattern.n_subcarriers, channel_length, pattern.n_antennas
    if L > N:
        raise DimensionError(f"channel length {L} exceeds N={N}")
    z = measurement_matrix(pattern.center_indices, pattern.pilot_values, L, N)
    blocks = [l + L * np.arange(NB) for l in range(L)]
    return MeasurementSystem(z, block_flatten(z, NB, L), NB, L, blocks)


def mutual_coherence(m: np.ndarray) -> float:
    """Largest normalized inner product between two distinct columns."""
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[1] < 2:
        raise DimensionError("mutual coherence needs a matrix with at least two columns")
    norms = np.linalg.norm(m, axis=0)
    if np.any(norms == 0):
        raise DegenerateInputError("matrix has a zero column")
    u = m / norms
    gram = np.abs(u.conj().T @ u)
    np.fill_diagonal(gram, 0.0)
    return float(min(gram.max(), 1.0))


def block_coherence(positions, pilot_values: np.ndarray, channel_length: int, n: int) -> float:
    """``mu(Z_s)`` for the given pilot positions."""
    P = np.atleast_2d(pilot_values)
    z = measurement_matrix(positions, P, channel_length, n)
    return mutual_coherence(block_flatten(z, P.shape[0], channel_length))


def _redraw_one(positions: np.ndarray, n: int, gap: int, rng: np.random.Generator):
    """Move one uniformly chosen position to a uniform feasible slot."""
    for _ in range(MAX_REDRAWS):
        u = rng.integers(len(positions))
        others = np.delete(positions, u)
        slots = _feasible_slots(others, n, gap)
        slots = slots[slots != positions[u]]
        if len(slots):
            return np.sort(np.append(others, rng.choice(slots)))
    return None


def bdso_optimize(config, pilot_values: np.ndarray, iterations: int, rng_seed: int, initial=None) -> OptimizationResult:
    """Block discrete stochastic optimization of the pilot positions.

    The search state moves to a one-position perturbation whenever that lowers
    the block coherence. The reported state is the one with the larger
    empirical occupation probability among the current search state and the
    previously reported one.
    """
    if iterations < 1:
        raise ParameterError(f"iterations must be at least 1, got {iterations}")
    N, L, D = config.n_subcarriers, config.channel_length, config.bem_order
    gap = 2 * D - 1
    rng = stream(rng_seed, "bdso")
    current = np.sort(np.asarray(initial)) if initial is not None else equidistant_positions(N, config.n_groups, D)

    def mu(pos):
        return block_coherence(pos, pilot_values, L, N)

    mu_current = mu(current)
    reported, mu_reported = current, mu_current
    # occupation probabilities, kept only for the current (i) and reported (j) states
    rho = {0: 1.0}
    i = j = 0
    trace = [mu_reported]
    accepted = [mu_current]
    for m in range(1, iterations + 1):
        candidate = _redraw_one(current, N, gap, rng)
        if candidate is not None:
            mu_candidate = mu(candidate)
            if mu_candidate < mu_current:
                current, mu_current = candidate, mu_candidate
                i = m + 1
                accepted.append(mu_current)
        rho = {k: (1.0 - 1.0 / m) * v for k, v in rho.items() if k in (i, j)}
        rho[i] = rho.get(i, 0.0) + 1.0 / m
        if rho[i] > rho.get(j, 0.0):
            reported, mu_reported = current, mu_current
            j = i
        trace.append(mu_reported)
    return OptimizationResult(reported, np.array(trace), np.array(accepted))


GA_POPULATION = 20
GA_TOURNAMENT = 2
GA_MUTATION = 0.05


def _repair(positions: np.ndarray, n: int, gap: int, rng: np.random.Generator):
    """Re-place positions until no two groups overlap, or give up."""
    pos = np.sort(np.asarray(positions))
    for _ in range(4 * len(pos)):
        conflicts = circular_distance(pos[:, None], pos[None, :], n) < gap
        np.fill_diagonal(conflicts, False)
        bad = np.flatnonzero(conflicts.any(axis=1))
        if len(bad) == 0:
            return pos
        u = rng.choice(bad)
        others = np.delete(pos, u)
        slots = _feasible_slots(others, n, gap)
        if len(slots) == 0:
            return None
        pos = np.sort(np.append(others, rng.choice(slots)))
    return None


def ga_optimize(config, pilot_values: np.ndarray, generations: int, rng_seed: int) -> OptimizationResult:
    """Genetic-algorithm baseline minimizing the block coherence.

    Population 20 with one elite, binary tournaments, single-point crossover
    on the sorted position lists followed by spacing repair, and per-position
    mutation with probability 0.05.
    """
    if generations < 0:
        raise ParameterError(f"generations must be non-negative, got {generations}")
    N, L, D, G = config.n_subcarriers, config.channel_length, config.bem_order, config.n_groups
    gap = 2 * D - 1
    rng = stream(rng_seed, "ga")

    def mu(pos):
        return block_coherence(pos, pilot_values, L, N)

    population = [random_feasible_positions(N, G, D, rng) for _ in range(GA_POPULATION)]
    fitness = np.array([mu(p) for p in population])
    best = int(np.argmin(fitness))
    trace = [fitness[best]]

    def tournament():
        picks = rng.integers(GA_POPULATION, size=GA_TOURNAMENT)
        return population[picks[np.argmin(fitness[picks])]]

    for _ in range(generations):
        children = [population[best]]
        child_fit = [fitness[best]]
        while len(children) < GA_POPULATION:
            a, b = tournament(), tournament()
            cut = rng.integers(1, G) if G > 1 else 0
            child = np.concatenate([a[:cut], b[cut:]])
            mutate = rng.random(G) < GA_MUTATION
            for u in np.flatnonzero(mutate):
                child[u] = rng.integers(N)
            child = _repair(child, N, gap, rng)
            if child is None or len(np.unique(child)) != G:
                child = a.copy()
            children.append(child)
            child_fit.append(mu(child))
        population, fitness = children, np.array(child_fit)
        best = int(np.argmin(fitness))
        trace.append(fitness[best])
    return OptimizationResult(population[best], np.array(trace), np.minimum.accumulate(trace))


def write_pattern(pattern: PilotPattern, path) -> None:
    """Text format: ``N G D N_B`` header, sorted positions, one line of signs per antenna."""
    lines = [
        f"{pattern.n_subcarriers} {pattern.n_groups} {pattern.bem_order} {pattern.n_antennas}",
        " ".join(str(int(s)) for s in pattern.center_indices),
    ]
    lines += [" ".join(str(int(v)) for v in row) for row in pattern.pilot_values]
    Path(path).write_text("\n".join(lines) + "\n")


def read_pattern(path) -> PilotPattern:
    lines = Path(path).read_text().split("\n")
    N, G, D, NB = (int(x) for x in lines[0].split())
    positions = [int(x) for x in lines[1].split()]
    values = [[int(x) for x in lines[2 + k].split()] for k in range(NB)]
    pattern = PilotPattern(N, G, D, np.array(positions), np.array(values))
    pattern.validate()
    return pattern

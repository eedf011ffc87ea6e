"""Generative models for the experiments.

Two scenario kinds produce hidden-Markov models plus sampled population
data: ``random-hmm`` draws diagonally dominant transition and observation
matrices, and ``bird-migration`` builds a grid world whose population drifts
toward the top-right corner under a log-linear movement model and is watched
by distance-decaying sensors.

All randomness flows through one pinned 64-bit generator (PCG64) seeded by
explicit integer tuples, so every sampled trajectory replays bit-identically
across platforms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .chain import AggregateObservation, HmmModel
from .errors import StructureError, ValidationError

KIND_RANDOM_HMM = "random-hmm"
KIND_BIRD_MIGRATION = "bird-migration"
KINDS = (KIND_RANDOM_HMM, KIND_BIRD_MIGRATION)

# substream tags: model parameters, initial placement, trajectory sampling
TAG_MODEL = 0
TAG_INIT = 1
TAG_PATH = 2


def pinned_generator(*entries: int) -> np.random.Generator:
    """PCG64 generator keyed by an integer tuple; replays across platforms."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(list(entries))))


def _row_normalized(matrix):
    matrix = np.asarray(matrix, dtype=float)
    return matrix / matrix.sum(axis=1, keepdims=True)


def random_hmm(num_states: int, seed) -> tuple[np.ndarray, np.ndarray]:
    """Transition and observation matrices, drawn in that order.

    Each matrix is 500*I + 10*exp(E) with independent standard-Gaussian E,
    row-normalized, which makes rows strictly positive and (overwhelmingly)
    diagonally dominant.  The observation alphabet has the same size as the
    state space.
    """
    if num_states < 1:
        raise ValidationError(f"num_states must be positive, got {num_states}")
    rng = np.random.default_rng(seed)

    def draw():
        base = 500.0 * np.eye(num_states)
        base = base + 10.0 * np.exp(rng.standard_normal((num_states, num_states)))
        return _row_normalized(base)

    transition = draw()
    observation = draw()
    return transition, observation


@dataclass(frozen=True)
class GridWorld:
    """Square grid of cells indexed row-major; (0, 0) is the top-left."""

    size: int
    sensors: tuple[tuple[int, int], ...]
    wind: float = math.pi / 4  # radians; default blows toward the top-right

    def __post_init__(self):
        if self.size < 1:
            raise ValidationError(f"grid size must be positive, got {self.size}")
        if not self.sensors:
            raise ValidationError("at least one sensor is required")
        for row, col in self.sensors:
            if not (0 <= row < self.size and 0 <= col < self.size):
                raise ValidationError(f"sensor ({row}, {col}) is outside the grid")
        if not math.isfinite(self.wind):
            raise ValidationError("wind angle must be finite")

    @property
    def num_cells(self) -> int:
        return self.size * self.size

    def cell_index(self, row: int, col: int) -> int:
        return row * self.size + col

    def cell_position(self, index: int) -> tuple[int, int]:
        return divmod(index, self.size)


@dataclass(frozen=True)
class LogLinearWeights:
    """Feature weights for the movement model."""

    distance: float = 5.0
    goal_angle: float = 3.0
    wind_angle: float = 1.6
    stay: float = 1.0

    def __post_init__(self):
        for value in (self.distance, self.goal_angle, self.wind_angle, self.stay):
            if not math.isfinite(value):
                raise ValidationError("weights must be finite")


@dataclass(frozen=True)
class PopulationState:
    """Integer head-count per cell; conserved total."""

    counts: np.ndarray
    population: int

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 1:
            raise ValidationError("counts must be a vector")
        if np.any(counts < 0):
            raise ValidationError("counts must be nonnegative")
        if counts.sum() != self.population:
            raise ValidationError(
                f"counts sum to {counts.sum()}, expected {self.population}"
            )
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)


# moves allowed per step: the cell itself plus its 8 neighbors, row-major
_NEIGHBORHOOD = tuple(
    (dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1)
)

# unit vector toward the top-right corner in (row, col) coordinates
_GOAL_DIRECTION = (-1.0 / math.sqrt(2.0), 1.0 / math.sqrt(2.0))


def _wind_direction(angle: float) -> tuple[float, float]:
    # angle measured from due east, counterclockwise; rows grow downward
    return (-math.sin(angle), math.cos(angle))


def grid_transition(grid: GridWorld, weights: LogLinearWeights) -> np.ndarray:
    """Log-linear movement kernel over cells, restricted to the 9-cell
    neighborhood.

    Score of a move x -> x' is w . f with features: negative euclidean move
    length, cosine between the move and the top-right diagonal, cosine
    between the move and the wind, and a stay indicator (angle features are
    zero for stay).
    """
    size = grid.size
    wind = _wind_direction(grid.wind)
    out = np.zeros((grid.num_cells, grid.num_cells))
    for row in range(size):
        for col in range(size):
            source = grid.cell_index(row, col)
            scores = {}
            for drow, dcol in _NEIGHBORHOOD:
                nrow, ncol = row + drow, col + dcol
                if not (0 <= nrow < size and 0 <= ncol < size):
                    continue
                if drow == 0 and dcol == 0:
                    value = weights.stay
                else:
                    length = math.hypot(drow, dcol)
                    value = (
                        -weights.distance * length
                        + weights.goal_angle
                        * (drow * _GOAL_DIRECTION[0] + dcol * _GOAL_DIRECTION[1])
                        / length
                        + weights.wind_angle
                        * (drow * wind[0] + dcol * wind[1]) / length
                    )
                scores[grid.cell_index(nrow, ncol)] = value
            if not scores:
                raise StructureError(f"cell {source} has no reachable cells")
            peak = max(scores.values())
            row_total = 0.0
            for target, value in scores.items():
                weight = math.exp(value - peak)
                out[source, target] = weight
                row_total += weight
            out[source] /= row_total
    return out


def sensor_observation(grid: GridWorld, decay: float) -> np.ndarray:
    """Connection probabilities, cells x sensors: exp(-decay * distance)
    normalized over sensors for each cell.  Strictly positive."""
    if decay <= 0:
        raise ValidationError(f"decay must be positive, got {decay}")
    cells = np.array([grid.cell_position(i) for i in range(grid.num_cells)], float)
    sensors = np.array(grid.sensors, dtype=float)
    gaps = cells[:, None, :] - sensors[None, :, :]
    distance = np.sqrt((gaps ** 2).sum(axis=2))
    return _row_normalized(np.exp(-decay * distance))


def initial_clusters(grid: GridWorld, population: int) -> PopulationState:
    """Split the population between the bottom-left and bottom-center cells."""
    if grid.size < 2:
        raise ValidationError("clustered start needs a grid of size at least 2")
    if population < 1:
        raise ValidationError(f"population must be positive, got {population}")
    counts = np.zeros(grid.num_cells, dtype=np.int64)
    half = population // 2
    counts[grid.cell_index(grid.size - 1, 0)] = population - half
    counts[grid.cell_index(grid.size - 1, grid.size // 2)] = half
    return PopulationState(counts, population)


def sample_population(
    initial: PopulationState,
    transition,
    observation,
    horizon: int,
    population: int,
    seed,
) -> tuple[np.ndarray, list[AggregateObservation]]:
    """Propagate multinomial head-counts and emit aggregate observations.

    At each time step every cell's occupants first emit (one multinomial
    draw per cell, ascending cell order), then move the same way.  Returns
    the true hidden counts, shape (horizon, cells), and the normalized
    observation histograms.
    """
    if horizon < 1:
        raise ValidationError(f"horizon must be positive, got {horizon}")
    if initial.population != population:
        raise ValidationError(
            f"initial counts carry population {initial.population}, expected {population}"
        )
    transition = _row_normalized(transition)
    observation = _row_normalized(observation)
    num_states = transition.shape[0]
    num_symbols = observation.shape[1]
    if transition.shape != (num_states, num_states):
        raise ValidationError("transition matrix must be square")
    if observation.shape[0] != num_states:
        raise ValidationError("observation rows must match the state count")
    if initial.counts.shape != (num_states,):
        raise ValidationError("initial counts do not match the state count")
    rng = np.random.default_rng(seed)
    counts = np.zeros((horizon, num_states), dtype=np.int64)
    counts[0] = initial.counts
    observations = []
    for t in range(horizon):
        emitted = np.zeros(num_symbols, dtype=np.int64)
        for state in range(num_states):
            occupants = int(counts[t, state])
            if occupants:
                emitted += rng.multinomial(occupants, observation[state])
        observations.append(
            AggregateObservation(emitted / population, population)
        )
        if t + 1 < horizon:
            moved = np.zeros(num_states, dtype=np.int64)
            for state in range(num_states):
                occupants = int(counts[t, state])
                if occupants:
                    moved += rng.multinomial(occupants, transition[state])
            counts[t + 1] = moved
    counts.setflags(write=False)
    return counts, observations


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything needed to replay one experiment scenario."""

    kind: str
    population: int
    horizon: int
    window: int
    seed: int = 0
    num_states: int = 50
    grid_size: int = 15
    num_sensors: int = 16
    sensor_seed: int = 0
    decay: float = 1.0
    wind_deg: float = 45.0
    tolerance: float = 1e-9
    max_sweeps: int = 1000

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(
                f"kind must be one of {', '.join(KINDS)}; got {self.kind!r}"
            )
        if self.population < 1:
            raise ValidationError("population must be positive")
        if self.window < 2:
            raise ValidationError("window must be at least 2")
        if self.horizon <= self.window:
            raise ValidationError("horizon must exceed the window size")
        if self.kind == KIND_RANDOM_HMM and self.num_states < 1:
            raise ValidationError("num_states must be positive")
        if self.kind == KIND_BIRD_MIGRATION:
            if self.grid_size < 2:
                raise ValidationError("grid_size must be at least 2")
            if not 1 <= self.num_sensors <= self.grid_size ** 2:
                raise ValidationError("num_sensors must fit inside the grid")
            if self.decay <= 0:
                raise ValidationError("decay must be positive")
        if self.tolerance < 0 or self.max_sweeps < 1:
            raise ValidationError("tolerance must be >= 0 and max_sweeps >= 1")

    @property
    def num_hidden_states(self) -> int:
        if self.kind == KIND_BIRD_MIGRATION:
            return self.grid_size ** 2
        return self.num_states


def make_grid(config: ScenarioConfig) -> GridWorld:
    """Grid with sensors placed uniformly at distinct cells; the placement
    depends only on sensor_seed, never on the trial."""
    rng = pinned_generator(config.sensor_seed)
    chosen = rng.choice(config.grid_size ** 2, size=config.num_sensors, replace=False)
    size = config.grid_size
    sensors = tuple((int(i) // size, int(i) % size) for i in sorted(chosen))
    return GridWorld(size, sensors, math.radians(config.wind_deg))


def scenario_model(config: ScenarioConfig, trial: int) -> HmmModel:
    """The hidden-Markov model inference runs against for one trial."""
    if config.kind == KIND_RANDOM_HMM:
        transition, observation = random_hmm(
            config.num_states, pinned_generator(config.seed, trial, TAG_MODEL)
        )
        prior = np.full(config.num_states, 1.0 / config.num_states)
        return HmmModel(prior, transition, observation)
    grid = make_grid(config)
    start = initial_clusters(grid, config.population)
    prior = start.counts / config.population
    return HmmModel(
        prior,
        grid_transition(grid, LogLinearWeights()),
        sensor_observation(grid, config.decay),
    )


def simulate(
    config: ScenarioConfig, trial: int
) -> tuple[HmmModel, np.ndarray, list[AggregateObservation]]:
    """Model plus sampled data for one trial: (model, true counts, y_1..y_T).

    The model parameters, the initial placement, and the trajectory use
    separate seed substreams, so e.g. regenerating the model never shifts
    the sampled paths.
    """
    model = scenario_model(config, trial)
    if config.kind == KIND_RANDOM_HMM:
        init_rng = pinned_generator(config.seed, trial, TAG_INIT)
        counts = init_rng.multinomial(config.population, model.prior)
        start = PopulationState(counts, config.population)
    else:
        start = initial_clusters(make_grid(config), config.population)
    hidden, observations = sample_population(
        start,
        model.transition,
        model.observation,
        config.horizon,
        config.population,
        pinned_generator(config.seed, trial, TAG_PATH),
    )
    return model, hidden, observations

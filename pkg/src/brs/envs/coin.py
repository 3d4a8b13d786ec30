"""3x3 toroidal Coin Game with two players and one colored coin.

Rules: both players move simultaneously (up/down/left/right with wraparound).
A player landing on the coin collects it for +1; if the coin's color belongs
to the other player, that other player loses 2. Both players may collect the
same coin on the same tick, in which case every applicable effect applies.
After any pickup a new coin spawns uniformly over cells not occupied by
either player, colored opposite to the collector (so stolen coins are
followed by another coin of the victim's color); a simultaneous pickup
spawns the color opposite the collected coin.

The scalar environment is the reference semantics; the vectorized one is the
training workhorse. Both consume randomness through identical arithmetic
(uniform -> index among ascending free cells), so a batch of one replays the
scalar path draw for draw.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..core import GameSpec
from ..errors import ConfigError

RED, BLUE = 0, 1
UP, DOWN, LEFT, RIGHT = 0, 1, 2, 3
ACTION_NAMES = ("up", "down", "left", "right")
# fallback preference when no strictly shortest move is available
_ACTION_ORDER = (LEFT, RIGHT, UP, DOWN)

_ROW_DELTA = np.array([-1, 1, 0, 0])
_COL_DELTA = np.array([0, 0, -1, 1])


def move(pos, action, grid: int = 3):
    """Apply an action to a cell index (or array of them) on the torus."""
    row, col = pos // grid, pos % grid
    row = (row + _ROW_DELTA[action]) % grid
    col = (col + _COL_DELTA[action]) % grid
    return row * grid + col


def toroidal_distance(a, b, grid: int = 3):
    dr = np.abs(a // grid - b // grid)
    dc = np.abs(a % grid - b % grid)
    return np.minimum(dr, grid - dr) + np.minimum(dc, grid - dc)


@dataclass(frozen=True)
class CoinState:
    red_pos: int
    blue_pos: int
    coin_pos: int
    coin_color: int
    t: int = 0
    grid: int = 3


@dataclass(frozen=True)
class CoinEvent:
    """Pickup flags for one step, indexed (red, blue)."""

    picked_own: tuple[bool, bool]
    picked_other: tuple[bool, bool]

    def no_pickup(self, player: int) -> bool:
        return not (self.picked_own[player] or self.picked_other[player])

    def to_jsonable(self) -> dict:
        return {"picked_own": list(self.picked_own),
                "picked_other": list(self.picked_other)}


def _nth_free_cell(idx, occupied_low, occupied_high):
    """idx-th cell in ascending order skipping two occupied cells (low <= high)."""
    cell = idx
    cell = cell + (cell >= occupied_low)
    distinct = occupied_low != occupied_high
    cell = cell + (distinct & (cell >= occupied_high))
    return cell


def _spawn_coin(u, pos_a, pos_b, grid: int):
    low = np.minimum(pos_a, pos_b)
    high = np.maximum(pos_a, pos_b)
    n_free = grid * grid - 1 - (low != high)
    idx = np.minimum((u * n_free).astype(np.int64), n_free - 1)
    return _nth_free_cell(idx, low, high)


def coin_reset(rng: np.random.Generator, grid: int = 3) -> CoinState:
    """Players on distinct uniform cells; coin on a third cell, color uniform."""
    cells = grid * grid
    red = min(int(rng.random() * cells), cells - 1)
    blue_idx = min(int(rng.random() * (cells - 1)), cells - 2)
    blue = blue_idx + (blue_idx >= red)
    coin = int(_spawn_coin(np.float64(rng.random()), red, blue, grid))
    color = RED if rng.random() < 0.5 else BLUE
    return CoinState(red, blue, coin, color, t=0, grid=grid)


def coin_step(state: CoinState, action_pair: tuple[int, int],
              rng: np.random.Generator):
    """One simultaneous move; returns (rewards, event, next_state)."""
    a_red, a_blue = action_pair
    if not (0 <= a_red < 4 and 0 <= a_blue < 4):
        raise ConfigError(f"invalid action pair {action_pair}")
    grid = state.grid
    red = int(move(state.red_pos, a_red, grid))
    blue = int(move(state.blue_pos, a_blue, grid))
    red_pick = red == state.coin_pos
    blue_pick = blue == state.coin_pos
    r_red = float(red_pick) - 2.0 * (blue_pick and state.coin_color == RED)
    r_blue = float(blue_pick) - 2.0 * (red_pick and state.coin_color == BLUE)
    event = CoinEvent(
        picked_own=(red_pick and state.coin_color == RED,
                    blue_pick and state.coin_color == BLUE),
        picked_other=(red_pick and state.coin_color == BLUE,
                      blue_pick and state.coin_color == RED),
    )
    coin_pos, coin_color = state.coin_pos, state.coin_color
    if red_pick or blue_pick:
        coin_pos = int(_spawn_coin(np.float64(rng.random()), red, blue, grid))
        coin_color = _respawn_color(red_pick, blue_pick, state.coin_color)
    next_state = CoinState(red, blue, coin_pos, coin_color, state.t + 1, grid)
    return (r_red, r_blue), event, next_state


def _respawn_color(red_pick, blue_pick, old_color):
    if red_pick and blue_pick:
        return 1 - old_color
    return BLUE if red_pick else RED


def encode_observation(state: CoinState, player: int) -> np.ndarray:
    """Four flattened 3x3 channels: self, other, self-color coin, other-color coin."""
    cells = state.grid * state.grid
    obs = np.zeros(4 * cells)
    if player == 0:
        self_pos, other_pos, own_color = state.red_pos, state.blue_pos, RED
    else:
        self_pos, other_pos, own_color = state.blue_pos, state.red_pos, BLUE
    obs[self_pos] = 1.0
    obs[cells + other_pos] = 1.0
    channel = 2 if state.coin_color == own_color else 3
    obs[channel * cells + state.coin_pos] = 1.0
    return obs


class CoinEnv:
    """Scalar Coin Game in the shared environment protocol."""

    def __init__(self, episode_length: int = 50, discount: float = 0.96,
                 grid: int = 3):
        self.grid = grid
        self.spec = GameSpec(num_actions=4, episode_length=episode_length,
                             discount=discount, obs_dim=4 * grid * grid)

    def reset(self, rng):
        state = coin_reset(rng, self.grid)
        return state, (encode_observation(state, 0), encode_observation(state, 1))

    def step(self, state, a, b, rng):
        rewards, event, state = coin_step(state, (a, b), rng)
        return state, (encode_observation(state, 0),
                       encode_observation(state, 1)), rewards, event


# -- shortest paths ----------------------------------------------------------------


def _axis_direction(delta: int, grid: int, forward: int, backward: int):
    """Minimal-direction action along one axis, or None if already aligned."""
    if delta == 0:
        return None
    fwd, back = delta, grid - delta
    if fwd < back:
        return forward
    if back < fwd:
        return backward
    # even-grid tie: keep the fixed order (LEFT before RIGHT, UP before DOWN)
    return backward if backward in (LEFT, UP) else forward


def shortest_path_action(from_pos: int, to_pos: int,
                         forbidden_target: int | None = None,
                         grid: int = 3) -> int:
    """An action on a minimal toroidal path, never landing on the forbidden cell.

    Horizontal moves are preferred over vertical ones. When every shortest
    move is forbidden (or from == to, where standing still is impossible),
    the first non-forbidden action in the fixed order LEFT, RIGHT, UP, DOWN
    is returned.
    """
    dcol = (to_pos % grid - from_pos % grid) % grid
    drow = (to_pos // grid - from_pos // grid) % grid
    candidates = []
    h = _axis_direction(dcol, grid, RIGHT, LEFT)
    v = _axis_direction(drow, grid, DOWN, UP)
    if h is not None:
        candidates.append(h)
    if v is not None:
        candidates.append(v)
    for action in candidates:
        if forbidden_target is None or int(move(from_pos, action, grid)) != forbidden_target:
            return action
    for action in _ACTION_ORDER:
        if forbidden_target is None or int(move(from_pos, action, grid)) != forbidden_target:
            return action
    return _ACTION_ORDER[0]


def shortest_path_action_vec(from_pos: np.ndarray, to_pos: np.ndarray,
                             forbidden_target: np.ndarray | None = None,
                             grid: int = 3) -> np.ndarray:
    """Vectorized twin of shortest_path_action (same tie-breaking)."""
    dcol = (to_pos % grid - from_pos % grid) % grid
    drow = (to_pos // grid - from_pos // grid) % grid
    h_act = np.where(dcol <= grid - dcol, RIGHT, LEFT)
    if grid % 2 == 0:
        h_act = np.where(dcol * 2 == grid, LEFT, h_act)
    v_act = np.where(drow <= grid - drow, DOWN, UP)
    if grid % 2 == 0:
        v_act = np.where(drow * 2 == grid, UP, v_act)

    def allowed(action):
        if forbidden_target is None:
            return np.ones_like(from_pos, dtype=bool)
        return move(from_pos, action, grid) != forbidden_target

    out = np.full(from_pos.shape, -1, dtype=np.int64)
    take_h = (dcol != 0) & allowed(h_act)
    out = np.where(take_h, h_act, out)
    take_v = (out < 0) & (drow != 0) & allowed(v_act)
    out = np.where(take_v, v_act, out)
    for action in _ACTION_ORDER:
        fill = (out < 0) & allowed(np.full_like(from_pos, action))
        out = np.where(fill, action, out)
    return np.where(out < 0, _ACTION_ORDER[0], out)


# -- vectorized environment -----------------------------------------------------------


@dataclass
class CoinVecState:
    red_pos: np.ndarray
    blue_pos: np.ndarray
    coin_pos: np.ndarray
    coin_color: np.ndarray
    t: int = 0
    grid: int = 3

    @property
    def batch(self) -> int:
        return len(self.red_pos)

    def copy(self) -> "CoinVecState":
        return CoinVecState(self.red_pos.copy(), self.blue_pos.copy(),
                            self.coin_pos.copy(), self.coin_color.copy(),
                            self.t, self.grid)

    def tile(self, k: int) -> "CoinVecState":
        """Repeat each episode k times (row-major: episode index varies slowest)."""
        return CoinVecState(np.repeat(self.red_pos, k), np.repeat(self.blue_pos, k),
                            np.repeat(self.coin_pos, k), np.repeat(self.coin_color, k),
                            self.t, self.grid)


class CoinVecEnv:
    """Batched Coin Game over integer arrays."""

    def __init__(self, episode_length: int = 50, discount: float = 0.96,
                 grid: int = 3):
        self.grid = grid
        self.spec = GameSpec(num_actions=4, episode_length=episode_length,
                             discount=discount, obs_dim=4 * grid * grid)

    def reset(self, batch: int, rng: np.random.Generator) -> CoinVecState:
        cells = self.grid * self.grid
        red = np.minimum((rng.random(batch) * cells).astype(np.int64), cells - 1)
        blue_idx = np.minimum((rng.random(batch) * (cells - 1)).astype(np.int64),
                              cells - 2)
        blue = blue_idx + (blue_idx >= red)
        coin = _spawn_coin(rng.random(batch), red, blue, self.grid)
        color = np.where(rng.random(batch) < 0.5, RED, BLUE).astype(np.int64)
        return CoinVecState(red, blue, coin, color, t=0, grid=self.grid)

    def step(self, state: CoinVecState, a_red: np.ndarray, a_blue: np.ndarray,
             rng: np.random.Generator):
        grid = state.grid
        red = move(state.red_pos, a_red, grid)
        blue = move(state.blue_pos, a_blue, grid)
        red_pick = red == state.coin_pos
        blue_pick = blue == state.coin_pos
        r_red = red_pick - 2.0 * (blue_pick & (state.coin_color == RED))
        r_blue = blue_pick - 2.0 * (red_pick & (state.coin_color == BLUE))
        picked = red_pick | blue_pick
        coin_pos = state.coin_pos.copy()
        spawned = np.where(red_pick & blue_pick, 1 - state.coin_color,
                           np.where(red_pick, BLUE, RED))
        coin_color = np.where(picked, spawned, state.coin_color)
        n_picked = int(picked.sum())
        if n_picked:
            u = rng.random(n_picked)
            rows = np.where(picked)[0]
            coin_pos[rows] = _spawn_coin(u, red[rows], blue[rows], grid)
        events = {
            "picked_own": np.stack([red_pick & (state.coin_color == RED),
                                    blue_pick & (state.coin_color == BLUE)], axis=1),
            "picked_other": np.stack([red_pick & (state.coin_color == BLUE),
                                      blue_pick & (state.coin_color == RED)], axis=1),
        }
        next_state = CoinVecState(red, blue, coin_pos, coin_color, state.t + 1, grid)
        return next_state, r_red.astype(np.float64), r_blue.astype(np.float64), events

    def tile_state(self, state: CoinVecState, k: int) -> CoinVecState:
        return state.tile(k)

    def observe(self, state: CoinVecState, player: int) -> np.ndarray:
        cells = state.grid * state.grid
        batch = state.batch
        obs = np.zeros((batch, 4 * cells))
        rows = np.arange(batch)
        if player == 0:
            self_pos, other_pos, own_color = state.red_pos, state.blue_pos, RED
        else:
            self_pos, other_pos, own_color = state.blue_pos, state.red_pos, BLUE
        obs[rows, self_pos] = 1.0
        obs[rows, cells + other_pos] = 1.0
        channel = np.where(state.coin_color == own_color, 2, 3)
        obs[rows, channel * cells + state.coin_pos] = 1.0
        return obs

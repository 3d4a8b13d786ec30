"""Coin Game environment checks against independent reference implementations."""

import itertools

import numpy as np
import pytest

from brs.envs import coin
from brs.envs.coin import (BLUE, DOWN, LEFT, RED, RIGHT, UP, CoinState,
                           CoinVecEnv, coin_reset, coin_step,
                           encode_observation, move, shortest_path_action,
                           shortest_path_action_vec, toroidal_distance)
from brs.errors import ConfigError


class FakeRng:
    """Replays a preset queue of uniforms (mimics Generator.random)."""

    def __init__(self, values):
        self.values = list(values)

    def random(self, size=None):
        if size is None:
            return self.values.pop(0)
        out = np.array([self.values.pop(0) for _ in range(int(size))])
        return out


# -- reference single-step implementation (independent oracle) --------------------


def reference_step(state: CoinState, a_red, a_blue, spawn_u):
    """Dead-simple dict/loop implementation of one Coin Game step."""
    def ref_move(pos, action):
        row, col = divmod(pos, 3)
        if action == UP:
            row = (row - 1) % 3
        elif action == DOWN:
            row = (row + 1) % 3
        elif action == LEFT:
            col = (col - 1) % 3
        else:
            col = (col + 1) % 3
        return row * 3 + col

    red = ref_move(state.red_pos, a_red)
    blue = ref_move(state.blue_pos, a_blue)
    red_pick = red == state.coin_pos
    blue_pick = blue == state.coin_pos
    r_red, r_blue = 0.0, 0.0
    if red_pick:
        r_red += 1.0
        if state.coin_color == BLUE:
            r_blue -= 2.0
    if blue_pick:
        r_blue += 1.0
        if state.coin_color == RED:
            r_red -= 2.0
    coin_pos, coin_color = state.coin_pos, state.coin_color
    if red_pick or blue_pick:
        free = sorted(c for c in range(9) if c not in (red, blue))
        coin_pos = free[min(int(spawn_u * len(free)), len(free) - 1)]
        if red_pick and blue_pick:
            coin_color = 1 - state.coin_color
        elif red_pick:
            coin_color = BLUE
        else:
            coin_color = RED
    return (r_red, r_blue), (red, blue, coin_pos, coin_color)


def all_states():
    for red, blue, coin_pos, color in itertools.product(range(9), range(9),
                                                        range(9), (RED, BLUE)):
        if coin_pos in (red, blue):
            continue
        yield CoinState(red, blue, coin_pos, color)


def test_exhaustive_single_step_against_reference():
    spawn_u = 0.37
    checked = 0
    for state in all_states():
        for a_red, a_blue in itertools.product(range(4), range(4)):
            want_rewards, want_state = reference_step(state, a_red, a_blue, spawn_u)
            rewards, event, got = coin_step(state, (a_red, a_blue),
                                            FakeRng([spawn_u, spawn_u]))
            assert rewards == want_rewards
            assert (got.red_pos, got.blue_pos, got.coin_pos, got.coin_color) == want_state
            # reward conservation per pickup rules
            total = rewards[0] + rewards[1]
            assert total in (0.0, 1.0, -1.0, 2.0, -2.0)
            for player in (0, 1):
                assert not (event.picked_own[player] and event.picked_other[player])
            checked += 1
    assert checked == 9 * (8 * 7 + 8) * 2 * 16  # all states x joint actions


def test_step_examples_from_rules():
    # red adjacent to a red coin and moves onto it; blue far away
    state = CoinState(red_pos=0, blue_pos=8, coin_pos=1, coin_color=RED)
    rewards, event, _ = coin_step(state, (RIGHT, UP), FakeRng([0.5]))
    assert rewards == (1.0, 0.0)
    assert event.picked_own == (True, False)

    # red picks the blue coin: +1 for red, -2 for blue
    state = CoinState(red_pos=0, blue_pos=8, coin_pos=1, coin_color=BLUE)
    rewards, event, _ = coin_step(state, (RIGHT, UP), FakeRng([0.5]))
    assert rewards == (1.0, -2.0)
    assert event.picked_other == (True, False)

    # both land on a red coin simultaneously: red nets -1, blue +1
    state = CoinState(red_pos=0, blue_pos=2, coin_pos=1, coin_color=RED)
    rewards, event, _ = coin_step(state, (RIGHT, LEFT), FakeRng([0.5]))
    assert rewards == (-1.0, 1.0)
    assert event.picked_own == (True, False)
    assert event.picked_other == (False, True)


def test_invalid_action_is_config_error():
    state = CoinState(0, 1, 2, RED)
    with pytest.raises(ConfigError):
        coin_step(state, (7, 0), FakeRng([0.5]))


def test_spawned_coin_color_is_opposite_of_collector():
    rng = np.random.default_rng(0)
    for coin_color in (RED, BLUE):
        state = CoinState(red_pos=0, blue_pos=8, coin_pos=1, coin_color=coin_color)
        for _ in range(100):
            rewards, event, nxt = coin_step(state, (RIGHT, UP), rng)
            assert nxt.coin_color == BLUE  # red collected, next belongs to blue
            assert nxt.coin_pos not in (nxt.red_pos, nxt.blue_pos)
    # simultaneous pickup alternates the collected color
    state = CoinState(red_pos=0, blue_pos=2, coin_pos=1, coin_color=RED)
    _, _, nxt = coin_step(state, (RIGHT, LEFT), rng)
    assert nxt.coin_color == BLUE
    state = CoinState(red_pos=0, blue_pos=2, coin_pos=1, coin_color=BLUE)
    _, _, nxt = coin_step(state, (RIGHT, LEFT), rng)
    assert nxt.coin_color == RED


# -- reset ---------------------------------------------------------------------------


def test_reset_deterministic_given_seed():
    s1 = coin_reset(np.random.default_rng(9))
    s2 = coin_reset(np.random.default_rng(9))
    assert s1 == s2


def test_reset_constraints_and_color_frequency():
    rng = np.random.default_rng(1)
    env = CoinVecEnv()
    state = env.reset(100_000, rng)
    assert np.all(state.red_pos != state.blue_pos)
    assert np.all(state.coin_pos != state.red_pos)
    assert np.all(state.coin_pos != state.blue_pos)
    freq = (state.coin_color == RED).mean()
    assert abs(freq - 0.5) < 0.01
    # uniform positions: each cell frequency ~ 1/9
    counts = np.bincount(state.red_pos, minlength=9) / len(state.red_pos)
    assert np.all(np.abs(counts - 1 / 9) < 0.01)


# -- observations ----------------------------------------------------------------------


def test_observation_channels():
    state = CoinState(red_pos=3, blue_pos=7, coin_pos=5, coin_color=BLUE)
    obs_red = encode_observation(state, 0)
    assert obs_red[3] == 1.0 and obs_red[:9].sum() == 1.0
    assert obs_red[9 + 7] == 1.0 and obs_red[9:18].sum() == 1.0
    assert obs_red[18:27].sum() == 0.0  # blue coin is not red's color
    assert obs_red[27 + 5] == 1.0


def test_observation_perspective_swap():
    # player 2's encoding of s equals player 1's encoding of the role-swapped state
    rng = np.random.default_rng(4)
    for _ in range(200):
        state = coin_reset(rng)
        swapped = CoinState(state.blue_pos, state.red_pos, state.coin_pos,
                            1 - state.coin_color, state.t)
        assert np.array_equal(encode_observation(state, 1),
                              encode_observation(swapped, 0))


def test_vec_observation_matches_scalar():
    rng = np.random.default_rng(2)
    env = CoinVecEnv()
    state = env.reset(64, rng)
    for player in (0, 1):
        got = env.observe(state, player)
        for i in range(64):
            scalar = CoinState(int(state.red_pos[i]), int(state.blue_pos[i]),
                               int(state.coin_pos[i]), int(state.coin_color[i]))
            assert np.array_equal(got[i], encode_observation(scalar, player))


# -- scalar/vector equivalence ------------------------------------------------------------


def test_vec_step_matches_scalar_step_exactly():
    rng = np.random.default_rng(8)
    env = CoinVecEnv()
    n = 256
    state = env.reset(n, rng)
    for _ in range(20):
        a_red = rng.integers(0, 4, size=n)
        a_blue = rng.integers(0, 4, size=n)
        uniforms = rng.random(n)  # shared spawn draws
        # scalar path, feeding the same uniform per picked row
        scalar_next = []
        scalar_rewards = []
        for i in range(n):
            s = CoinState(int(state.red_pos[i]), int(state.blue_pos[i]),
                          int(state.coin_pos[i]), int(state.coin_color[i]))
            rewards, _, nxt = coin_step(s, (int(a_red[i]), int(a_blue[i])),
                                        FakeRng([uniforms[i]]))
            scalar_next.append(nxt)
            scalar_rewards.append(rewards)
        # vector path with the matching uniforms for picked rows
        new_red = move(state.red_pos, a_red)
        new_blue = move(state.blue_pos, a_blue)
        picked = (new_red == state.coin_pos) | (new_blue == state.coin_pos)
        vec_rng = FakeRng(uniforms[picked])
        next_state, r_red, r_blue, _ = env.step(state, a_red, a_blue, vec_rng)
        for i in range(n):
            assert (r_red[i], r_blue[i]) == scalar_rewards[i]
            assert next_state.red_pos[i] == scalar_next[i].red_pos
            assert next_state.blue_pos[i] == scalar_next[i].blue_pos
            assert next_state.coin_pos[i] == scalar_next[i].coin_pos
            assert next_state.coin_color[i] == scalar_next[i].coin_color
        state = next_state


def test_vec_batch_of_one_matches_scalar_stream():
    env = CoinVecEnv()
    scalar_rng = np.random.default_rng(77)
    vec_rng = np.random.default_rng(77)
    s_scalar = coin_reset(scalar_rng)
    s_vec = env.reset(1, vec_rng)
    assert (s_scalar.red_pos, s_scalar.blue_pos, s_scalar.coin_pos,
            s_scalar.coin_color) == (s_vec.red_pos[0], s_vec.blue_pos[0],
                                     s_vec.coin_pos[0], s_vec.coin_color[0])
    action_rng = np.random.default_rng(5)
    for _ in range(50):
        a, b = action_rng.integers(0, 4, size=2)
        (r1, r2), _, s_scalar = coin_step(s_scalar, (a, b), scalar_rng)
        s_vec, vr1, vr2, _ = env.step(s_vec, np.array([a]), np.array([b]), vec_rng)
        assert (r1, r2) == (vr1[0], vr2[0])
        assert s_scalar.red_pos == s_vec.red_pos[0]
        assert s_scalar.coin_pos == s_vec.coin_pos[0]
        assert s_scalar.coin_color == s_vec.coin_color[0]


# -- shortest paths ---------------------------------------------------------------------------


def bfs_distance(start, goal, grid=3):
    from collections import deque
    if start == goal:
        return 0
    seen = {start}
    queue = deque([(start, 0)])
    while queue:
        pos, d = queue.popleft()
        for action in range(4):
            nxt = int(move(pos, action, grid))
            if nxt == goal:
                return d + 1
            if nxt not in seen:
                seen.add(nxt)
                queue.append((nxt, d + 1))
    raise AssertionError("unreachable")


def test_shortest_path_wraparound_example():
    # (0,0) -> (0,2): one step LEFT via wrap
    assert shortest_path_action(0, 2) == LEFT


def test_shortest_path_degenerate_same_cell():
    # standing still impossible: first action in fixed order (LEFT)
    assert shortest_path_action(4, 4) == LEFT
    # ... unless that lands on a forbidden cell
    assert shortest_path_action(4, 4, forbidden_target=int(move(4, LEFT))) == RIGHT


def test_shortest_path_reduces_bfs_distance():
    rng = np.random.default_rng(12)
    for _ in range(10_000):
        a, b = rng.integers(0, 9, size=2)
        if a == b:
            continue
        action = shortest_path_action(int(a), int(b))
        landed = int(move(int(a), action))
        assert bfs_distance(landed, int(b)) == bfs_distance(int(a), int(b)) - 1


def test_shortest_path_never_steps_on_forbidden():
    rng = np.random.default_rng(13)
    for _ in range(5000):
        a, b = rng.integers(0, 9, size=2)
        action = shortest_path_action(int(a), int(b), forbidden_target=int(b))
        assert int(move(int(a), action)) != int(b)


def test_vec_shortest_path_matches_scalar():
    rng = np.random.default_rng(14)
    frm = rng.integers(0, 9, size=10_000)
    to = rng.integers(0, 9, size=10_000)
    forb = rng.integers(0, 9, size=10_000)
    got = shortest_path_action_vec(frm, to)
    got_forb = shortest_path_action_vec(frm, to, forb)
    for i in range(len(frm)):
        assert got[i] == shortest_path_action(int(frm[i]), int(to[i]))
        assert got_forb[i] == shortest_path_action(int(frm[i]), int(to[i]),
                                                   forbidden_target=int(forb[i]))


def test_toroidal_distance_table():
    assert toroidal_distance(0, 2) == 1
    assert toroidal_distance(0, 8) == 2
    assert toroidal_distance(0, 4) == 2
    assert toroidal_distance(3, 3) == 0

"""Replay buffer, epsilon schedule, action selection, DDQN targets, and the
training loop driven end to end through the tabular chain environment."""

import csv
import math

import numpy as np
import pytest

from formation_ddqn.learner import (
    EpsilonSchedule,
    ReplayBuffer,
    ReplayNotReady,
    RobotTrainingEnv,
    Transition,
    TrainConfig,
    ddqn_targets,
    default_world_config,
    epsilon_at,
    select_action,
    train,
)
from formation_ddqn.network import forward, init_network
from formation_ddqn.rewards import keep_reward, reach_reward, state_only_reward
from formation_ddqn.tabular import ChainEnv
from formation_ddqn import world as W


def make_transition(reward=0.0, action=0, terminal=False, fill=0.0):
    s = np.full(8, fill)
    return Transition(s, action, reward, s + 1.0, terminal)


class TestReplayBuffer:
    def test_capacity_must_be_positive(self):
        with pytest.raises(ValueError):
            ReplayBuffer(0)

    def test_push_and_size(self):
        buf = ReplayBuffer(4)
        assert buf.size == 0
        buf.push(make_transition())
        assert buf.size == 1
        for _ in range(10):
            buf.push(make_transition())
        assert buf.size == 4  # saturates at capacity

    def test_push_rejects_wrong_shape(self):
        buf = ReplayBuffer(4)
        bad = Transition(np.zeros(7), 0, 0.0, np.zeros(8), False)
        with pytest.raises(ValueError):
            buf.push(bad)

    def test_push_rejects_non_finite(self):
        buf = ReplayBuffer(4)
        s = np.zeros(8)
        with pytest.raises(ValueError):
            buf.push(Transition(s, 0, math.nan, s, False))
        nan_state = s.copy()
        nan_state[3] = math.inf
        with pytest.raises(ValueError):
            buf.push(Transition(nan_state, 0, 0.0, s, False))

    def test_fifo_eviction(self):
        buf = ReplayBuffer(5)
        for k in range(9):
            buf.push(make_transition(reward=float(k)))
        kept = [t.reward for t in buf.snapshot()]
        assert kept == [4.0, 5.0, 6.0, 7.0, 8.0]

    def test_snapshot_before_wrap_is_insertion_order(self):
        buf = ReplayBuffer(10)
        for k in range(3):
            buf.push(make_transition(reward=float(k)))
        assert [t.reward for t in buf.snapshot()] == [0.0, 1.0, 2.0]

    def test_sample_requires_enough_transitions(self):
        buf = ReplayBuffer(10)
        buf.push(make_transition())
        with pytest.raises(ReplayNotReady):
            buf.sample(2, np.random.default_rng(0))

    def test_sample_arrays_are_copies(self):
        buf = ReplayBuffer(4)
        for k in range(4):
            buf.push(make_transition(reward=float(k)))
        states, actions, rewards, next_states, terminals = buf.sample_arrays(
            4, np.random.default_rng(0))
        states[:] = 99.0
        rewards[:] = 99.0
        assert not np.any(buf.states == 99.0)
        assert not np.any(buf.rewards == 99.0)

    def test_sampling_is_uniform(self):
        # 4000 batches of 64 from a full 128-slot buffer: 256000 index draws,
        # expected 2000 per slot. The chi-square statistic over 128 cells has
        # mean 127 and std ~16, so 220 is a generous deterministic-seed bound.
        buf = ReplayBuffer(128)
        for k in range(128):
            buf.push(make_transition(reward=float(k)))
        rng = np.random.default_rng(7)
        counts = np.zeros(128)
        for _ in range(4000):
            idx = buf.sample_indices(64, rng)
            np.add.at(counts, idx, 1)
        expected = 256000 / 128
        chi2 = float(((counts - expected) ** 2 / expected).sum())
        assert counts.min() > 0
        assert chi2 < 220.0

    def test_sample_reads_live_slots_only(self):
        buf = ReplayBuffer(100)
        for k in range(10):
            buf.push(make_transition(reward=float(k)))
        rng = np.random.default_rng(1)
        for _ in range(50):
            for t in buf.sample(10, rng):
                assert 0.0 <= t.reward <= 9.0


class TestEpsilonSchedule:
    def test_examples(self):
        sched = EpsilonSchedule()
        assert epsilon_at(sched, 0) == 1.0
        assert epsilon_at(sched, 1) == 0.9975
        assert epsilon_at(sched, 2) == 0.9975 ** 2
        assert epsilon_at(sched, 10_000) == 0.05

    def test_floor_crossing(self):
        # 0.9975^1196 = 0.05011 > floor, 0.9975^1197 = 0.04998 < floor
        sched = EpsilonSchedule()
        assert epsilon_at(sched, 1196) > 0.05
        assert epsilon_at(sched, 1197) == 0.05

    def test_monotone_nonincreasing(self):
        sched = EpsilonSchedule()
        values = [epsilon_at(sched, i) for i in range(2000)]
        assert all(a >= b for a, b in zip(values, values[1:]))
        assert min(values) >= sched.floor

    def test_validation(self):
        with pytest.raises(ValueError):
            EpsilonSchedule(start=0.5, floor=0.6)
        with pytest.raises(ValueError):
            EpsilonSchedule(decay=0.0)
        with pytest.raises(ValueError):
            EpsilonSchedule(decay=1.1)
        with pytest.raises(ValueError):
            epsilon_at(EpsilonSchedule(), -1)

    def test_no_decay_schedule_is_allowed(self):
        sched = EpsilonSchedule(start=1.0, decay=1.0, floor=1.0)
        assert epsilon_at(sched, 500) == 1.0


class TestSelectAction:
    def test_greedy_picks_argmax(self, make_const_net, rng):
        net = make_const_net([0.0, -1.0, 3.0, 2.0, 0.0, 0.0, 0.0, 0.0])
        assert select_action(net, np.zeros(8), 0.0, rng) == 2

    def test_greedy_tie_resolves_to_lowest_index(self, make_const_net, rng):
        net = make_const_net([5.0, 5.0, 5.0, 1.0, 1.0, 1.0, 1.0, 1.0])
        assert select_action(net, np.zeros(8), 0.0, rng) == 0

    def test_epsilon_one_is_uniform(self, make_const_net):
        # 80000 draws, expected 10000 per action, sigma ~93.5; 400 is > 4 sigma
        net = make_const_net([9.0] + [0.0] * 7)
        rng = np.random.default_rng(5)
        counts = np.zeros(8)
        for _ in range(80_000):
            counts[select_action(net, np.zeros(8), 1.0, rng)] += 1
        assert np.abs(counts - 10_000).max() < 400

    def test_greedy_consumes_exactly_one_uniform(self, make_const_net):
        net = make_const_net([1.0] + [0.0] * 7)
        rng_a = np.random.default_rng(42)
        rng_b = np.random.default_rng(42)
        select_action(net, np.zeros(8), 0.0, rng_a)
        rng_b.random()
        assert rng_a.random() == rng_b.random()

    def test_exploring_consumes_uniform_then_integer(self, make_const_net):
        net = make_const_net([1.0] + [0.0] * 7)
        rng_a = np.random.default_rng(42)
        rng_b = np.random.default_rng(42)
        a = select_action(net, np.zeros(8), 1.0, rng_a)
        rng_b.random()
        assert a == int(rng_b.integers(0, 8))
        assert rng_a.random() == rng_b.random()

    def test_epsilon_out_of_range(self, make_const_net, rng):
        net = make_const_net([0.0] * 8)
        with pytest.raises(ValueError):
            select_action(net, np.zeros(8), -0.1, rng)
        with pytest.raises(ValueError):
            select_action(net, np.zeros(8), 1.5, rng)


class TestDdqnTargets:
    def test_hand_value(self, make_const_net):
        # online argmax is action 3; target net scores action 3 at 1.0, so
        # y = 0.5 + 0.99 * 1.0 = 1.49 regardless of the other target entries
        online = make_const_net([0, 0, 0, 2.0, 0, 0, 0, 0])
        target = make_const_net([9, 9, 9, 1.0, 9, 9, 9, 9])
        batch = [make_transition(reward=0.5)]
        y = ddqn_targets(batch, online, target, gamma=0.99)
        np.testing.assert_allclose(y, [1.49], rtol=1e-15)

    def test_terminal_rows_never_read_next_state(self, make_const_net):
        online = make_const_net([1.0] * 8)
        target = make_const_net([1.0] * 8)
        s = np.zeros(8)
        poisoned = Transition(s, 0, -2.5, np.full(8, np.nan), True)
        y = ddqn_targets([poisoned], online, target, gamma=0.99)
        np.testing.assert_array_equal(y, [-2.5])

    def test_identical_nets_reduce_to_dqn(self, rng):
        net = init_network(rng)
        batch = [Transition(np.full(8, 0.1), 2, 1.0, np.full(8, 0.2), False)]
        y = ddqn_targets(batch, net, net, gamma=0.9)
        q_next = forward(net, batch[0].next_state)
        np.testing.assert_allclose(y, [1.0 + 0.9 * q_next.max()], rtol=1e-14)

    def test_mixed_batch_keeps_row_order(self, make_const_net):
        online = make_const_net([0, 1.0, 0, 0, 0, 0, 0, 0])
        target = make_const_net([0, 2.0, 0, 0, 0, 0, 0, 0])
        batch = [
            make_transition(reward=1.0, terminal=True),
            make_transition(reward=0.0, terminal=False),
            make_transition(reward=-1.0, terminal=True),
            make_transition(reward=0.5, terminal=False),
        ]
        y = ddqn_targets(batch, online, target, gamma=0.5)
        np.testing.assert_allclose(y, [1.0, 1.0, -1.0, 1.5], rtol=1e-15)

    def test_architecture_mismatch(self, rng):
        a = init_network(rng, (8, 4, 4, 8))
        b = init_network(rng, (8, 5, 5, 8))
        with pytest.raises(ValueError):
            ddqn_targets([make_transition()], a, b, gamma=0.99)


class TestTrainConfig:
    def test_defaults_follow_training_table(self):
        cfg = TrainConfig(model_kind="keep", episodes=1)
        assert cfg.batch_size == 64
        assert cfg.gamma == 0.99
        assert cfg.lr == 0.0003
        assert cfg.max_steps_per_episode == 300
        assert cfg.replay_capacity == 200_000
        assert cfg.replay_min == 100_000
        assert cfg.target_sync_period == 1000
        assert cfg.epsilon == EpsilonSchedule(1.0, 0.9975, 0.05)

    @pytest.mark.parametrize("bad", [
        dict(model_kind="chase"),
        dict(episodes=-1),
        dict(gamma=0.0),
        dict(gamma=1.0),
        dict(lr=0.0),
        dict(batch_size=0),
        dict(batch_size=200, replay_min=100, replay_capacity=300),
        dict(replay_min=500, replay_capacity=400),
        dict(max_steps_per_episode=0),
        dict(target_sync_period=0),
        dict(loss="l2"),
        dict(switch_radius=0.0),
        dict(d_max=-1.0),
        dict(offset_min=0.0),
        dict(offset_min=0.9, offset_max=0.5),
        dict(n_obstacles=-1),
        dict(reward_kind="shaped"),
    ])
    def test_rejects_bad_fields(self, bad):
        base = dict(model_kind="keep", episodes=1)
        base.update(bad)
        with pytest.raises(ValueError):
            TrainConfig(**base)

    def test_state_only_reward_kind_is_allowed(self):
        cfg = TrainConfig(model_kind="keep", episodes=1,
                          reward_kind="state_only")
        assert cfg.reward_kind == "state_only"


def chain_factory(config):
    return ChainEnv()


def tiny_chain_config(**overrides):
    base = dict(model_kind="keep", episodes=4, rng_seed=3, batch_size=8,
                replay_capacity=200, replay_min=16,
                max_steps_per_episode=25, target_sync_period=10)
    base.update(overrides)
    return TrainConfig(**base)


class TestTrainLoop:
    def test_zero_episodes_returns_fresh_net(self):
        cfg = tiny_chain_config(episodes=0)
        net, stats = train(chain_factory, cfg)
        fresh = init_network(np.random.default_rng(cfg.rng_seed), cfg.arch)
        assert stats.episodes == []
        assert stats.gradient_steps == 0
        for w, fw in zip(net.weights, fresh.weights):
            np.testing.assert_array_equal(w, fw)

    def test_no_gradient_steps_below_replay_min(self):
        cfg = tiny_chain_config(episodes=2, max_steps_per_episode=5,
                                replay_min=100, batch_size=8)
        net, stats = train(chain_factory, cfg)
        assert stats.gradient_steps == 0
        fresh = init_network(np.random.default_rng(cfg.rng_seed), cfg.arch)
        for w, fw in zip(net.weights, fresh.weights):
            np.testing.assert_array_equal(w, fw)  # untouched by the loop

    def test_gradient_step_per_env_step_once_warm(self):
        cfg = tiny_chain_config()
        net, stats = train(chain_factory, cfg)
        total_steps = sum(e.steps for e in stats.episodes)
        assert total_steps > cfg.replay_min
        assert stats.gradient_steps == total_steps - cfg.replay_min + 1

    def test_seed_pins_the_whole_run(self):
        net1, stats1 = train(chain_factory, tiny_chain_config())
        net2, stats2 = train(chain_factory, tiny_chain_config())
        for w1, w2 in zip(net1.weights, net2.weights):
            np.testing.assert_array_equal(w1, w2)
        for b1, b2 in zip(net1.biases, net2.biases):
            np.testing.assert_array_equal(b1, b2)
        assert stats1.episodes == stats2.episodes

    def test_different_seed_changes_the_run(self):
        net1, _ = train(chain_factory, tiny_chain_config(rng_seed=3))
        net2, _ = train(chain_factory, tiny_chain_config(rng_seed=4))
        assert any(not np.array_equal(w1, w2)
                   for w1, w2 in zip(net1.weights, net2.weights))

    def test_episode_stats_rows(self):
        cfg = tiny_chain_config()
        _, stats = train(chain_factory, cfg)
        assert [e.episode for e in stats.episodes] == list(range(cfg.episodes))
        for e in stats.episodes:
            assert 0 < e.steps <= cfg.max_steps_per_episode
            assert e.epsilon == epsilon_at(cfg.epsilon, e.episode)
        assert len(stats.target_distances) == cfg.episodes
        # the chain env reports no target distance
        assert all(d.size == 0 for d in stats.target_distances)

    def test_terminal_cuts_episodes_short(self):
        # under pure exploration the chain hits the goal well before the cap
        cfg = tiny_chain_config(
            episodes=6, max_steps_per_episode=200,
            epsilon=EpsilonSchedule(1.0, 1.0, 1.0))
        _, stats = train(chain_factory, cfg)
        assert any(e.steps < 200 for e in stats.episodes)

    def test_stats_csv(self, tmp_path):
        path = tmp_path / "stats.csv"
        cfg = tiny_chain_config(stats_path=str(path))
        _, stats = train(chain_factory, cfg)
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        assert tuple(rows[0]) == ("episode", "return", "steps",
                                  "time_in_radius", "collisions", "epsilon")
        assert len(rows) == 1 + cfg.episodes
        for row, e in zip(rows[1:], stats.episodes):
            assert int(row[0]) == e.episode
            assert float(row[1]) == e.ep_return
            assert int(row[2]) == e.steps
            assert float(row[5]) == e.epsilon


def robot_config(**overrides):
    base = dict(model_kind="reach", episodes=1, rng_seed=0, batch_size=8,
                replay_capacity=100, replay_min=8, max_steps_per_episode=20)
    base.update(overrides)
    return TrainConfig(**base)


class TestDefaultWorlds:
    def test_reach_uses_random_walk_leader(self):
        cfg = default_world_config("reach")
        assert isinstance(cfg.leader_mode, W.RandomWalkMode)

    def test_keep_uses_circle_leader(self):
        cfg = default_world_config("keep")
        assert isinstance(cfg.leader_mode, W.CircleMode)
        assert cfg.leader_mode.radius == 0.8
        assert cfg.leader_mode.center == W.Vec2(0.0, 0.0)


class TestRobotTrainingEnv:
    def test_keep_reset_spawns_follower_on_target(self):
        env = RobotTrainingEnv(robot_config(model_kind="keep"))
        rng = np.random.default_rng(0)
        features = env.reset(rng)
        assert features.shape == (8,)
        assert env.obs.to_target.distance < 1e-12
        assert features[2] == 0.0  # normalized target distance slot
        r = W.norm(env.offset)
        assert 0.3 <= r <= 0.8
        # follower sits on the target, so the leader is one offset away
        assert abs(env.obs.to_leader.distance - r) < 1e-12

    def test_reach_reset_separates_everyone(self):
        env = RobotTrainingEnv(robot_config())
        for seed in range(5):
            env.reset(np.random.default_rng(seed))
            agents = env.world.agents
            assert len(agents) == 4  # leader, follower, two obstacles
            min_sep = min(
                W.distance(a.position, b.position)
                for i, a in enumerate(agents) for b in agents[i + 1:])
            assert min_sep >= 4 * env.world_cfg.robot_radius

    def test_offset_band_is_respected(self):
        env = RobotTrainingEnv(robot_config(offset_min=0.4, offset_max=0.5))
        rng = np.random.default_rng(2)
        for _ in range(20):
            env.reset(rng)
            assert 0.4 <= W.norm(env.offset) <= 0.5

    def test_cramped_arena_raises(self):
        world_cfg = W.WorldConfig(leader_mode=W.RandomWalkMode(),
                                  arena_half_extent=0.05)
        env = RobotTrainingEnv(robot_config(world=world_cfg))
        with pytest.raises(RuntimeError):
            env.reset(np.random.default_rng(0))

    def test_collision_is_terminal(self):
        cfg = robot_config(world=W.WorldConfig(leader_mode=W.StaticMode()))
        env = RobotTrainingEnv(cfg)
        rng = np.random.default_rng(0)
        env.reset(rng)
        agents = [
            W.AgentState(0, W.Role.LEADER, W.Vec2(-1.0, 0.0)),
            W.AgentState(1, W.Role.FOLLOWER, W.Vec2(0.0, 0.0)),
            W.AgentState(2, W.Role.OBSTACLE, W.Vec2(0.1, 0.0)),
        ]
        env.world = W.make_world(agents, env.world_cfg)
        env.obs = W.build_observation(env.world, 1, env.offset)
        # action 0 drives east 0.036 into the obstacle: gap 0.064 < 0.074
        _, _, terminal, info = env.step(0, rng)
        assert terminal
        assert info["collision"]

    def test_moving_away_does_not_collide(self):
        cfg = robot_config(world=W.WorldConfig(leader_mode=W.StaticMode()))
        env = RobotTrainingEnv(cfg)
        rng = np.random.default_rng(0)
        env.reset(rng)
        agents = [
            W.AgentState(0, W.Role.LEADER, W.Vec2(-1.0, 0.0)),
            W.AgentState(1, W.Role.FOLLOWER, W.Vec2(0.0, 0.0)),
            W.AgentState(2, W.Role.OBSTACLE, W.Vec2(0.1, 0.0)),
        ]
        env.world = W.make_world(agents, env.world_cfg)
        env.obs = W.build_observation(env.world, 1, env.offset)
        _, _, terminal, info = env.step(4, rng)  # west, away from it
        assert not terminal
        assert not info["collision"]

    def test_reward_uses_pre_step_observation(self):
        env = RobotTrainingEnv(robot_config())
        rng = np.random.default_rng(1)
        env.reset(rng)
        obs = env.obs
        expected = reach_reward([obs.to_obstacle1, obs.to_obstacle2],
                                obs.to_target, 2, env.cfg.reward).total
        _, reward, _, _ = env.step(2, rng)
        assert reward == expected

    def test_keep_reward_arm(self):
        env = RobotTrainingEnv(robot_config(model_kind="keep"))
        rng = np.random.default_rng(1)
        env.reset(rng)
        expected = keep_reward(env.obs.to_target, 5, env.cfg.reward)
        _, reward, _, _ = env.step(5, rng)
        assert reward == expected

    def test_state_only_reward_arm(self):
        env = RobotTrainingEnv(robot_config(model_kind="keep",
                                            reward_kind="state_only"))
        rng = np.random.default_rng(1)
        env.reset(rng)
        expected = state_only_reward(env.obs.to_target)
        _, reward, _, _ = env.step(3, rng)
        assert reward == expected
        assert reward <= 0.0

    def test_info_reports_post_step_distance(self):
        env = RobotTrainingEnv(robot_config())
        rng = np.random.default_rng(4)
        env.reset(rng)
        _, _, _, info = env.step(1, rng)
        assert info["target_distance"] == env.obs.to_target.distance

    def test_follower_moves_at_contract_speed(self):
        env = RobotTrainingEnv(robot_config())
        rng = np.random.default_rng(6)
        env.reset(rng)
        before = W.get_agent(env.world, 1).position
        env.step(0, rng)
        after = W.get_agent(env.world, 1).position
        moved = W.distance(before, after)
        # full step unless the arena clamp bites
        assert moved <= 0.36 * env.world_cfg.dt + 1e-12
        if abs(after[0]) < 2.5 and abs(after[1]) < 2.5:
            assert abs(moved - 0.036) < 1e-12

    def test_full_tiny_training_run(self):
        cfg = robot_config(episodes=2, replay_min=8, batch_size=8,
                           max_steps_per_episode=12)
        net, stats = train(RobotTrainingEnv, cfg)
        assert len(stats.episodes) == 2
        assert stats.gradient_steps > 0
        for d in stats.target_distances:
            assert d.ndim == 1

"""Decentralized leader-follower formation control learned with double DQN.

A 2D kinematic multi-robot world, a from-scratch dense Q-network with
numba-accelerated kernels (numpy fallback), the training loop for the
formation reaching / keeping models, and scenario evaluation tooling.
"""

from .geometry import (ACTION_ANGLES, N_ACTIONS, Vec2, action_direction,
                       angular_difference, bearing, distance, wrap_angle)
from .kernels import active_backend
from .learner import (EpsilonSchedule, ReplayBuffer, RobotTrainingEnv,
                      TrainConfig, TrainStats, Transition, ddqn_targets,
                      epsilon_at, select_action, train)
from .network import (AdamState, GradientBundle, Network, adam_step, forward,
                      forward_batch, gradient_check, init_adam, init_network,
                      load_weights, loss_and_gradients, save_weights)
from .policy import DualPolicy, Mode, follower_velocity, policy_action
from .rewards import (RewardConfig, alignment_reward, distance_reward,
                      keep_reward, obstacle_reward, reach_reward,
                      state_only_reward, target_reward)
from .scenarios import SCENARIO_NAMES, ComparisonSpec, Scenario, get_scenario
from .evaluation import (Metrics, Trace, TraceRecord, compare_rewards,
                         compute_metrics, distance_error, export_metrics,
                         export_trace, import_trace, run_scenario,
                         time_in_radius)
from .tabular import (ChainEnv, FiniteMDP, make_chain_mdp, make_qtable,
                      tabular_q_update, value_iteration)
from .world import (AgentState, CircleMode, LeaderController, Observation,
                    RandomWalkMode, Role, SquareMode, StaticMode, WorldConfig,
                    WorldState, build_observation, detect_collision,
                    make_world, nearest_obstacles, normalize_observation,
                    step_world, target_position)

__version__ = "0.1.0"

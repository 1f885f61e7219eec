from __future__ import annotations

from dataclasses import dataclass

from .errors import ContractError


@dataclass(frozen=True, slots=True)
class WorldConfig:
    """Simulation, observation and expert parameters.

    Distances are meters, angles radians, time seconds.
    """

    dt: float = 0.25
    horizon: int = 16  # plan length T (4 s)
    past_length: int = 8  # P
    num_beams: int = 30  # R
    max_range: float = 20.0
    v_max: float = 8.0
    omega_max: float = 1.5
    a_max: float = 4.0
    lookahead: float = 4.0
    cruise_speed: float = 5.0
    car_radius: float = 1.0
    goal_tolerance: float = 1.0
    route_goal_distance: float = 20.0
    replan_every: int = 4
    max_steps: int = 200

    def __post_init__(self) -> None:
        if self.dt <= 0:
            raise ContractError("dt must be positive")
        if self.horizon < 1 or self.past_length < 2 or self.num_beams < 1:
            raise ContractError("horizon >= 1, past_length >= 2, num_beams >= 1 required")
        if self.replan_every < 1:
            raise ContractError("replan_every must be >= 1")
        if self.max_steps < 0:
            raise ContractError("max_steps must be >= 0")
        if min(self.max_range, self.v_max, self.omega_max, self.a_max) <= 0:
            raise ContractError("max_range, v_max, omega_max and a_max must be positive")


@dataclass(frozen=True, slots=True)
class PlannerConfig:
    epsilon: float = 1.0  # goal tolerance of p(G|y)
    max_iters: int = 100
    learning_rate: float = 0.1
    library_size: int = 64

    def __post_init__(self) -> None:
        if self.epsilon <= 0:
            raise ContractError("epsilon must be positive")
        if self.max_iters < 0:
            raise ContractError("max_iters must be >= 0")


@dataclass(frozen=True, slots=True)
class TrainingConfig:
    epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 1e-3
    max_grad_norm: float = 10.0
    bootstrap: bool = True  # resample each member's dataset
    distinct_init: bool = True  # distinct parameter-init seed per member

    def __post_init__(self) -> None:
        if self.epochs < 0 or self.batch_size < 1:
            raise ContractError("epochs >= 0 and batch_size >= 1 required")
        if self.learning_rate <= 0:
            raise ContractError("learning_rate must be positive")

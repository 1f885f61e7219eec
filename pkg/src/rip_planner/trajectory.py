from __future__ import annotations

from collections import deque

import numpy as np

from .errors import ContractError
from .types import EgoState


class StateHistory:
    """Bounded history of ego states, most recent last."""

    def __init__(self, max_length: int, initial: EgoState | None = None):
        """
        Args:
            max_length: Number of states kept (the observation's past length P).
            initial: Optional first state.
        """
        if max_length < 1:
            raise ContractError("max_length must be >= 1")
        self._max_length = max_length
        self._states: deque[EgoState] = deque(maxlen=max_length)
        if initial is not None:
            self._states.append(initial)

    def record(self, state: EgoState) -> None:
        self._states.append(state)

    def __len__(self) -> int:
        return len(self._states)

    @property
    def latest(self) -> EgoState:
        if not self._states:
            raise ContractError("history is empty")
        return self._states[-1]

    def positions(self) -> np.ndarray:
        """(max_length, 2) world positions, the oldest repeated to fill the window."""
        if not self._states:
            raise ContractError("history is empty")
        states = list(self._states)
        padding = [states[0]] * (self._max_length - len(states))
        return np.array([s.position for s in padding + states])

    def get(self) -> list[EgoState]:
        return list(self._states)

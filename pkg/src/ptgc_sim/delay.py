"""Timestamped FIFO delay channels and round-trip delay estimation."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Generic, TypeVar

Payload = TypeVar("Payload")

ECHO_SENTINEL = -1  # "no downlink frame seen yet"


class ChannelContractError(RuntimeError):
    """now_tick went backwards across send() calls."""


@dataclass(frozen=True)
class TimestampedMessage(Generic[Payload]):
    payload: Payload
    origin_tick: int
    # newest downlink frame tick the sender had seen (commands only)
    feedback_echo_tick: int = ECHO_SENTINEL


@dataclass
class DelayChannel(Generic[Payload]):
    delay_ticks: int
    _queue: deque = field(default_factory=deque)
    _last_send_tick: int = -1

    def send(self, msg: TimestampedMessage[Payload], now_tick: int) -> None:
        if now_tick < self._last_send_tick:
            raise ChannelContractError(
                f"send at tick {now_tick} after tick {self._last_send_tick}")
        self._last_send_tick = now_tick
        self._queue.append((msg, now_tick + self.delay_ticks))

    def deliver_due(self, now_tick: int) -> list[TimestampedMessage[Payload]]:
        out: list[TimestampedMessage[Payload]] = []
        while self._queue and self._queue[0][1] <= now_tick:
            out.append(self._queue.popleft()[0])
        return out

    def __len__(self) -> int:
        return len(self._queue)


def estimate_round_trip(cmd_msg: TimestampedMessage, now_tick: int,
                        nominal_ticks: int) -> tuple[int, bool]:
    """Age of the state the operator reacted to when producing cmd_msg.

    Returns (round_trip_ticks, is_nominal). A sentinel echo falls back to the
    configured nominal delay and flags the estimate.
    """
    if cmd_msg.feedback_echo_tick == ECHO_SENTINEL:
        return nominal_ticks, True
    return now_tick - cmd_msg.feedback_echo_tick, False


def ms_to_ticks(delay_ms: float, dt_s: float) -> int:
    ticks = delay_ms / 1000.0 / dt_s
    rounded = round(ticks)
    if abs(ticks - rounded) > 1e-9:
        raise ValueError(f"delay {delay_ms} ms is not a multiple of the {dt_s * 1000:.0f} ms tick")
    return int(rounded)

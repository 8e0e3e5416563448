"""Uniform-bin quantization between continuous quantities and token ids.

One flat vocabulary covers special tokens, the four control channels,
and the three waypoint channels; each channel owns a disjoint id range,
so any token id identifies both its channel and its bin.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass

from .geometry import normalize_angle
from .sim.vehicle import ControlCommand, Gear


class MalformedSequence(ValueError):
    pass


@dataclass(frozen=True)
class BinSpec:
    min_value: float
    max_value: float
    n_bins: int

    def __post_init__(self):
        if not self.min_value < self.max_value:
            raise ValueError("min_value must be below max_value")
        if self.n_bins < 1:
            raise ValueError("n_bins must be positive")

    @property
    def width(self) -> float:
        return (self.max_value - self.min_value) / self.n_bins


def discretize(value: float, spec: BinSpec) -> int:
    """Clamp into [min, max], then floor into a half-open bin.

    value == max maps to the last bin (its upper edge is closed).
    """
    v = min(spec.max_value, max(spec.min_value, value))
    idx = int(math.floor((v - spec.min_value) * spec.n_bins
                         / (spec.max_value - spec.min_value)))
    return min(max(idx, 0), spec.n_bins - 1)


def undiscretize(index: int, spec: BinSpec) -> float:
    """Bin center of the given index."""
    if not 0 <= index < spec.n_bins:
        raise IndexError(f"bin index {index} outside [0, {spec.n_bins})")
    return spec.min_value + (index + 0.5) * spec.width


# Waypoint channels: ego-frame deltas over the next 4 control steps.
WAYPOINT_XY_SPEC = BinSpec(-6.0, 6.0, 200)
WAYPOINT_HEADING_DEG_SPEC = BinSpec(-40.0, 40.0, 200)
WAYPOINT_STEPS = 4
CONTROL_STEPS = 4


@dataclass(frozen=True)
class WaypointSeq:
    """4 future steps of (dx_m, dy_m, dpsi_deg) in the ego frame at time t."""
    deltas: tuple[tuple[float, float, float], ...]

    def __post_init__(self):
        if len(self.deltas) != WAYPOINT_STEPS:
            raise ValueError(f"expected {WAYPOINT_STEPS} steps")


class TokenVocabulary:
    """Flat token layout: PAD, BOS, EOS, then one id block per channel."""

    def __init__(self,
                 steering: BinSpec = BinSpec(-1.0, 1.0, 100),
                 throttle: BinSpec = BinSpec(0.0, 1.0, 50),
                 brake: BinSpec = BinSpec(0.0, 1.0, 50),
                 waypoint_xy: BinSpec = WAYPOINT_XY_SPEC,
                 waypoint_heading_deg: BinSpec = WAYPOINT_HEADING_DEG_SPEC):
        self.steering = steering
        self.throttle = throttle
        self.brake = brake
        self.waypoint_xy = waypoint_xy
        self.waypoint_heading_deg = waypoint_heading_deg

        self.pad, self.bos, self.eos = 0, 1, 2
        offset = 3
        self.offsets: dict[str, int] = {}
        self.sizes: dict[str, int] = {}
        for name, size in (("steering", steering.n_bins),
                           ("throttle", throttle.n_bins),
                           ("brake", brake.n_bins),
                           ("gear", 2),
                           ("wp_dx", waypoint_xy.n_bins),
                           ("wp_dy", waypoint_xy.n_bins),
                           ("wp_dpsi", waypoint_heading_deg.n_bins)):
            self.offsets[name] = offset
            self.sizes[name] = size
            offset += size
        self.vocab_size = offset

    # -- channel <-> flat id -------------------------------------------------

    def encode_channel(self, channel: str, bin_index: int) -> int:
        if not 0 <= bin_index < self.sizes[channel]:
            raise IndexError(f"bin {bin_index} outside channel {channel}")
        return self.offsets[channel] + bin_index

    def channel_of(self, token: int) -> tuple[str, int]:
        """Inverse of encode_channel; special ids report channel 'special'."""
        if token in (self.pad, self.bos, self.eos):
            return "special", token
        for name, off in self.offsets.items():
            if off <= token < off + self.sizes[name]:
                return name, token - off
        raise IndexError(f"token {token} outside vocabulary")

    def channel_slice(self, channel: str) -> slice:
        off = self.offsets[channel]
        return slice(off, off + self.sizes[channel])

    def spec_of(self, channel: str) -> BinSpec:
        return {"steering": self.steering, "throttle": self.throttle,
                "brake": self.brake, "wp_dx": self.waypoint_xy,
                "wp_dy": self.waypoint_xy,
                "wp_dpsi": self.waypoint_heading_deg}[channel]

    # -- control sequences ---------------------------------------------------

    CONTROL_CHANNELS = ("steering", "throttle", "brake", "gear")
    SEQ_LEN = 2 + CONTROL_STEPS * 4   # BOS + 4 steps x 4 channels + EOS

    def encode_command(self, cmd: ControlCommand) -> list[int]:
        cmd = cmd.clamped()
        return [
            self.encode_channel("steering", discretize(cmd.steering, self.steering)),
            self.encode_channel("throttle", discretize(cmd.throttle, self.throttle)),
            self.encode_channel("brake", discretize(cmd.brake, self.brake)),
            self.encode_channel("gear", 0 if cmd.gear is Gear.FORWARD else 1),
        ]

    def decode_command(self, tokens: list[int]) -> ControlCommand:
        vals = {}
        for tok, expected in zip(tokens, self.CONTROL_CHANNELS):
            channel, bin_idx = self.channel_of(tok)
            if channel != expected:
                raise MalformedSequence(
                    f"token {tok} is a {channel} token in a {expected} slot")
            vals[expected] = bin_idx
        return ControlCommand(
            steering=undiscretize(vals["steering"], self.steering),
            throttle=undiscretize(vals["throttle"], self.throttle),
            brake=undiscretize(vals["brake"], self.brake),
            gear=Gear.FORWARD if vals["gear"] == 0 else Gear.REVERSE,
        )

    def encode_control_sequence(self, commands: list[ControlCommand]) -> list[int]:
        if len(commands) != CONTROL_STEPS:
            raise ValueError(f"expected {CONTROL_STEPS} commands")
        seq = [self.bos]
        for cmd in commands:
            seq.extend(self.encode_command(cmd))
        seq.append(self.eos)
        return seq

    def decode_control_sequence(self, tokens: list[int]) -> list[ControlCommand]:
        if len(tokens) != self.SEQ_LEN:
            raise MalformedSequence(f"expected {self.SEQ_LEN} tokens, got {len(tokens)}")
        if tokens[0] != self.bos or tokens[-1] != self.eos:
            raise MalformedSequence("sequence must start with BOS and end with EOS")
        return [self.decode_command(tokens[1 + 4 * k: 1 + 4 * (k + 1)])
                for k in range(CONTROL_STEPS)]

    def slot_channel(self, position: int) -> str:
        """Channel expected at a body position (0-based, BOS excluded)."""
        return self.CONTROL_CHANNELS[position % 4]

    # -- waypoint tokens -----------------------------------------------------

    def encode_waypoints(self, wp: WaypointSeq) -> list[int]:
        toks = []
        for dx, dy, dpsi_deg in wp.deltas:
            toks.append(self.encode_channel("wp_dx", discretize(dx, self.waypoint_xy)))
            toks.append(self.encode_channel("wp_dy", discretize(dy, self.waypoint_xy)))
            toks.append(self.encode_channel(
                "wp_dpsi", discretize(dpsi_deg, self.waypoint_heading_deg)))
        return toks

    def decode_waypoints(self, tokens: list[int]) -> WaypointSeq:
        if len(tokens) != WAYPOINT_STEPS * 3:
            raise MalformedSequence("expected 12 waypoint tokens")
        deltas = []
        for k in range(WAYPOINT_STEPS):
            vals = []
            for tok, expected in zip(tokens[3 * k: 3 * k + 3],
                                     ("wp_dx", "wp_dy", "wp_dpsi")):
                channel, bin_idx = self.channel_of(tok)
                if channel != expected:
                    raise MalformedSequence(
                        f"token {tok} is a {channel} token in a {expected} slot")
                vals.append(undiscretize(bin_idx, self.spec_of(expected)))
            deltas.append(tuple(vals))
        return WaypointSeq(deltas=tuple(deltas))

    # -- serialization -------------------------------------------------------

    def summary(self) -> dict:
        return {
            "special": {"pad": self.pad, "bos": self.bos, "eos": self.eos},
            "channels": {
                name: {"offset": self.offsets[name], "n_bins": self.sizes[name],
                       **({"min": self.spec_of(name).min_value,
                           "max": self.spec_of(name).max_value}
                          if name != "gear" else {"values": ["forward", "reverse"]})}
                for name in self.offsets
            },
            "vocab_size": self.vocab_size,
        }

    def content_hash(self) -> int:
        blob = json.dumps(self.summary(), sort_keys=True).encode()
        return int.from_bytes(hashlib.sha256(blob).digest()[:8], "little")


# -- ego <-> global waypoint transforms ---------------------------------------

def waypoints_to_global(wp: WaypointSeq, pose: tuple[float, float, float]
                        ) -> list[tuple[float, float, float]]:
    """Rigid-body transform of ego-frame deltas into world poses."""
    x, y, psi = pose
    c, s = math.cos(psi), math.sin(psi)
    out = []
    for dx, dy, dpsi_deg in wp.deltas:
        out.append((x + dx * c - dy * s,
                    y + dx * s + dy * c,
                    normalize_angle(psi + math.radians(dpsi_deg))))
    return out


def global_to_waypoints(poses: list[tuple[float, float, float]],
                        pose: tuple[float, float, float]) -> WaypointSeq:
    """Inverse of waypoints_to_global."""
    x, y, psi = pose
    c, s = math.cos(psi), math.sin(psi)
    deltas = []
    for gx, gy, gpsi in poses:
        dx, dy = gx - x, gy - y
        deltas.append((dx * c + dy * s,
                       -dx * s + dy * c,
                       math.degrees(normalize_angle(gpsi - psi))))
    return WaypointSeq(deltas=tuple(deltas))


def goal_in_ego_frame(goal: tuple[float, float, float],
                      ego: tuple[float, float, float]
                      ) -> tuple[float, float, float]:
    """Goal pose expressed in the ego frame: (dx, dy, dpsi_rad)."""
    gx, gy, gpsi = goal
    x, y, psi = ego
    c, s = math.cos(psi), math.sin(psi)
    dx, dy = gx - x, gy - y
    return dx * c + dy * s, -dx * s + dy * c, normalize_angle(gpsi - psi)

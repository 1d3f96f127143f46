"""Controller <-> AWG instruction surface.

Legal order on the master (calibration steps in brackets)::

    StartSelfAdapt [1] -> SelfAdaptComplete [9] -> SetSwitches(RUN) [10]
        -> Run [11] -> ReportJitter [12]

``SelfAdaptComplete`` and ``ReportJitter`` travel device -> controller;
the others travel controller -> device. Calibration state lives on the
master. A slave only checks that it was switched into the run
configuration; :class:`Controller` refuses to arm slaves before the
master has reported completion.

Wire format
-----------
Every frame is ``u16 length | u8 tag | payload``, little-endian, where
``length`` counts the tag byte plus the payload.

====  ==================  ====================================================
tag   message             payload
====  ==================  ====================================================
0x01  StartSelfAdapt      (none)
0x02  SetSwitches         u8 mask: bit0 trigger, bit1 waveform, bit2 monitor,
                          bit3 self-adapt
0x03  Run                 u8 flags (bit0 uncalibrated), u64 output_delay,
                          u64 pulse_width, u64 level1_interval,
                          u32 level1_count, u64 level2_interval,
                          u32 level2_count (durations in fs)
0x04  ReadStatus          (none)
0x81  SelfAdaptComplete   u16 committed tap
0x82  ReportJitter        (none)
0x90  DeviceStatus        u8 role (0 master, 1 slave), u8 switch mask,
                          u8 flags (bit0 calibrated, bit1 jitter, bit2
                          completion, bit3 calibrating, bit4 running),
                          i16 committed tap (-1 when none)
====  ==================  ====================================================
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from typing import Iterator, Union

from .errors import ConfigurationError, ProtocolError, RoleError, SequencingError
from .trigger import TriggerConfig

ROLES = ("master", "slave")


@dataclass(frozen=True)
class Switches:
    trigger: bool = False
    waveform_output: bool = False
    monitoring: bool = False
    self_adapt: bool = False

    def __post_init__(self):
        if self.self_adapt and (self.trigger or self.waveform_output or self.monitoring):
            raise ConfigurationError("self-adapt switch excludes every other module")

    @property
    def mask(self) -> int:
        return self.trigger | self.waveform_output << 1 | self.monitoring << 2 | self.self_adapt << 3

    @classmethod
    def from_mask(cls, mask: int) -> "Switches":
        if mask & ~0xF:
            raise ProtocolError(f"reserved switch bits set: {mask:#x}")
        return cls(bool(mask & 1), bool(mask & 2), bool(mask & 4), bool(mask & 8))


ALL_OFF = Switches()
PROBE_SWITCHES = Switches(self_adapt=True)
RUN_SWITCHES = Switches(trigger=True, waveform_output=True, monitoring=True)


@dataclass(frozen=True)
class StartSelfAdapt:
    pass


@dataclass(frozen=True)
class SetSwitches:
    switches: Switches


@dataclass(frozen=True)
class Run:
    config: TriggerConfig = field(default_factory=TriggerConfig)
    uncalibrated: bool = False


@dataclass(frozen=True)
class ReadStatus:
    pass


@dataclass(frozen=True)
class SelfAdaptComplete:
    committed_tap: int


@dataclass(frozen=True)
class ReportJitter:
    pass


Command = Union[StartSelfAdapt, SetSwitches, Run, ReadStatus, SelfAdaptComplete, ReportJitter]


@dataclass(frozen=True)
class DeviceStatus:
    role: str = "slave"
    switches: Switches = ALL_OFF
    calibrated: bool = False
    jitter_flag: bool = False
    completion_flag: bool = False
    calibrating: bool = False
    running: bool = False
    committed_tap: int | None = None

    def __post_init__(self):
        if self.role not in ROLES:
            raise ConfigurationError(f"unknown device role {self.role!r}")
        if self.role == "slave" and (self.completion_flag or self.calibrated or self.calibrating):
            raise ConfigurationError("only the master carries calibration state")

    @classmethod
    def master(cls) -> "DeviceStatus":
        return cls(role="master")

    @classmethod
    def slave(cls) -> "DeviceStatus":
        return cls(role="slave")


def apply_command(status: DeviceStatus, cmd: Command) -> DeviceStatus:
    """Next device state; raises :class:`ProtocolError` for illegal transitions."""
    is_master = status.role == "master"
    if isinstance(cmd, StartSelfAdapt):
        if not is_master:
            raise RoleError("start_self_adapt targets the master only")
        return replace(status, switches=PROBE_SWITCHES, calibrating=True, calibrated=False,
                       completion_flag=False, running=False, committed_tap=None)
    if isinstance(cmd, SelfAdaptComplete):
        if not is_master:
            raise RoleError("only the master completes self-adaption")
        if not status.calibrating:
            raise SequencingError("self-adaption completion without a running self-adaption")
        return replace(status, calibrating=False, calibrated=True, completion_flag=True,
                       committed_tap=cmd.committed_tap)
    if isinstance(cmd, SetSwitches):
        if status.calibrating:
            raise SequencingError("switches are locked while self-adaption runs")
        return replace(status, switches=cmd.switches,
                       running=status.running and cmd.switches == RUN_SWITCHES)
    if isinstance(cmd, Run):
        if status.switches != RUN_SWITCHES:
            raise SequencingError("run requires the trigger, waveform and monitoring switches on "
                                  "and self-adapt off")
        if is_master and not status.calibrated and not cmd.uncalibrated:
            raise SequencingError("run before self-adaption completed")
        return replace(status, running=True)
    if isinstance(cmd, ReportJitter):
        if not (status.running and status.switches.monitoring):
            raise SequencingError("jitter report without a monitored run")
        return replace(status, jitter_flag=True)
    if isinstance(cmd, ReadStatus):
        return replace(status, jitter_flag=False)
    raise ProtocolError(f"unknown command {cmd!r}")


class Controller:
    """Serialises commands to one master and its slaves."""

    def __init__(self, master: int, slaves):
        self.master = master
        self.status: dict[int, DeviceStatus] = {master: DeviceStatus.master()}
        for s in slaves:
            self.status[s] = DeviceStatus.slave()
        self.log: list[tuple[int, Command]] = []

    def send(self, node: int, cmd: Command) -> DeviceStatus:
        self.status[node] = apply_command(self.status[node], cmd)
        self.log.append((node, cmd))
        return self.status[node]

    def read(self, node: int) -> DeviceStatus:
        """Snapshot before the read clears the jitter flag."""
        before = self.status[node]
        self.send(node, ReadStatus())
        return before

    def arm_all(self, uncalibrated: bool = False) -> None:
        if not self.status[self.master].calibrated and not uncalibrated:
            raise SequencingError("cannot arm slaves before the master reports completion")
        for node in self.status:
            self.send(node, SetSwitches(RUN_SWITCHES))

    def run_all(self, config: TriggerConfig, uncalibrated: bool = False) -> None:
        for node in self.status:
            self.send(node, Run(config, uncalibrated))


# -- wire encoding ---------------------------------------------------------

_RUN = struct.Struct("<BQQQIQI")
_STATUS = struct.Struct("<BBBh")
_U16 = struct.Struct("<H")

TAGS = {StartSelfAdapt: 0x01, SetSwitches: 0x02, Run: 0x03, ReadStatus: 0x04,
        SelfAdaptComplete: 0x81, ReportJitter: 0x82}
STATUS_TAG = 0x90


def _frame(tag: int, payload: bytes = b"") -> bytes:
    return _U16.pack(1 + len(payload)) + bytes([tag]) + payload


def encode_command(cmd: Command) -> bytes:
    tag = TAGS.get(type(cmd))
    if tag is None:
        raise ProtocolError(f"cannot encode {cmd!r}")
    if isinstance(cmd, SetSwitches):
        return _frame(tag, bytes([cmd.switches.mask]))
    if isinstance(cmd, Run):
        c = cmd.config
        return _frame(tag, _RUN.pack(int(cmd.uncalibrated), c.output_delay, c.pulse_width,
                                     c.level1_interval, c.level1_count, c.level2_interval,
                                     c.level2_count))
    if isinstance(cmd, SelfAdaptComplete):
        return _frame(tag, _U16.pack(cmd.committed_tap))
    return _frame(tag)


def encode_status(status: DeviceStatus) -> bytes:
    flags = (status.calibrated | status.jitter_flag << 1 | status.completion_flag << 2
             | status.calibrating << 3 | status.running << 4)
    tap = -1 if status.committed_tap is None else status.committed_tap
    return _frame(STATUS_TAG, _STATUS.pack(ROLES.index(status.role), status.switches.mask, flags, tap))


def split_frames(buffer: bytes) -> Iterator[bytes]:
    """Yield complete frames from a concatenated byte stream."""
    pos = 0
    while pos < len(buffer):
        if pos + 2 > len(buffer):
            raise ProtocolError("truncated length prefix")
        (length,) = _U16.unpack_from(buffer, pos)
        end = pos + 2 + length
        if length == 0 or end > len(buffer):
            raise ProtocolError("truncated or empty frame")
        yield buffer[pos:end]
        pos = end


def _unframe(frame: bytes) -> tuple[int, bytes]:
    if len(frame) < 3:
        raise ProtocolError("frame too short")
    (length,) = _U16.unpack_from(frame)
    if length != len(frame) - 2:
        raise ProtocolError(f"length prefix {length} does not match frame size {len(frame) - 2}")
    return frame[2], frame[3:]


def decode_command(frame: bytes) -> Command:
    tag, payload = _unframe(frame)
    kinds = {v: k for k, v in TAGS.items()}
    kind = kinds.get(tag)
    if kind is None:
        raise ProtocolError(f"unknown command tag {tag:#04x}")
    try:
        if kind is SetSwitches:
            (mask,) = struct.unpack("<B", payload)
            return SetSwitches(Switches.from_mask(mask))
        if kind is Run:
            flags, delay, width, l1i, l1c, l2i, l2c = _RUN.unpack(payload)
            return Run(TriggerConfig(delay, width, l1i, l1c, l2i, l2c), bool(flags & 1))
        if kind is SelfAdaptComplete:
            (tap,) = _U16.unpack(payload)
            return SelfAdaptComplete(tap)
    except (struct.error, ConfigurationError) as exc:
        raise ProtocolError(f"bad payload for tag {tag:#04x}: {exc}") from None
    if payload:
        raise ProtocolError(f"tag {tag:#04x} carries no payload")
    return kind()


def decode_status(frame: bytes) -> DeviceStatus:
    tag, payload = _unframe(frame)
    if tag != STATUS_TAG:
        raise ProtocolError(f"not a status frame: tag {tag:#04x}")
    try:
        role, mask, flags, tap = _STATUS.unpack(payload)
        return DeviceStatus(
            role=ROLES[role],
            switches=Switches.from_mask(mask),
            calibrated=bool(flags & 1),
            jitter_flag=bool(flags & 2),
            completion_flag=bool(flags & 4),
            calibrating=bool(flags & 8),
            running=bool(flags & 16),
            committed_tap=None if tap < 0 else tap,
        )
    except (struct.error, IndexError, ConfigurationError) as exc:
        raise ProtocolError(f"bad status payload: {exc}") from None

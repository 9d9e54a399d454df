"""Mailbox transports: a shared directory with trigger files, or in-memory.

A mailbox is addressed by (run_id, direction, round). Directions are
``center_to_dp<k>`` and ``dp<k>_to_center``. The directory transport lays
a round out as ``<root>/<run_id>/<direction>/round_<n>/`` and writes the
zero-byte ``files_done.ok`` trigger only after every payload file is on
disk, so a poller never reads a half-written round.
"""

from __future__ import annotations

import enum
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import ConfigError, IoFailure, MailboxCollision, Timeout
from .messages import TRIGGER, RoundMessage, decode, encode


def to_partner(partner_id: int) -> str:
    return f"center_to_dp{partner_id}"


def to_center(partner_id: int) -> str:
    return f"dp{partner_id}_to_center"


class TransportMode(str, enum.Enum):
    DIRECTORY = "DIRECTORY"
    LOOPBACK = "LOOPBACK"


@dataclass(frozen=True)
class TransportConfig:
    mode: TransportMode = TransportMode.LOOPBACK
    root: str | None = None
    wait_time_min: float = 3.0
    wait_time_max: float = 7200.0

    def __post_init__(self):
        if not isinstance(self.mode, TransportMode):
            try:
                object.__setattr__(self, "mode", TransportMode(str(self.mode).strip().upper()))
            except ValueError:
                raise ConfigError(f"unknown transport mode {self.mode!r}") from None
        if not 0 < self.wait_time_min <= self.wait_time_max:
            raise ConfigError("need 0 < wait_time_min <= wait_time_max")
        if self.mode is TransportMode.DIRECTORY and not self.root:
            raise ConfigError("directory transport needs a root path")


@dataclass
class SentRecord:
    direction: str
    round: int
    kind: str
    files: dict = field(repr=False)

    @property
    def nbytes(self) -> int:
        return sum(len(text.encode("utf-8")) for text in self.files.values())

    def rows(self, table: str) -> int:
        text = self.files.get(f"{table}.csv", "")
        return max(0, len(text.splitlines()) - 1)


class Transport:
    """Common bookkeeping; subclasses move the encoded files."""

    def __init__(self, cfg: TransportConfig):
        self.cfg = cfg
        self.sent: list[SentRecord] = []
        self._lock = threading.Lock()

    def send(self, direction: str, msg: RoundMessage) -> str:
        files = encode(msg)
        self._deliver(msg.run_id, direction, msg.round, files)
        with self._lock:
            self.sent.append(SentRecord(direction, msg.round, msg.kind.value, files))
        return f"{msg.run_id}/{direction}/round_{msg.round}"

    def await_message(self, direction: str, run_id: str, round_: int, timeout: float | None = None) -> RoundMessage:
        return decode(self._collect(run_id, direction, round_, timeout or self.cfg.wait_time_max))

    def _deliver(self, run_id, direction, round_, files):  # pragma: no cover - abstract
        raise NotImplementedError

    def _collect(self, run_id, direction, round_, timeout):  # pragma: no cover - abstract
        raise NotImplementedError


class LoopbackTransport(Transport):
    """In-memory mailboxes for running center and partners in one process."""

    def __init__(self, cfg: TransportConfig | None = None):
        super().__init__(cfg or TransportConfig(TransportMode.LOOPBACK, wait_time_min=0.001))
        self._boxes: dict = {}
        self._cond = threading.Condition()

    def _deliver(self, run_id, direction, round_, files):
        key = (run_id, direction, round_)
        with self._cond:
            if key in self._boxes:
                raise MailboxCollision(f"mailbox {run_id}/{direction}/round_{round_} already used")
            self._boxes[key] = dict(files)
            self._cond.notify_all()

    def _collect(self, run_id, direction, round_, timeout):
        key = (run_id, direction, round_)
        with self._cond:
            if not self._cond.wait_for(lambda: key in self._boxes, timeout=timeout):
                raise Timeout(f"no message in {run_id}/{direction}/round_{round_} after {timeout:g} s")
            return dict(self._boxes[key])


class DirectoryTransport(Transport):
    def __init__(self, cfg: TransportConfig):
        super().__init__(cfg)
        self.root = Path(cfg.root)

    def mailbox(self, run_id: str, direction: str, round_: int) -> Path:
        return self.root / run_id / direction / f"round_{round_}"

    def _deliver(self, run_id, direction, round_, files):
        box = self.mailbox(run_id, direction, round_)
        try:
            box.parent.mkdir(parents=True, exist_ok=True)
            box.mkdir()
        except FileExistsError:
            raise MailboxCollision(f"mailbox {box} already exists") from None
        except OSError as exc:
            raise IoFailure(f"cannot create {box}: {exc}") from exc
        try:
            for name, text in files.items():
                with open(box / name, "w", encoding="utf-8", newline="") as fh:
                    fh.write(text)
                    fh.flush()
                    os.fsync(fh.fileno())
            (box / TRIGGER).touch()
        except OSError as exc:
            raise IoFailure(f"cannot write {box}: {exc}") from exc

    def _collect(self, run_id, direction, round_, timeout):
        box = self.mailbox(run_id, direction, round_)
        trigger = box / TRIGGER
        deadline = time.monotonic() + timeout
        while not trigger.exists():
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise Timeout(f"trigger {trigger} not written within {timeout:g} s")
            time.sleep(min(self.cfg.wait_time_min, remaining))
        files = {}
        try:
            for path in sorted(box.iterdir()):
                if path.name != TRIGGER:
                    files[path.name] = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise IoFailure(f"cannot read {box}: {exc}") from exc
        return files


def make_transport(cfg: TransportConfig) -> Transport:
    if cfg.mode is TransportMode.DIRECTORY:
        return DirectoryTransport(cfg)
    return LoopbackTransport(cfg)

"""
Stream Elements

Data records and checkpoint barriers carried by channels.
"""
from __future__ import annotations

from dataclasses import dataclass

# State key namespaces
LEDGER = 0
WINDOW = 1
JOIN = 2
SEEN = 3
OFFSET = 4


@dataclass(slots=True)
class Record:
    rid: int
    key: int
    emit_ns: int
    event_ns: int
    epoch: int = 0
    producer: object = None
    side: int = 0

    def derive(self, key: int | None = None, rid: int | None = None) -> "Record":
        return Record(
            rid=self.rid if rid is None else rid,
            key=self.key if key is None else key,
            emit_ns=self.emit_ns,
            event_ns=self.event_ns,
        )


@dataclass(frozen=True, slots=True)
class Barrier:
    checkpoint_id: int

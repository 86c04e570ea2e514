"""In-process emulation of a P-rank cluster with one-sided memory windows.

Each rank runs in its own thread, but only one rank holds the execution
baton at a time.  Every fabric operation hands the baton to the next
runnable rank in ring order, so a given (p, schedule, seed, workload)
always produces the same interleaving and therefore the same checkpoint
timing decisions.

Fail-stop faults are injected by the ranks themselves: algorithm code
reports progress through :meth:`Rank.progress`, and a rank whose
scheduled trigger fires is removed from the world and never runs again.
"""

from __future__ import annotations

import contextlib
import logging
import pickle
import struct
import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable

log = logging.getLogger(__name__)

__all__ = [
    "Aborted",
    "Deadlock",
    "FaultEvent",
    "FaultSchedule",
    "FabricError",
    "InvalidSchedule",
    "OutOfBounds",
    "Rank",
    "RankDead",
    "StaleWindow",
    "TraceEvent",
    "Window",
    "WorldHandle",
    "spawn_world",
]

_CELL = struct.Struct("<q")

TRIGGERS = ("after_transactions", "after_iteration", "at_progress_fraction")


class FabricError(Exception):
    pass


class RankDead(FabricError):
    def __init__(self, rank: int):
        super().__init__(f"rank {rank} is dead")
        self.rank = rank


class OutOfBounds(FabricError):
    pass


class StaleWindow(FabricError):
    """A remote access used a window epoch that the owner has since resized."""


class InvalidSchedule(ValueError):
    pass


class Deadlock(FabricError):
    pass


class Aborted(FabricError):
    """Raised in every waiting rank once some rank crashed with a real error."""


class _Killed(BaseException):
    # BaseException so that algorithm-level ``except Exception`` never swallows it
    pass


@dataclass(frozen=True)
class FaultEvent:
    rank: int
    trigger: str
    value: float

    def __post_init__(self):
        if self.trigger not in TRIGGERS:
            raise InvalidSchedule(f"unknown trigger {self.trigger!r}")
        if self.trigger == "at_progress_fraction" and not 0.0 <= self.value <= 1.0:
            raise InvalidSchedule(f"progress fraction {self.value} outside [0, 1]")
        if self.trigger != "at_progress_fraction" and self.value < 0:
            raise InvalidSchedule("trigger count must be non-negative")

    def fires(self, done: int, total: int, unit: str) -> bool:
        if self.trigger == "at_progress_fraction":
            return done >= int(self.value * total)
        if self.trigger == "after_transactions":
            return unit == "transaction" and done >= self.value
        return unit == "iteration" and done >= self.value


@dataclass(frozen=True)
class FaultSchedule:
    events: tuple[FaultEvent, ...] = ()

    def __post_init__(self):
        ranks = [e.rank for e in self.events]
        if len(ranks) != len(set(ranks)):
            raise InvalidSchedule("at most one fault event per rank")

    @classmethod
    def parse(cls, specs: Iterable[str]) -> "FaultSchedule":
        """Build a schedule from ``rank@fraction`` strings (e.g. ``1@0.8``)."""
        events = []
        for spec in specs:
            try:
                rank, frac = spec.split("@")
                events.append(FaultEvent(int(rank), "at_progress_fraction", float(frac)))
            except ValueError as exc:
                raise InvalidSchedule(f"bad fault spec {spec!r}: {exc}") from None
        return cls(tuple(events))

    def for_rank(self, rank: int) -> FaultEvent | None:
        for e in self.events:
            if e.rank == rank:
                return e
        return None

    def __len__(self):
        return len(self.events)


@dataclass
class TraceEvent:
    op: str
    src: int
    dst: int
    nbytes: int
    label: str = ""

    def __str__(self):
        tag = f" [{self.label}]" if self.label else ""
        return f"{self.op} {self.src}->{self.dst} {self.nbytes}B{tag}"


@dataclass
class Window:
    name: str
    owner: int
    capacity: int
    kind: str = "static"
    epoch: int = 0
    buf: bytearray = field(default_factory=bytearray, repr=False)

    def _check(self, offset: int, length: int):
        if offset < 0 or length < 0 or offset + length > self.capacity:
            raise OutOfBounds(
                f"window {self.name}@{self.owner}: [{offset}, {offset + length}) "
                f"outside capacity {self.capacity}"
            )


def _nbytes(payload: Any) -> int:
    if isinstance(payload, (bytes, bytearray, memoryview)):
        return len(payload)
    nb = getattr(payload, "nbytes", None)
    if isinstance(nb, int):
        return nb
    return len(pickle.dumps(payload, protocol=pickle.HIGHEST_PROTOCOL))


class _Collective:
    __slots__ = ("kind", "values", "result", "members", "done", "readers")

    def __init__(self, kind):
        self.kind = kind
        self.values = {}
        self.result = None
        self.members = None
        self.done = False
        self.readers = 0


class WorldHandle:
    """Shared state for one emulated world.  Ranks talk to it through :class:`Rank`."""

    def __init__(self, p: int, schedule: FaultSchedule | None = None, seed: int = 0,
                 trace: bool = False, trace_sink: Callable[[str], None] | None = None):
        if p < 1:
            raise ValueError("world needs at least one rank")
        schedule = schedule or FaultSchedule()
        for e in schedule.events:
            if not 0 <= e.rank < p:
                raise InvalidSchedule(f"fault rank {e.rank} outside [0, {p})")
        if len(schedule) >= p:
            raise InvalidSchedule("schedule would leave no rank alive")
        self.p = p
        self.rng_seed = seed
        self.schedule = schedule
        self.trace_enabled = trace
        self.trace_sink = trace_sink
        self.trace: list[TraceEvent] = []

        self._lock = threading.Lock()
        self._turn_cv = [threading.Condition(self._lock) for _ in range(p)]
        self._turn: int | None = None
        self._active: set[int] = set()   # ranks competing for the baton
        self._detached: set[int] = set()
        self._alive = set(range(p))
        self._finished: set[int] = set()
        self._unseen_faults = {r: [] for r in range(p)}
        self._queues: dict[tuple[int, int, Any], deque] = {}
        self._windows: dict[tuple[str, int], Window] = {}
        self._coll_seq = [0] * p
        self._colls: dict[int, _Collective] = {}
        self._version = 0
        self._blocked: dict[int, int] = {}
        self._error: BaseException | None = None
        self._hooks: dict[int, Callable[[], None]] = {}
        self._in_hook: set[int] = set()
        self._labels: dict[int, list[str]] = {r: [] for r in range(p)}

    # -- public views -----------------------------------------------------------

    @property
    def alive(self) -> list[int]:
        return sorted(self._alive)

    def is_alive(self, rank: int) -> bool:
        return rank in self._alive

    def window(self, name: str, owner: int) -> Window:
        return self._windows[(name, owner)]

    def windows_of(self, owner: int) -> list[Window]:
        with self._lock:
            return [w for (n, o), w in self._windows.items() if o == owner]

    def run(self, fn: Callable[..., Any], *args, **kwargs) -> list[Any]:
        """Run ``fn(rank, *args, **kwargs)`` on every rank; return per-rank results.

        Dead ranks contribute ``None``.  The first genuine exception raised by
        any rank is re-raised here after all threads have stopped.
        """
        results: list[Any] = [None] * self.p
        errors: dict[int, BaseException] = {}

        def body(r):
            ctx = Rank(self, r)
            try:
                self._enter(r)
                results[r] = fn(ctx, *args, **kwargs)
            except _Killed:
                pass
            except BaseException as exc:  # noqa: BLE001 - re-raised after join
                errors[r] = exc
                with self._lock:
                    if self._error is None and not isinstance(exc, Aborted):
                        self._error = exc
                    self._version += 1
                    for cv in self._turn_cv:
                        cv.notify_all()
            finally:
                self._leave(r)

        with self._lock:
            self._active = set(range(self.p))
            self._turn = 0
        threads = [threading.Thread(target=body, args=(r,), name=f"rank{r}", daemon=True)
                   for r in range(self.p)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        if self._error is not None:
            raise self._error
        for r in sorted(errors):
            raise errors[r]
        return results

    # -- baton scheduling -------------------------------------------------------

    def _next_turn(self, after: int) -> int | None:
        if not self._active:
            return None
        for step in range(1, self.p + 1):
            cand = (after + step) % self.p
            if cand in self._active:
                return cand
        return None

    def _wait_turn(self, r: int):
        cv = self._turn_cv[r]
        while self._turn != r:
            if self._error is not None:
                raise Aborted(str(self._error))
            cv.wait(timeout=1.0)

    def _pass_turn(self, r: int):
        nxt = self._next_turn(r)
        self._turn = nxt
        if nxt is not None:
            self._turn_cv[nxt].notify()

    def _enter(self, r: int):
        with self._lock:
            self._wait_turn(r)

    def _leave(self, r: int):
        with self._lock:
            self._finished.add(r)
            self._active.discard(r)
            self._blocked.pop(r, None)
            self._version += 1
            if self._turn == r or self._turn is None:
                self._pass_turn(r)

    def _yield(self, r: int):
        with self._lock:
            self._pass_turn(r)
            self._wait_turn(r)

    def _wait_for(self, r: int, ready: Callable[[], bool]):
        """Block rank ``r`` (yielding the baton) until ``ready()`` holds."""
        while True:
            self._service(r)
            with self._lock:
                if self._error is not None:
                    raise Aborted(str(self._error))
                if ready():
                    self._blocked.pop(r, None)
                    return
                self._blocked[r] = self._version
                stuck = all(self._blocked.get(a) == self._version for a in self._active)
                if stuck and not self._detached:
                    self._error = Deadlock(
                        f"all active ranks {sorted(self._active)} blocked")
                    for cv in self._turn_cv:
                        cv.notify_all()
                    raise self._error
                if stuck:
                    # only detached ranks can make progress; don't spin on the baton
                    self._turn_cv[r].wait(0.0005)
                self._pass_turn(r)
                self._wait_turn(r)

    def _service(self, r: int):
        hook = self._hooks.get(r)
        if hook is None or r in self._in_hook:
            return
        self._in_hook.add(r)
        try:
            hook()
        finally:
            self._in_hook.discard(r)

    def _op(self, r: int):
        """Common prologue for a fabric operation issued by rank ``r``."""
        if self._error is not None:
            raise Aborted(str(self._error))
        if r not in self._in_hook:
            self._yield(r)
            self._service(r)

    def _record(self, op: str, src: int, dst: int, nbytes: int, actor: int | None = None):
        if not self.trace_enabled:
            return
        labels = self._labels[src if actor is None else actor]
        ev = TraceEvent(op, src, dst, nbytes, labels[-1] if labels else "")
        self.trace.append(ev)
        if self.trace_sink is not None:
            self.trace_sink(str(ev))

    # -- faults -----------------------------------------------------------------

    def _kill(self, r: int):
        with self._lock:
            self._alive.discard(r)
            self._active.discard(r)
            self._version += 1
            for q in [k for k in self._queues if k[1] == r]:
                del self._queues[q]  # in-flight messages to a dead rank are lost
            for obs in self._alive:
                self._unseen_faults[obs].append(r)
        log.debug("rank %d failed", r)
        self._record("fail", r, r, 0)
        raise _Killed()

    # -- windows ----------------------------------------------------------------

    def _target_window(self, name: str, target: int) -> Window:
        if target not in self._alive:
            raise RankDead(target)
        try:
            return self._windows[(name, target)]
        except KeyError:
            raise FabricError(f"no window {name!r} on rank {target}") from None


class Rank:
    """One rank's view of the world.  Not shared between threads."""

    def __init__(self, world: WorldHandle, rank: int):
        self.world = world
        self.rank = rank
        self.size = world.p

    def __repr__(self):
        return f"Rank({self.rank}/{self.size})"

    @property
    def alive(self) -> list[int]:
        return self.world.alive

    @property
    def master(self) -> int:
        return min(self.world._alive)

    def is_alive(self, rank: int) -> bool:
        return self.world.is_alive(rank)

    def successor(self, of: int | None = None) -> int | None:
        """Next alive rank after ``of`` in ring order (never ``of`` itself)."""
        of = self.rank if of is None else of
        for step in range(1, self.size):
            cand = (of + step) % self.size
            if cand in self.world._alive:
                return cand
        return None

    def predecessor(self, of: int | None = None) -> int | None:
        of = self.rank if of is None else of
        for step in range(1, self.size):
            cand = (of - step) % self.size
            if cand in self.world._alive:
                return cand
        return None

    # -- fault injection / detection -------------------------------------------

    def progress(self, done: int, total: int, unit: str = "transaction"):
        """Report progress; dies here if this rank's scheduled fault fires."""
        ev = self.world.schedule.for_rank(self.rank)
        if ev is not None and ev.fires(done, total, unit):
            self.world._kill(self.rank)

    def poll_faults(self) -> list[int]:
        w = self.world
        w._op(self.rank)
        with w._lock:
            new = w._unseen_faults[self.rank]
            w._unseen_faults[self.rank] = []
        return new

    def set_progress_hook(self, fn: Callable[[], None] | None):
        """Install a callback run whenever this rank enters the fabric.

        It plays the role of an MPI progress engine: two-sided protocols that
        need the target's participation are serviced from here.
        """
        if fn is None:
            self.world._hooks.pop(self.rank, None)
        else:
            self.world._hooks[self.rank] = fn

    @contextlib.contextmanager
    def label(self, name: str):
        """Tag trace events issued inside the block (e.g. ``"ckpt"``)."""
        stack = self.world._labels[self.rank]
        stack.append(name)
        try:
            yield
        finally:
            stack.pop()

    @contextlib.contextmanager
    def detached(self):
        """Release the baton around slow local work (disk reads, sleeps)."""
        w, r = self.world, self.rank
        with w._lock:
            w._active.discard(r)
            w._detached.add(r)
            w._version += 1
            if w._turn == r:
                w._pass_turn(r)
        try:
            yield
        finally:
            with w._lock:
                w._detached.discard(r)
                w._active.add(r)
                w._version += 1
                if w._turn is None:
                    w._turn = r
                w._wait_turn(r)

    # -- windows ----------------------------------------------------------------

    def create_window(self, name: str, capacity: int, kind: str = "static",
                      data: bytes | None = None) -> Window:
        if kind not in ("static", "dynamic"):
            raise ValueError(f"unknown window kind {kind!r}")
        buf = bytearray(capacity)
        if data is not None:
            if len(data) > capacity:
                raise OutOfBounds("initial data larger than window")
            buf[:len(data)] = data
        win = Window(name, self.rank, capacity, kind, 0, buf)
        with self.world._lock:
            self.world._windows[(name, self.rank)] = win
            self.world._version += 1
        return win

    def local_window(self, name: str) -> Window:
        return self.world._windows[(name, self.rank)]

    def free_window(self, name: str):
        with self.world._lock:
            self.world._windows.pop((name, self.rank), None)

    def resize_window(self, name: str, capacity: int) -> Window:
        """Owner-side reallocation of a dynamic window; bumps its epoch."""
        win = self.local_window(name)
        if win.kind != "dynamic":
            raise FabricError(f"window {name!r} is static")
        with self.world._lock:
            new = bytearray(capacity)
            keep = min(capacity, win.capacity)
            new[:keep] = win.buf[:keep]
            win.buf = new
            win.capacity = capacity
            win.epoch += 1
            self.world._version += 1
        return win

    def put(self, name: str, target: int, offset: int, payload: bytes,
            epoch: int | None = None):
        w = self.world
        w._op(self.rank)
        with w._lock:
            win = w._target_window(name, target)
            if epoch is not None and epoch != win.epoch:
                raise StaleWindow(f"{name}@{target}: epoch {epoch} != {win.epoch}")
            win._check(offset, len(payload))
            win.buf[offset:offset + len(payload)] = payload
            w._version += 1
        w._record("put", self.rank, target, len(payload))

    def get(self, name: str, target: int, offset: int, length: int,
            epoch: int | None = None) -> bytes:
        w = self.world
        w._op(self.rank)
        with w._lock:
            win = w._target_window(name, target)
            if epoch is not None and epoch != win.epoch:
                raise StaleWindow(f"{name}@{target}: epoch {epoch} != {win.epoch}")
            win._check(offset, length)
            data = bytes(win.buf[offset:offset + length])
        w._record("get", self.rank, target, length)
        return data

    def fetch_and_add(self, name: str, target: int, offset: int, delta: int) -> int:
        """Atomic read-modify-write of the int64 cell at ``offset``."""
        w = self.world
        w._op(self.rank)
        with w._lock:
            win = w._target_window(name, target)
            win._check(offset, _CELL.size)
            (old,) = _CELL.unpack_from(win.buf, offset)
            if delta:
                _CELL.pack_into(win.buf, offset, old + delta)
                w._version += 1
        w._record("fetch_and_add", self.rank, target, _CELL.size)
        return old

    def local_fetch_and_add(self, name: str, offset: int, delta: int) -> int:
        """Owner-side atomic update of its own window cell (no network traffic)."""
        w = self.world
        with w._lock:
            win = w._windows[(name, self.rank)]
            win._check(offset, _CELL.size)
            (old,) = _CELL.unpack_from(win.buf, offset)
            _CELL.pack_into(win.buf, offset, old + delta)
            w._version += 1
        return old

    def local_write(self, name: str, offset: int, data: bytes):
        """Owner-side store into its own window."""
        w = self.world
        with w._lock:
            win = w._windows[(name, self.rank)]
            win._check(offset, len(data))
            win.buf[offset:offset + len(data)] = data
            w._version += 1

    def flush(self, target: int):
        # puts complete synchronously in the emulation; kept for protocol shape
        self.world._record("flush", self.rank, target, 0)

    # -- two-sided --------------------------------------------------------------

    def send(self, target: int, tag: Any, payload: Any):
        w = self.world
        w._op(self.rank)
        nbytes = _nbytes(payload)
        with w._lock:
            if target not in w._alive:
                raise RankDead(target)
            w._queues.setdefault((self.rank, target, tag), deque()).append(payload)
            w._version += 1
        w._record("send", self.rank, target, nbytes)

    def recv(self, source: int, tag: Any) -> Any:
        w = self.world
        w._op(self.rank)
        key = (source, self.rank, tag)

        def ready():
            q = w._queues.get(key)
            return bool(q) or source not in w._alive

        w._wait_for(self.rank, ready)
        with w._lock:
            q = w._queues.get(key)
            if not q:
                raise RankDead(source)
            payload = q.popleft()
        w._record("recv", source, self.rank, _nbytes(payload), actor=self.rank)
        return payload

    def pending(self, tag: Any) -> list[int]:
        """Sources with a queued message for this rank under ``tag`` (no yield)."""
        w = self.world
        with w._lock:
            return sorted(s for (s, d, t), q in w._queues.items()
                          if d == self.rank and t == tag and q)

    # -- collectives ------------------------------------------------------------

    def _collective(self, kind: str, value: Any, combine: Callable[[dict], Any]) -> Any:
        w, r = self.world, self.rank
        w._op(r)
        with w._lock:
            seq = w._coll_seq[r]
            w._coll_seq[r] += 1
            slot = w._colls.get(seq)
            if slot is None:
                slot = w._colls[seq] = _Collective(kind)
            if slot.kind != kind:
                raise FabricError(f"collective mismatch: {slot.kind} vs {kind}")
            slot.values[r] = value
            w._version += 1

        def ready():
            if slot.done:
                return True
            if any(m not in w._alive for m in slot.values):
                return True
            return w._alive <= slot.values.keys()

        w._wait_for(r, ready)
        with w._lock:
            dead = [m for m in slot.values if m not in w._alive]
            if not slot.done:
                if dead:
                    raise RankDead(dead[0])
                slot.members = sorted(slot.values)
                slot.result = combine({m: slot.values[m] for m in slot.members})
                slot.done = True
            slot.readers += 1
            if slot.readers == len(slot.members):
                del w._colls[seq]
            result = slot.result
        w._record(kind, r, -1, 0)
        return result

    def barrier(self):
        self._collective("barrier", None, lambda vals: None)

    def allreduce_sum(self, local: list[int]) -> list[int]:
        def combine(vals):
            vecs = list(vals.values())
            n = len(vecs[0])
            if any(len(v) != n for v in vecs):
                raise FabricError("allreduce vectors differ in length")
            return [sum(v[i] for v in vecs) for i in range(n)]
        return list(self._collective("allreduce", list(local), combine))

    def allgather(self, value: Any) -> dict[int, Any]:
        """Every alive rank receives ``{rank: value}`` from all participants."""
        return self._collective("allgather", value, dict)

    def bcast(self, value: Any, root: int) -> Any:
        def combine(vals):
            if root not in vals:
                raise RankDead(root)
            return vals[root]
        return self._collective("bcast", value if self.rank == root else None, combine)


def spawn_world(p: int, schedule: FaultSchedule | None = None, seed: int = 0,
                trace: bool = False, trace_sink: Callable[[str], None] | None = None
                ) -> WorldHandle:
    return WorldHandle(p, schedule, seed, trace=trace, trace_sink=trace_sink)

"""Raster-order, line-buffered stream engine.

A frame enters one line per tick (ticks ``0 .. H-1``) and the engine keeps
ticking through a flush tail until every node has drained.  Each node emits
output row ``r`` at tick ``r + latency`` where ``latency`` is the sum of the
look-ahead of every node on its path.  A convolution node holds exactly the
lines between its top and bottom reach in a line buffer, and reading a line
it has not received raises :class:`CausalityError`.

Ticks are line-granular: a node processes a whole line per call, vectorised
across the line.  Rows are ordered and single-pass, so the result is the same
as a pixel-per-tick model.

Two-input nodes require latency-aligned inputs; :meth:`Graph.align` inserts
the delay lines automatically from the latencies nodes report.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator

import numpy as np

from .arith import Arith
from .kernels import Kernel, box2, edge_index, interleave, tap_index, upsampler_shifted4


class CausalityError(RuntimeError):
    pass


def frame_row(frame, r: int):
    if hasattr(frame, "with_values"):
        return frame.with_values(frame.values[r])
    return frame[r]


@dataclass(frozen=True)
class Port:
    node: "Node"
    index: int = 0

    @property
    def latency(self) -> int:
        return self.node.latency


class Node:
    role = "node"
    n_out = 1

    def __init__(self, name: str, inputs: list[Port], scale: int | None = None):
        self.name = name
        self.inputs = list(inputs)
        self.scale = scale
        self.lookahead = 0
        self.buffered_lines = 0
        self.footprint = (1, 1)
        lat = {p.latency for p in self.inputs}
        if len(lat) > 1:
            raise ValueError(f"{name}: inputs not latency aligned {sorted(lat)}")
        self.input_latency = lat.pop() if lat else 0

    @property
    def latency(self) -> int:
        return self.input_latency + self.lookahead

    def port(self, i: int = 0) -> Port:
        return Port(self, i)

    def reset(self, width: int, height: int) -> None:
        self.width = width
        self.height = height

    def step(self, t: int, rows: list) -> list:
        raise NotImplementedError

    def out_row(self, t: int) -> int | None:
        r = t - self.latency
        return r if 0 <= r < self.height else None

    def in_row(self, t: int) -> int | None:
        r = t - self.input_latency
        return r if 0 <= r < self.height else None

    def describe(self) -> dict:
        return {"name": self.name, "role": self.role, "scale": self.scale,
                "footprint": self.footprint, "lookahead": self.lookahead,
                "latency": self.latency, "buffered_lines": self.buffered_lines}


class Source(Node):
    role = "source"

    def step(self, t, rows):
        return [rows[0]]


class ConvNode(Node):
    """Line-buffered convolution with one or more kernels sharing a buffer.

    A single separable kernel stores row-filtered lines and runs the column
    pass on output.  Otherwise raw lines are stored and each kernel is
    applied tap by tap.
    """

    role = "conv"

    def __init__(self, name, src: Port, kernels: list[Kernel], ar: Arith,
                 period: int | None = None, scale=None, role: str | None = None):
        super().__init__(name, [src], scale)
        self.kernels = list(kernels)
        self.ar = ar
        self.period = period if period is not None else kernels[0].stride
        self.n_out = len(kernels)
        self.sep = len(kernels) == 1 and kernels[0].separable
        above = max(k.reach[0] for k in kernels)
        below = max(k.reach[1] for k in kernels)
        self.lookbehind, self.lookahead = above, below
        self.buffered_lines = above + below
        self.footprint = (max(k.shape[0] for k in kernels), max(k.shape[1] for k in kernels))
        if role:
            self.role = role

    def reset(self, width, height):
        super().reset(width, height)
        self.buf: dict[int, object] = {}
        self.received = 0
        self.peak = 0

    def _line(self, i: int):
        j = int(edge_index(i, self.height, self.period))
        if j >= self.received:
            raise CausalityError(f"{self.name}: read line {j} with {self.received} delivered")
        return self.buf[j]

    def step(self, t, rows):
        ar = self.ar
        if rows[0] is not None:
            x = rows[0]
            if self.sep:
                acc = None
                for off, c in self.kernels[0].factor_taps(1):
                    term = ar.scale(ar.take(x, tap_index(self.width, off, self.period), -1), c)
                    acc = term if acc is None else ar.add(acc, term)
                x = acc
            self.buf[self.received] = x
            self.received += 1
        r = self.out_row(t)
        if r is None:
            return [None] * self.n_out
        outs = []
        if self.sep:
            acc = None
            for off, c in self.kernels[0].factor_taps(0):
                term = ar.scale(self._line(r + off), c)
                acc = term if acc is None else ar.add(acc, term)
            outs.append(acc)
        else:
            for k in self.kernels:
                acc = None
                for dr, dc, c in k.nonzero():
                    src = ar.take(self._line(r + dr), tap_index(self.width, dc, self.period), -1)
                    term = ar.scale(src, c)
                    acc = term if acc is None else ar.add(acc, term)
                outs.append(acc)
        for j in [j for j in self.buf if j < r + 1 - self.lookbehind]:
            del self.buf[j]
        self.peak = max(self.peak, len(self.buf))
        if len(self.buf) > self.buffered_lines:
            raise CausalityError(f"{self.name}: holds {len(self.buf)} lines, declared {self.buffered_lines}")
        return outs


class ZeroInsertNode(Node):
    """Counter-driven zero insertion: keeps the stride-``period`` lattice."""

    role = "zero_insert"

    def __init__(self, name, src: Port, period: int, ar: Arith, scale=None):
        super().__init__(name, [src], scale)
        self.period = period
        self.ar = ar

    def reset(self, width, height):
        super().reset(width, height)
        self.cols = (np.arange(width) % self.period) == 0

    def step(self, t, rows):
        x = rows[0]
        if x is None:
            return [None]
        r = self.out_row(t)
        if r % self.period:
            return [self.ar.keep(x, np.zeros(self.width, dtype=bool))]
        return [self.ar.keep(x, self.cols)]


class DelayNode(Node):
    role = "delay"

    def __init__(self, name, src: Port, lines: int, scale=None):
        super().__init__(name, [src], scale)
        self.lookahead = lines
        self.buffered_lines = lines
        self.footprint = (lines + 1, 1)

    def reset(self, width, height):
        super().reset(width, height)
        self.fifo = deque()

    def step(self, t, rows):
        self.fifo.append(rows[0])
        out = self.fifo.popleft() if len(self.fifo) > self.buffered_lines else None
        return [out]


class MapNode(Node):
    """Pointwise node: ``fn(row_index, *rows) -> row or tuple of rows``."""

    role = "op"

    def __init__(self, name, inputs: list[Port], fn: Callable, n_out: int = 1, scale=None,
                 role: str | None = None):
        super().__init__(name, inputs, scale)
        self.fn = fn
        self.n_out = n_out
        if role:
            self.role = role

    def step(self, t, rows):
        r = self.out_row(t)
        if r is None or any(x is None for x in rows):
            return [None] * self.n_out
        out = self.fn(r, *rows)
        return list(out) if self.n_out > 1 else [out]


class Graph:
    """A DAG of stream nodes, kept in insertion (topological) order."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.sources: dict[str, Source] = {}
        self.outputs: dict[str, Port] = {}

    def add(self, node: Node) -> Node:
        self.nodes.append(node)
        return node

    def source(self, name: str) -> Port:
        s = self.add(Source(name, []))
        self.sources[name] = s
        return s.port()

    def delay(self, p: Port, lines: int, name: str | None = None, role: str = "delay") -> Port:
        if lines == 0:
            return p
        if lines < 0:
            raise ValueError("negative delay")
        node = self.add(DelayNode(name or f"delay({p.node.name})", p, lines, p.node.scale))
        node.role = role
        return node.port()

    def align(self, *ports: Port, tag: str = "", role: str = "alignment") -> list[Port]:
        """Delay earlier ports so all arrive with the latest one."""
        top = max(p.latency for p in ports)
        return [self.delay(p, top - p.latency, name=f"delay{tag}:{p.node.name}", role=role)
                for p in ports]

    def conv(self, name, p: Port, kernels, ar, period=None, scale=None, role=None) -> list[Port]:
        n = self.add(ConvNode(name, p, kernels if isinstance(kernels, list) else [kernels],
                              ar, period, scale, role))
        return [n.port(i) for i in range(n.n_out)]

    def map(self, name, ports: list[Port], fn, n_out=1, scale=None, role=None,
            delay_role: str = "alignment") -> list[Port]:
        aligned = self.align(*ports, tag=f"[{name}]", role=delay_role)
        n = self.add(MapNode(name, aligned, fn, n_out, scale, role))
        return [n.port(i) for i in range(n_out)]

    def zero_insert(self, name, p: Port, scale: int, ar) -> Port:
        return self.add(ZeroInsertNode(name, p, 2 << scale, ar, scale)).port()

    def output(self, name: str, p: Port) -> None:
        self.outputs[name] = p

    def run(self, frames: dict[str, object], width: int, height: int) -> dict[str, list]:
        """Stream ``frames`` (one per source) through the graph.

        Returns, per output, the list of its rows in order.
        """
        for n in self.nodes:
            n.reset(width, height)
        index = {id(n): i for i, n in enumerate(self.nodes)}
        current: list[list] = [None] * len(self.nodes)
        out = {k: [None] * height for k in self.outputs}
        last = max(p.latency for p in self.outputs.values()) + height
        for t in range(last):
            for i, n in enumerate(self.nodes):
                if isinstance(n, Source):
                    rows = [frame_row(frames[n.name], t) if t < height else None]
                else:
                    rows = [current[index[id(p.node)]][p.index] for p in n.inputs]
                current[i] = n.step(t, rows)
            for k, p in self.outputs.items():
                r = t - p.latency
                if 0 <= r < height:
                    out[k][r] = current[index[id(p.node)]][p.index]
        return out

    def report(self) -> list[dict]:
        return [n.describe() for n in self.nodes if not isinstance(n, Source)]

    def buffered_lines(self, roles: Iterable[str] | None = None) -> int:
        return sum(n.buffered_lines for n in self.nodes
                   if roles is None or n.role in roles)


def format_report(nodes: list[dict]) -> str:
    """Diagnostic dump: one line per node."""
    lines = [f"{'name':<40} {'role':<14} {'scale':>5} {'footprint':>9} {'latency':>7} {'buffered_lines':>14}"]
    for d in nodes:
        fp = f"{d['footprint'][0]}x{d['footprint'][1]}"
        sc = "-" if d["scale"] is None else str(d["scale"])
        lines.append(f"{d['name']:<40} {d['role']:<14} {sc:>5} {fp:>9} {d['latency']:>7} {d['buffered_lines']:>14}")
    return "\n".join(lines)


# ------------------------------------------------------- standalone streams

@dataclass
class PixelStream:
    """A frame as an ordered, single-pass sequence of rows."""

    width: int
    height: int
    kind: str
    rows: Iterator
    node: Node | None = None

    @classmethod
    def from_frame(cls, frame, kind: str = "half") -> "PixelStream":
        h, w = frame.shape
        return cls(w, h, kind, (frame_row(frame, r) for r in range(h)))

    def samples(self) -> Iterator:
        for row in self.rows:
            values = row.values if hasattr(row, "values") else row
            yield from values

    def to_frame(self) -> np.ndarray:
        return np.stack(list(self.rows))


def _drive(node: Node, stream: PixelStream, width: int, height: int) -> Iterator:
    node.reset(width, height)
    t = 0
    for row in stream.rows:
        out = node.step(t, [row])[0]
        t += 1
        if out is not None:
            yield out
    while t < height + node.latency:
        out = node.step(t, [None])[0]
        t += 1
        if out is not None:
            yield out


def stream_conv(s: PixelStream, k: Kernel, ar: Arith, scale: int = 0,
                period: int | None = None) -> PixelStream:
    """Stream ``s`` through the scale-``scale`` variant of ``k``."""
    kk = interleave(k, scale)
    if s.height < kk.shape[0] or s.width < kk.shape[1]:
        raise ValueError("image too small")
    src = Source("in", [])
    node = ConvNode(f"{k.name}@{scale}", src.port(), [kk], ar, period, scale)
    return PixelStream(s.width, s.height, s.kind, _drive(node, s, s.width, s.height), node)


def decimate2(s: PixelStream, ar: Arith) -> PixelStream:
    """Box-filter and keep even rows and columns; halves both dimensions."""
    if s.width % 2 or s.height % 2:
        raise ValueError("decimate requires even dims")
    boxed = stream_conv(s, box2("tl"), ar, period=1)

    def rows():
        for r, row in enumerate(boxed.rows):
            if r % 2 == 0:
                yield ar.take(row, np.arange(0, s.width, 2), -1)

    return PixelStream(s.width // 2, s.height // 2, s.kind, rows(), boxed.node)


def zero_insert(s: PixelStream, scale: int, ar: Arith, expand: bool = False) -> PixelStream:
    """Zero every sample off the stride-``2**(scale+1)`` lattice.

    With ``expand`` the input is taken at half resolution: sample ``(x, y)``
    moves to ``(2x, 2y)`` and the output has doubled dimensions.
    """
    period = 2 << scale
    if not expand:
        src = Source("in", [])
        node = ZeroInsertNode(f"zero_insert@{scale}", src.port(), period, ar, scale)
        return PixelStream(s.width, s.height, s.kind, _drive(node, s, s.width, s.height), node)

    w2, h2 = 2 * s.width, 2 * s.height
    keep_in = (np.arange(s.width) % (period // 2)) == 0
    spread = np.arange(w2) // 2
    on = (np.arange(w2) % 2 == 0) & keep_in[spread]
    blank = np.zeros(w2, dtype=bool)

    def rows():
        for r, row in enumerate(s.rows):
            wide = ar.take(row, spread, -1)
            yield ar.keep(wide, on if r % (period // 2) == 0 else blank)
            yield ar.keep(wide, blank)

    node = ZeroInsertNode(f"zero_insert@{scale}", Source("in", []).port(), period, ar, scale)
    return PixelStream(w2, h2, s.kind, rows(), node)


def stream_upsample(s: PixelStream, scale: int, ar: Arith) -> PixelStream:
    """Zero insertion followed by the (1 3 3 1)/4 upsampler at ``scale``."""
    z = zero_insert(s, scale, ar)
    return stream_conv(z, upsampler_shifted4("br"), ar, scale, period=2 << scale)


def latency_buffer(s: PixelStream, delay_lines: int, ar: Arith) -> PixelStream:
    """Pure delay: output line r is input line r - delay_lines (zeros before)."""
    if delay_lines < 0:
        raise ValueError("delay_lines must be non-negative")
    node = DelayNode(f"latency({delay_lines})", Source("in", []).port(), delay_lines)

    def rows():
        fifo: deque = deque()
        for r, row in enumerate(s.rows):
            fifo.append(row)
            if len(fifo) > delay_lines:
                yield fifo.popleft()
            else:
                yield ar.zeros_like(row)

    return PixelStream(s.width, s.height, s.kind, rows(), node)

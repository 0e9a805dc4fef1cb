"""Dimension bookkeeping and 0/1 selector matrices for packets and histories.

A packet ``u_tilde`` stacks one m-block per possible delivery delay, highest
delay first. The history ``u_hat`` stacks truncated copies of the last
``d_hi + r_hi`` packets: block ``p`` holds the leading ``m_bar[p]`` entries of
the packet sent ``p`` steps ago, i.e. the components that may still be applied
to a plant input the controller does not yet know.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import BoundsError, WidthError


@dataclass(frozen=True)
class PacketLayout:
    m: int
    d_lo: int
    d_hi: int
    r_lo: int
    r_hi: int

    def __post_init__(self):
        if self.m < 1:
            raise BoundsError(f"input width m must be >= 1, got {self.m}")
        if not 0 <= self.d_lo <= self.d_hi:
            raise BoundsError(f"need 0 <= d_lo <= d_hi, got [{self.d_lo}, {self.d_hi}]")
        if not 0 <= self.r_lo <= self.r_hi:
            raise BoundsError(f"need 0 <= r_lo <= r_hi, got [{self.r_lo}, {self.r_hi}]")

    @property
    def horizon(self) -> int:
        """Number of history blocks, ``d_hi + r_hi``."""
        return self.d_hi + self.r_hi

    @property
    def n_components(self) -> int:
        return self.d_hi - self.d_lo + 1

    @property
    def m_tilde(self) -> int:
        return self.n_components * self.m

    def block_width(self, p: int) -> int:
        """Width of history block ``p`` (``p = 0`` is the packet itself)."""
        return self.m_tilde - max(0, p - self.r_hi - self.d_lo) * self.m

    @cached_property
    def m_bar(self) -> tuple:
        return tuple(self.block_width(p) for p in range(1, self.horizon + 1))

    @cached_property
    def block_offsets(self) -> tuple:
        """Start offset of each history block ``p = 1..horizon`` inside ``u_hat``."""
        return tuple(int(x) for x in np.concatenate([[0], np.cumsum(self.m_bar)])[:-1])

    @property
    def m_hat(self) -> int:
        return int(sum(self.m_bar))

    def component_offset(self, p: int) -> int:
        """Offset of the delay-``p`` component inside a packet."""
        if not self.d_lo <= p <= self.d_hi:
            raise BoundsError(f"component delay {p} outside [{self.d_lo}, {self.d_hi}]")
        return (self.d_hi - p) * self.m


def build_layout(m: int, d_lo: int, d_hi: int, r_lo: int, r_hi: int) -> PacketLayout:
    return PacketLayout(m, d_lo, d_hi, r_lo, r_hi)


def stack_packet(components: dict, layout: PacketLayout) -> np.ndarray:
    """Stack ``{delay: m-vector}`` into a packet, highest delay on top."""
    if set(components) != set(range(layout.d_lo, layout.d_hi + 1)):
        raise WidthError(f"expected components for delays {layout.d_lo}..{layout.d_hi}, "
                         f"got {sorted(components)}")
    out = np.empty(layout.m_tilde)
    for p, c in components.items():
        c = np.asarray(c, dtype=float).reshape(-1)
        if c.shape != (layout.m,):
            raise WidthError(f"component {p} has width {c.size}, expected {layout.m}")
        off = layout.component_offset(p)
        out[off:off + layout.m] = c
    return out


def unstack_packet(u_tilde, layout: PacketLayout) -> dict:
    u_tilde = np.asarray(u_tilde, dtype=float)
    if u_tilde.shape != (layout.m_tilde,):
        raise WidthError(f"packet has shape {u_tilde.shape}, expected ({layout.m_tilde},)")
    return {p: u_tilde[layout.component_offset(p):layout.component_offset(p) + layout.m].copy()
            for p in range(layout.d_lo, layout.d_hi + 1)}


def stack_history(packets, layout: PacketLayout) -> np.ndarray:
    """Build ``u_hat`` directly from the last packets, newest first.

    ``packets[p - 1]`` is the packet sent ``p`` steps ago. This is the
    brute-force definition the shift matrices are tested against.
    """
    if len(packets) < layout.horizon:
        raise WidthError(f"need {layout.horizon} packets, got {len(packets)}")
    parts = [np.asarray(packets[p - 1], dtype=float)[:layout.m_bar[p - 1]]
             for p in range(1, layout.horizon + 1)]
    return np.concatenate(parts) if parts else np.zeros(0)


@dataclass(frozen=True, eq=False)
class SelectorSet:
    """Dense 0/1 matrices realizing the history shift and input extraction.

    ``pick_hat[i, d - d_lo]`` reads the input applied ``i`` steps ago from
    ``u_hat`` when that input was taken from a packet of age ``d``;
    ``pick_now[d - d_lo]`` reads it from the current packet (non-zero only for
    ``d = 0``).
    """

    layout: PacketLayout
    shift_full: np.ndarray
    shift_in: np.ndarray
    pick_block: tuple
    pick_check: dict
    pick_hat: np.ndarray
    pick_now: np.ndarray

    def truncation(self, p: int) -> np.ndarray:
        """Prefix-truncation matrix mapping block ``p - 1`` onto block ``p``."""
        lay = self.layout
        src = lay.m_tilde if p == 1 else lay.m_bar[p - 2]
        return np.eye(lay.m_bar[p - 1], src)

    def hat(self, i: int, d: int) -> np.ndarray:
        return self.pick_hat[i, d - self.layout.d_lo]

    def now(self, d: int) -> np.ndarray:
        return self.pick_now[d - self.layout.d_lo]


def _block_picker(layout: PacketLayout, p: int) -> np.ndarray:
    if not 1 <= p <= layout.horizon:
        return np.zeros((layout.block_width(p), layout.m_hat))
    width = layout.m_bar[p - 1]
    out = np.zeros((width, layout.m_hat))
    off = layout.block_offsets[p - 1]
    out[:, off:off + width] = np.eye(width)
    return out


def build_selectors(layout: PacketLayout) -> SelectorSet:
    m, mt, mh, H = layout.m, layout.m_tilde, layout.m_hat, layout.horizon

    shift_full = np.zeros((mh, mh))
    shift_in = np.zeros((mh, mt))
    if H >= 1:
        w1 = layout.m_bar[0]
        shift_in[:w1, :w1] = np.eye(w1)
    for p in range(2, H + 1):
        dst = layout.block_offsets[p - 1]
        src = layout.block_offsets[p - 2]
        w = layout.m_bar[p - 1]
        shift_full[dst:dst + w, src:src + w] = np.eye(w)

    pick_block = tuple(_block_picker(layout, p) for p in range(0, H + 2))

    pick_check = {}
    pick_hat = np.zeros((layout.r_hi + 1, layout.n_components, m, mh))
    for i in range(0, layout.r_hi + 1):
        for d in range(layout.d_lo, layout.d_hi + 1):
            p = i + d
            width = layout.block_width(p)
            chk = np.zeros((m, width))
            off = (layout.d_hi - d) * m
            chk[:, off:off + m] = np.eye(m)
            pick_check[i, d] = chk
            if 1 <= p <= H:
                pick_hat[i, d - layout.d_lo] = chk @ pick_block[p]

    pick_now = np.zeros((layout.n_components, m, mt))
    if layout.d_lo == 0:
        pick_now[0, :, mt - m:] = np.eye(m)

    for arr in (shift_full, shift_in, pick_hat, pick_now):
        arr.setflags(write=False)
    return SelectorSet(layout, shift_full, shift_in, pick_block, pick_check, pick_hat, pick_now)

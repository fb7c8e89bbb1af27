"""Payoff library for the claims being priced.

Built-in two-period variants: vanilla call, knock-out call, Asian call,
look-back call and look-back digital, plus tabulated custom claims keyed by
path.  Payouts are per option; contract size is applied by callers.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

_TABLE_DECIMALS = 9  # custom-claim lookup keys are rounded to this precision


class ClaimKind(str, Enum):
    VANILLA_CALL = "vanilla_call"
    KNOCKOUT_CALL = "knockout_call"
    ASIAN_CALL = "asian_call"
    LOOKBACK_CALL = "lookback_call"
    LOOKBACK_DIGITAL = "lookback_digital"
    CUSTOM = "custom"


@dataclass(frozen=True)
class Breakpoint:
    """A payout nonsmoothness location: a kink (continuous) or a jump."""

    value: float
    kind: str  # "kink" | "jump"


@dataclass(frozen=True)
class Claim:
    kind: ClaimKind
    strike: float = 0.0
    barrier: float | None = None
    payout_level: float = 10.0
    contract_size: float = 100.0
    table: dict | None = field(default=None, hash=False)

    def __post_init__(self):
        if self.kind is not ClaimKind.CUSTOM and self.strike <= 0:
            raise ValueError("strike must be positive")
        if self.kind is ClaimKind.KNOCKOUT_CALL and (self.barrier is None or self.barrier <= 0):
            raise ValueError("knock-out claim needs a positive barrier")
        if self.kind is ClaimKind.LOOKBACK_DIGITAL and self.payout_level <= 0:
            raise ValueError("digital payout level must be positive")
        if self.kind is ClaimKind.CUSTOM and not self.table:
            raise ValueError("custom claim needs a payout table")

    @property
    def label(self) -> str:
        if self.kind is ClaimKind.KNOCKOUT_CALL:
            return f"knockout_call(K={self.strike:g},B={self.barrier:g})"
        if self.kind is ClaimKind.LOOKBACK_DIGITAL:
            return f"lookback_digital(K={self.strike:g},level={self.payout_level:g})"
        if self.kind is ClaimKind.CUSTOM:
            return "custom"
        return f"{self.kind.value}(K={self.strike:g})"


def vanilla_call(strike: float, contract_size: float = 100.0) -> Claim:
    return Claim(ClaimKind.VANILLA_CALL, strike, contract_size=contract_size)


def knockout_call(strike: float, barrier: float, contract_size: float = 100.0) -> Claim:
    return Claim(ClaimKind.KNOCKOUT_CALL, strike, barrier=barrier, contract_size=contract_size)


def asian_call(strike: float, contract_size: float = 100.0) -> Claim:
    return Claim(ClaimKind.ASIAN_CALL, strike, contract_size=contract_size)


def lookback_call(strike: float, contract_size: float = 100.0) -> Claim:
    return Claim(ClaimKind.LOOKBACK_CALL, strike, contract_size=contract_size)


def lookback_digital(strike: float, payout_level: float = 10.0, contract_size: float = 100.0) -> Claim:
    return Claim(ClaimKind.LOOKBACK_DIGITAL, strike, payout_level=payout_level, contract_size=contract_size)


def custom_claim(table: dict, contract_size: float = 100.0) -> Claim:
    keyed = {_table_key(path): float(v) for path, v in table.items()}
    return Claim(ClaimKind.CUSTOM, contract_size=contract_size, table=keyed)


def _table_key(path) -> tuple:
    return tuple(round(float(x), _TABLE_DECIMALS) for x in path)


def claim_payout(claim: Claim, path) -> float:
    """Payout per option for one index path (X_1, ..., X_T).

    Built-in variants require a two-period path; custom tables accept whatever
    horizon their table was built for.
    """
    if claim.kind is ClaimKind.CUSTOM:
        key = _table_key(path)
        try:
            return claim.table[key]
        except KeyError:
            raise KeyError(f"custom claim table has no entry for path {key}") from None
    if len(path) != 2:
        raise ValueError(f"built-in claims are two-period, got a path of length {len(path)}")
    x1, x2 = float(path[0]), float(path[1])
    k = claim.strike
    if claim.kind is ClaimKind.VANILLA_CALL:
        return max(x2 - k, 0.0)
    if claim.kind is ClaimKind.KNOCKOUT_CALL:
        return max(x2 - k, 0.0) if x1 < claim.barrier else 0.0
    if claim.kind is ClaimKind.ASIAN_CALL:
        return max(0.5 * (x1 + x2) - k, 0.0)
    if claim.kind is ClaimKind.LOOKBACK_CALL:
        return max(max(x1 - k, 0.0), max(x2 - k, 0.0))
    if claim.kind is ClaimKind.LOOKBACK_DIGITAL:
        return claim.payout_level if (x1 >= k or x2 >= k) else 0.0
    raise ValueError(f"unknown claim kind {claim.kind}")


def claim_payout_grid(claim: Claim, points: np.ndarray) -> np.ndarray:
    """Vectorized ``claim_payout`` over an (M, T) array of paths."""
    points = np.asarray(points, dtype=float)
    if claim.kind is ClaimKind.CUSTOM:
        return np.array([claim_payout(claim, row) for row in points])
    if points.shape[1] != 2:
        raise ValueError("built-in claims are two-period")
    x1, x2 = points[:, 0], points[:, 1]
    k = claim.strike
    if claim.kind is ClaimKind.VANILLA_CALL:
        return np.maximum(x2 - k, 0.0)
    if claim.kind is ClaimKind.KNOCKOUT_CALL:
        return np.where(x1 < claim.barrier, np.maximum(x2 - k, 0.0), 0.0)
    if claim.kind is ClaimKind.ASIAN_CALL:
        return np.maximum(0.5 * (x1 + x2) - k, 0.0)
    if claim.kind is ClaimKind.LOOKBACK_CALL:
        return np.maximum(np.maximum(x1 - k, 0.0), np.maximum(x2 - k, 0.0))
    if claim.kind is ClaimKind.LOOKBACK_DIGITAL:
        return np.where((x1 >= k) | (x2 >= k), claim.payout_level, 0.0)
    raise ValueError(f"unknown claim kind {claim.kind}")


def claim_breakpoints(claim: Claim) -> list[list[Breakpoint]]:
    """Per-period sorted breakpoints of the payout, so scenario grids can
    resolve every kink and jump.  Custom claims return empty lists."""
    if claim.kind is ClaimKind.CUSTOM:
        return [[], []]
    k = claim.strike
    if claim.kind is ClaimKind.VANILLA_CALL:
        return [[], [Breakpoint(k, "kink")]]
    if claim.kind is ClaimKind.KNOCKOUT_CALL:
        return [[Breakpoint(claim.barrier, "jump")], [Breakpoint(k, "kink")]]
    if claim.kind is ClaimKind.ASIAN_CALL:
        return [[Breakpoint(k, "kink")], [Breakpoint(k, "kink")]]
    if claim.kind is ClaimKind.LOOKBACK_CALL:
        return [[Breakpoint(k, "kink")], [Breakpoint(k, "kink")]]
    if claim.kind is ClaimKind.LOOKBACK_DIGITAL:
        return [[Breakpoint(k, "jump")], [Breakpoint(k, "jump")]]
    raise ValueError(f"unknown claim kind {claim.kind}")


def load_claim_table(csv_path, contract_size: float = 100.0) -> Claim:
    """Read a custom claim from CSV rows of (X1, X2, payout)."""
    table = {}
    with open(csv_path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().lower() in ("x1", "# x1"):
                continue
            x1, x2, value = (float(v) for v in row[:3])
            table[(x1, x2)] = value
    return custom_claim(table, contract_size=contract_size)

"""Token holdings, stakes, delegations, validating power and daily rewards.

Token amounts are plain floats at desk scale; shares and powers are floats
with stated tolerances.  Consensus never compares these floats directly: the
simulator hands integer validating powers to the threshold checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

__all__ = [
    "StakeParams",
    "Account",
    "Action",
    "AccountCheck",
    "ValidatorRecord",
    "RewardLedger",
    "TxSlot",
    "DelegationCapExceeded",
    "importance_network",
    "network_importances",
    "transacting_power",
    "total_transacting_power",
    "slot_constants",
    "slot_for_stake",
    "delegated_to",
    "relative_weight",
    "attributed_gas",
    "validator_importance",
    "validating_power",
    "composite_score",
    "check_account",
    "validate_account_action",
    "build_validators",
    "block_reward",
    "daily_rewards",
]


class DelegationCapExceeded(ValueError):
    def __init__(self, validator: str, delegated: float, cap: float) -> None:
        super().__init__(f"delegation-cap: {validator} has {delegated} delegated, cap {cap}")
        self.validator = validator
        self.delegated = delegated
        self.cap = cap


@dataclass(frozen=True)
class StakeParams:
    F: float = 3.175e9
    delta_days: int = 30
    lambda_days: int = 90
    epsilon: float = 1.0
    theta: float = 0.30
    xi: float = 0.50
    phi_commission: float = 0.30
    mu: float = 0.15
    T_s_min: float = 0.001
    T_s_max: float = 0.004
    M: float = 15.0
    Q: float | None = None
    Pi: float = 5e9
    Theta_tp: float = 500_000.0
    Z: float = 996_341_176.0
    reward_days: int = 1460

    def __post_init__(self) -> None:
        for name in ("theta", "xi", "phi_commission", "mu"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")
        if self.T_s_min > self.T_s_max:
            raise ValueError("T_s_min exceeds T_s_max")
        for name in ("F", "Pi", "Theta_tp", "Z"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.Q is not None and self.Q <= 0:
            raise ValueError("Q must be positive when set")

    @property
    def min_stake(self) -> float:
        return self.T_s_min * self.F

    @property
    def max_stake(self) -> float:
        return self.T_s_max * self.F


@dataclass
class Account:
    id: str
    t: float
    t_x: float = 0.0
    t_s: float = 0.0
    t_d: dict[str, float] = field(default_factory=dict)
    g: float = 0.0
    staked_day: int | None = None

    @property
    def delegated_total(self) -> float:
        return sum(self.t_d.values())

    @property
    def is_validator(self) -> bool:
        return self.t_s > 0


@dataclass(frozen=True)
class Action:
    """A requested change: ``stake``, ``tx-stake`` or ``delegate`` (adds ``amount``)."""

    kind: str
    amount: float
    validator: str | None = None


@dataclass
class AccountCheck:
    violations: list[str] = field(default_factory=list)
    stale: bool = False

    @property
    def ok(self) -> bool:
        return not self.violations


@dataclass(frozen=True)
class TxSlot:
    gas_per_sec: float
    bytes_per_sec: float

    def __add__(self, other: "TxSlot") -> "TxSlot":
        return TxSlot(self.gas_per_sec + other.gas_per_sec, self.bytes_per_sec + other.bytes_per_sec)


@dataclass
class ValidatorRecord:
    id: str
    w_v: float
    h_v: float = 0.0
    h_hat: float = 0.0
    s_w: float = 1.0
    s_t: float = 1.0
    s_p: float = 1.0
    s_v: float = 1.0
    p_v: float = 0.0
    t_s: float = 0.0
    delegated_in: float = 0.0


@dataclass
class RewardLedger:
    day: int
    B_d: float
    R_v_spv: float
    R_x: float
    R_b: float
    payouts: dict[str, float] = field(default_factory=dict)
    validator_rewards: dict[str, float] = field(default_factory=dict)
    F_s: float = 0.0
    F_c: float = 0.0

    @property
    def R(self) -> float:
        return self.R_x + self.R_b


# -- importance and transacting power -------------------------------------------


def importance_network(g_i: float, G_total: float, P_total: float) -> float:
    """Gas share of one account rebased onto total transacting power."""
    if g_i == 0:
        return 0.0
    if G_total <= 0:
        raise ValueError("G_total must be positive when g_i > 0")
    return g_i / G_total * P_total


def total_transacting_power(accounts: Iterable[Account]) -> float:
    # X = xi * sum(g_hat) + (1 - xi) * sum(t) with sum(g_hat) = X gives X = sum(t)
    return sum(a.t for a in accounts)


def network_importances(accounts: Sequence[Account]) -> dict[str, float]:
    P = total_transacting_power(accounts)
    G = sum(a.g for a in accounts)
    return {a.id: importance_network(a.g, G, P) for a in accounts}


def transacting_power(g_hat: float, t: float, xi: float) -> float:
    if g_hat < 0 or t < 0:
        raise ValueError("inputs must be non-negative")
    return xi * g_hat + (1.0 - xi) * t


def slot_constants(params: StakeParams) -> tuple[float, float]:
    return params.F / params.Pi, params.F / params.Theta_tp


def slot_for_stake(x_staked: float, params: StakeParams) -> TxSlot:
    if x_staked < 0:
        raise ValueError("x_staked must be non-negative")
    sigma_g, sigma_b = slot_constants(params)
    return TxSlot(x_staked / sigma_g, x_staked / sigma_b)


# -- weights and power ------------------------------------------------------------


def delegated_to(validator: str, accounts: Iterable[Account]) -> float:
    return sum(a.t_d.get(validator, 0.0) for a in accounts)


def relative_weight(account: Account, delegations_in: float, params: StakeParams | None = None) -> float:
    params = params or StakeParams()
    if account.t_s <= 0:
        raise ValueError(f"{account.id} has no validation stake")
    cap = params.M * account.t_s
    if delegations_in > cap:
        raise DelegationCapExceeded(account.id, delegations_in, cap)
    return account.t_s + delegations_in


def attributed_gas(validator: Account, accounts: Iterable[Account]) -> float:
    """Own gas plus each delegator's gas in proportion to the share delegated here."""
    h = validator.g
    for a in accounts:
        share = a.t_d.get(validator.id, 0.0)
        if share and a.g:
            if a.t <= 0:
                raise ValueError(f"delegator {a.id} holds no tokens")
            h += a.g * share / a.t
    return h


def validator_importance(h_v: float, H_total: float, W_total: float) -> float:
    if H_total <= 0:
        return 0.0
    return h_v / H_total * W_total


def validating_power(s_v: float, h_hat: float, w_v: float, theta: float) -> float:
    if not 0.0 <= s_v <= 1.0:
        raise ValueError("s_v must lie in [0, 1]")
    return s_v * (theta * h_hat + (1.0 - theta) * w_v)


def composite_score(
    s_w: float, s_t: float, s_p: float, weights: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
) -> float:
    """Weighted mean of the three performance components."""
    for value in (s_w, s_t, s_p):
        if not 0.0 <= value <= 1.0:
            raise ValueError("score components must lie in [0, 1]")
    if any(w < 0 for w in weights) or not math.isclose(sum(weights), 1.0, abs_tol=1e-9):
        raise ValueError("weights must be non-negative and sum to 1")
    value = weights[0] * s_w + weights[1] * s_t + weights[2] * s_p
    return min(1.0, max(0.0, value))


def build_validators(
    accounts: Sequence[Account],
    params: StakeParams | None = None,
    scores: Mapping[str, tuple[float, float, float]] | None = None,
) -> list[ValidatorRecord]:
    """Weights, importances, scores and validating powers for every staker."""
    params = params or StakeParams()
    scores = scores or {}
    stakers = [a for a in accounts if a.t_s > 0]
    records = []
    for v in stakers:
        d_in = delegated_to(v.id, accounts)
        w = relative_weight(v, d_in, params)
        rec = ValidatorRecord(id=v.id, w_v=w, t_s=v.t_s, delegated_in=d_in)
        rec.h_v = attributed_gas(v, accounts)
        rec.s_w, rec.s_t, rec.s_p = scores.get(v.id, (1.0, 1.0, 1.0))
        rec.s_v = composite_score(rec.s_w, rec.s_t, rec.s_p)
        records.append(rec)
    W = sum(r.w_v for r in records)
    H = sum(r.h_v for r in records)
    for rec in records:
        rec.h_hat = validator_importance(rec.h_v, H, W)
        rec.p_v = validating_power(rec.s_v, rec.h_hat, rec.w_v, params.theta)
    return records


# -- constraints ----------------------------------------------------------------


def check_account(
    account: Account,
    params: StakeParams | None = None,
    *,
    delegated_in: float = 0.0,
    day: int | None = None,
) -> AccountCheck:
    params = params or StakeParams()
    result = AccountCheck()
    v = result.violations
    amounts = [account.t, account.t_x, account.t_s, account.g, *account.t_d.values()]
    if any(x < 0 for x in amounts):
        v.append("negative")
    committed = account.t_x + account.t_s + account.delegated_total
    if committed > account.t:
        v.append("eq1")
    if account.t_s > 0:
        if account.t_s < params.min_stake:
            v.append("min-stake")
        if account.t_s > params.max_stake:
            v.append("max-stake")
    if delegated_in > 0 and delegated_in > params.M * account.t_s:
        v.append("delegation-cap")
    if params.Q is not None:
        if account.delegated_total > params.Q * account.t:
            v.append("q-delegation")
        if account.t_x > params.Q * account.t:
            v.append("q-tx-stake")
    stakes = [account.t_x, account.t_s, *account.t_d.values()]
    if any(0 < x < params.epsilon for x in stakes):
        v.append("epsilon")
    if day is not None and account.t_s > 0 and account.staked_day is not None:
        result.stale = day - account.staked_day > params.lambda_days
    return result


def validate_account_action(
    account: Account,
    action: Action,
    params: StakeParams | None = None,
    *,
    delegated_in: float = 0.0,
    day: int | None = None,
) -> AccountCheck:
    """Check the account state that would result from applying ``action``."""
    params = params or StakeParams()
    after = Account(
        id=account.id,
        t=account.t,
        t_x=account.t_x,
        t_s=account.t_s,
        t_d=dict(account.t_d),
        g=account.g,
        staked_day=account.staked_day,
    )
    if action.kind == "stake":
        after.t_s += action.amount
        if day is not None:
            after.staked_day = day
    elif action.kind == "tx-stake":
        after.t_x += action.amount
    elif action.kind == "delegate":
        if action.validator is None:
            raise ValueError("delegate needs a validator")
        if 0 < action.amount < params.epsilon:
            # the delegation itself must meet the minimum, not just the running total
            check = check_account(after, params, delegated_in=delegated_in, day=day)
            check.violations.append("epsilon")
            return check
        after.t_d[action.validator] = after.t_d.get(action.validator, 0.0) + action.amount
    else:
        raise ValueError(f"unknown action {action.kind!r}")
    return check_account(after, params, delegated_in=delegated_in, day=day)


# -- rewards --------------------------------------------------------------------


def block_reward(day: int, params: StakeParams | None = None) -> float:
    params = params or StakeParams()
    if 1 <= day <= params.reward_days:
        return params.Z / params.reward_days
    return 0.0


def daily_rewards(
    day: int,
    B_d: float,
    validators: Sequence[ValidatorRecord],
    delegators: Iterable[Account],
    params: StakeParams | None = None,
    *,
    F_s: float = 0.0,
) -> RewardLedger:
    """Split the day's rewards among validators and their delegators.

    Each validator keeps its self-stake fraction of R_v plus a commission mu on
    the delegated fraction; delegators share the remaining (1 - mu) pro rata.
    ``F_s`` is the SPV balance before the day; it gains the retained fees and
    pays out the block reward.
    """
    params = params or StakeParams()
    if B_d < 0:
        raise ValueError("fees must be non-negative")
    R_spv = params.phi_commission * B_d
    R_x = (1.0 - params.phi_commission) * B_d
    R_b = block_reward(day, params)
    R = R_x + R_b
    P = sum(v.p_v for v in validators)
    ledger = RewardLedger(day=day, B_d=B_d, R_v_spv=R_spv, R_x=R_x, R_b=R_b)
    if validators and P <= 0:
        raise ValueError("total validating power must be positive")
    delegators = list(delegators)
    payouts = ledger.payouts
    for v in validators:
        R_v = R * v.p_v / P
        ledger.validator_rewards[v.id] = R_v
        if R_v == 0:
            continue
        own = R_v * (v.t_s + params.mu * v.delegated_in) / v.w_v
        payouts[v.id] = payouts.get(v.id, 0.0) + own
        for a in delegators:
            amount = a.t_d.get(v.id, 0.0)
            if amount:
                share = R_v * (1.0 - params.mu) * amount / v.w_v
                payouts[a.id] = payouts.get(a.id, 0.0) + share
    ledger.F_s = F_s + R_spv - R_b
    ledger.F_c = params.F - ledger.F_s
    return ledger

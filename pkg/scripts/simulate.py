"""
Generate synthetic customer bases from BG/NBD (+ optional Gamma-Gamma) parameters.

Customers are generated in blocks of BLOCK_SIZE consecutive indices; block k
draws from make_rng(seed, k), so output does not depend on the thread count
(CLV_THREADS) used to run the blocks.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
import pandas as pd
from tqdm import tqdm

from scripts.config import get_thread_count, to_utc
from scripts.errors import DomainError
from scripts.ingest import ONE_DAY, RFM_COLUMNS, TransactionLog
from scripts.numerics import Distribution, draw, make_rng


BLOCK_SIZE = 1024
TINY_RATE = np.finfo(float).tiny


@dataclass(frozen=True)
class SimulationConfig:
    n_customers: int
    horizon_T: float
    r: float
    alpha: float
    a: float
    b: float
    p_shape: Optional[float] = None
    q_shape: Optional[float] = None
    gamma_scale: Optional[float] = None
    seed: int = 42
    acquisition_window: float = 0.0
    death_at_acquisition: bool = False

    def __post_init__(self):
        if int(self.n_customers) < 0:
            raise DomainError("n_customers must be nonnegative")
        if not self.horizon_T > 0:
            raise DomainError("horizon_T must be positive")
        for name in ("r", "alpha", "a", "b"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be positive")
        spend = (self.p_shape, self.q_shape, self.gamma_scale)
        if any(v is not None for v in spend):
            if any(v is None or not v > 0 for v in spend):
                raise DomainError("p_shape, q_shape and gamma_scale must all be given and positive")
        if not 0 <= self.acquisition_window <= self.horizon_T:
            raise DomainError("acquisition_window must lie in [0, horizon_T]")

    @property
    def has_spend(self) -> bool:
        return self.p_shape is not None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SimulationResult:
    """`transactions` times are in model time units since the simulation origin."""

    transactions: pd.DataFrame
    latent: pd.DataFrame
    config: SimulationConfig


def _user_ids(start: int, stop: int) -> np.ndarray:
    return np.array([f"C{i:07d}" for i in range(start, stop)], dtype=object)


def _simulate_block(config: SimulationConfig, block: int):
    start = block * BLOCK_SIZE
    stop = min(start + BLOCK_SIZE, int(config.n_customers))
    m = stop - start
    rng = make_rng(config.seed, block)

    lam = np.maximum(draw(rng, Distribution.gamma(config.r, config.alpha), m), TINY_RATE)
    p = draw(rng, Distribution.beta(config.a, config.b), m)
    if config.acquisition_window > 0:
        acquired = config.acquisition_window * draw(rng, Distribution.uniform(), m)
    else:
        acquired = np.zeros(m)
    nu = draw(rng, Distribution.gamma(config.q_shape, config.gamma_scale), m) if config.has_spend else None

    owners = [np.arange(m)]
    times = [acquired.copy()]
    alive = np.ones(m, dtype=bool)
    if config.death_at_acquisition:
        alive &= rng.random(m) >= p
    clock = acquired.copy()
    while alive.any():
        idx = np.flatnonzero(alive)
        clock[idx] += rng.exponential(1.0 / lam[idx])
        inside = clock[idx] < config.horizon_T
        alive[idx[~inside]] = False
        bought = idx[inside]
        owners.append(bought)
        times.append(clock[bought].copy())
        # dropout is decided right after each repeat purchase
        alive[bought[rng.random(bought.size) < p[bought]]] = False

    owner = np.concatenate(owners)
    time = np.concatenate(times)
    order = np.lexsort((time, owner))
    owner, time = owner[order], time[order]
    if config.has_spend:
        value = rng.gamma(config.p_shape, 1.0 / nu[owner])
    else:
        value = np.zeros(owner.size)

    ids = _user_ids(start, stop)
    latent = {
        "user_id": ids,
        "lambda": lam,
        "p_dropout": p,
        "acquisition_time": acquired,
    }
    if config.has_spend:
        latent["nu"] = nu
    return ids[owner], time, value, latent


def simulate_customers(config: SimulationConfig, threads: Optional[int] = None, progress: bool = False) -> SimulationResult:
    """
    Simulate `config.n_customers` customers up to `config.horizon_T`.

    Per customer: λ ~ Gamma(r, rate alpha), p ~ Beta(a, b); the first purchase
    is at the acquisition time (0 unless acquisition_window > 0); repeat gaps
    are Exponential(λ) and the customer drops out after each repeat purchase
    with probability p (also after the first one when death_at_acquisition).
    With spend parameters, ν ~ Gamma(q, rate γ) per customer and each
    transaction value ~ Gamma(p_shape, rate ν).
    """
    n = int(config.n_customers)
    n_blocks = -(-n // BLOCK_SIZE)
    threads = threads or get_thread_count()

    with ThreadPoolExecutor(max_workers=threads) as pool:
        blocks = list(tqdm(
            pool.map(lambda k: _simulate_block(config, k), range(n_blocks)),
            total=n_blocks,
            desc="Simulating customers",
            disable=not progress,
        ))

    if blocks:
        user_id = np.concatenate([blk[0] for blk in blocks])
        time = np.concatenate([blk[1] for blk in blocks])
        value = np.concatenate([blk[2] for blk in blocks])
        latent = pd.concat([pd.DataFrame(blk[3]) for blk in blocks], ignore_index=True)
    else:
        user_id = np.array([], dtype=object)
        time = np.array([], dtype=float)
        value = np.array([], dtype=float)
        latent = pd.DataFrame(columns=["user_id", "lambda", "p_dropout", "acquisition_time"])

    transactions = pd.DataFrame({"user_id": user_id, "time": time, "value": value})
    sequence = transactions.groupby("user_id", sort=False).cumcount()
    transactions.insert(1, "transaction_id", transactions["user_id"] + "-" + sequence.astype(str))
    return SimulationResult(transactions=transactions, latent=latent, config=config)


def to_transaction_log(result: SimulationResult, start="2022-01-01", time_unit=ONE_DAY) -> TransactionLog:
    """Calendar-time view of a simulation: timestamp = start + time·unit, to the second."""
    unit_seconds = pd.Timedelta(time_unit).total_seconds()
    tx = result.transactions
    offsets = pd.to_timedelta(np.floor(tx["time"].to_numpy() * unit_seconds), unit="s")
    frame = pd.DataFrame({
        "user_id": tx["user_id"].to_numpy(),
        "transaction_id": tx["transaction_id"].to_numpy(),
        "timestamp": to_utc(start) + offsets,
        "value": tx["value"].to_numpy(dtype=float),
    })
    return TransactionLog(frame=frame.reset_index(drop=True))


def format_transactions(log: TransactionLog) -> pd.DataFrame:
    """Text form of a log with ISO-8601 UTC timestamps, as parse_transactions reads it."""
    frame = log.frame.copy()
    frame["timestamp"] = frame["timestamp"].dt.strftime("%Y-%m-%dT%H:%M:%SZ")
    return frame


def rfm_from_simulation(result: SimulationResult) -> pd.DataFrame:
    """Continuous-time (x, t_x, T, m̄) straight from simulated event times."""
    tx = result.transactions
    if tx.empty:
        return pd.DataFrame(columns=RFM_COLUMNS)
    grouped = tx.groupby("user_id", sort=True)
    first = grouped["time"].min()
    stats = pd.DataFrame({
        "frequency": grouped.size() - 1,
        "recency": grouped["time"].max() - first,
        "T": result.config.horizon_T - first,
    })
    repeat = tx[tx["time"] > tx["user_id"].map(first)]
    stats["monetary_value"] = repeat.groupby("user_id")["value"].mean().reindex(stats.index, fill_value=0.0)
    return stats.rename_axis("user_id").reset_index()[RFM_COLUMNS]


# --- Main Test Block ----------------------------------------------------------

if __name__ == "__main__":
    cfg = SimulationConfig(
        n_customers=5000, horizon_T=78, r=0.25, alpha=4.5, a=0.8, b=2.4,
        p_shape=6, q_shape=4, gamma_scale=15, seed=7,
    )
    sim = simulate_customers(cfg, progress=True)
    rfm = rfm_from_simulation(sim)
    print(f"\nSimulated {len(sim.transactions)} transactions for {cfg.n_customers} customers")
    print(f"Mean repeat transactions: {rfm['frequency'].mean():.4f}")
    print(f"Mean λ: {sim.latent['lambda'].mean():.4f} (r/alpha = {cfg.r / cfg.alpha:.4f})")
    print(rfm.head().to_string(index=False))

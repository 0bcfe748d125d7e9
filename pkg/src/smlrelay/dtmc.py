"""Discrete-time Markov chain over relay buffer states.

A state is ``(e_d, B_1, ..., B_N)``: the direct-link toggle and the number
of packet-sets in each relay buffer. The transition matrix is stored
column-stochastic, ``A[to, from]``, so the stationary law solves
``A @ pi = pi``.

Transition probabilities come from an *action estimator*: a callable that
maps a state to the probabilities of the actions the protocol takes there,
``("SR", i)``, ``("RD", i)``, ``("DT",)`` or ``("OUT",)``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import spsolve

from .analysis import log2det_capacity
from .channel import CsiModel, LinkVarianceProfile, apply_csi_error_batch, build_constellation, \
    generate_channel_batch, split_submatrices
from .selection import MMD, QN, difference_terms, distance_report_batch

__all__ = [
    "StateSpaceTooLarge",
    "ChainNotIrreducible",
    "DtmcModel",
    "DtmcMetrics",
    "dtmc_build",
    "stationary_distribution",
    "outage_throughput_delay",
    "relay_packet_fraction",
    "SelectionActionEstimator",
]

DEFAULT_STATE_CAP = 100_000

Action = tuple
ActionEstimator = Callable[[tuple], Mapping[Action, float]]


class StateSpaceTooLarge(ValueError):
    pass


class ChainNotIrreducible(RuntimeError):
    pass


@dataclass
class DtmcModel:
    N: int
    L: int
    Z: int
    states: list[tuple]
    A: sp.csc_matrix
    action_probs: list[dict]
    pi: np.ndarray | None = None

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def self_loops(self) -> np.ndarray:
        """Outage probability of each state (mass that leaves it unchanged)."""
        return self.A.diagonal()

    def buffer_levels(self) -> np.ndarray:
        """``(n_states, N)`` array of ``B_n`` per state."""
        return np.array([s[1:] for s in self.states], dtype=float).reshape(len(self.states), self.N)


def _next_state(state: tuple, action: Action, L: int, Z: int) -> tuple:
    kind = action[0]
    s = list(state)
    if kind == "SR":
        i = action[1]
        if s[1 + i] >= L:
            raise ValueError(f"SR into full buffer {i} from state {state}")
        s[1 + i] += 1
    elif kind == "RD":
        i = action[1]
        if s[1 + i] <= 0:
            raise ValueError(f"RD from empty buffer {i} in state {state}")
        s[1 + i] -= 1
    elif kind == "DT":
        if Z == 2:
            s[0] ^= 1
    elif kind != "OUT":
        raise ValueError(f"unknown action {action!r}")
    return tuple(s)


def dtmc_build(N: int, L: int, Z: int, estimator: ActionEstimator,
               cap: int = DEFAULT_STATE_CAP) -> DtmcModel:
    if N < 1 or L < 1 or Z not in (1, 2):
        raise ValueError("need N >= 1, L >= 1 and Z in {1, 2}")
    n_states = Z * (L + 1) ** N
    if n_states > cap:
        raise StateSpaceTooLarge(f"{n_states} states exceed the cap of {cap}")
    states = [(e,) + b for e in range(Z) for b in itertools.product(range(L + 1), repeat=N)]
    index = {s: k for k, s in enumerate(states)}
    rows, cols, vals, actions = [], [], [], []
    for k, s in enumerate(states):
        probs = dict(estimator(s))
        total = sum(probs.values())
        if not np.isclose(total, 1.0, atol=1e-12):
            raise ValueError(f"action probabilities of state {s} sum to {total}")
        actions.append(probs)
        for a, p in probs.items():
            if p == 0:
                continue
            rows.append(index[_next_state(s, a, L, Z)])
            cols.append(k)
            vals.append(p)
    A = sp.csc_matrix((vals, (rows, cols)), shape=(n_states, n_states))
    return DtmcModel(N, L, Z, states, A, actions)


def stationary_distribution(model: DtmcModel, tol: float = 1e-10) -> np.ndarray:
    """Solve ``A pi = pi``, ``sum(pi) = 1`` on the chain's single recurrent class.

    Transient states get zero mass. More than one closed class means the
    chain is not irreducible and no unique answer exists.
    """
    A = model.A.tocsr()
    n = A.shape[0]
    n_comp, labels = connected_components(A.T, directed=True, connection="strong")
    # a class is closed when no edge leaves it
    coo = A.tocoo()
    leaving = np.zeros(n_comp, dtype=bool)
    for r, c, v in zip(coo.row, coo.col, coo.data):
        if v > 0 and labels[r] != labels[c]:
            leaving[labels[c]] = True
    closed = np.flatnonzero(~leaving)
    if len(closed) != 1:
        raise ChainNotIrreducible(f"chain has {len(closed)} closed classes; not irreducible")
    members = np.flatnonzero(labels == closed[0])
    sub = A[members][:, members].tolil()
    m = len(members)
    system = (sub - sp.identity(m, format="lil")).tolil()
    system[0, :] = np.ones(m)
    rhs = np.zeros(m)
    rhs[0] = 1.0
    sol = spsolve(system.tocsc(), rhs) if m > 1 else np.array([1.0])
    pi = np.zeros(n)
    pi[members] = np.atleast_1d(sol)
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    resid = np.abs(A @ pi - pi).max()
    if resid > tol or not np.isfinite(resid):
        raise ChainNotIrreducible(f"stationary solve did not converge (residual {resid:.3e})")
    model.pi = pi
    return pi


@dataclass(frozen=True)
class DtmcMetrics:
    outage: float
    throughput: float
    queue_length: float
    delay: float
    queue_lengths: np.ndarray
    rho: float


def relay_packet_fraction(model: DtmcModel, pi: np.ndarray | None = None) -> float:
    """Stationary share of source transmissions that go to a relay (SR vs DT)."""
    pi = model.pi if pi is None else pi
    sr = dt = 0.0
    for p, probs in zip(pi, model.action_probs):
        for a, q in probs.items():
            if a[0] == "SR":
                sr += p * q
            elif a[0] == "DT":
                dt += p * q
    return sr / (sr + dt) if sr + dt > 0 else 0.0


def outage_throughput_delay(model: DtmcModel, rho: float = 0.5, N: int | None = None,
                            switch: float | None = None, p_ml: float | None = None,
                            p_ml_prime: float | None = None,
                            pi: np.ndarray | None = None) -> DtmcMetrics:
    """Outage probability, per-relay throughput, queue length and Little's-law delay.

    Without ``switch`` the MMD-Max-Link forms are used. With ``switch`` the
    Switched Max-Link forms apply: throughput scales by
    ``rho_SML = 2 rho P' / (P' + 1)`` and the delay is additionally weighted
    by ``p_ml``. ``p_ml_prime`` is the relay share at ``S' = 1`` if
    ``S >= 1``, else at ``S' = S``; the caller measures both.
    """
    if not 0 < rho <= 1:
        raise ValueError("rho must lie in (0, 1]")
    pi = model.pi if pi is None else pi
    if pi is None:
        pi = stationary_distribution(model)
    N = model.N if N is None else N
    outage = float(np.dot(pi, model.self_loops))
    levels = model.buffer_levels()
    queue = pi @ levels
    q = float(queue.mean())
    if switch is None:
        throughput = rho * (1.0 - outage) / N
        delay = N * q / (rho * (1.0 - outage)) if outage < 1 else float("inf")
        return DtmcMetrics(outage, throughput, q, delay, queue, rho)
    if p_ml is None or p_ml_prime is None:
        raise ValueError("switched delay needs p_ml and p_ml_prime")
    if p_ml_prime == 0:
        # pure direct transmission: nothing waits in a relay
        return DtmcMetrics(outage, 0.0, q, 0.0, queue, 0.0)
    rho_sml = 2.0 * rho * p_ml_prime / (p_ml_prime + 1.0)
    throughput = rho_sml * (1.0 - outage) / N
    delay = N * q / (rho_sml * (1.0 - outage)) * p_ml if outage < 1 else float("inf")
    return DtmcMetrics(outage, throughput, q, delay, queue, rho_sml)


class SelectionActionEstimator:
    """Monte Carlo action probabilities of a protocol's selection rule.

    A pool of ``draws`` channel realisations is generated once; for each
    buffer state the protocol's ranking and mode rule are applied to every
    draw with that state's feasibility mask, and the resulting actions are
    tallied. The source is assumed backlogged.
    """

    def __init__(self, protocol, N: int, M_S: int, U: int, L: int, constellation: str = "BPSK",
                 snr_db: float = 10.0, profile: LinkVarianceProfile | None = None,
                 csi: CsiModel | None = None, rng=None, draws: int = 10_000, N0: float = 1.0):
        self.protocol = protocol
        self.N, self.L = N, L
        rng = np.random.default_rng(rng)
        profile = profile or LinkVarianceProfile()
        csi = csi or CsiModel()
        E = N0 * 10.0 ** (snr_db / 10.0)
        const = build_constellation(constellation)
        batch = generate_channel_batch(rng, draws, N, M_S, U, profile)
        apply_csi_error_batch(rng, batch, csi, E)
        self.draws = draws
        name = protocol.name
        if name in ("mmd_max_link", "switched_max_link", "qn_max_link"):
            crit = QN if name == "qn_max_link" else MMD
            terms = difference_terms(const, M_S) if crit == MMD else None
            rep = distance_report_batch(batch, const, crit, terms)
            ratio = rep.rd.mean() / rep.sr.mean()
            values = np.concatenate([ratio * rep.sr, rep.rd], axis=1)
            self.values = values
            self.order = np.argsort(-values, axis=1, kind="stable")
            self.sd = np.asarray(rep.sd)
            self.switch = protocol.switch if name == "switched_max_link" else 0.0
        elif name == "threshold_max_link_dt":
            e = E / M_S / N0
            thr = protocol.r0 * M_S
            cap = np.vectorize(log2det_capacity, signature="(m,n),()->()")
            sr = cap(batch.H_SR_est, e)
            rd_blocks = cap(split_submatrices(batch.H_RD_est, M_S), e)
            rd = rd_blocks.max(axis=-1)
            sd = cap(batch.H_SD_est, 2 * e)
            values = np.concatenate([sr, rd], axis=1)
            self.values = np.where(values >= thr, values, -np.inf)
            self.order = np.argsort(-self.values, axis=1, kind="stable")
            self.sd_ok = sd >= thr
        else:
            raise ValueError(f"no DTMC action model for protocol {name!r}")

    def __call__(self, state: tuple) -> dict:
        N, L = self.N, self.L
        b = np.asarray(state[1:])
        feasible = np.concatenate([b < L, b > 0])
        fo = feasible[self.order]
        if self.protocol.name == "threshold_max_link_dt":
            fo &= np.isfinite(np.take_along_axis(self.values, self.order, axis=1))
        has = fo.any(axis=1)
        pos = fo.argmax(axis=1)
        winner = self.order[np.arange(self.draws), pos]
        actions = np.empty(self.draws, dtype=np.int64)  # 0..2N-1 link, 2N = DT, 2N+1 = outage
        if self.protocol.name == "threshold_max_link_dt":
            actions[:] = np.where(has, winner, 2 * N + 1)
            actions[self.sd_ok] = 2 * N
        else:
            val = self.values[np.arange(self.draws), winner]
            with np.errstate(divide="ignore"):
                G = np.where(self.sd > 0, val / self.sd, np.inf)
            if self.switch == 0:
                keep = np.ones(self.draws, dtype=bool)
            else:
                keep = np.where(winner < N, G > self.switch, G > 1.0)
            actions[:] = np.where(has & keep, winner, 2 * N)
        counts = np.bincount(actions, minlength=2 * N + 2) / self.draws
        out = {}
        for k, p in enumerate(counts):
            if p == 0:
                continue
            if k < N:
                out[("SR", k)] = p
            elif k < 2 * N:
                out[("RD", k - N)] = p
            elif k == 2 * N:
                out[("DT",)] = p
            else:
                out[("OUT",)] = p
        return out

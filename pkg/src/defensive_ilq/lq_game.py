"""Feedback Nash equilibria of finite-horizon discrete-time LQ games.

Dynamics ``x' = A x + sum_j B_j u_j + c`` and stage cost for player i

    0.5 x^T Q_i x + l_i^T x + sum_j (0.5 u_j^T R_ij u_j + r_ij^T u_j)

plus a terminal ``0.5 x^T Q_i x + l_i^T x``.  Strategies are affine,
``u_i = -P_i x - alpha_i``.  Solved by the coupled backward recursion where
at every step all players' gains come out of one stacked linear system.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import DimensionError, IllConditionedGameError, RegularizationError

COND_LIMIT = 1e12
TIKHONOV = 1e-8


@dataclass
class LqGameStage:
    A: np.ndarray
    B: list
    Q: list
    l: list
    R: list
    r: list | None = None
    c: np.ndarray | None = None


@dataclass
class AffineStrategy:
    """Time-indexed gains ``P`` (K, m_i, n) and feedforwards ``alpha`` (K, m_i)."""

    P: np.ndarray
    alpha: np.ndarray

    def __len__(self):
        return len(self.P)

    def control(self, k, dx):
        return -self.P[k] @ dx - self.alpha[k]

    def copy(self):
        return AffineStrategy(self.P.copy(), self.alpha.copy())

    @classmethod
    def zeros(cls, horizon, m_i, n):
        return cls(np.zeros((horizon, m_i, n)), np.zeros((horizon, m_i)))


@dataclass
class LqValues:
    """Value function pieces per player at k = 0..K: ``0.5 x'Zx + zeta'x + const``."""

    Z: list
    zeta: list
    const: list = field(default_factory=list)


@dataclass
class LqGameArrays:
    """Batched form of a stage list, used internally and by the iterative solver.

    ``Q[i]`` and ``l[i]`` have K+1 rows (the last is terminal); ``R[i][j]`` and
    ``r[i][j]`` have K rows or are ``None`` for an all-zero block.
    """

    A: np.ndarray
    B: np.ndarray
    control_dims: tuple
    Q: list
    l: list
    R: list
    r: list
    c: np.ndarray | None = None

    @property
    def horizon(self):
        return self.A.shape[0]

    @property
    def num_players(self):
        return len(self.control_dims)

    def control_slice(self, i):
        off = sum(self.control_dims[:i])
        return slice(off, off + self.control_dims[i])


def stages_to_arrays(stages, terminal) -> LqGameArrays:
    if not stages:
        raise ValueError("need at least one stage")
    N = len(stages[0].B)
    n = stages[0].A.shape[0]
    dims = tuple(np.asarray(b).shape[1] for b in stages[0].B)
    K = len(stages)
    A = np.stack([np.asarray(s.A, float) for s in stages])
    B = np.stack([np.concatenate([np.asarray(b, float) for b in s.B], axis=1) for s in stages])
    if A.shape[1:] != (n, n) or B.shape[1] != n:
        raise DimensionError("inconsistent stage dimensions")
    Q = [np.stack([np.asarray(s.Q[i], float) for s in stages] + [np.asarray(terminal[i][0], float)]) for i in range(N)]
    l = [np.stack([np.asarray(s.l[i], float) for s in stages] + [np.asarray(terminal[i][1], float)]) for i in range(N)]
    R, r = [], []
    for i in range(N):
        Ri, ri = [], []
        for j in range(N):
            blocks = [s.R[i][j] for s in stages]
            Ri.append(None if all(b is None for b in blocks) else np.stack(
                [np.zeros((dims[j], dims[j])) if b is None else np.asarray(b, float) for b in blocks]))
            rblocks = [None if s.r is None else s.r[i][j] for s in stages]
            ri.append(None if all(b is None for b in rblocks) else np.stack(
                [np.zeros(dims[j]) if b is None else np.asarray(b, float) for b in rblocks]))
        R.append(Ri)
        r.append(ri)
    cs = [s.c for s in stages]
    c = None if all(ci is None for ci in cs) else np.stack([np.zeros(n) if ci is None else np.asarray(ci, float) for ci in cs])
    return LqGameArrays(A, B, dims, Q, l, R, r, c)


def _check_own_blocks(game: LqGameArrays):
    for i in range(game.num_players):
        Rii = game.R[i][i]
        if Rii is None:
            raise RegularizationError(f"player {i} has no control cost; R_ii must be positive definite")
        sym = 0.5 * (Rii + np.swapaxes(Rii, -1, -2))
        eig = np.linalg.eigvalsh(sym)
        bad = np.nonzero(eig.min(axis=-1) <= 0)[0]
        if bad.size:
            raise RegularizationError(f"R_{i}{i} not positive definite at step {int(bad[0])}")


def _solve_coupled(S, Y, k):
    cond = np.linalg.cond(S)
    if not cond < COND_LIMIT:
        S = S + TIKHONOV * np.eye(S.shape[0])
        if not np.linalg.cond(S) < COND_LIMIT:
            raise IllConditionedGameError(f"Nash coupling matrix singular at timestep {k}", timestep=k)
    return np.linalg.solve(S, Y)


def solve_lq_arrays(game: LqGameArrays, return_values=False):
    """Coupled Riccati recursion on batched arrays.

    Returns ``(P, alpha)`` with ``P[i]`` (K, m_i, n) and ``alpha[i]`` (K, m_i);
    with ``return_values`` also an :class:`LqValues`.
    """
    _check_own_blocks(game)
    K = game.horizon
    N = game.num_players
    n = game.A.shape[1]
    m = game.B.shape[2]
    sl = [game.control_slice(i) for i in range(N)]

    P_out = [np.empty((K, game.control_dims[i], n)) for i in range(N)]
    a_out = [np.empty((K, game.control_dims[i])) for i in range(N)]
    Z = [game.Q[i][K].copy() for i in range(N)]
    zeta = [game.l[i][K].copy() for i in range(N)]
    const = [0.0] * N
    if return_values:
        Zs = [[None] * (K + 1) for _ in range(N)]
        zetas = [[None] * (K + 1) for _ in range(N)]
        consts = [[0.0] * (K + 1) for _ in range(N)]
        for i in range(N):
            Zs[i][K], zetas[i][K] = Z[i], zeta[i]

    S = np.empty((m, m))
    Y = np.empty((m, n + 1))
    for k in range(K - 1, -1, -1):
        A = game.A[k]
        B = game.B[k]
        c = None if game.c is None else game.c[k]
        for i in range(N):
            BiZ = B[:, sl[i]].T @ Z[i]
            S[sl[i]] = BiZ @ B
            S[sl[i], sl[i]] += game.R[i][i][k]
            Y[sl[i], :n] = BiZ @ A
            rhs = B[:, sl[i]].T @ zeta[i]
            if c is not None:
                rhs = rhs + BiZ @ c
            if game.r[i][i] is not None:
                rhs = rhs + game.r[i][i][k]
            Y[sl[i], n] = rhs
        X = _solve_coupled(S, Y, k)
        P = X[:, :n]
        alpha = X[:, n]
        F = A - B @ P
        beta = -B @ alpha
        if c is not None:
            beta = beta + c
        for i in range(N):
            P_out[i][k] = P[sl[i]]
            a_out[i][k] = alpha[sl[i]]
        for i in range(N):
            Zn, zn = Z[i], zeta[i]
            Znew = game.Q[i][k] + F.T @ Zn @ F
            znew = game.l[i][k] + F.T @ (zn + Zn @ beta)
            cnew = const[i] + 0.5 * beta @ Zn @ beta + zn @ beta
            for j in range(N):
                Rij = game.R[i][j]
                rij = game.r[i][j]
                Pj, aj = P[sl[j]], alpha[sl[j]]
                if Rij is not None:
                    RP = Rij[k] @ Pj
                    Znew = Znew + Pj.T @ RP
                    znew = znew + RP.T @ aj
                    cnew += 0.5 * aj @ Rij[k] @ aj
                if rij is not None:
                    znew = znew - Pj.T @ rij[k]
                    cnew -= rij[k] @ aj
            Z[i] = 0.5 * (Znew + Znew.T)
            zeta[i] = znew
            const[i] = cnew
            if return_values:
                Zs[i][k], zetas[i][k], consts[i][k] = Z[i], zeta[i], cnew

    strategies = [AffineStrategy(P_out[i], a_out[i]) for i in range(N)]
    if return_values:
        return strategies, LqValues(Zs, zetas, consts)
    return strategies


def solve_lq_game(stages, terminal, return_values=False):
    """Feedback Nash strategies for a list of :class:`LqGameStage`.

    ``terminal`` is a per-player list of ``(Q_i, l_i)`` for the final state.
    """
    return solve_lq_arrays(stages_to_arrays(stages, terminal), return_values=return_values)


def closed_loop_game(game: LqGameArrays, strategies, player) -> LqGameArrays:
    """Single-player problem for ``player`` with every other player's strategy substituted in."""
    N = game.num_players
    K = game.horizon
    others = [j for j in range(N) if j != player]
    A = game.A.copy()
    c = np.zeros((K, game.A.shape[1])) if game.c is None else game.c.copy()
    Q = game.Q[player].copy()
    l = game.l[player].copy()
    for j in others:
        Bj = game.B[:, :, game.control_slice(j)]
        Pj, aj = strategies[j].P, strategies[j].alpha
        A -= Bj @ Pj
        c -= np.einsum("kab,kb->ka", Bj, aj)
        Rij = game.R[player][j]
        if Rij is not None:
            RP = Rij @ Pj
            Q[:K] += np.swapaxes(Pj, 1, 2) @ RP
            l[:K] += np.einsum("kba,kb->ka", RP, aj)
        rij = game.r[player][j]
        if rij is not None:
            l[:K] -= np.einsum("kba,kb->ka", Pj, rij)
    si = game.control_slice(player)
    return LqGameArrays(
        A, game.B[:, :, si].copy(), (game.control_dims[player],), [Q], [l],
        [[game.R[player][player]]], [[game.r[player][player]]], c,
    )


def unilateral_best_response(stages, terminal, strategies, player) -> AffineStrategy:
    """Optimal affine strategy of ``player`` when all others keep their feedback laws."""
    game = stages_to_arrays(stages, terminal)
    return solve_lq_arrays(closed_loop_game(game, strategies, player))[0]


def lq_game_costs(game: LqGameArrays, strategies, x0):
    """Roll the strategies through the linear dynamics; per-player total costs and states."""
    K = game.horizon
    N = game.num_players
    x = np.asarray(x0, dtype=float)
    costs = np.zeros(N)
    xs = [x]
    sl = [game.control_slice(j) for j in range(N)]
    for k in range(K):
        u = np.concatenate([strategies[j].control(k, x) for j in range(N)])
        for i in range(N):
            costs[i] += 0.5 * x @ game.Q[i][k] @ x + game.l[i][k] @ x
            for j in range(N):
                uj = u[sl[j]]
                if game.R[i][j] is not None:
                    costs[i] += 0.5 * uj @ game.R[i][j][k] @ uj
                if game.r[i][j] is not None:
                    costs[i] += game.r[i][j][k] @ uj
        x = game.A[k] @ x + game.B[k] @ u
        if game.c is not None:
            x = x + game.c[k]
        xs.append(x)
    for i in range(N):
        costs[i] += 0.5 * x @ game.Q[i][K] @ x + game.l[i][K] @ x
    return costs, np.array(xs)

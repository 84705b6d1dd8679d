import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from defensive_ilq.lq_game import LqGameStage

settings.register_profile("default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_spd(rng, n, floor=0.5, scale=1.0):
    M = rng.normal(size=(n, n))
    return scale * (M @ M.T / n) + floor * np.eye(n)


def random_stable(rng, n, radius=0.95):
    A = rng.normal(size=(n, n))
    rho = max(abs(np.linalg.eigvals(A)))
    return radius * A / rho


def random_lq_game(rng, n, control_dims, K, cross_costs=True, affine=True):
    """Random time-varying LQ game as (stages, terminal)."""
    N = len(control_dims)
    stages = []
    for _ in range(K):
        A = random_stable(rng, n, radius=rng.uniform(0.6, 1.05))
        B = [0.5 * rng.normal(size=(n, m)) for m in control_dims]
        Q = [random_spd(rng, n, floor=0.1) for _ in range(N)]
        l = [0.2 * rng.normal(size=n) if affine else np.zeros(n) for _ in range(N)]
        R = [[None] * N for _ in range(N)]
        r = [[None] * N for _ in range(N)]
        for i in range(N):
            for j in range(N):
                if i == j:
                    R[i][j] = random_spd(rng, control_dims[j], floor=0.5)
                elif cross_costs:
                    R[i][j] = random_spd(rng, control_dims[j], floor=0.0, scale=0.3)
                if affine and (i == j or cross_costs):
                    r[i][j] = 0.1 * rng.normal(size=control_dims[j])
        c = 0.1 * rng.normal(size=n) if affine else None
        stages.append(LqGameStage(A, B, Q, l, R, r, c))
    terminal = [(random_spd(rng, n, floor=0.1), 0.2 * rng.normal(size=n) if affine else np.zeros(n)) for _ in range(N)]
    return stages, terminal


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def riccati_oracle(stages, terminal):
    """Textbook single-agent Riccati recursion, written independently of the game solver.

    Minimizes sum_k 0.5 x'Qx + l'x + 0.5 u'Ru + r'u plus the terminal cost,
    subject to x' = A x + B u + c.  Returns gains K_k and offsets k_k with
    u = -K_k x - k_k.
    """
    Qf, lf = terminal[0]
    V, v = np.array(Qf, float), np.array(lf, float)
    gains, offsets = [], []
    for s in reversed(stages):
        A, B = s.A, s.B[0]
        R = s.R[0][0]
        r = np.zeros(B.shape[1]) if s.r is None or s.r[0][0] is None else s.r[0][0]
        c = np.zeros(A.shape[0]) if s.c is None else s.c
        H = R + B.T @ V @ B
        w = v + V @ c
        Kk = np.linalg.solve(H, B.T @ V @ A)
        kk = np.linalg.solve(H, B.T @ w + r)
        V_new = s.Q[0] + A.T @ V @ A - A.T @ V @ B @ Kk
        v = s.l[0] + A.T @ w - Kk.T @ (B.T @ w + r)
        V = 0.5 * (V_new + V_new.T)
        gains.append(Kk)
        offsets.append(kk)
    return np.array(gains[::-1]), np.array(offsets[::-1])


SWEEPS = {"oncoming": (0.0, 2.5, 5.0), "intersection": (0.0, 0.5, 1.0)}


@pytest.fixture(scope="session")
def shipped_solves():
    """Every shipped-scenario regression solve, computed once: {(name, T_adv): (problem, solution)}."""
    from defensive_ilq.ilq import solve
    from defensive_ilq.scenarios import build_scenario

    out = {}
    for name, values in SWEEPS.items():
        for T_adv in values:
            problem = build_scenario(name, T_adv=T_adv)
            out[name, T_adv] = (problem, solve(problem))
    return out

import math

import numpy as np
import pytest

from cntqi.core import Envelope, NodeParams, NodeState, TimeGrid
from cntqi.dynamics import integrate_node
from cntqi.oracle import (
    MAX_BATH_MODES,
    DiscreteBath,
    FockTruncation,
    OracleMemoryError,
    TruncationError,
    compare_trajectories,
    evolve_discrete_bath,
    evolve_nonrwa,
)

TWO_PI = 2 * math.pi


def test_bath_geometry():
    b = DiscreteBath(101, 100.0, 2.0)
    assert b.spacing == pytest.approx(1.0)
    assert b.detunings[0] == -50 and b.detunings[-1] == 50
    k = b.kappa_j
    assert k[1] == pytest.approx(math.sqrt(2.0 / TWO_PI))
    assert k[0] ** 2 == pytest.approx(0.5 * k[1] ** 2)
    # sum of kappa^2 * 2 pi / spacing equals gamma times the represented band
    assert np.sum(k ** 2) * TWO_PI / b.spacing == pytest.approx(2.0 * 100.0)


def test_bath_mode_cap():
    g = TimeGrid(0.0, 1.0, 10)
    bath = DiscreteBath(MAX_BATH_MODES + 1, 100.0, 1.0)
    with pytest.raises(OracleMemoryError):
        evolve_discrete_bath(NodeState.excited(), NodeParams(gamma=1.0, G=1.0), Envelope.zeros(g), bath, g)


def _bare_decay(n_modes):
    p = NodeParams(gamma=1.0, G=0.0)
    g = TimeGrid(0.0, 5.0, 500)
    bath = DiscreteBath(n_modes, 200.0, 1.0)
    return evolve_discrete_bath(NodeState(0, 0, 1.0), p, Envelope.zeros(g), bath, g)


def test_bath_bare_decay_matches_exponential():
    res = _bare_decay(1000)
    exact = np.exp(-0.5 * res.trajectory.times)
    assert np.max(np.abs(res.trajectory.beta_c - exact)) < 1e-2
    assert res.norm_drift < 1e-8
    rep = res.compare()
    assert max(rep.max_abs[k] for k in ("beta_q", "beta_r", "beta_c")) < 1e-2
    # a finite band resolves the initial jump of the output to its midpoint
    assert abs(res.trajectory.alpha_out.samples[0]) == pytest.approx(0.5, abs=1e-2)


def test_bath_deviation_does_not_grow_with_modes():
    devs = [_bare_decay(n).compare().worst() for n in (250, 500, 1000)]
    assert devs[1] <= devs[0] + 1e-9 and devs[2] <= devs[1] + 1e-9


def test_bath_with_control_tracks_markov():
    p = NodeParams(gamma=TWO_PI * 1.0, G=TWO_PI * 1.0)
    g = TimeGrid(0.0, 1.0, 400)
    bath = DiscreteBath(2000, 200 * p.gamma, p.gamma)
    res = evolve_discrete_bath(NodeState.excited(), p, Envelope.constant(g, TWO_PI), bath, g)
    rep = res.compare()
    assert max(rep.max_abs[k] for k in ("beta_q", "beta_r", "beta_c")) < 2e-3
    # the reconstructed output rings near the final time, where the bath is still being filled
    d = np.abs(res.trajectory.alpha_out.samples - res.markov().alpha_out.samples)
    assert np.max(d[:-20]) < 1e-2


def test_truncation_basis():
    t = FockTruncation(2, 3)
    assert t.dim == 2 * 3 * 4
    assert len({t.index(s, a, b) for s in (0, 1) for a in range(3) for b in range(4)}) == t.dim
    with pytest.raises(ValueError):
        FockTruncation(1, 4)


def _rwa_case(omega_mhz):
    w = TWO_PI * omega_mhz
    p = NodeParams(gamma=TWO_PI, G=TWO_PI, omega_p=w, Delta_c=w, omega_q=w)
    g = TimeGrid(0.0, 1.0, 2000)
    return evolve_nonrwa(NodeState.excited(), p, Envelope.constant(g, TWO_PI), grid=g)


def test_nonrwa_converges_to_rwa():
    d = [_rwa_case(w).max_deviation for w in (36.0, 360.0)]
    assert d[1] < 1e-2
    assert d[0] / d[1] == pytest.approx(10, rel=0.2)


def test_nonrwa_zero_coupling_is_exact():
    w = TWO_PI * 360
    p = NodeParams(gamma=TWO_PI, G=0.0, omega_p=w, Delta_c=w, omega_q=w, gamma_q=0.5)
    g = TimeGrid(0.0, 1.0, 100)
    r = evolve_nonrwa(NodeState.excited(), p, Envelope.zeros(g), grid=g)
    assert np.allclose(np.abs(r.amplitudes[:, 0]), np.exp(-0.25 * g.times), atol=1e-12)


def test_nonrwa_truncation_detected():
    w = TWO_PI * 3
    p = NodeParams(gamma=TWO_PI, G=TWO_PI * 2, omega_p=w, Delta_c=w, omega_q=w)
    g = TimeGrid(0.0, 1.0, 400)
    with pytest.raises(TruncationError):
        evolve_nonrwa(NodeState.excited(), p, Envelope.constant(g, TWO_PI * 2), FockTruncation(2, 2), g)


def test_compare_trajectories_norms():
    g = TimeGrid(0.0, 1.0, 10)
    a = Envelope.constant(g, 1.0)
    b = Envelope.constant(g, 1.5)
    rep = compare_trajectories(a, b)
    assert rep.worst() == pytest.approx(0.5)
    p = NodeParams(gamma=1.0, G=1.0)
    tr = integrate_node(NodeState.excited(), p, Envelope.constant(g, 1.0))
    assert compare_trajectories(tr, tr).worst() == 0.0

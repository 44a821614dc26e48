import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from cddsense.model import (IDENTITY, SIGMA_X, SIGMA_Y, SIGMA_Z, TWO_PI, DriveConfig, Frame,
                            frame_step_unitaries, frame_unitaries, frame_unitary, ip_hamiltonian,
                            lab_hamiltonian, resonances, validate_hierarchy)
from conftest import G, OMEGA0, OMEGA1, OMEGA2

phases = st.floats(0, TWO_PI, allow_nan=False)
times = st.floats(0, 5, allow_nan=False)


def test_free_evolution_hamiltonian():
    cfg = DriveConfig(OMEGA0, 0.0, 0.0, OMEGA0)
    H = lab_hamiltonian(cfg)
    for t in (0.0, 0.013, 0.37, 2.9):
        np.testing.assert_allclose(H(t), OMEGA0 / 2 * SIGMA_Z, atol=1e-12)


def test_lab_gap_at_zero(scaled_cfg):
    H0 = lab_hamiltonian(scaled_cfg)(0.0)
    ev = np.linalg.eigvalsh(H0)
    gap = math.sqrt(OMEGA0 ** 2 + 4 * (OMEGA1 + G) ** 2)
    assert ev[1] - ev[0] == pytest.approx(gap, rel=1e-12)


@given(t=times, phi=phases, d=phases)
def test_hamiltonians_hermitian_traceless(t, phi, d):
    cfg = DriveConfig.on_resonance(OMEGA0, OMEGA1, OMEGA2, g=G, phi=phi, drive2_phase=d)
    Hs = [lab_hamiltonian(cfg), ip_hamiltonian(cfg, Frame.IP1), ip_hamiltonian(cfg, Frame.IP2),
          ip_hamiltonian(cfg, Frame.IP3)]
    for H in Hs:
        m = H(t)
        np.testing.assert_allclose(m, m.conj().T, atol=1e-12)
        assert abs(np.trace(m)) < 1e-12


def test_experimental_operating_point_carrier():
    # signal at 1.6 GHz on the (+,+) branch fixes the carrier
    w0 = 1.6e9 - 3.363e6 - 505e3 / 2
    assert w0 / 1e9 == pytest.approx(1.59638, abs=5e-6)
    cfg = DriveConfig.on_resonance(TWO_PI * w0, TWO_PI * 3.363e6, TWO_PI * 505e3)
    assert cfg.omega_s == pytest.approx(TWO_PI * 1.6e9, rel=1e-15)
    assert max(resonances(cfg)) == pytest.approx(TWO_PI * 1.6e9, rel=1e-15)


def test_ip3_zero_without_signal():
    cfg = DriveConfig.on_resonance(OMEGA0, OMEGA1, OMEGA2, g=0.0)
    H = ip_hamiltonian(cfg, Frame.IP3)
    np.testing.assert_array_equal(H(0.7), np.zeros((2, 2)))


def test_ip3_axes_at_phi_0_and_half_pi():
    cfg = DriveConfig.on_resonance(OMEGA0, OMEGA1, OMEGA2, g=G, phi=0.0)
    h = ip_hamiltonian(cfg, Frame.IP3).field(0.0)
    np.testing.assert_allclose(h, [G / 8, 0.0, 0.0], atol=1e-15)
    h2 = ip_hamiltonian(cfg.with_(phi=math.pi / 2), Frame.IP3).field(0.0)
    np.testing.assert_allclose(h2, [0.0, G / 8, 0.0], atol=1e-15)


@given(phi=phases, d=phases)
def test_ip3_gap_is_g_over_4(phi, d):
    cfg = DriveConfig.on_resonance(OMEGA0, OMEGA1, OMEGA2, g=G, phi=phi, drive2_phase=d)
    ev = np.linalg.eigvalsh(ip_hamiltonian(cfg, Frame.IP3)(1.3))
    assert ev[1] - ev[0] == pytest.approx(G / 4, abs=1e-12)


def test_ip3_refuses_off_resonance():
    cfg = DriveConfig.on_resonance(OMEGA0, OMEGA1, OMEGA2, g=G)
    with pytest.raises(ValueError, match="detuned"):
        ip_hamiltonian(cfg.with_(omega_s=cfg.omega_s + G), Frame.IP3)
    with pytest.raises(ValueError):
        ip_hamiltonian(cfg, Frame.Lab)


def test_frame_unitary_identity_at_zero(scaled_cfg):
    for F in Frame:
        np.testing.assert_allclose(frame_unitary(scaled_cfg, F, 0.0), IDENTITY, atol=1e-15)


def test_ip1_full_carrier_period(scaled_cfg):
    u = frame_unitary(scaled_cfg, Frame.IP1, TWO_PI / OMEGA0)
    np.testing.assert_allclose(u, -IDENTITY, atol=1e-12)


def test_ip3_unitarity_random_times(scaled_cfg, rng):
    for t in rng.uniform(0, 100, 100):
        u = frame_unitary(scaled_cfg, Frame.IP3, t)
        np.testing.assert_allclose(u @ u.conj().T, IDENTITY, atol=1e-12)


@given(t=times, d=phases)
@settings(max_examples=50)
def test_group_property_matches_step_exponentials(t, d):
    cfg = DriveConfig.on_resonance(OMEGA0, OMEGA1, OMEGA2, g=G, drive2_phase=d)
    n = cfg.drive2_axis
    steps = [expm(-0.5j * OMEGA0 * t * SIGMA_Z),
             expm(-0.5j * OMEGA1 * t * SIGMA_X),
             expm(-0.25j * OMEGA2 * t * (n[1] * SIGMA_Y + n[2] * SIGMA_Z))]
    for k, F in enumerate((Frame.IP1, Frame.IP2, Frame.IP3), 1):
        ref = IDENTITY
        for s in steps[:k]:
            ref = ref @ s
        np.testing.assert_allclose(frame_unitary(cfg, F, t), ref, atol=1e-12)
    for a, b in zip(frame_step_unitaries(cfg, t), steps):
        np.testing.assert_allclose(a, b, atol=1e-12)


def test_vectorised_unitaries_match(scaled_cfg):
    t = np.linspace(0, 3, 17)
    for F in Frame:
        U = frame_unitaries(scaled_cfg, F, t)
        for k, tk in enumerate(t):
            np.testing.assert_allclose(U[k], frame_unitary(scaled_cfg, F, tk), atol=1e-13)


def test_resonances_scaled():
    cfg = DriveConfig.on_resonance(OMEGA0, OMEGA1, OMEGA2)
    np.testing.assert_allclose(np.array(resonances(cfg)) / TWO_PI,
                               [489.25, 490.75, 509.25, 510.75], rtol=1e-14)


def test_resonances_degenerate_single_drive():
    r = np.array(resonances(DriveConfig.on_resonance(OMEGA0, OMEGA1, 0.0))) / TWO_PI
    np.testing.assert_allclose(r, [490, 490, 510, 510], rtol=1e-14)


@given(phi=phases, d=phases)
def test_resonances_ignore_phases(phi, d):
    base = DriveConfig.on_resonance(OMEGA0, OMEGA1, OMEGA2, g=G)
    assert resonances(base.with_(phi=phi, drive2_phase=d)) == resonances(base)


def test_branches_land_on_resonances():
    found = sorted(DriveConfig.on_resonance(OMEGA0, OMEGA1, OMEGA2, branch=b).omega_s
                   for b in ((1, 1), (1, -1), (-1, 1), (-1, -1)))
    assert found == resonances(DriveConfig.on_resonance(OMEGA0, OMEGA1, OMEGA2))


def test_hierarchy_scaled_passes():
    rep = validate_hierarchy(DriveConfig.on_resonance(OMEGA0, OMEGA1, OMEGA2, g=G), 5)
    assert rep.ok
    assert rep.ratios["omega0/Omega1"] == pytest.approx(50)
    assert rep.ratios["Omega1/Omega2"] == pytest.approx(6.6667, rel=1e-4)
    assert rep.ratios["Omega2/g"] == pytest.approx(7.5)


def test_hierarchy_experimental_drive_ratio():
    rep = validate_hierarchy(DriveConfig.on_resonance(TWO_PI * 1.596e9, TWO_PI * 3.363e6,
                                                      TWO_PI * 505e3))
    assert rep.ratios["Omega1/Omega2"] == pytest.approx(6.66, abs=0.01)


def test_hierarchy_names_violation():
    rep = validate_hierarchy(DriveConfig.on_resonance(OMEGA0, OMEGA1, 2 * OMEGA1, g=G))
    assert not rep.ok
    assert rep.violations == ["Omega1/Omega2"]


def test_hierarchy_single_drive_compares_signal_to_first_drive():
    rep = validate_hierarchy(DriveConfig.on_resonance(OMEGA0, OMEGA1, 0.0, g=G))
    assert set(rep.ratios) == {"omega0/Omega1", "Omega1/g"}
    assert rep.ok


def test_negative_frequency_rejected():
    with pytest.raises(ValueError, match="Omega1"):
        DriveConfig(OMEGA0, -1.0, 0.0, OMEGA0)
    with pytest.raises(ValueError):
        DriveConfig(OMEGA0, OMEGA1, 0.0, math.nan)


def test_ip2_is_sigma_z_rotation_for_default_phase():
    cfg = DriveConfig.on_resonance(OMEGA0, OMEGA1, OMEGA2, g=0.0)
    h = ip_hamiltonian(cfg, Frame.IP2).field(0.4)
    np.testing.assert_allclose(h, [0.0, 0.0, OMEGA2 / 4], atol=1e-15)

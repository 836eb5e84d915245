import math

import numpy as np
import pytest

from lunar_nmpc.cr3bp import Cr3bpSystem, SynodicState, lagrange_points, propagate
from lunar_nmpc.orbit import (
    CorrectionSettings,
    OrbitFileError,
    UnitMismatchError,
    correct_halo,
    find_extreme_points,
    load_orbit,
    moon_distance,
    orbit_from_samples,
    rendezvous_epoch,
    save_orbit,
)


class TestCorrection:
    def test_periodic(self, nrho):
        assert np.max(nrho.periodicity_error()) < 1e-8

    def test_fresh_propagation_closes(self, sys, nrho):
        traj = propagate(sys, nrho.initial_state, nrho.period)
        np.testing.assert_allclose(traj.y[-1], nrho.initial_state.as_vector(), atol=1e-8)

    def test_fixed_point(self, sys, nrho):
        again = correct_halo(sys, nrho.initial_state, nrho.period / 2)
        np.testing.assert_allclose(again.initial_state.as_vector(), nrho.initial_state.as_vector(), atol=1e-12)
        assert again.period == pytest.approx(nrho.period, abs=1e-12)

    def test_mirror_symmetry(self, nrho):
        # (x, -y, z, -vx, vy, -vz) at -t equals the state at t
        flip = np.array([1, -1, 1, -1, 1, -1])
        for t in np.linspace(0.05, 0.7, 7):
            np.testing.assert_allclose(nrho.state_vector(-t) * flip, nrho.state_vector(t), atol=1e-8)

    def test_southern_l2_family(self, sys, nrho):
        x0, _, z0 = nrho.initial_state.r
        assert z0 < 0
        assert 1 - sys.mu < x0 < lagrange_points(sys)[1, 0]
        # roughly one week
        assert 6.0 < nrho.period * sys.time_unit / 86400 < 7.5

    def test_fixed_x0_mode(self, sys, nrho):
        alt = correct_halo(sys, nrho.initial_state, nrho.period / 2, CorrectionSettings(fixed="x0"))
        assert np.max(alt.periodicity_error()) < 1e-8
        assert alt.initial_state.r[0] == nrho.initial_state.r[0]

    def test_rejects_off_plane_seed(self, sys):
        with pytest.raises(ValueError):
            correct_halo(sys, SynodicState([1.02, 0.01, -0.18], [0, -0.1, 0]), 0.75)


class TestEvents:
    def test_one_of_each(self, nrho):
        kinds = sorted(e.kind for e in find_extreme_points(nrho))
        assert kinds == ["apolune", "perilune"]

    def test_symmetry_locations(self, nrho):
        # apses of a symmetric orbit sit on the x-z plane crossings
        ev = {e.kind: e for e in find_extreme_points(nrho)}
        apo = ev["apolune"].epoch
        assert min(abs(apo), abs(apo - nrho.period)) < 1e-9
        assert ev["perilune"].epoch == pytest.approx(nrho.period / 2, abs=1e-9)
        assert ev["apolune"].moon_distance > ev["perilune"].moon_distance

    def test_extrema_against_dense_grid(self, nrho):
        t = np.linspace(0, nrho.period, 20001)
        d = moon_distance(nrho, t)
        ev = {e.kind: e for e in find_extreme_points(nrho)}
        assert ev["apolune"].moon_distance >= d.max() - 1e-12
        assert ev["perilune"].moon_distance <= d.min() + 1e-12

    def test_rendezvous_epoch(self, sys, nrho):
        apo = next(e for e in find_extreme_points(nrho) if e.kind == "apolune").epoch
        t6 = rendezvous_epoch(nrho, 6.0)
        expected = nrho.wrap(apo - 6 * 3600 / sys.time_unit)
        assert t6 == pytest.approx(expected, abs=1e-12)
        assert rendezvous_epoch(nrho, 0.0) == pytest.approx(nrho.wrap(apo), abs=1e-12)
        with pytest.raises(ValueError):
            rendezvous_epoch(nrho, -1.0)


class TestFiles:
    @pytest.mark.parametrize("units", ["normalized", "si"])
    def test_round_trip(self, sys, nrho, tmp_path, units):
        path = tmp_path / "orbit.txt"
        save_orbit(path, nrho, n_samples=4001, units=units)
        back = load_orbit(path, sys)
        assert back.period == pytest.approx(nrho.period, rel=1e-14)
        t = np.linspace(0.01, nrho.period - 0.01, 50)
        np.testing.assert_allclose(back.state_vector(t), nrho.state_vector(t), atol=1e-8)

    def test_exact_nodes(self, sys, nrho, tmp_path):
        path = tmp_path / "orbit.txt"
        save_orbit(path, nrho)
        back = load_orbit(path, sys)
        np.testing.assert_array_equal(back.trajectory.y, nrho.trajectory.y)

    def test_interpolant_oracle(self, sys):
        # samples of a known CR3BP arc; the Hermite interpolant must reproduce
        # intermediate states from an independent propagation
        s0 = SynodicState([0.85, 0.05, 0.1], [0.0, 0.2, 0.0])
        t = np.linspace(0, 1, 401)
        ref = propagate(sys, s0, 1.0)
        orb = orbit_from_samples(sys, t, ref(t), 1.0)
        tm = 0.5 * (t[1:] + t[:-1])
        np.testing.assert_allclose(orb.trajectory(tm), ref(tm), atol=1e-9)

    def _write(self, tmp_path, text):
        p = tmp_path / "bad.txt"
        p.write_text(text)
        return p

    def test_bad_column_count_line(self, sys, tmp_path):
        p = self._write(tmp_path, "# units: normalized\n# mu: 0.01215\n# period: 1\n0 1 2 3 4 5 6\n1 2 3\n")
        with pytest.raises(OrbitFileError) as exc:
            load_orbit(p, sys)
        assert exc.value.line == 5

    def test_non_numeric_line(self, sys, tmp_path):
        p = self._write(tmp_path, "# units: normalized\n# mu: 0.01215\n# period: 1\n0 1 2 3 4 5 x\n")
        with pytest.raises(OrbitFileError) as exc:
            load_orbit(p, sys)
        assert exc.value.line == 4

    def test_non_monotonic(self, sys, tmp_path):
        rows = "\n".join(f"{t} 1 0 0 0 0 0" for t in (0, 1, 2, 1.5, 3))
        p = self._write(tmp_path, f"# units: normalized\n# mu: 0.01215\n# period: 4\n{rows}\n")
        with pytest.raises(OrbitFileError) as exc:
            load_orbit(p, sys)
        assert exc.value.line == 7

    def test_missing_header(self, sys, tmp_path):
        p = self._write(tmp_path, "# units: normalized\n0 1 2 3 4 5 6\n")
        with pytest.raises(OrbitFileError):
            load_orbit(p, sys)

    def test_mu_mismatch(self, nrho, tmp_path):
        path = tmp_path / "orbit.txt"
        save_orbit(path, nrho)
        with pytest.raises(UnitMismatchError):
            load_orbit(path, Cr3bpSystem(mu=0.0121505856))

    def test_periodic_wrap(self, nrho):
        t = 0.3
        np.testing.assert_allclose(nrho.state_vector(t + 3 * nrho.period), nrho.state_vector(t), atol=1e-12)
        assert math.isclose(nrho.wrap(-0.1), nrho.period - 0.1, abs_tol=1e-14)

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracle
from lblrad import spectra as sp
from lblrad.scalar import build_tau_scalar

U = {"CO2": 2e17, "H2O": 5e16}


def naive_tau(grid, db, T, u):
    """Every grid point against every line; a line reaches its 16 nearest points."""
    nu = grid.nu
    out = np.zeros(grid.n)
    ratio = sp.intensity_ratios(db.nu, db.e_lower, db.exponent_per_line(), T, db.t_ref)
    dens = [u.get(g, 0.0) for g in sp.GASES]
    last = grid.start + grid.step * (grid.n - 1)
    for j in range(grid.n):
        acc = 0.0
        for k in range(len(db)):
            c = db.nu[k]
            if not grid.start <= c <= last:
                continue
            j0 = math.floor((c - grid.start) / grid.step)
            if j0 - 7 <= j <= j0 + 8:
                g = db.halfwidth[k]
                d = nu[j] - c
                acc += dens[db.gas[k]] * (db.s_ref[k] * ratio[k]) * ((g / math.pi) / (d * d + g * g))
        out[j] = acc
    return out


# ---------------------------------------------------------------- line intensity and Planck


@settings(max_examples=200)
@given(nu=st.floats(200, 10200), e=st.floats(0, 5000), T=st.floats(200, 3000),
       m=st.sampled_from([1.0, 1.5]))
def test_intensity_ratio_matches_high_precision(nu, e, T, m):
    got = sp.intensity_ratios(nu, e, m, T, sp.T_REF)
    want = oracle.intensity_ratio(nu, e, m, T, sp.T_REF)
    assert abs(got - float(want)) <= 1e-12 * float(want)


def test_intensity_ratio_is_one_at_reference():
    line = sp.SpectralLine("H2O", 1500.0, 1e-20, 800.0, 0.05)
    db = sp.LineDatabase.from_lines([line])
    assert sp.intensity_ratio(line, sp.T_REF, db) == pytest.approx(1.0, rel=1e-15)
    with pytest.raises(ValueError):
        sp.intensity_ratios(1000.0, 0.0, 1.0, 0.0)


def test_lorentzian_peak_and_integral():
    assert sp.line_profile(1000.0, 1000.0, 0.1) == pytest.approx(1 / (math.pi * 0.1))
    # 16 points at step 0.1 around a line of halfwidth 0.1 hold most of its area
    grid = sp.SpectralField.zeros(990.0, 0.1, 200)
    db = sp.LineDatabase.from_lines([sp.SpectralLine("CO2", 1000.03, 1.0, 0.0, 0.1)])
    tau = sp.build_tau(grid, db, sp.T_REF, {"CO2": 1.0})
    assert np.count_nonzero(tau.values) == 16
    assert abs(tau.values.sum() * grid.step - 1.0) < 0.15


# ---------------------------------------------------------------- optical depth


def test_build_tau_matches_naive_double_loop():
    db = sp.generate_lines(300, seed=4, band=(1000.0, 1100.0))
    grid = sp.SpectralField.zeros(999.0, 0.05, 2048)
    got = sp.build_tau(grid, db, 1200.0, U).values
    want = naive_tau(grid, db, 1200.0, U)
    assert np.count_nonzero(want) > 1000
    assert np.allclose(got, want, rtol=1e-12, atol=0)


def test_lines_off_grid_are_skipped_and_counted():
    grid = sp.SpectralField.zeros(1000.0, 0.1, 100)
    db = sp.LineDatabase.from_lines([
        sp.SpectralLine("CO2", 999.0, 1e-20, 0.0, 0.05),
        sp.SpectralLine("CO2", 1005.0, 1e-20, 0.0, 0.05),
        sp.SpectralLine("H2O", 1020.0, 1e-20, 0.0, 0.05),
    ])
    tau = sp.build_tau(grid, db, 500.0, U)
    assert tau.skipped == 2
    assert np.count_nonzero(tau.values) == 16


def test_edge_line_loses_points_beyond_grid():
    grid = sp.SpectralField.zeros(1000.0, 0.1, 100)
    db = sp.LineDatabase.from_lines([sp.SpectralLine("CO2", 1000.05, 1e-20, 0.0, 0.05)])
    tau = sp.build_tau(grid, db, 500.0, U)
    assert np.count_nonzero(tau.values) == 9


def test_zero_density_gives_zero_tau():
    db = sp.generate_lines(100, seed=1, band=(1000.0, 1010.0))
    grid = sp.SpectralField.zeros(1000.0, 0.01, 1000)
    assert not sp.build_tau(grid, db, 800.0, {}).values.any()


def test_tau_bit_identical_for_any_thread_count():
    db = sp.generate_lines(3 * sp.LINE_CHUNK + 17, seed=2, band=(2000.0, 2100.0))
    grid = sp.SpectralField.zeros(2000.0, 0.01, 10000)
    ref = sp.build_tau(grid, db, 900.0, U).values
    for t in (2, 3, 8):
        assert np.array_equal(sp.build_tau(grid, db, 900.0, U, threads=t).values, ref)


def test_scalar_backend_agrees():
    db = sp.generate_lines(5000, seed=8, band=(3000.0, 3100.0))
    grid = sp.SpectralField.zeros(3000.0, 0.01, 10000)
    a = sp.build_tau(grid, db, 700.0, U).values
    b = build_tau_scalar(grid, db, 700.0, U, sp.CONSTANTS.c2).values
    assert np.allclose(a, b, rtol=1e-12, atol=0)


def test_reference_table_recombines():
    db = sp.generate_lines(2000, seed=9, band=(500.0, 520.0))
    grid = sp.SpectralField.zeros(500.0, 0.005, 4000)
    table = sp.split_reference_product(db, grid, U)
    a = sp.recombine(table, db, 1500.0).values
    b = sp.build_tau(grid, db, 1500.0, U).values
    assert np.allclose(a, b, rtol=1e-13, atol=0)


def test_unknown_gas_and_negative_density():
    db = sp.generate_lines(10, seed=0)
    grid = sp.default_grid(1024)
    with pytest.raises(ValueError):
        sp.build_tau(grid, db, 300.0, {"CH4": 1.0})
    with pytest.raises(ValueError):
        sp.build_tau(grid, db, 300.0, {"CO2": -1.0})


# ---------------------------------------------------------------- containers and files


@pytest.mark.parametrize("kw", [
    dict(gas_id="N2"), dict(nu_center=0.0), dict(s_ref=0.0), dict(e_lower=-1.0), dict(halfwidth=0.0),
])
def test_spectral_line_validation(kw):
    base = dict(gas_id="CO2", nu_center=1.0, s_ref=1.0, e_lower=0.0, halfwidth=0.1)
    base.update(kw)
    with pytest.raises(ValueError):
        sp.SpectralLine(**base)


def test_database_is_sorted_by_gas_then_wavenumber():
    db = sp.generate_lines(1000, seed=3)
    key = db.gas.astype(np.float64) * 1e6 + db.nu
    assert np.all(np.diff(key) >= 0)
    s = db.gas_slice("H2O")
    assert np.all(db.gas[s] == sp.GASES.index("H2O"))
    both = db.concat(sp.generate_lines(10, seed=4))
    assert len(both) == 1010


def test_field_bytes_roundtrip(tmp_path):
    f = sp.SpectralField(100.0, 0.5, np.arange(7, dtype=np.float64))
    f.save(tmp_path / "s.bin")
    g = sp.SpectralField.load(tmp_path / "s.bin")
    assert g.same_grid(f) and np.array_equal(g.values, f.values)
    with pytest.raises(ValueError):
        sp.SpectralField.from_bytes(f.to_bytes()[:-4])
    with pytest.raises(ValueError):
        sp.SpectralField(0.0, 0.0, np.zeros(3))


def test_default_grid_size():
    g = sp.default_grid()
    assert g.n == sp.MAX_GRID and g.start == 200.0
    assert g.start + g.step * g.n == pytest.approx(10200.0)


@given(st.integers(0, 50), st.integers(0, 2**32))
def test_line_file_roundtrip(tmp_path_factory, n, seed):
    path = tmp_path_factory.mktemp("lines") / "l.txt"
    db = sp.generate_lines(n, seed=seed)
    sp.save_lines(db, path)
    back = sp.load_lines(path)
    for col in ("gas", "nu", "s_ref", "e_lower", "halfwidth"):
        assert np.array_equal(getattr(back, col), getattr(db, col))


@pytest.mark.parametrize("body,msg", [
    ("CO2 1 2 3\n", ":2: expected 5 columns"),
    ("N2 1 1e-20 0 0.1\n", ":2: unknown gas"),
    ("CO2 1 -1 0 0.1\n", ":2: s_ref"),
    ("CO2 x 1 0 0.1\n", ":2:"),
])
def test_line_file_errors_cite_line(tmp_path, body, msg):
    p = tmp_path / "bad.txt"
    p.write_text("# header\n" + body)
    with pytest.raises(sp.LineFileError, match=msg):
        sp.load_lines(p)


def test_generate_lines_deterministic():
    a, b = sp.generate_lines(100, seed=5), sp.generate_lines(100, seed=5)
    assert np.array_equal(a.nu, b.nu) and np.array_equal(a.s_ref, b.s_ref)
    assert len(sp.generate_lines(0)) == 0

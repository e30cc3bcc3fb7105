import numpy as np
import pytest

import collapse_lab as cl
from collapse_lab.errors import DimensionError, GridError, StateError


def test_basis_product_state():
    space = cl.CompositeSpace([cl.spin("a"), cl.spin("b")])
    psi = cl.make_product_state(space, {"a": [1, 0], "b": [0, 1]})
    assert np.allclose(psi.amplitudes, [0, 1, 0, 0])


def test_single_factor_normalization():
    space = cl.CompositeSpace([cl.discrete("x", 2)])
    psi = cl.make_product_state(space, {"x": [3, 4]})
    assert np.allclose(psi.amplitudes, [0.6, 0.8])


def test_product_state_has_schmidt_rank_one():
    rng = np.random.default_rng(0)
    space = cl.CompositeSpace([cl.discrete("a", 3), cl.discrete("b", 4), cl.spin("c")])
    factors = {
        lbl: rng.standard_normal(d) + 1j * rng.standard_normal(d)
        for lbl, d in (("a", 3), ("b", 4), ("c", 2))
    }
    psi = cl.make_product_state(space, factors)
    for side in ({"a"}, {"b"}, {"c"}, {"a", "b"}, {"a", "c"}):
        part = cl.Bipartition.of(space, side)
        coeffs = cl.schmidt(psi, part).coefficients
        assert coeffs[0] == pytest.approx(1.0, abs=1e-12)
        assert np.all(coeffs[1:] < 1e-12)


def test_tensor_associativity_is_exact():
    # grouping two factors into one precomputed block must reproduce the
    # flat product bit for bit (same subsystem order)
    rng = np.random.default_rng(1)
    fa = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    fb = rng.standard_normal(2) + 1j * rng.standard_normal(2)
    fc = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    flat_space = cl.CompositeSpace(
        [cl.discrete("a", 3), cl.discrete("b", 2), cl.discrete("c", 4)]
    )
    psi_flat = cl.make_product_state(flat_space, {"a": fa, "b": fb, "c": fc})
    left_space = cl.CompositeSpace([cl.discrete("ab", 6), cl.discrete("c", 4)])
    psi_left = cl.make_product_state(
        left_space, {"ab": np.kron(fa, fb), "c": fc}
    )
    right_space = cl.CompositeSpace([cl.discrete("a", 3), cl.discrete("bc", 8)])
    psi_right = cl.make_product_state(
        right_space, {"a": fa, "bc": np.kron(fb, fc)}
    )
    assert np.array_equal(psi_flat.amplitudes, psi_left.amplitudes)
    # opposite grouping reassociates float products; equal to an ulp
    assert np.allclose(psi_flat.amplitudes, psi_right.amplitudes, rtol=5e-16, atol=0)


def test_unit_norm_invariant():
    rng = np.random.default_rng(2)
    space = cl.CompositeSpace([cl.discrete("x", 128)])
    psi = cl.renormalize(rng.standard_normal(128) + 1j * rng.standard_normal(128), space)
    assert abs(cl.norm(psi) - 1.0) < 1e-14


def test_renormalize_phase_preserved():
    space = cl.CompositeSpace([cl.discrete("x", 2)])
    psi = cl.renormalize(np.array([2j, 0.0]), space)
    assert np.allclose(psi.amplitudes, [1j, 0.0])


def test_norm_trivial():
    space = cl.CompositeSpace([cl.discrete("x", 4)])
    assert cl.norm(np.array([1.0, 0, 0, 0])) == 1.0


def test_zero_norm_rejected():
    space = cl.CompositeSpace([cl.discrete("x", 2)])
    with pytest.raises(StateError):
        cl.renormalize(np.zeros(2, dtype=complex), space)
    with pytest.raises(StateError):
        cl.make_product_state(space, {"x": [0.0, 0.0]})


def test_factor_length_mismatch():
    space = cl.CompositeSpace([cl.discrete("x", 3)])
    with pytest.raises(DimensionError):
        cl.make_product_state(space, {"x": [1.0, 0.0]})


def test_duplicate_labels_rejected():
    with pytest.raises(ValueError):
        cl.CompositeSpace([cl.spin("s"), cl.spin("s")])


def test_total_dim_is_product():
    space = cl.CompositeSpace([cl.discrete("a", 3), cl.discrete("b", 5), cl.spin("c")])
    assert space.total_dim == 30


class TestGaussianPacket:
    def make_space(self, n=256, length=16.0, periodic=True):
        return cl.CompositeSpace(
            [cl.lattice("p", n, length / n, periodic=periodic)]
        )

    def test_symmetric_real_even(self):
        space = self.make_space()
        f = cl.gaussian_packet(space, "p", center=0.0, width=1.0, momentum=0.0)
        assert np.allclose(f.imag, 0.0)
        x = space.subsystem("p").positions()
        mean = np.sum(np.abs(f) ** 2 * x)
        assert abs(mean) < 1e-12
        # even under x -> -x (periodic grid pairs j and n - j)
        assert np.allclose(f[1:], f[1:][::-1], atol=1e-12)

    def test_momentum_expectation_fft_oracle(self):
        space = self.make_space()
        sub = space.subsystem("p")
        f = cl.gaussian_packet(space, "p", center=0.0, width=1.0, momentum=2.0)
        k = 2.0 * np.pi * np.fft.fftfreq(sub.dim, d=sub.grid_spacing)
        ft = np.fft.fft(f)
        p_mean = np.sum(np.abs(ft) ** 2 * k) / np.sum(np.abs(ft) ** 2)
        assert p_mean == pytest.approx(2.0, abs=1e-6)

    def test_translated_center(self):
        # margin to the box edge large enough that wrap bias is negligible
        space = cl.CompositeSpace([cl.lattice("p", 256, 0.125, periodic=True)])
        f = cl.gaussian_packet(space, "p", center=3.0, width=1.0)
        x = space.subsystem("p").positions()
        assert np.sum(np.abs(f) ** 2 * x) == pytest.approx(3.0, abs=1e-9)

    def test_unresolvable_width_rejected(self):
        space = self.make_space()
        with pytest.raises(GridError):
            cl.gaussian_packet(space, "p", width=0.05)

    def test_boundary_leakage_rejected_on_hard_wall(self):
        space = self.make_space(n=32, length=8.0, periodic=False)
        with pytest.raises(GridError):
            cl.gaussian_packet(space, "p", center=3.5, width=1.0)

    def test_quadrature_defect_converges_second_order(self):
        # continuum-normalized samples, transcribed independently of the
        # packet function, must approach unit mass at second order in dx
        a, x0 = 1.0, 0.3
        defects = []
        for n in (64, 128, 256):
            space = cl.CompositeSpace([cl.lattice("p", n, 16.0 / n, periodic=True)])
            x = space.subsystem("p").positions()
            dx = 16.0 / n
            samples = (2.0 * np.pi * a**2) ** (-0.25) * np.exp(
                -((x - x0) ** 2) / (4.0 * a**2)
            )
            defects.append(abs(1.0 - np.sum(np.abs(samples) ** 2) * dx))
        assert defects[0] / max(defects[1], 1e-300) >= 4.0 or defects[1] < 1e-12
        assert defects[1] / max(defects[2], 1e-300) >= 4.0 or defects[2] < 1e-12

    def test_nonlattice_rejected(self):
        space = cl.CompositeSpace([cl.spin("s")])
        with pytest.raises(GridError):
            cl.gaussian_packet(space, "s")


def test_lattice_positions_centered():
    sub = cl.lattice("p", 4, 0.5, periodic=False)
    assert np.allclose(sub.positions(), [-0.75, -0.25, 0.25, 0.75])
    sub_p = cl.lattice("p", 4, 0.5, periodic=True)
    assert np.allclose(sub_p.positions(), [-1.0, -0.5, 0.0, 0.5])
    sub_x = cl.lattice("p", 3, 1.0, x_min=0.0)
    assert np.allclose(sub_x.positions(), [0.0, 1.0, 2.0])


def test_subsystem_validation():
    with pytest.raises(ValueError):
        cl.lattice("p", 1, 0.5)
    with pytest.raises(ValueError):
        cl.SubsystemSpec("p", "lattice1d", 8, mass=-1.0, grid_spacing=0.1)
    with pytest.raises(ValueError):
        cl.SubsystemSpec("s", "spin", 2, grid_spacing=0.1)

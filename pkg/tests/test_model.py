import numpy as np
import pytest

from unrollsep.errors import ConfigError, DegenerateSignalError, DimensionError
from unrollsep.model import (
    GeneratorConfig,
    MixtureInstance,
    empirical_kurtosis,
    generate,
    load_instance,
    save_instance,
)


class TestGenerate:
    def test_determinism(self):
        cfg = GeneratorConfig(m=3, l=4, T=64, noise_var=0.5, seed=123)
        a = generate(cfg)
        b = generate(cfg)
        assert np.array_equal(a.S, b.S)
        assert np.array_equal(a.A, b.A)
        assert np.array_equal(a.X, b.X)

    def test_distinct_seeds_give_distinct_mixing_matrices(self):
        a = generate(GeneratorConfig(seed=1, T=8))
        b = generate(GeneratorConfig(seed=2, T=8))
        assert not np.array_equal(a.A, b.A)

    @pytest.mark.parametrize("m,l,T", [(1, 1, 1), (2, 5, 17), (3, 3, 300)])
    def test_shape_contract(self, m, l, T):
        inst = generate(GeneratorConfig(m=m, l=l, T=T, seed=0))
        assert inst.X.shape == (l, T)
        assert inst.S.shape == (m, T)
        assert inst.A.shape == (l, m)

    def test_paper_scale_dimensions(self):
        inst = generate(GeneratorConfig(m=3, l=3, T=300, seed=5))
        assert inst.S.shape[0] == 3 and inst.X.shape[0] == 3

    def test_noiseless_is_exact(self):
        inst = generate(GeneratorConfig(m=2, l=3, T=50, noise_var=0.0, seed=9))
        assert np.linalg.norm(inst.X - inst.A @ inst.S) == 0.0

    def test_noise_variance_matches(self):
        inst = generate(GeneratorConfig(m=2, l=2, T=200_000, noise_var=0.25, seed=4))
        resid = inst.X - inst.A @ inst.S
        assert abs(resid.var() - 0.25) < 0.005

    def test_zero_mean_uniform_covariance(self):
        # closed-form second moments of U(-1/2, 1/2): var 1/12, cov 0
        T = 100_000
        inst = generate(GeneratorConfig(m=2, l=2, T=T, seed=11))
        emp = inst.S @ inst.S.T / T - np.outer(inst.S.mean(axis=1), inst.S.mean(axis=1))
        se_var = np.sqrt((1 / 180) / T)   # Var(s^2) = E s^4 - (E s^2)^2 = 1/80 - 1/144
        se_cov = np.sqrt((1 / 144) / T)   # Var(s_i s_j) = (1/12)^2
        for i in range(2):
            assert abs(emp[i, i] - 1 / 12) <= 3 * se_var
        assert abs(emp[0, 1]) <= 3 * se_cov

    def test_uniform01_range_and_mean(self):
        inst = generate(GeneratorConfig(m=2, l=2, T=50_000, seed=2, source_dist="uniform01"))
        assert inst.S.min() >= 0.0 and inst.S.max() <= 1.0
        assert abs(inst.S.mean() - 0.5) < 0.01

    def test_uniform_unit_variance(self):
        inst = generate(GeneratorConfig(m=2, l=2, T=200_000, seed=3, source_dist="uniform_unit"))
        assert abs(inst.S.var() - 1.0) < 0.02
        assert abs(inst.S.mean()) < 0.02

    def test_custom_sampler(self):
        inst = generate(GeneratorConfig(m=2, l=2, T=10, seed=0, source_dist="custom"),
                        sampler=lambda rng, m, T: np.ones((m, T)))
        assert np.array_equal(inst.S, np.ones((2, 10)))

    def test_custom_without_sampler_rejected(self):
        with pytest.raises(ConfigError):
            generate(GeneratorConfig(source_dist="custom"))

    def test_invalid_dimensions(self):
        with pytest.raises(DimensionError):
            generate(GeneratorConfig(m=4, l=3))
        with pytest.raises(DimensionError):
            generate(GeneratorConfig(T=0))

    def test_unknown_dist_rejected(self):
        with pytest.raises(ConfigError):
            GeneratorConfig(source_dist="gaussian")


class TestMixtureInstance:
    def test_shape_validation(self):
        with pytest.raises(DimensionError):
            MixtureInstance(m=2, l=2, T=3, S=np.zeros((2, 4)), A=np.eye(2),
                            noise_var=0.0, X=np.zeros((2, 3)))

    def test_more_sources_than_sensors_rejected(self):
        with pytest.raises(DimensionError):
            MixtureInstance(m=3, l=2, T=1, S=np.zeros((3, 1)), A=np.zeros((2, 3)),
                            noise_var=0.0, X=np.zeros((2, 1)))

    def test_zero_length_allowed(self):
        inst = MixtureInstance(m=1, l=1, T=0, S=np.zeros((1, 0)), A=np.eye(1),
                               noise_var=0.0, X=np.zeros((1, 0)))
        assert inst.T == 0


class TestKurtosis:
    def test_uniform(self):
        rng = np.random.default_rng(0)
        assert abs(empirical_kurtosis(rng.uniform(-0.5, 0.5, 100_000)) - (-1.2)) < 0.05

    def test_gaussian(self):
        rng = np.random.default_rng(1)
        assert abs(empirical_kurtosis(rng.standard_normal(100_000))) < 0.05

    def test_degenerate(self):
        with pytest.raises(DegenerateSignalError):
            empirical_kurtosis(np.full(100, 3.7))
        dithered = 1.0 + 1e-16 * np.arange(100)
        with pytest.raises(DegenerateSignalError):
            empirical_kurtosis(dithered)

    def test_too_short(self):
        with pytest.raises(DimensionError):
            empirical_kurtosis(np.array([1.0, 2.0, 3.0]))


class TestDiskRoundTrip:
    def test_exact_round_trip(self, tmp_path):
        inst = generate(GeneratorConfig(m=2, l=3, T=7, noise_var=0.2, seed=21))
        save_instance(inst, tmp_path / "inst")
        back = load_instance(tmp_path / "inst")
        assert np.array_equal(back.S, inst.S)
        assert np.array_equal(back.A, inst.A)
        assert np.array_equal(back.X, inst.X)
        assert back.m == inst.m and back.l == inst.l and back.T == inst.T
        assert back.noise_var == inst.noise_var and back.seed == inst.seed

    def test_single_row_matrices(self, tmp_path):
        inst = generate(GeneratorConfig(m=1, l=1, T=5, seed=8))
        save_instance(inst, tmp_path / "one")
        back = load_instance(tmp_path / "one")
        assert back.S.shape == (1, 5)
        assert np.array_equal(back.X, inst.X)

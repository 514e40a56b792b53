import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cdncache.errors import InfeasibleSpec, MalformedConfig
from cdncache.model import (
    Catalog,
    ServerClass,
    SystemSpec,
    build_spec,
    largest_remainder,
    load_spec,
    spec_to_dict,
    system_load,
    zipf_rates,
)


def default_fleet(n=400, rho=0.8):
    return build_spec(
        {
            "n": n,
            "classes": [{"bandwidth": 1, "cache_size": 2, "fraction": 1}],
            "catalog": {"generator": {"m": 500, "eta": 2, "rho": rho}},
        }
    )


class TestZipf:
    def test_m3_eta2(self):
        np.testing.assert_allclose(zipf_rates(3, 2), [36 / 49, 9 / 49, 4 / 49], rtol=1e-14)

    def test_uniform_when_eta_zero(self):
        np.testing.assert_array_equal(zipf_rates(4, 0), [0.25] * 4)

    def test_single_content(self):
        np.testing.assert_array_equal(zipf_rates(1, 7), [1.0])

    @given(st.integers(1, 300), st.floats(0.01, 4))
    def test_probability_vector_strictly_decreasing(self, m, eta):
        p = zipf_rates(m, eta)
        assert p.shape == (m,)
        assert np.all(p > 0)
        assert abs(p.sum() - 1) < 1e-12
        assert np.all(np.diff(p) < 0)

    def test_rejects_bad_arguments(self):
        with pytest.raises(ValueError):
            zipf_rates(0, 1)
        with pytest.raises(ValueError):
            zipf_rates(3, -1)


class TestBuildSpec:
    def test_rho_scaling_is_exact(self):
        spec = default_fleet()
        assert spec.n == 400 and spec.m == 500
        assert system_load(spec) == pytest.approx(0.8, rel=1e-14)

    def test_single_server_identity(self):
        spec = build_spec({"classes": [{"bandwidth": 1, "cache_size": 1, "count": 1}], "catalog": {"rates": [1]}})
        assert spec.n == 1
        assert system_load(spec) == 1.0

    def test_fractions_must_sum_to_one(self):
        raw = {
            "n": 10,
            "classes": [{"bandwidth": 1, "cache_size": 1, "fraction": 0.5}, {"bandwidth": 2, "cache_size": 1, "fraction": 0.6}],
            "catalog": {"rates": [1, 2]},
        }
        with pytest.raises(InfeasibleSpec):
            build_spec(raw)

    def test_nonpositive_rate(self):
        with pytest.raises(InfeasibleSpec):
            build_spec({"n": 1, "classes": [{"bandwidth": 1, "cache_size": 1, "count": 1}], "catalog": {"rates": [1, 0]}})

    @pytest.mark.parametrize(
        "raw",
        [
            {"classes": [{"bandwidth": 1, "cache_size": 1, "fraction": 1}], "catalog": {"rates": [1]}},
            {"n": 2, "catalog": {"rates": [1]}},
            {"n": 2, "classes": [{"bandwidth": 1}], "catalog": {"rates": [1]}},
            {"n": 2, "classes": [{"bandwidth": 1, "cache_size": 1, "fraction": 1}], "catalog": {}},
            "not json",
        ],
    )
    def test_malformed(self, raw):
        with pytest.raises(MalformedConfig):
            build_spec(raw)

    def test_fraction_strings(self):
        spec = build_spec(
            {
                "n": 3,
                "classes": [{"bandwidth": 1, "cache_size": 1, "fraction": "1/3"}, {"bandwidth": 2, "cache_size": 2, "fraction": "2/3"}],
                "catalog": {"rates": [1, 1]},
            }
        )
        np.testing.assert_array_equal(spec.counts(), [1, 2])
        assert spec.capacity == pytest.approx(5 / 3)

    def test_load_spec_file(self, tmp_path):
        path = tmp_path / "inst.json"
        path.write_text(json.dumps(spec_to_dict(default_fleet())))
        assert load_spec(path) == default_fleet()


class TestLoad:
    def test_two_servers(self):
        spec = SystemSpec(2, (ServerClass(1, 1, count=2),), Catalog(np.array([1.0, 0.6])))
        assert system_load(spec) == pytest.approx(0.8)

    def test_one_big_server(self):
        spec = SystemSpec(1, (ServerClass(5, 1, count=1),), Catalog(np.array([5.0])))
        assert system_load(spec) == 1.0

    def test_overload(self):
        spec = SystemSpec(400, (ServerClass(1, 2, fraction=1.0),), Catalog(np.full(4, 120.0)))
        assert system_load(spec) == pytest.approx(1.2)

    @given(st.floats(1e-3, 1e3))
    def test_homogeneous_in_rates(self, kappa):
        spec = default_fleet()
        scaled = spec.with_rates(spec.rates * kappa)
        assert system_load(scaled) == pytest.approx(kappa * system_load(spec), rel=1e-12)

    def test_per_server_rates(self):
        spec = default_fleet()
        np.testing.assert_allclose(spec.per_server_rates, spec.rates / 400)
        assert spec.total_rate == pytest.approx(0.8)


class TestFleet:
    def test_largest_remainder_sums(self):
        counts = largest_remainder([1 / 3, 1 / 3, 1 / 3], 10)
        assert counts.sum() == 10
        assert sorted(counts.tolist()) == [3, 3, 4]

    @given(st.lists(st.floats(0.01, 1), min_size=1, max_size=6), st.integers(1, 1000))
    def test_largest_remainder_close_to_share(self, w, total):
        counts = largest_remainder(w, total)
        share = np.asarray(w) / np.sum(w) * total
        assert counts.sum() == total
        assert np.all(np.abs(counts - share) < 1 + 1e-9)

    def test_explicit_round_trip(self):
        spec = SystemSpec.from_servers([2, 2, 1], [1, 1, 3], [3.0, 1.0])
        assert len(spec.classes) == 2
        fleet = spec.fleet()
        np.testing.assert_array_equal(fleet.bandwidths, [2, 2, 1])
        np.testing.assert_array_equal(fleet.cache_sizes, [1, 1, 3])

    def test_bad_class(self):
        with pytest.raises(InfeasibleSpec):
            ServerClass(0, 1, fraction=1.0)


def spec_docs():
    cls = st.fixed_dictionaries(
        {"bandwidth": st.integers(1, 5), "cache_size": st.integers(1, 4), "count": st.integers(1, 20)}
    )
    return st.builds(
        lambda classes, rates: {"classes": classes, "catalog": {"rates": rates}},
        st.lists(cls, min_size=1, max_size=3),
        st.lists(st.floats(0.01, 100, allow_nan=False), min_size=1, max_size=8),
    )


@settings(max_examples=60)
@given(spec_docs())
def test_serialize_round_trip(doc):
    spec = build_spec(doc)
    again = build_spec(json.loads(json.dumps(spec_to_dict(spec))))
    assert again == spec
    assert system_load(again) == system_load(spec)

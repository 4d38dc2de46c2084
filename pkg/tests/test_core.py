import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from attn_mirror import AttnDataset, AttnSample, ModelParams, make_rng, pq_norm, unit_sphere_vector
from attn_mirror.core import dumps
from attn_mirror.errors import DimensionError, DomainError, ParameterError

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


class TestUnitSphere:
    def test_one_dimensional_is_sign(self):
        for seed in range(5):
            x = unit_sphere_vector(1, make_rng(seed))
            assert x.shape == (1,) and abs(x[0]) == 1.0

    def test_norm(self):
        x = unit_sphere_vector(10, make_rng(7))
        assert abs(np.linalg.norm(x) - 1.0) < 1e-12

    def test_deterministic(self):
        assert np.array_equal(unit_sphere_vector(3, make_rng(0)), unit_sphere_vector(3, make_rng(0)))

    def test_zero_dimension(self):
        with pytest.raises(DimensionError):
            unit_sphere_vector(0, make_rng(0))


class TestPqNorm:
    def test_zero(self):
        assert pq_norm(np.zeros((2, 2)), 3) == 0.0

    def test_identity(self):
        assert math.isclose(pq_norm(np.eye(2), 2), math.sqrt(2), rel_tol=1e-15)

    def test_direct_sum(self):
        # 1 + 8 + 27 + 64 = 100
        assert math.isclose(pq_norm([[1, 2], [3, 4]], 3), 100 ** (1 / 3), rel_tol=1e-14)

    @pytest.mark.parametrize("p", [1.0, 0.5, -2.0])
    def test_rejects_small_p(self, p):
        with pytest.raises(ParameterError):
            pq_norm(np.eye(2), p)

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (3, 4), elements=finite), st.floats(-50, 50), st.sampled_from([1.1, 1.75, 2.0, 3.0]))
    def test_homogeneity(self, M, c, p):
        assert math.isclose(pq_norm(c * M, p), abs(c) * pq_norm(M, p), rel_tol=1e-12, abs_tol=1e-300)

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (4, 4), elements=finite))
    def test_p2_is_frobenius(self, M):
        # math.hypot scales internally, so tiny entries do not underflow
        assert math.isclose(pq_norm(M, 2), math.hypot(*M.ravel()), rel_tol=1e-12, abs_tol=1e-300)

    def test_no_overflow_for_huge_entries(self):
        assert math.isclose(pq_norm(np.full((2, 2), 1e300), 3), 1e300 * 4 ** (1 / 3), rel_tol=1e-12)


class TestContainers:
    def test_sample_validation(self):
        with pytest.raises(DimensionError):
            AttnSample([[1.0, 2.0]], 1, [1.0, 0.0])  # one token
        with pytest.raises(DimensionError):
            AttnSample(np.eye(2), 1, [1.0, 0.0, 0.0])
        with pytest.raises(DomainError):
            AttnSample(np.eye(2), 0, [1.0, 0.0])
        with pytest.raises(DomainError):
            AttnSample([[np.nan, 0], [0, 1]], 1, [1.0, 0.0])

    def test_dataset_shapes_must_agree(self):
        with pytest.raises(DimensionError):
            AttnDataset.from_samples([AttnSample(np.eye(2), 1, [1, 0]), AttnSample(np.eye(3), 1, [1, 0, 0])])

    def test_arrays_are_read_only(self, ex2):
        with pytest.raises(ValueError):
            ex2.X[0, 0, 0] = 1.0
        params = ModelParams.zeros(2)
        with pytest.raises(ValueError):
            params.W[0, 0] = 1.0

    def test_params_validation(self):
        with pytest.raises(DimensionError):
            ModelParams(np.zeros((2, 3)), np.zeros(2))
        with pytest.raises(DimensionError):
            ModelParams(np.zeros((2, 2)), np.zeros(3))

    def test_seed_range(self):
        make_rng(2**64 - 1)
        with pytest.raises(ParameterError):
            make_rng(-1)
        with pytest.raises(ParameterError):
            make_rng(2**64)


class TestJson:
    def test_round_trip(self, synth, tmp_path):
        ds, _ = synth
        back = AttnDataset.from_json(ds.to_json())
        assert np.max(np.abs(back.X - ds.X)) <= 1e-15
        assert np.array_equal(back.y, ds.y)
        assert np.max(np.abs(back.Z - ds.Z)) <= 1e-15
        ds.save(tmp_path / "d.json")
        again = AttnDataset.load(tmp_path / "d.json")
        assert np.array_equal(again.X, ds.X)

    def test_schema(self, ex2):
        doc = json.loads(ex2.to_json())
        assert set(doc) == {"T", "d", "samples"}
        assert doc["T"] == 3 and doc["d"] == 2
        assert set(doc["samples"][0]) == {"X", "y", "z"}
        assert doc["samples"][1]["y"] == -1

    def test_seventeen_digits(self):
        assert dumps([0.1]) == "[0.10000000000000001]"
        assert float(json.loads(dumps([1 / 3]))[0]) == 1 / 3

    def test_bad_label_in_file(self):
        text = '{"T":2,"d":1,"samples":[{"X":[[1],[2]],"y":2,"z":[1]}]}'
        with pytest.raises(DomainError):
            AttnDataset.from_json(text)

    def test_non_finite_needs_opt_in(self):
        with pytest.raises(DomainError):
            dumps([math.nan])
        assert dumps([math.nan, math.inf], null_nonfinite=True) == "[null,null]"

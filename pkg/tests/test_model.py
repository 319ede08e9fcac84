"""Model assembly, priors, likelihood derivatives, file formats."""

import json
import math

import numpy as np
import pytest
from scipy.integrate import quad

from parinla.cholesky import analyze, factorize
from parinla.errors import ConfigError, StructureError
from parinla.model import (
    Component,
    ModelSpec,
    assemble_prior_precision,
    build_design,
    build_model,
    likelihood_terms,
    load_model,
    log_prior_hyper,
    read_graph_file,
    read_model_file,
    write_graph_file,
)
from parinla.ordering import AdjacencyGraph

from util import dense_logdet, structure_dense


def iid_spec(size=3, m=3, family="gaussian", **kw):
    return ModelSpec(
        m=m,
        family=family,
        components=[
            Component(
                name="u",
                kind="iid",
                size=size,
                theta_index=(1 if family == "gaussian" and "noise_precision" not in kw else 0),
                obs_index=np.arange(m) % size,
            )
        ],
        intercept=False,
        **kw,
    )


class TestAssemblePrior:
    def test_iid_block(self):
        spec = iid_spec(noise_precision=1.0)
        Q = assemble_prior_precision(spec, [np.log(4.0)])
        np.testing.assert_allclose(Q.to_dense(), (4.0 + spec.jitter) * np.eye(3))

    def test_rw1_block(self):
        spec = ModelSpec(
            m=3,
            family="gaussian",
            noise_precision=1.0,
            components=[
                Component("u", "rw1", 3, 0, obs_index=np.arange(3))
            ],
            intercept=False,
        )
        Q = assemble_prior_precision(spec, [0.0])
        expected = np.array([[1, -1, 0], [-1, 2, -1], [0, -1, 1]], dtype=float)
        np.testing.assert_allclose(Q.to_dense(), expected + spec.jitter * np.eye(3))

    def test_rw2_logdet_vs_dense(self):
        spec = ModelSpec(
            m=5,
            family="gaussian",
            noise_precision=1.0,
            components=[Component("u", "rw2", 5, 0, obs_index=np.arange(5))],
            intercept=False,
        )
        theta = [np.log(2.0)]
        Q = assemble_prior_precision(spec, theta)
        fac = factorize(analyze(Q, "natural"), Q)
        dense = 2.0 * structure_dense("rw2", 5) + spec.jitter * np.eye(5)
        assert abs(fac.log_det - dense_logdet(dense)) <= 1e-9 * abs(dense_logdet(dense))

    def test_pattern_stable_across_theta(self):
        spec = ModelSpec(
            m=6,
            family="gaussian",
            components=[
                Component("a", "rw1", 4, 1, obs_index=np.arange(6) % 4),
                Component("b", "iid", 3, 2, obs_index=np.arange(6) % 3),
            ],
            Z=np.ones((6, 1)),
            fixed_names=["z0"],
        )
        Q1 = assemble_prior_precision(spec, [0.0, 0.0, 0.0])
        Q2 = assemble_prior_precision(spec, [2.0, -3.0, 1.0])
        assert Q1.pattern_key() == Q2.pattern_key()
        assert Q1.indptr is Q2.indptr

    def test_fixed_block_and_layout(self):
        spec = ModelSpec(
            m=4,
            family="gaussian",
            components=[Component("u", "iid", 2, 1, obs_index=np.arange(4) % 2)],
            Z=np.ones((4, 2)),
            fixed_names=["a", "b"],
            intercept=True,
        )
        assert spec.latent_dim == 5
        Q = assemble_prior_precision(spec, [0.0, 0.0]).to_dense()
        np.testing.assert_allclose(np.diag(Q)[:3], spec.fixed_prior_prec)
        assert spec.latent_labels() == ["intercept", "beta:a", "beta:b", "u[0]", "u[1]"]

    def test_iid_scaling_identity(self):
        size = 4
        spec = iid_spec(size=size, m=4, noise_precision=1.0)
        for theta in (-2.0, 0.0, 3.0):
            Q = assemble_prior_precision(spec, [theta])
            fac = factorize(analyze(Q, "natural"), Q)
            expected = size * theta + size * np.log(1.0 + spec.jitter * np.exp(-theta))
            assert abs(fac.log_det - expected) <= 1e-9 * (1 + abs(expected))

    def test_theta_dimension_checked(self):
        spec = iid_spec(noise_precision=1.0)
        with pytest.raises(Exception):
            assemble_prior_precision(spec, [0.0, 1.0])


class TestLogPriorHyper:
    def test_unit_shape_rate_at_zero(self):
        spec = iid_spec(noise_precision=1.0)
        spec.components[0].hyper_shape = 1.0
        spec.components[0].hyper_rate = 1.0
        assert abs(log_prior_hyper(spec, [0.0]) - (-1.0)) < 1e-14

    def test_unit_shape_rate_at_log2(self):
        spec = iid_spec(noise_precision=1.0)
        spec.components[0].hyper_shape = 1.0
        spec.components[0].hyper_rate = 1.0
        assert abs(log_prior_hyper(spec, [np.log(2.0)]) - (np.log(2.0) - 2.0)) < 1e-14

    def test_normalizes_to_one(self):
        spec = iid_spec(noise_precision=1.0)
        spec.components[0].hyper_shape = 2.0
        spec.components[0].hyper_rate = 0.5
        total, _ = quad(lambda t: math.exp(log_prior_hyper(spec, [t])), -40, 40, limit=200)
        assert abs(total - 1.0) <= 1e-4


class TestLikelihoodTerms:
    def test_gaussian_at_mode(self):
        spec = iid_spec(noise_precision=2.0)
        y = np.array([0.5, -1.0, 2.0])
        ll, d1, d2 = likelihood_terms(spec, y.copy(), y, [0.0])
        np.testing.assert_allclose(d1, 0.0, atol=1e-15)
        np.testing.assert_allclose(d2, -2.0)
        assert abs(ll - 3 * 0.5 * (np.log(2.0) - np.log(2 * np.pi))) < 1e-12

    def test_poisson_closed_form(self):
        spec = iid_spec(m=1, size=1, family="poisson")
        ll, d1, d2 = likelihood_terms(spec, np.array([0.0]), np.array([3.0]), [0.0])
        assert d1[0] == 2.0
        assert d2[0] == -1.0
        assert abs(ll - (0.0 - 1.0 - math.lgamma(4.0))) < 1e-12

    @pytest.mark.parametrize("family", ["gaussian", "poisson"])
    def test_gradient_matches_central_difference(self, family):
        rng = np.random.default_rng(3)
        m = 12
        spec = iid_spec(size=4, m=m, family=family, **({"noise_precision": 1.5} if family == "gaussian" else {}))
        eta = rng.normal(0.0, 0.5, m)
        y = rng.poisson(np.exp(eta)).astype(float) if family == "poisson" else rng.normal(eta, 1.0)
        theta = [0.3] if family == "gaussian" and spec.noise_theta is not None else [0.0]
        _, d1, d2 = likelihood_terms(spec, eta, y, theta)
        h = 1e-6
        for i in range(0, m, 3):
            e = np.zeros(m)
            e[i] = h
            lp = likelihood_terms(spec, eta + e, y, theta)[0]
            lm = likelihood_terms(spec, eta - e, y, theta)[0]
            assert abs((lp - lm) / (2 * h) - d1[i]) <= 1e-6 * (1 + abs(d1[i]))
        assert np.all(d2 <= 0)

    def test_poisson_rejects_negative_counts(self):
        spec = iid_spec(m=2, size=2, family="poisson")
        with pytest.raises(StructureError):
            likelihood_terms(spec, np.zeros(2), np.array([1.0, -2.0]), [0.0])


class TestDesign:
    def test_blocks_align(self):
        spec = ModelSpec(
            m=4,
            family="gaussian",
            components=[Component("u", "iid", 2, 1, obs_index=np.array([0, 1, 0, 1]))],
            Z=np.arange(8.0).reshape(4, 2),
            fixed_names=["a", "b"],
        )
        A = build_design(spec).toarray()
        assert A.shape == (4, 5)
        np.testing.assert_array_equal(A[:, 0], 1.0)
        np.testing.assert_array_equal(A[:, 1:3], spec.Z)
        np.testing.assert_array_equal(A[:, 3:], [[1, 0], [0, 1], [1, 0], [0, 1]])


class TestFileFormats:
    def test_graph_round_trip(self, tmp_path):
        g = AdjacencyGraph.from_edges(5, [0, 1, 2, 0], [1, 2, 3, 4])
        path = tmp_path / "g.txt"
        write_graph_file(path, g)
        back = read_graph_file(path)
        assert back.n == 5
        np.testing.assert_array_equal(back.indptr, g.indptr)
        np.testing.assert_array_equal(back.indices, g.indices)

    def test_model_file_errors_name_key(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text(json.dumps({"likelihood": {}}))
        with pytest.raises(ConfigError) as info:
            read_model_file(path)
        assert info.value.key == "likelihood"

        path.write_text(json.dumps({"likelihood": {"family": "weird"}}))
        with pytest.raises(ConfigError) as info:
            read_model_file(path)
        assert info.value.key == "likelihood.family"

        path.write_text(json.dumps({
            "likelihood": {"family": "gaussian"},
            "components": [{"name": "u", "kind": "besag"}],
        }))
        with pytest.raises(ConfigError) as info:
            read_model_file(path)
        assert "graph_file" in info.value.key

        path.write_text("{not json")
        with pytest.raises(ConfigError) as info:
            read_model_file(path)
        assert info.value.key == "model"

    def test_build_model_missing_column(self):
        doc = {
            "likelihood": {"family": "gaussian"},
            "fixed": ["age"],
            "components": [],
            "options": {},
        }
        with pytest.raises(ConfigError) as info:
            build_model(doc, {"y": np.ones(3)})
        assert info.value.key == "fixed.age"

    def test_load_model_end_to_end(self, tmp_path):
        (tmp_path / "m.json").write_text(json.dumps({
            "likelihood": {"family": "gaussian", "hyper": {"shape": 1.0, "rate": 1e-3}},
            "fixed": ["x"],
            "components": [{"name": "u", "kind": "iid", "size": 2}],
            "options": {"intercept": True},
        }))
        (tmp_path / "d.csv").write_text("y,x,u\n1.0,0.5,0\n2.0,-0.5,1\n0.5,0.1,0\n")
        spec, y = load_model(tmp_path / "m.json", tmp_path / "d.csv")
        assert spec.m == 3
        assert spec.theta_names == ("log_prec_noise", "log_prec_u")
        assert spec.latent_dim == 4
        np.testing.assert_array_equal(y, [1.0, 2.0, 0.5])

import json
import math

import numpy as np
import pytest
from scipy import stats

from dirlin.errors import DomainError, NonFiniteObjective
from dirlin.numerics import make_quadrature
from dirlin.simulation import (PRESETS, ModelSpec, StudyConfig, StudyTable, binomial_band, model_density,
                               model_sample, run_studies, run_study, study_manifest, write_manifest)
import dirlin.simulation as simulation


def vm(kappa, loc):
    return stats.vonmises(kappa, loc=loc) if kappa > 0 else stats.uniform(loc=-np.pi, scale=2 * np.pi)


def reference_model(model, delta, theta, reading="table"):
    """Circular-linear model written out with scipy.stats: (angle pdf, [(weight, frozen law)])."""
    up, down = np.pi / 2, -np.pi / 2
    t_up = np.sin(theta)       # x'(0, 1)
    t_r = -np.cos(theta)       # x'(-1, 0)
    lognorm = lambda m, s: stats.lognorm(s, scale=np.exp(m))  # noqa: E731
    if model == 1:
        return vm(1, up).pdf(theta), [(1.0, stats.norm(delta * (2 + t_up), 1.0))]
    if model == 2:
        return np.full_like(theta, 1 / (2 * np.pi)), [(1.0, lognorm(delta * (1 + t_r**2), 0.25))]
    if model == 3:
        r = 0.25 if reading == "display" else 0.75
        pdf = 0.75 * vm(2, up).pdf(theta) + 0.25 * vm(1, down).pdf(theta)
        return pdf, [(r, lognorm(delta * (1 + t_up**3), 0.25)), (1 - r, stats.norm(1.0, 0.25))]
    if model == 4:
        return vm(1, up).pdf(theta), [(1.0, stats.norm(0.0, 0.25 + delta * (1 - t_r**3)))]
    if model == 5:
        # x'mu_2 = -t_up and x'mu_1 = t_up
        shape = 1 / (5 + delta * (3 * (-t_up) - t_up))
        pdf = 0.5 * vm(2, up).pdf(theta) + 0.5 * vm(2, down).pdf(theta)
        return pdf, [(1.0, lognorm(0.0, shape))]
    r = 0.75 if reading == "display" else 0.25
    return vm(1, up).pdf(theta), [(r, lognorm(0.0, 0.5)),
                                  (1 - r, stats.norm(delta * (2 + t_r), 0.25 + delta * t_r**2))]


def circle(theta):
    return np.column_stack([np.cos(theta), np.sin(theta)])


def chi_square_pvalue(model, delta, n=100_000, seed=0):
    """Chi-square p-value of a 12 x 12 (angle, z) histogram of the sampler against the written-out density."""
    s = model_sample(ModelSpec(model, delta), n, 100 + model + seed)
    theta = np.arctan2(s.xs[:, 1], s.xs[:, 0])
    pilot = model_sample(ModelSpec(model, delta), 5000, 900 + model + seed).zs
    z_edges = np.concatenate([[-np.inf], np.quantile(pilot, np.linspace(0, 1, 13)[1:-1]), [np.inf]])
    a_edges = np.linspace(-np.pi, np.pi, 13)
    observed = np.histogram2d(theta, s.zs, [a_edges, z_edges])[0]
    # expected cell mass: midpoint rule in angle over exact conditional CDFs
    fine = np.linspace(-np.pi, np.pi, 12 * 400 + 1)
    mid = 0.5 * (fine[1:] + fine[:-1])
    pdf, comps = reference_model(model, delta, mid)
    cdf = sum(w * law.cdf(z_edges[:, None]) for w, law in comps)      # (edges, mid)
    cell = np.diff(cdf, axis=0) * pdf * (2 * np.pi / len(mid))          # (z bins, mid)
    expected = cell.reshape(12, 12, 400).sum(axis=2).T * s.n
    assert abs(expected.sum() / s.n - 1) < 1e-6
    obs, exp = observed.ravel(), expected.ravel()
    small = exp < 5
    obs = np.append(obs[~small], obs[small].sum())
    exp = np.append(exp[~small], exp[small].sum())
    if exp[-1] == 0:
        obs, exp = obs[:-1], exp[:-1]
    return float(stats.chisquare(obs, exp * obs.sum() / exp.sum()).pvalue)


class TestModelSpec:
    @pytest.mark.parametrize("kwargs", [dict(id=7), dict(id=1, delta=-0.1), dict(id=1, q=3),
                                        dict(id=3, reading="other")])
    def test_validation(self, kwargs):
        with pytest.raises(DomainError):
            ModelSpec(**kwargs)

    def test_nonpositive_scale_detected(self):
        with pytest.raises(DomainError, match="nonpositive scale"):
            model_sample(ModelSpec(5, 2.0), 2000, 0)


class TestModelDensity:
    @pytest.mark.parametrize("model", range(1, 7))
    @pytest.mark.parametrize("q", [1, 2])
    def test_independence_at_zero_delta(self, rng, model, q):
        spec = ModelSpec(model, 0.0, q)
        s = model_sample(spec, 40, rng)
        x, xp, z, zp = s.xs[:20], s.xs[20:], s.zs[:20], s.zs[20:]
        lhs = model_density(spec, x, z) * model_density(spec, xp, zp)
        rhs = model_density(spec, x, zp) * model_density(spec, xp, z)
        assert np.allclose(lhs, rhs, rtol=1e-12, atol=0)

    @pytest.mark.parametrize("model", range(1, 7))
    def test_matches_written_out_formula(self, rng, model):
        theta = rng.uniform(-np.pi, np.pi, 50)
        z = np.abs(rng.normal(1.0, 1.0, 50)) + 0.01
        for reading in ("table", "display"):
            pdf, comps = reference_model(model, 0.5, theta, reading)
            expected = pdf * sum(w * law.pdf(z) for w, law in comps)
            got = model_density(ModelSpec(model, 0.5, 1, reading), circle(theta), z)
            assert np.allclose(got, expected, rtol=1e-10, atol=0)

    @pytest.mark.parametrize("model", range(1, 7))
    def test_integrates_to_one_circle(self, model):
        rule = make_quadrature("circle", 256)
        line = make_quadrature("line", 4000, window=(-12.0, 40.0))
        spec = ModelSpec(model, 0.5, 1)
        x = np.repeat(rule.nodes, len(line.nodes), axis=0)
        z = np.tile(line.nodes, len(rule.nodes))
        dens = model_density(spec, x, z).reshape(len(rule.nodes), len(line.nodes))
        assert float(rule.weights @ dens @ line.weights) == pytest.approx(1.0, abs=1e-4)

    @pytest.mark.parametrize("model", [3, 5])
    def test_integrates_to_one_sphere(self, model):
        rule = make_quadrature("sphere", (40, 80))
        line = make_quadrature("line", 2000, window=(-12.0, 40.0))
        spec = ModelSpec(model, 0.5, 2)
        x = np.repeat(rule.nodes, len(line.nodes), axis=0)
        z = np.tile(line.nodes, len(rule.nodes))
        dens = model_density(spec, x, z).reshape(len(rule.nodes), len(line.nodes))
        assert float(rule.weights @ dens @ line.weights) == pytest.approx(1.0, abs=1e-4)


class TestModelSample:
    def test_m1_null_marginals(self):
        s = model_sample(ModelSpec(1, 0.0), 20_000, 1)
        assert stats.kstest(s.zs, "norm").pvalue > 0.01
        # angle from the mean direction, wrapped to [-pi, pi): scipy's cdf does not wrap around loc
        theta = np.mod(np.arctan2(s.xs[:, 1], s.xs[:, 0]) - np.pi / 2 + np.pi, 2 * np.pi) - np.pi
        assert stats.kstest(theta, stats.vonmises(1.0).cdf).pvalue > 0.01
        assert abs(stats.spearmanr(theta, s.zs)[0]) < 0.03

    def test_m2_conditional_log_mean(self):
        delta = 0.5
        s = model_sample(ModelSpec(2, delta), 100_000, 2)
        t = -s.xs[:, 0]
        logz = np.log(s.zs)
        bins = np.digitize(t, np.linspace(-1, 1, 11)[1:-1])
        for b in range(10):
            sel = bins == b
            target = np.mean(delta * (1 + t[sel] ** 2))
            assert abs(logz[sel].mean() - target) < 4 * 0.25 / math.sqrt(sel.sum())

    @pytest.mark.parametrize("reading,expected", [("display", 0.75), ("table", 0.25)])
    def test_m6_lognormal_branch_frequency(self, reading, expected):
        # mean posterior probability of the log-normal branch estimates its weight without bias
        spec = ModelSpec(6, 0.25, 1, reading)
        s = model_sample(spec, 100_000, 3)
        theta = np.arctan2(s.xs[:, 1], s.xs[:, 0])
        _, comps = reference_model(6, 0.25, theta, reading)
        parts = [w * law.pdf(s.zs) for w, law in comps]
        resp = parts[0] / (parts[0] + parts[1])
        assert resp.mean() == pytest.approx(expected, abs=4 * resp.std() / math.sqrt(resp.size) + 1e-3)

    @pytest.mark.parametrize("model", range(1, 7))
    def test_chi_square_against_density(self, model):
        assert chi_square_pvalue(model, 0.5) > 0.01


class TestStudy:
    def test_alpha_extremes(self):
        base = dict(models=((1, 0.0), (2, 0.5)), ns=(30,), M=6, B=9, methods=("T-LCV", "R2", "U"), seed=4)
        everything = run_study(StudyConfig(alpha=1.0, **base))
        assert all(r.rejections == r.M for r in everything.rows)
        nothing = run_study(StudyConfig(alpha=1e-9, correction=True, **base))
        assert all(r.rejections == 0 for r in nothing.rows)

    def test_worker_count_does_not_matter(self):
        cfg = StudyConfig(models=((1, 0.5), (4, 0.0)), ns=(25,), M=4, B=19, methods=("T-LCV", "U"), seed=8)
        assert run_study(cfg).to_csv() == run_study(cfg, workers=2).to_csv()

    def test_method_streams_are_independent_of_method_set(self):
        one = run_study(StudyConfig(models=((2, 0.5),), ns=(30,), M=5, B=19, methods=("R2",), seed=1))
        two = run_study(StudyConfig(models=((2, 0.5),), ns=(30,), M=5, B=19, methods=("U", "R2"), seed=1))
        assert one.cell(2, 0.5, 1, 30, "R2") == two.cell(2, 0.5, 1, 30, "R2")

    def test_circular_baselines_skipped_on_sphere(self):
        t = run_study(StudyConfig(models=((1, 0.0),), ns=(20,), M=2, B=9, methods=("T-LCV", "R2"), qs=(1, 2)))
        assert [(r.q, r.method) for r in t.rows] == [(1, "T-LCV"), (1, "R2"), (2, "T-LCV")]

    def test_failed_replicates_counted(self, monkeypatch):
        calls = {"k": 0}
        original = simulation._method_p_value

        def flaky(method, sample, B, rng, correction):
            calls["k"] += 1
            if calls["k"] % 3 == 0:
                raise NonFiniteObjective("synthetic failure")
            return original(method, sample, B, rng, correction)

        monkeypatch.setattr(simulation, "_method_p_value", flaky)
        row = run_study(StudyConfig(models=((1, 0.0),), ns=(20,), M=9, B=9, methods=("R2",))).rows[0]
        assert row.failed == 3 and row.M == 9
        assert row.proportion == row.rejections / 6

    def test_null_calibration_of_baselines(self):
        cfg = StudyConfig(models=tuple((m, 0.0) for m in range(1, 7)), ns=(50,), M=200, B=99,
                          methods=("R2", "U"), seed=11)
        lo, hi = binomial_band(0.05, 200)
        for r in run_study(cfg).rows:
            assert lo <= r.proportion <= hi, r

    def test_power_monotone_in_delta(self):
        cfg = StudyConfig(models=((1, 0.25), (1, 0.5), (3, 0.25), (3, 0.5)), ns=(50,), M=200, B=99,
                          methods=("R2",), seed=12)
        t = run_study(cfg)
        for model in (1, 3):
            low, high = t.cell(model, 0.25, 1, 50, "R2"), t.cell(model, 0.5, 1, 50, "R2")
            assert high.proportion >= low.proportion - 2 * low.se

    def test_csv_and_manifest(self, tmp_path):
        cfg = StudyConfig(models=((1, 0.0),), ns=(20,), M=2, B=9, methods=("R2",))
        text = run_studies([cfg]).to_csv()
        header, row = text.splitlines()
        assert header == ",".join(StudyTable.COLUMNS)
        assert row.split(",")[StudyTable.COLUMNS.index("seconds")] == ""
        timed = run_study(cfg, timings=True).to_csv().splitlines()[1]
        assert float(timed.split(",")[StudyTable.COLUMNS.index("seconds")]) >= 0
        path = tmp_path / "m.json"
        write_manifest(path, study_manifest([cfg], False, None))
        loaded = json.loads(path.read_text())
        assert loaded["configs"][0]["M"] == 2 and "numpy" in loaded["versions"]

    def test_preset_shape(self):
        configs = PRESETS["table1-desk"](0)
        assert {c.seed for c in configs} == {0}
        assert all(c.B == 199 for c in configs)

    @pytest.mark.parametrize("kwargs", [dict(M=0), dict(B=0), dict(alpha=0.0), dict(methods=("T-X",)),
                                        dict(ns=(1,)), dict(models=((9, 0.0),))])
    def test_config_validation(self, kwargs):
        with pytest.raises(DomainError):
            StudyConfig(**kwargs)


class TestBinomialBand:
    @pytest.mark.parametrize("M", [100, 200, 1000])
    def test_band_covers_99_percent(self, M):
        lo, hi = binomial_band(0.05, M)
        pmf = [math.comb(M, k) * 0.05**k * 0.95 ** (M - k) for k in range(M + 1)]
        klo, khi = round(lo * M), round(hi * M)
        assert sum(pmf[klo:khi + 1]) >= 0.99
        assert sum(pmf[:klo]) <= 0.005 and sum(pmf[khi + 1:]) <= 0.005 + 1e-12
        assert sum(pmf[:klo + 1]) > 0.005

    def test_band_contains_alpha(self):
        lo, hi = binomial_band(0.05, 200)
        assert lo < 0.05 < hi

import csv
import filecmp
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dirlin.errors import DegenerateOrientation, DomainError, SchemaError
from dirlin.wildfire import (FIRE_COLUMNS, FireRecord, WatershedAnalysis, WatershedResult, build_orientation_sample,
                             by_adjust, emit_reports, load_fires, perimeter, synthetic_atlas, watershed_analysis,
                             write_fires)

HEADER = ",".join(FIRE_COLUMNS)


def write_csv(tmp_path, lines, name="fires.csv"):
    path = tmp_path / name
    path.write_text("\n".join([HEADER] + lines) + "\n", encoding="utf-8")
    return path


def fire_rows(fid, wid, verts, area):
    out = []
    for k, v in enumerate(verts):
        alt = "" if len(v) == 2 else repr(float(v[2]))
        out.append(f"{fid},{wid},{k},{float(v[0])!r},{float(v[1])!r},{alt},{float(area)!r}")
    return out


def by_step_up(p):
    """Benjamini--Yekutieli written out: sort, scale by m c(m) / rank, running minimum from the top."""
    p = np.asarray(p, dtype=float)
    m = p.size
    cm = sum(1.0 / i for i in range(1, m + 1))
    order = np.argsort(p)
    adj = np.empty(m)
    running = 1.0
    for rank in range(m, 0, -1):
        i = order[rank - 1]
        running = min(running, p[i] * m * cm / rank)
        adj[i] = running
    return adj


class TestLoadFires:
    def test_triangle(self, tmp_path):
        path = write_csv(tmp_path, fire_rows("a", "W1", [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)], 5.0))
        data = load_fires(path)
        assert len(data.records) == 1 and data.records[0].vertices.shape == (3, 2)
        assert data.records[0].burnt_area == 5.0 and not data.records[0].has_altitude

    def test_two_vertices_skipped(self, tmp_path):
        lines = fire_rows("a", "W1", [(0.0, 0.0), (1.0, 0.0)], 5.0)
        lines += fire_rows("b", "W1", [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)], 2.0)
        data = load_fires(write_csv(tmp_path, lines))
        assert [r.fire_id for r in data.records] == ["b"]
        assert data.skipped == {"too_few_vertices": ["a"]}
        assert data.n_input == 2

    def test_nonpositive_area_skipped(self, tmp_path):
        data = load_fires(write_csv(tmp_path, fire_rows("a", "W1", [(0, 0), (1, 0), (0, 1)], 0.0)))
        assert data.skipped == {"nonpositive_area": ["a"]}

    def test_duplicate_vertex(self, tmp_path):
        lines = fire_rows("a", "W1", [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)], 5.0)
        lines.append(lines[1])
        with pytest.raises(SchemaError, match="line 5"):
            load_fires(write_csv(tmp_path, lines))

    def test_inconsistent_area(self, tmp_path):
        lines = fire_rows("a", "W1", [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)], 5.0)
        lines[2] = lines[2].rsplit(",", 1)[0] + ",6.0"
        with pytest.raises(SchemaError, match="line 4"):
            load_fires(write_csv(tmp_path, lines))

    def test_changing_watershed(self, tmp_path):
        lines = fire_rows("a", "W1", [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)], 5.0)
        lines[1] = lines[1].replace(",W1,", ",W2,")
        with pytest.raises(SchemaError, match="changes watershed"):
            load_fires(write_csv(tmp_path, lines))

    def test_non_numeric(self, tmp_path):
        lines = fire_rows("a", "W1", [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)], 5.0)
        lines[0] = lines[0].replace("0.0,0.0", "east,0.0", 1)
        with pytest.raises(SchemaError) as err:
            load_fires(write_csv(tmp_path, lines))
        assert err.value.line == 2

    def test_missing_column(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("fire_id,watershed_id,lon,lat\n", encoding="utf-8")
        with pytest.raises(SchemaError, match="missing columns"):
            load_fires(path)

    def test_altitude_kept(self, tmp_path):
        data = load_fires(write_csv(tmp_path, fire_rows("a", "W", [(0, 0, 5.0), (1, 0, 6.0), (0, 1, 7.0)], 1.0)))
        assert data.records[0].has_altitude

    def test_roundtrip(self, tmp_path):
        fires = synthetic_atlas(2, (0,), 5, rng=1)
        write_fires(fires, tmp_path / "atlas.csv")
        back = load_fires(tmp_path / "atlas.csv").records
        assert [f.fire_id for f in back] == [f.fire_id for f in fires]
        assert all(np.array_equal(a.vertices, b.vertices) and a.burnt_area == b.burnt_area
                   for a, b in zip(fires, back))

    def test_record_invariants(self):
        with pytest.raises(DomainError):
            FireRecord("a", "W", [[0, 0], [1, 1]], 1.0)
        with pytest.raises(DomainError):
            FireRecord("a", "W", [[0, 0], [1, 1], [2, 0]], -1.0)


class TestOrientationSample:
    def test_east_west_fire(self):
        f = FireRecord("a", "W", perimeter(0.0, (0.0, 0.0)), math.e)
        os_ = build_orientation_sample([f], 2)
        assert np.allclose(os_.sample.xs[0], [1.0, 0.0], atol=1e-12)
        assert os_.sample.zs[0] == pytest.approx(1.0, abs=1e-15)

    def test_flat_fires_on_equator(self):
        fires = [FireRecord(str(k), "W", perimeter(0.3 * k, (0, 0), alt=50.0), 1.0) for k in range(5)]
        os_ = build_orientation_sample(fires, 3)
        assert np.allclose(os_.phi, np.pi / 2, atol=1e-12)
        assert np.allclose(os_.sample.xs[:, 2], 0.0, atol=1e-12)

    def test_degenerate_fire_excluded(self):
        t = 2 * np.pi * np.arange(12) / 12
        round_fire = FireRecord("round", "W", np.column_stack([np.cos(t), np.sin(t)]), 1.0)
        long_fire = FireRecord("long", "W", perimeter(0.5, (0, 0)), 1.0)
        os_ = build_orientation_sample([round_fire, long_fire], 2)
        assert os_.excluded == ("round",) and os_.fire_ids == ("long",)
        with pytest.raises(DegenerateOrientation):
            build_orientation_sample([round_fire], 2)

    def test_three_d_needs_altitude(self):
        with pytest.raises(DomainError):
            build_orientation_sample([FireRecord("a", "W", perimeter(0.1, (0, 0)), 1.0)], 3)

    def test_synthetic_atlas_recovers_model_direction(self):
        fires = synthetic_atlas(1, (0,), 30, rng=4)
        os_ = build_orientation_sample(fires, 2)
        from dirlin.simulation import ModelSpec, model_sample
        smp = model_sample(ModelSpec(3, 0.5), 30, np.random.default_rng(4))
        assert np.allclose(os_.sample.xs, smp.xs, atol=1e-9)
        assert np.allclose(os_.sample.zs, smp.zs, atol=1e-12)


class TestBenjaminiYekutieli:
    def test_hand_computed(self):
        assert np.allclose(by_adjust([0.01, 0.02, 0.03]), [0.055, 0.055, 0.055], rtol=1e-12)

    @settings(max_examples=100)
    @given(st.lists(st.floats(0, 1), min_size=1, max_size=30))
    def test_matches_step_up(self, p):
        assert np.allclose(by_adjust(p), by_step_up(p), rtol=1e-12, atol=1e-15)

    @settings(max_examples=100)
    @given(st.lists(st.floats(0, 1), min_size=1, max_size=30))
    def test_monotone_and_dominating(self, p):
        p = np.array(p)
        adj = by_adjust(p)
        order = np.argsort(p, kind="stable")
        assert np.all(np.diff(adj[order]) >= -1e-15)
        assert np.all(adj >= p - 1e-15) and np.all(adj <= 1)


def mixed_atlas_file(tmp_path):
    """Atlas of three analysable watersheds plus problem fires of every kind."""
    fires = synthetic_atlas(3, (0,), 30, rng=2)
    lines = []
    for f in fires:
        lines += fire_rows(f.fire_id, f.watershed_id, f.vertices, f.burnt_area)
    t = 2 * np.pi * np.arange(12) / 12
    round_verts = np.column_stack([np.cos(t), np.sin(t), np.full(12, 100.0)])
    lines += fire_rows("round", "W00", round_verts, 3.0)
    lines += fire_rows("two", "W01", [(0.0, 0.0, 1.0), (1.0, 0.0, 1.0)], 3.0)
    lines += fire_rows("zero", "W01", perimeter(0.2, (0, 0), alt=1.0), 0.0)
    for k in range(4):
        lines += fire_rows(f"tiny{k}", "W99", perimeter(0.3 * k, (1, 1), alt=1.0), 2.0)
    return write_csv(tmp_path, lines)


class TestWatershedAnalysis:
    def test_accounting_and_exclusions(self, tmp_path):
        data = load_fires(mixed_atlas_file(tmp_path))
        a = watershed_analysis(data.records, dims=(2, 3), selector="LCV", B=19, min_fires=25, global_test=False,
                               skipped=data.skipped)
        excluded = sum(len(v) for k, v in a.exclusions.items() if k != "test_failed")
        assert a.n_input == 90 + 1 + 1 + 1 + 4
        assert a.n_input == a.n_analyzed + excluded
        assert a.small_watersheds == {"W99": 4}
        assert a.exclusions["degenerate_orientation"] == ["round"]
        assert a.exclusions["too_few_vertices"] == ["two"]
        assert a.exclusions["nonpositive_area"] == ["zero"]
        assert [r.watershed_id for r in a.results] == ["W00", "W01", "W02"]
        assert all(r.n_fires == 30 for r in a.results)

    def test_adjusted_p_and_combined(self):
        fires = synthetic_atlas(4, (0,), 30, rng=3)
        a = watershed_analysis(fires, dims=(2,), selector="LCV", B=99, global_test=True)
        ps = [r.p_circular for r in a.results]
        adj = [r.adjusted_circular for r in a.results]
        assert np.allclose(adj, by_step_up(ps), rtol=1e-12)
        assert a.combined_p["circular"] == min(adj)
        assert all(r.rejected_circular == (r.adjusted_circular <= 0.05) for r in a.results)
        assert 0 <= a.global_p["circular"] <= 1

    def test_log_area_shift_leaves_p_values(self):
        fires = synthetic_atlas(2, (0,), 30, rng=5)
        doubled = [FireRecord(f.fire_id, f.watershed_id, f.vertices, 2 * f.burnt_area) for f in fires]
        a = watershed_analysis(fires, dims=(2,), selector="LCV", B=99, global_test=False)
        b = watershed_analysis(doubled, dims=(2,), selector="LCV", B=99, global_test=False)
        assert [r.p_circular for r in a.results] == [r.p_circular for r in b.results]

    @pytest.mark.slow
    def test_null_false_discovery_rate(self):
        fdp = []
        for run in range(50):
            fires = synthetic_atlas(5, (), 30, rng=1000 + run)
            a = watershed_analysis(fires, dims=(2,), selector="LCV", B=199, seed=run, global_test=False)
            fdp.append(float(any(r.rejected_circular for r in a.results)))
        # every watershed is null, so the false-discovery proportion is 1 on any rejection
        assert np.mean(fdp) <= 0.05 + 2 * math.sqrt(0.05 * 0.95 / 50)

    def test_results_do_not_depend_on_other_watersheds(self):
        fires = synthetic_atlas(3, (0,), 30, rng=6)
        full = watershed_analysis(fires, dims=(2,), selector="LCV", B=49, global_test=False)
        alone = watershed_analysis([f for f in fires if f.watershed_id == "W01"], dims=(2,), selector="LCV",
                                   B=49, global_test=False)
        assert alone.results[0].p_circular == full.results[1].p_circular

    def test_validation(self):
        fires = synthetic_atlas(1, (), 30, rng=1)
        with pytest.raises(DomainError):
            watershed_analysis(fires, dims=(4,))
        with pytest.raises(DomainError):
            watershed_analysis(fires, alpha=0.0)
        with pytest.raises(DomainError):
            watershed_analysis([])


class TestEmitReports:
    def run(self, fires, workers=1):
        return watershed_analysis(fires, dims=(2, 3), selector="LCV", B=49, seed=3, global_test=True,
                                  workers=workers)

    def test_files_and_manifest(self, tmp_path):
        fires = synthetic_atlas(3, (0,), 30, rng=7)
        a = self.run(fires)
        paths = emit_reports(a, tmp_path / "out")
        assert set(paths) == {"watersheds", "choropleth", "scatter", "manifest"}
        manifest = json.loads(open(paths["manifest"], encoding="utf-8").read())
        assert manifest["config"] == a.config
        with open(paths["watersheds"], newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        assert [r["watershed_id"] for r in rows] == ["W00", "W01", "W02"]
        assert {"p_circular", "adjusted_p_circular", "rejected_spherical"} <= set(rows[0])
        with open(paths["scatter"], newline="", encoding="utf-8") as fh:
            scatter = list(csv.DictReader(fh))
        assert len(scatter) == 90 and all(float(r["phi"]) == pytest.approx(np.pi / 2) for r in scatter)
        raw = open(paths["manifest"], "rb").read()
        assert b"\r\n" not in raw

    def test_same_seed_same_bytes_any_workers(self, tmp_path):
        fires = synthetic_atlas(3, (0,), 30, rng=8)
        one = emit_reports(self.run(fires), tmp_path / "a")
        two = emit_reports(self.run(fires, workers=2), tmp_path / "b")
        for key in one:
            assert filecmp.cmp(one[key], two[key], shallow=False), key

    def test_no_rejections_written_false(self, tmp_path):
        results = [WatershedResult("W1", 30, 0.5, None, 0.9, None, False, None),
                   WatershedResult("W2", 30, 0.7, None, 0.9, None, False, None)]
        a = WatershedAnalysis(results, {"dims": [2]}, {}, {}, {}, {"circular": 0.9}, 60, 60)
        paths = emit_reports(a, tmp_path)
        with open(paths["watersheds"], newline="", encoding="utf-8") as fh:
            assert [r["rejected_circular"] for r in csv.DictReader(fh)] == ["false", "false"]
        assert "scatter" not in paths

    def test_empty_analysis(self, tmp_path):
        with pytest.raises(DomainError):
            emit_reports(WatershedAnalysis([], {"dims": [2]}, {}, {}, {}, {}, 0, 0), tmp_path)

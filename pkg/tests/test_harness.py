"""
Harness: configuration layers, canonical reports, image and table writers,
the experiment registry and the command line
"""

import json

import numpy as np
import pandas as pd
import pytest

import main as cli
from fields.gff import BoundarySpec, sample_dgff
from harness.config import (
    EXPERIMENT_IDS,
    ExperimentConfig,
    apply_overrides,
    knob,
    load_config,
    output_path,
    parse_override,
)
from harness.experiments import REGISTRY, RunReport, check_knobs, run_experiment
from harness.output import (
    canonical,
    driving_frame,
    dumps_canonical,
    label_color,
    read_field,
    render_image,
    render_rgb,
    trace_frame,
    write_field,
    write_report,
)
from processes.loewner import LEFT, RIGHT, ForcePoint, drive_sle, loewner_trace
from utils.errors import ConfigError, NumericalError


def _config(experiment: str, **fields) -> ExperimentConfig:
    return load_config(experiment, overrides=[f"{k}={json.dumps(v)}" for k, v in fields.items()])


class TestConfig:
    def test_parse_override(self):
        assert parse_override("nx=33") == ("nx", 33)
        assert parse_override("driver=constant") == ("driver", "constant")
        assert parse_override("thetas=[0.1, 0.2]") == ("thetas", [0.1, 0.2])
        with pytest.raises(ConfigError):
            parse_override("nx")

    def test_override_routing(self):
        merged = apply_overrides({"knobs": {"rho": 1.0}}, ["nx=33", "rho=-1", "knobs.kappa=7"])
        assert merged["nx"] == 33
        assert merged["knobs"] == {"rho": -1, "kappa": 7}

    def test_layers(self, tmp_path, monkeypatch):
        monkeypatch.setenv("IG_BASE_SEED", "5")
        path = tmp_path / "gff.json"
        path.write_text(json.dumps({"experiment": "gff", "nx": 33, "n_seeds": 4, "knobs": {"value": 1.0}}))
        config = load_config("gff", config_path=str(path), seeds=2, overrides=["ny=17"])
        assert (config.nx, config.ny, config.n_seeds, config.base_seed) == (33, 17, 2, 5)
        assert config.knobs == {"value": 1.0}

    def test_file_for_another_experiment(self, tmp_path):
        path = tmp_path / "fan.json"
        path.write_text(json.dumps({"experiment": "fan"}))
        with pytest.raises(ConfigError):
            load_config("gff", config_path=str(path))

    def test_unreadable_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config("gff", config_path=str(tmp_path / "missing.json"))

    def test_invalid_values(self):
        with pytest.raises(ConfigError):
            load_config("gff", overrides=["nx=2"])
        with pytest.raises(ConfigError):
            load_config("no-such-experiment")

    def test_symmetric_default_boundary(self):
        params = _config("fan").ig_params()
        assert params.a == params.b == pytest.approx(params.lam)

    def test_knob_cast(self):
        config = _config("drive", rho="abc")
        with pytest.raises(ConfigError):
            knob(config, "rho", 0.0, float)
        assert knob(config, "missing", 3, int) == 3

    def test_output_path_creates_directory(self, out_dir):
        config = _config("gff")
        target = output_path(config, "report.json")
        assert target.parent.is_dir()
        assert target.parent == out_dir


class TestCanonical:
    def test_float_rounding(self):
        assert canonical(0.1 + 0.2) == 0.3
        assert canonical(np.float32(0.5)) == 0.5

    def test_special_values(self):
        assert canonical({"a": float("nan"), "b": float("inf"), "c": 1 + 2j}) == {"a": None, "b": None, "c": [1.0, 2.0]}
        assert canonical((np.int64(3), np.bool_(True), None)) == [3, True, None]
        with pytest.raises(TypeError):
            canonical(object())

    def test_sorted_keys(self):
        assert dumps_canonical({"b": 1, "a": 2}) == '{\n  "a": 2,\n  "b": 1\n}\n'


class TestImages:
    def test_single_black_pixel(self):
        data = render_image(np.zeros((1, 1), dtype=bool))
        assert data == b"P6\n1 1\n255\n\x00\x00\x00"
        assert len(data) == 14

    def test_rows_are_flipped(self):
        grid = np.zeros((2, 3), dtype=bool)
        grid[0, 0] = True
        rgb = render_rgb(grid)
        assert rgb.shape == (2, 3, 3)
        assert rgb[1, 0].tolist() == [255, 255, 255]
        assert rgb[0, 0].tolist() == [0, 0, 0]
        assert render_image(grid).startswith(b"P6\n3 2\n255\n")

    def test_label_palette(self):
        labels = np.array([[0, 1, 2]])
        rgb = render_rgb(labels)
        assert rgb[0, 0].tolist() == [255, 255, 255]
        assert tuple(rgb[0, 1]) == label_color(1)
        assert tuple(rgb[0, 2]) == label_color(2)
        assert label_color(1) != label_color(2)
        np.testing.assert_array_equal(render_rgb(labels), rgb)

    def test_background(self):
        grid = np.zeros((2, 2), dtype=bool)
        flat = render_rgb(grid, background=np.ones((2, 2)))
        assert np.all(flat == 128)
        ramp = render_rgb(grid, background=np.array([[0.0, 1.0], [2.0, 3.0]]))
        assert ramp[1, 0, 0] == 0 and ramp[0, 1, 0] == 255

    def test_empty_grid(self):
        with pytest.raises(ValueError):
            render_image(np.zeros((0, 3), dtype=bool))


class TestTables:
    def test_report_side_files(self, tmp_path):
        report = RunReport(
            config={"experiment": "x"},
            per_seed=[{"seed": 0}],
            aggregates={"v": 0.1 + 0.2},
            wall_clock=1.5,
            tables={"rows": pd.DataFrame({"a": [1, 2]})},
        )
        written = write_report(report, tmp_path / "x_report.json")
        assert [p.name for p in written] == ["x_report.json", "x_report_rows.csv"]
        body = json.loads(written[0].read_text())
        assert body["aggregates"] == {"v": 0.3}
        assert written[1].read_text() == "a\n1\n2\n"

    def test_frames(self, rng):
        fps = [ForcePoint(LEFT, 0.0, 0.5), ForcePoint(RIGHT, 0.0, -0.5)]
        path = drive_sle(2.0, fps, 0.01, 0.001, rng)
        frame = driving_frame(path)
        assert list(frame.columns) == ["t", "W", "V_1", "V_2"]
        np.testing.assert_array_equal(frame["V_2"], path.V[1])
        trace = loewner_trace(path)
        frame = trace_frame(trace)
        assert list(frame.columns) == ["t", "re", "im"]
        np.testing.assert_array_equal(frame["im"], trace.points.imag)
        assert len(frame) == path.n_steps + 1

    def test_field_file(self, tmp_path, rng):
        field = sample_dgff(7, 5, BoundarySpec.constant(0.5), rng)
        back = read_field(write_field(field, tmp_path / "f.grid"))
        np.testing.assert_array_equal(back.values, field.values)


class TestExperiments:
    def test_registry_covers_every_id(self):
        assert set(REGISTRY) == set(EXPERIMENT_IDS)

    def test_unknown_knob(self):
        with pytest.raises(ConfigError):
            check_knobs(_config("gff", no_such_knob=1))

    def test_no_seeds(self):
        report = run_experiment(_config("gff", n_seeds=0, nx=9, ny=9), write_artifacts=False)
        assert report.per_seed == []
        assert report.aggregates is None

    def test_reports_are_reproducible(self):
        config = _config("gff", n_seeds=2, nx=17, ny=17)
        first = run_experiment(config, write_artifacts=False)
        second = run_experiment(config, write_artifacts=False)
        assert dumps_canonical(first.body()) == dumps_canonical(second.body())
        assert [r["seed"] for r in first.per_seed] == [0, 1]

    def test_constant_driver_tip(self):
        config = _config("trace", n_seeds=1, T=0.25, dt=0.001, driver="constant")
        report = run_experiment(config, write_artifacts=False)
        assert report.aggregates["tip_within_tolerance"]
        assert report.per_seed[0]["self_intersections"] == 0

    def test_connectivity_schema(self):
        config = _config("connectivity", n_seeds=3, nx=129, ny=129, n_angles=3)
        report = run_experiment(config, write_artifacts=False)
        assert len(report.per_seed) == 3
        assert all(isinstance(r["connected"], bool) for r in report.per_seed)
        rate = report.aggregates["connectivity_rate"]
        assert rate["n"] == 3
        assert 0.0 <= rate["rate"] <= 1.0

    def test_artifacts_are_written(self, out_dir):
        config = _config("gff", n_seeds=1, nx=9, ny=9)
        report = run_experiment(config)
        assert report.artifacts == ["gff_seed000_field.grid", "gff_seed000_field.ppm"]
        for name in report.artifacts:
            assert (out_dir / name).is_file()

    @pytest.mark.slow
    def test_worker_pool_matches_serial(self):
        serial = run_experiment(_config("gff", n_seeds=3, nx=17, ny=17), write_artifacts=False)
        pooled = run_experiment(_config("gff", n_seeds=3, nx=17, ny=17, threads=2), write_artifacts=False)
        assert dumps_canonical(serial.per_seed) == dumps_canonical(pooled.per_seed)


class TestCommandLine:
    def test_success(self, out_dir, capsys):
        code = cli.main(["gff", "--seeds", "1", "--set", "nx=9", "--set", "ny=9"])
        assert code == cli.EXIT_OK
        report = out_dir / "gff_report.json"
        assert report.is_file()
        assert str(report) in capsys.readouterr().out
        assert json.loads(report.read_text())["config"]["nx"] == 9

    def test_custom_report_name(self, out_dir):
        assert cli.main(["gff", "--seeds", "0", "--set", "nx=9", "--set", "ny=9", "--report", "r.json"]) == 0
        assert (out_dir / "r.json").is_file()

    def test_configuration_errors(self, out_dir):
        assert cli.main(["gff", "--set", "no_such_knob=1"]) == cli.EXIT_CONFIG
        assert cli.main(["gff", "--set", "nx=1"]) == cli.EXIT_CONFIG
        assert cli.main(["fan", "--set", "kappa=5", "--seeds", "1"]) == cli.EXIT_CONFIG

    def test_numerical_failure(self, out_dir, monkeypatch):
        def boom(config):
            raise NumericalError("non-finite value", step=3)

        monkeypatch.setattr(cli, "run_experiment", boom)
        assert cli.main(["gff", "--seeds", "1"]) == cli.EXIT_NUMERIC

    def test_unknown_experiment(self):
        with pytest.raises(SystemExit) as exc:
            cli.main(["warp-drive"])
        assert exc.value.code == 2

import csv
import json

import pytest

from laakso_lab.contracts.artifacts import MANIFEST_NAME, verify_manifest
from laakso_lab.core.errors import ExitCode
from laakso_lab.main import main
from laakso_lab.verify_suite import verify_all


def write_config(tmp_path, name="config.json", **config):
    path = tmp_path / name
    path.write_text(json.dumps(config))
    return path


def read_rows(path):
    with open(path, newline="") as handle:
        return list(csv.reader(handle))


class TestRun:
    def test_verify_metric(self, tmp_path, output_root, capsys):
        config = write_config(tmp_path, experiment="verify-metric", params={"M": 2, "N": 4, "n": 1})
        assert main(["run", str(config)]) == ExitCode.OK
        directory = output_root / "verify-metric"
        assert capsys.readouterr().out.strip() == str(directory)

        rows = read_rows(directory / "distances.csv")
        assert rows[0] == ["x", "y", "dist", "dist_formula", "equal"]
        assert len(rows) - 1 == 31 * 30 // 2
        assert all(row[4] == "true" for row in rows[1:])

        manifest = json.loads((directory / MANIFEST_NAME).read_text())
        assert manifest["summary"]["status"] == "ok"
        assert manifest["rng"]["seed"] is None
        assert verify_manifest(directory) == []

    def test_tampered_artifact_is_reported(self, tmp_path, output_root):
        config = write_config(tmp_path, experiment="verify-metric", params={"M": 2, "N": 4, "n": 1})
        out = tmp_path / "tamper"
        assert main(["run", str(config), "--output", str(out)]) == ExitCode.OK
        (out / "distances.csv").write_text("x,y\n")
        assert verify_manifest(out) == ["distances.csv"]

    def test_seeded_runs_are_byte_identical(self, tmp_path, output_root):
        config = write_config(
            tmp_path,
            experiment="verify-shortcuts",
            params={"M": 2, "N": 4, "n": 2},
            seed=11,
        )
        first, second = tmp_path / "a", tmp_path / "b"
        assert main(["run", str(config), "--output", str(first)]) == ExitCode.OK
        assert main(["run", str(config), "--output", str(second)]) == ExitCode.OK
        for name in ("shortcut_sets.csv", "constants.csv", "single_jumps.csv"):
            assert (first / name).read_bytes() == (second / name).read_bytes()

    @pytest.mark.parametrize("eta", [{"kind": "geometric", "ratio": 1.0}, {"kind": "geometric", "ratio": 0.5}])
    def test_separation_rows_carry_bounds(self, tmp_path, output_root, eta):
        config = write_config(
            tmp_path,
            experiment="verify-shortcuts",
            params={"M": 2, "N": 4, "n": 3},
            eta=eta,
            seed=3,
            options={"samples": 20},
        )
        out = tmp_path / "sep"
        assert main(["run", str(config), "--output", str(out)]) == ExitCode.OK
        rows = {row[0]: row for row in read_rows(out / "constants.csv")[1:]}
        assert rows["base_separation"][2:] == ["1/2", "true"]
        assert rows["eta_separation"][2:] == ["1/6", "true"]

    def test_odd_N_is_a_parameter_error(self, tmp_path, output_root):
        config = write_config(tmp_path, experiment="verify-metric", params={"M": 2, "N": 5, "n": 1})
        assert main(["run", str(config)]) == ExitCode.PARAMETER

    def test_randomized_experiment_needs_seed(self, tmp_path, output_root):
        config = write_config(tmp_path, experiment="cascade", params={"M": 2, "N": 4, "n": 1})
        assert main(["run", str(config)]) == ExitCode.PARAMETER

    def test_unknown_option_rejected(self, tmp_path, output_root):
        config = write_config(
            tmp_path,
            experiment="verify-metric",
            params={"M": 2, "N": 4, "n": 1},
            options={"colour": "blue"},
        )
        assert main(["run", str(config)]) == ExitCode.PARAMETER

    def test_missing_file(self, tmp_path, output_root, capsys):
        assert main(["run", str(tmp_path / "absent.json")]) == ExitCode.PARAMETER
        assert "CONFIG_ERROR" in capsys.readouterr().err

    def test_malformed_json(self, tmp_path, output_root):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        assert main(["run", str(path)]) == ExitCode.PARAMETER


class TestCommands:
    def test_schema(self, capsys):
        assert main(["schema"]) == ExitCode.OK
        schema = json.loads(capsys.readouterr().out)
        assert "experiment" in schema["properties"]

    def test_verify_shallow(self, tmp_path, output_root):
        assert main(["verify", "--depth", "1", "--output", str(tmp_path)]) == ExitCode.OK
        report = json.loads((tmp_path / "verify.json").read_text())
        assert report["depth"] == 1
        assert all(check["passed"] for check in report["checks"])

    @pytest.mark.parametrize("depth", ["1", "2"])
    def test_injected_fault_fails(self, output_root, depth):
        assert main(["verify", "--depth", depth, "--fault", "chord"]) == ExitCode.INVARIANT

    def test_injected_fault_fails_only_its_check(self):
        summary = verify_all(2, 5, "chord")
        failed = {check.name for check in summary.checks if not check.passed}
        assert failed == {"Contracted separation and chord diameter"}

    def test_bad_depth(self, output_root):
        assert main(["verify", "--depth", "0"]) == ExitCode.PARAMETER

    @pytest.mark.slow
    def test_verify_default_depth(self, output_root):
        assert main(["verify", "--depth", "3"]) == ExitCode.OK

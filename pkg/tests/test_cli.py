import csv
import json

import pytest

from fixture_gen import mini_robot_dict
from quadretarget.cli import main
from quadretarget.motion import load_motion, save_motion


@pytest.fixture(scope="module")
def workspace(tmp_path_factory, mini, trot, hop):
    root = tmp_path_factory.mktemp("cli")
    robot_path = root / "mini.json"
    robot_path.write_text(json.dumps(mini_robot_dict()))
    trot_path = root / "trot.json"
    save_motion(trot, trot_path)
    hop_path = root / "hop.json"
    save_motion(hop, hop_path)
    return {"root": root, "robot": robot_path, "trot": trot_path, "hop": hop_path}


def read_metrics(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


FAST_TMR = ["--budget-warm", "1", "--budget-iter", "0"]


class TestSmrCommand:
    def test_outputs_and_slide(self, workspace, tmp_path):
        out = tmp_path / "out"
        code = main(["smr", "--robot", str(workspace["robot"]),
                     "--motion", str(workspace["trot"]), "--out", str(out)])
        assert code == 0
        assert (out / "motion.json").exists()
        assert (out / "manifest.json").exists()
        rows = read_metrics(out / "metrics.csv")
        assert rows[0]["method"] == "smr"
        assert float(rows[0]["foot_slide_mean_mm"]) < 3.0
        result = load_motion(out / "motion.json")
        assert result.joint_angles is not None
        assert result.has_base

    def test_missing_robot_file_exit_2(self, workspace, tmp_path, capsys):
        code = main(["smr", "--robot", str(workspace["root"] / "nope.json"),
                     "--motion", str(workspace["trot"]),
                     "--out", str(tmp_path / "o")])
        assert code == 2
        assert "nope.json" in capsys.readouterr().err

    def test_missing_motion_setting_exit_2(self, workspace, tmp_path):
        code = main(["smr", "--robot", str(workspace["robot"]),
                     "--out", str(tmp_path / "o")])
        assert code == 2


class TestRetargetCommand:
    def test_end_to_end_outputs(self, workspace, tmp_path):
        out = tmp_path / "full"
        code = main(["retarget", "--robot", str(workspace["robot"]),
                     "--motion", str(workspace["trot"]), "--out", str(out),
                     "--seed", "1"] + FAST_TMR)
        assert code == 0
        for name in ("motion.json", "motion_smr.json", "solution.json",
                     "metrics.csv", "manifest.json", "tmr_history.csv"):
            assert (out / name).exists(), name
        rows = read_metrics(out / "metrics.csv")
        methods = {r["method"] for r in rows}
        assert methods == {"smr", "tmr"}
        smr_row = next(r for r in rows if r["method"] == "smr")
        assert float(smr_row["foot_slide_mean_mm"]) < 3.0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["seed"] == 1
        assert "config_sha256" in manifest

    def test_determinism_byte_identical(self, workspace, tmp_path):
        out = tmp_path / "repeat"
        argv = ["retarget", "--robot", str(workspace["robot"]),
                "--motion", str(workspace["hop"]), "--out", str(out),
                "--seed", "7", "--budget-warm", "2", "--budget-iter", "1"]
        names = ("motion.json", "motion_smr.json", "solution.json",
                 "metrics.csv", "tmr_history.csv", "manifest.json")
        assert main(argv) == 0
        first = {name: (out / name).read_bytes() for name in names}
        assert main(argv) == 0
        for name in names:
            assert (out / name).read_bytes() == first[name], \
                f"{name} differs between identical runs"


class TestTmrCommand:
    def test_identity_budget_preserves_duration(self, workspace, tmp_path):
        smr_out = tmp_path / "stage1"
        assert main(["smr", "--robot", str(workspace["robot"]),
                     "--motion", str(workspace["hop"]), "--out", str(smr_out)]) == 0
        out = tmp_path / "stage2"
        code = main(["tmr", "--robot", str(workspace["robot"]),
                     "--motion", str(smr_out / "motion.json"),
                     "--out", str(out)] + FAST_TMR)
        assert code == 0
        src = load_motion(smr_out / "motion.json")
        final = load_motion(out / "motion.json")
        assert final.frame_count == src.frame_count
        history = (out / "tmr_history.csv").read_text().splitlines()
        assert history[0].startswith("iteration,alpha_0,score,ddp_cost,accepted")
        assert len(history) == 2  # header + single identity evaluation

    def test_rejects_motion_without_coordinates(self, workspace, tmp_path):
        code = main(["tmr", "--robot", str(workspace["robot"]),
                     "--motion", str(workspace["trot"].parent / "bare.json"),
                     "--out", str(tmp_path / "o")] + FAST_TMR)
        assert code == 2  # missing file reported as config error
        bare = load_motion(workspace["trot"]).copy()
        bare.joint_angles = None
        path = tmp_path / "bare.json"
        save_motion(bare, path)
        code = main(["tmr", "--robot", str(workspace["robot"]),
                     "--motion", str(path), "--out", str(tmp_path / "o2")] + FAST_TMR)
        assert code == 2


class TestReconstructCommand:
    def test_recovery_present_for_based_motion(self, workspace, tmp_path):
        out = tmp_path / "recon"
        code = main(["reconstruct", "--robot", str(workspace["robot"]),
                     "--motion", str(workspace["trot"]), "--out", str(out)])
        assert code == 0
        rows = read_metrics(out / "metrics.csv")
        assert rows[0]["method"] == "reconstruct"
        assert rows[0]["recovery_rate_pct"] != ""
        assert float(rows[0]["recovery_rate_pct"]) > 0.0


class TestMetricsCommand:
    def test_identical_pair(self, workspace, tmp_path):
        out = tmp_path / "m"
        code = main(["metrics", "--motion", str(workspace["trot"]),
                     "--reference", str(workspace["trot"]), "--out", str(out)])
        assert code == 0
        row = read_metrics(out / "metrics.csv")[0]
        assert float(row["dtw_l1_mm"]) == pytest.approx(0.0, abs=1e-9)
        assert float(row["contact_iou"]) == 1.0
        assert float(row["recovery_rate_pct"]) == pytest.approx(100.0)


class TestConfigFile:
    def test_json_config_with_flag_override(self, workspace, tmp_path):
        cfg = {
            "robot": str(workspace["robot"]),
            "motion": str(workspace["trot"]),
            "out": str(tmp_path / "cfg_out"),
            "tmr": {"budget_warm": 1, "budget_iter": 0},
        }
        cfg_path = tmp_path / "run.json"
        cfg_path.write_text(json.dumps(cfg))
        out_override = tmp_path / "other_out"
        code = main(["smr", "--config", str(cfg_path), "--out", str(out_override)])
        assert code == 0
        assert (out_override / "motion.json").exists()
        assert not (tmp_path / "cfg_out").exists()

    def test_toml_config(self, workspace, tmp_path):
        cfg_path = tmp_path / "run.toml"
        cfg_path.write_text(
            f'robot = "{workspace["robot"]}"\n'
            f'motion = "{workspace["trot"]}"\n'
            f'out = "{tmp_path / "toml_out"}"\n'
        )
        code = main(["smr", "--config", str(cfg_path)])
        assert code == 0
        assert (tmp_path / "toml_out" / "motion.json").exists()

    def test_unknown_key_rejected(self, workspace, tmp_path):
        cfg_path = tmp_path / "bad.json"
        cfg_path.write_text(json.dumps({"robots": "typo"}))
        code = main(["smr", "--config", str(cfg_path),
                     "--robot", str(workspace["robot"]),
                     "--motion", str(workspace["trot"]),
                     "--out", str(tmp_path / "o")])
        assert code == 2

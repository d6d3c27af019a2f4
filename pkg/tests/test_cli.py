import json

import pytest

from critsense import cli


def write(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


MOCK = "engine = mock\nmock_value = 4\nB_z_min = 0\nB_z_max = 0.2\nB_z_step = 0.1\n"


def test_mock_sweep_three_rows(tmp_path, capsys):
    assert cli.main(["sweep-g1d", "--config", write(tmp_path, MOCK)]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "B_z,g"
    assert out[1:] == ["0,0.25", "0.1,0.25", "0.2,0.25"]


def test_csv_headers(tmp_path):
    cfg = write(tmp_path, "L = 6\nh_z = 0.5,1.0\ncompare_ed = true\n")
    out = tmp_path / "q.csv"
    assert cli.main(["qfi-point", "--config", cfg, "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "h_z,F_Q,F_Q_ed"
    meta = json.loads((tmp_path / "q.csv.json").read_text())
    assert meta["summary"]["max_relative_difference"] < 1e-3


def test_qfi_point_mock_echoes_value(tmp_path, capsys):
    assert cli.main(["qfi-point", "--set", "engine=mock", "--set", "mock_value=7.5", "--set", "h_z=0.3"]) == 0
    assert capsys.readouterr().out.splitlines()[1] == "0.3,7.5"


def test_optimize_2d_mock(tmp_path, capsys):
    text = (
        "engine = mock\nmock_value = 4,2\nB_x_min = 0\nB_x_max = 0.1\nB_x_step = 0.05\n"
        "B_z_min = 0\nB_z_max = 0.1\nB_z_step = 0.1\npolish = false\n"
    )
    assert cli.main(["optimize-2d", "--config", write(tmp_path, text), "--threads", "1"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "B_x,B_z,g"
    assert len(lines) == 1 + 3 * 2
    assert lines[1] == "0,0,0.75"


def test_scaling_header_and_fit_record(tmp_path):
    text = "L_values = 16,32,64,128\ndh_z = 0.01\nB_z_min = 0.8\nB_z_max = 1.2\nB_z_step = 0.02\n"
    out = tmp_path / "s.json"
    assert cli.main(["scaling", "--config", write(tmp_path, text), "--out", str(out), "--format", "json"]) == 0
    rec = json.loads(out.read_text())
    assert rec["columns"] == ["L", "g_star"]
    assert set(rec["summary"]) >= {"a", "b", "c", "residual"}
    assert [r[0] for r in rec["rows"]] == [16, 32, 64, 128]


def test_efficiency_header(tmp_path, capsys):
    text = "L = 4\nB_x = 1.39\nB_z = -0.39\ngrid_points = 2\n"
    assert cli.main(["efficiency", "--config", write(tmp_path, text)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "h_x,h_z,ratio_qfi_cfi,ratio_b0_bstar"
    assert len(lines) == 5


@pytest.mark.parametrize(
    "text",
    [
        "L = 1\n",
        "dh_z = -0.1\n",
        "bogus_key = 3\n",
        "L = ten\n",
        "engine = mock\n",
        "J = 2\n",
        "B_z_min = 1\nB_z_max = 0\n",
        "B_z = nan\n",
        "no equals sign\n",
        "L = 7\n",
    ],
)
def test_config_errors_exit_2(tmp_path, text, capsys):
    assert cli.main(["sweep-g1d", "--config", write(tmp_path, text)]) == 2
    assert "config error" in capsys.readouterr().err


def test_missing_config_file_exit_2(tmp_path):
    assert cli.main(["sweep-g1d", "--config", str(tmp_path / "absent.cfg")]) == 2


def test_unknown_command_exit_2():
    assert cli.main(["bogus"]) == 2


def test_numerical_failure_exit_3(tmp_path, capsys):
    # a zero-field probe region straddles the degenerate antiferromagnetic point
    text = "L = 4\nB_x = 0\nB_z = 0\nh_x_cen = 0\nh_z_cen = 0\ndh_x = 0\ndh_z = 0\nengine = ed\nh_z = 0\n"
    assert cli.main(["qfi-point", "--config", write(tmp_path, text)]) == 3
    assert "numerical failure" in capsys.readouterr().err


def test_flags_override_file(tmp_path):
    cfg = write(tmp_path, MOCK + "format = json\nthreads = 4\n")
    out = tmp_path / "o.csv"
    assert cli.main(["sweep-g1d", "--config", cfg, "--format", "csv", "--threads", "1", "--out", str(out)]) == 0
    assert out.read_text().startswith("B_z,g\n")
    meta = json.loads((tmp_path / "o.csv.json").read_text())
    assert meta["config"]["threads"] == "1" and meta["config"]["format"] == "csv"


def test_echo_round_trips(tmp_path):
    cfg = cli.build_config("optimize-2d", cli.parse_text("L = 8\nmock_value = 1.5,2\nengine = mock\n"))
    again = cli.build_config("optimize-2d", cli.parse_text("\n".join(f"{k} = {v}" for k, v in cfg.echo().items())))
    assert again.values == cfg.values


def test_reruns_bit_identical(tmp_path):
    cfg = write(tmp_path, "L = 200\ndh_z = 0.1\nB_z_min = 0.8\nB_z_max = 1.2\nB_z_step = 0.05\n")
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert cli.main(["sweep-g1d", "--config", cfg, "--out", str(a)]) == 0
    assert cli.main(["sweep-g1d", "--config", cfg, "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    ja = json.loads((tmp_path / "a.csv.json").read_text())
    jb = json.loads((tmp_path / "b.csv.json").read_text())
    ja.pop("timing"), jb.pop("timing")
    ja["config"].pop("out"), jb["config"].pop("out")
    assert ja == jb


def test_reruns_bit_identical_with_threads(tmp_path):
    text = (
        "L = 6\nh_x_cen = 0.2\nh_z_cen = 0.3\ndh_x = 0.1\ndh_z = 0.1\nnodes = 2\n"
        "B_x_min = 0.8\nB_x_max = 1.2\nB_x_step = 0.2\nB_z_min = 0.2\nB_z_max = 0.6\nB_z_step = 0.2\n"
    )
    cfg = write(tmp_path, text)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert cli.main(["optimize-2d", "--config", cfg, "--out", str(a), "--threads", "3"]) == 0
    assert cli.main(["optimize-2d", "--config", cfg, "--out", str(b), "--threads", "3"]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_output_written_atomically(tmp_path, monkeypatch):
    target = tmp_path / "keep.csv"
    target.write_text("old\n")

    def boom(*args):
        raise OSError("disk full")

    monkeypatch.setattr(cli.os, "replace", boom)
    with pytest.raises(OSError):
        cli.write_atomic(str(target), "new\n")
    assert target.read_text() == "old\n"
    assert sorted(p.name for p in tmp_path.iterdir()) == ["keep.csv"]

"""Output writers: formatting, provenance line, byte determinism."""
import json

import numpy as np

from vcosim._version import __version__
from vcosim.config import SimConfig, config_digest
from vcosim.report import (
    _cell,
    comment_line,
    save_lines_figure,
    save_sweep_figure,
    save_trace_figure,
    write_csv,
    write_metrics,
)


def test_cell_formats():
    assert _cell(True) == "true"
    assert _cell(np.bool_(False)) == "false"
    assert _cell(np.int64(7)) == "7"
    assert _cell(3) == "3"
    # repr keeps full float precision so reruns diff clean
    assert _cell(0.1) == "0.1"
    assert _cell(np.float64(1 / 3)) == repr(1 / 3)
    assert _cell("x") == "x"


def test_comment_line_carries_version_and_digest():
    cfg = SimConfig()
    line = comment_line(cfg)
    assert line.startswith("# vcosim ")
    assert __version__ in line
    assert config_digest(cfg) in line
    assert "schema 1" in line


def test_csv_layout_and_determinism(tmp_path):
    cfg = SimConfig()
    rows = [(1, 0.5, True, "ok"), (2, float("inf"), False, "bad")]
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    write_csv(p1, ["n", "x", "flag", "note"], rows, cfg)
    write_csv(p2, ["n", "x", "flag", "note"], rows, cfg)
    assert p1.read_bytes() == p2.read_bytes()
    lines = p1.read_text().splitlines()
    assert lines[0] == comment_line(cfg)
    assert lines[1] == "n,x,flag,note"
    assert lines[2] == "1,0.5,true,ok"
    assert lines[3] == "2,inf,false,bad"


def test_metrics_json_nan_becomes_null(tmp_path):
    cfg = SimConfig()
    p = tmp_path / "m.json"
    write_metrics(
        p,
        {"a": np.float64(1.5), "b": float("nan"), "c": np.arange(3),
         "d": {"e": np.bool_(True)}},
        cfg,
    )
    doc = json.loads(p.read_text())
    assert doc["a"] == 1.5
    assert doc["b"] is None
    assert doc["c"] == [0, 1, 2]
    assert doc["d"] == {"e": True}
    assert doc["schema"] == 1
    assert doc["config_digest"] == config_digest(cfg)
    # deterministic serialization
    q = tmp_path / "m2.json"
    write_metrics(q, {"a": 1.5, "b": float("nan"), "c": np.arange(3),
                      "d": {"e": True}}, cfg)
    assert json.loads(q.read_text())["a"] == doc["a"]


def test_svg_outputs_are_byte_reproducible(tmp_path):
    cfg = SimConfig()
    f = np.geomspace(20, 1e6, 200)
    y = -100 + 40 * np.log10(f / 1e3)
    a, b = tmp_path / "a.svg", tmp_path / "b.svg"
    save_lines_figure(a, cfg, f, [y], ["noise"], "Hz", "dB", title="t")
    save_lines_figure(b, cfg, f, [y], ["noise"], "Hz", "dB", title="t")
    assert a.read_bytes() == b.read_bytes()
    assert b"<svg" in a.read_bytes()


def test_trace_and_sweep_figures_render(tmp_path):
    cfg = SimConfig()
    save_trace_figure(tmp_path / "t.svg", cfg, np.arange(1000) % 28)
    rows = [
        {"level_dbv": -90.0, "snr_dba": 20.0, "sndr_dba": 20.0, "thd_pct": 0.0},
        {"level_dbv": -36.0, "snr_dba": 74.0, "sndr_dba": 73.0, "thd_pct": 0.01},
    ]
    save_sweep_figure(tmp_path / "s.svg", cfg, rows)
    # mixed-grid series form of the line plot
    save_lines_figure(
        tmp_path / "m.svg", cfg, None,
        [(np.arange(5.0), np.arange(5.0)), (np.arange(3.0), np.ones(3))],
        ["a", "b"], "x", "y", logx=False,
    )
    for name in ("t.svg", "s.svg", "m.svg"):
        assert (tmp_path / name).stat().st_size > 500

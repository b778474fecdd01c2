import math
import subprocess
import sys
from pathlib import Path

import pytest

from riskplots.render import FigureSpec, SchemaError, parse_trajectories, render, main


def make_csv(tmp_path: Path, claim: str, seed: int, n_steps: int = 200) -> Path:
    """Produce a trajectory CSV through the producer's CLI (the external interface)."""
    out = tmp_path / f"{claim}_{seed}"
    cfg = tmp_path / f"{claim}_{seed}.cfg"
    cfg.write_text(f"claim = {claim}\nn_steps = {n_steps}\nseed = {seed}\n")
    subprocess.run([sys.executable, "-m", "defaultrisk.cli", "simulate",
                    "--config", str(cfg), "--out", str(out)], check=True)
    return out / "trajectories.csv"


@pytest.fixture(scope="module")
def figure1_csv(tmp_path_factory):
    return make_csv(tmp_path_factory.mktemp("fig1"), "default_fraction", seed=14)


@pytest.fixture(scope="module")
def figure2_csv(tmp_path_factory):
    return make_csv(tmp_path_factory.mktemp("fig2"), "terminal_brownian", seed=15)


def taus_from_csv(csv_path: Path) -> dict[int, float]:
    taus = {}
    for line in csv_path.read_text().splitlines()[1:]:
        fields = line.split(",")
        taus[int(fields[0])] = float(fields[3])
    return taus


def test_render_figure1_style(figure1_csv, tmp_path):
    out = tmp_path / "figure1.png"
    result = render(FigureSpec(csv_path=figure1_csv, out_path=out))
    assert out.exists() and out.stat().st_size > 10_000
    taus = taus_from_csv(figure1_csv)
    expected_markers = {pid: tau for pid, tau in taus.items()
                        if math.isfinite(tau) and tau <= 1.0}
    assert result.markers == expected_markers
    assert len(result.legend_labels) == 5  # every path exactly once


def test_render_figure2_style(figure2_csv, tmp_path):
    out = tmp_path / "figure2.png"
    result = render(FigureSpec(csv_path=figure2_csv, out_path=out))
    assert out.exists()
    assert len(result.legend_labels) == len(set(result.legend_labels)) == 5


def test_golden_image_byte_equality(figure1_csv, tmp_path):
    first = tmp_path / "a.png"
    second = tmp_path / "b.png"
    render(FigureSpec(csv_path=figure1_csv, out_path=first))
    render(FigureSpec(csv_path=figure1_csv, out_path=second))
    assert first.read_bytes() == second.read_bytes()


def test_no_default_path_has_no_marker(figure1_csv, tmp_path):
    taus = taus_from_csv(figure1_csv)
    survivors = [pid for pid, tau in taus.items() if not (math.isfinite(tau) and tau <= 1.0)]
    result = render(FigureSpec(csv_path=figure1_csv, out_path=tmp_path / "c.png"))
    for pid in survivors:
        assert pid not in result.markers
        assert any(label.startswith(f"path {pid} (no default)")
                   for label in result.legend_labels)


def test_schema_mismatch_rejected(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("path,t,w\n0,0.0,0.0\n")
    with pytest.raises(SchemaError, match="does not match the trajectory schema"):
        parse_trajectories(bad)
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(SchemaError, match="empty file"):
        parse_trajectories(empty)


def test_malformed_row_rejected(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("path_id,t,w,tau,rho,rho0,rho1\n0,0.0,0.0\n")
    with pytest.raises(SchemaError, match="expected 7 fields"):
        parse_trajectories(bad)


def test_cli_exit_codes(figure1_csv, tmp_path):
    out = tmp_path / "cli.png"
    assert main(["--csv", str(figure1_csv), "--out", str(out)]) == 0
    assert out.exists()
    bad = tmp_path / "bad.csv"
    bad.write_text("nope\n")
    assert main(["--csv", str(bad), "--out", str(tmp_path / "x.png")]) == 2


def test_parse_roundtrip_values(figure1_csv):
    data = parse_trajectories(figure1_csv)
    assert data.path_ids == [0, 1, 2, 3, 4]
    for pid in data.path_ids:
        assert len(data.t[pid]) == 201
        assert data.t[pid] == sorted(data.t[pid])

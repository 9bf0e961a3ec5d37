import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import windowed_reference
from reachbench.metrics import (
    CSV_HEADER,
    EpisodeRecord,
    MetricsLog,
    episodes_to_reach,
    read_csv,
    render_svg,
    windowed_success,
    write_csv,
    write_svg,
)

SVG = "{http://www.w3.org/2000/svg}"


def test_windowed_examples():
    np.testing.assert_array_equal(windowed_success([1, 0, 1, 1], window=2), [1.0, 0.5, 0.5, 1.0])
    np.testing.assert_array_equal(windowed_success([0] * 5), np.zeros(5))
    np.testing.assert_array_equal(windowed_success([1] * 250), np.ones(250))
    assert windowed_success([]).size == 0
    with pytest.raises(ValueError):
        windowed_success([1], window=0)


@given(st.lists(st.integers(0, 1), max_size=400), st.integers(1, 120))
@settings(max_examples=60)
def test_windowed_matches_brute_force(successes, window):
    fast = windowed_success(successes, window)
    np.testing.assert_allclose(fast, windowed_reference(successes, window), rtol=0, atol=1e-12)
    assert np.all((fast >= 0) & (fast <= 1))


def test_log_record_matches_windowed():
    rng = np.random.default_rng(0)
    log = MetricsLog(window=10)
    for _ in range(57):
        log.record(int(rng.integers(1, 50)), bool(rng.random() < 0.4), float(rng.normal()))
    np.testing.assert_allclose(log.success_rate, windowed_success(log, 10), rtol=0, atol=1e-12)
    assert [r.episode for r in log.rows] == list(range(57))


def test_append_requires_contiguous_episodes():
    log = MetricsLog()
    log.append(EpisodeRecord(0, 5, 1, 1.0, 1.0))
    with pytest.raises(ValueError):
        log.append(EpisodeRecord(2, 5, 1, 1.0, 1.0))


def test_episodes_to_reach():
    assert episodes_to_reach([0.1, 0.4, 0.5, 0.9], 0.5) == 2
    assert episodes_to_reach([0.1, 0.2], 0.5) is None


def sample_log(n=30, seed=0):
    rng = np.random.default_rng(seed)
    log = MetricsLog()
    for _ in range(n):
        log.record(int(rng.integers(1, 100)), bool(rng.random() < 0.5), float(rng.normal() * 40))
    return log


def test_csv_header_and_single_row(tmp_path):
    log = MetricsLog()
    log.record(7, True, 12.5)
    path = tmp_path / "m.csv"
    write_csv(log, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "episode,steps,success,return,success_rate,wall_ms"
    assert ",".join(CSV_HEADER) == lines[0]
    assert len(lines) == 2
    assert lines[1] == "0,7,1,12.5,1.0,0.0"


def test_csv_roundtrip_is_exact(tmp_path):
    log = sample_log()
    path = tmp_path / "m.csv"
    write_csv(log, path)
    back = read_csv(path)
    assert back.rows == log.rows
    write_csv(back, tmp_path / "again.csv")
    assert (tmp_path / "again.csv").read_bytes() == path.read_bytes()


def test_csv_rejects_empty_and_bad_header(tmp_path):
    with pytest.raises(ValueError):
        write_csv(MetricsLog(), tmp_path / "x.csv")
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        read_csv(bad)


def polyline_points(root):
    out = []
    for poly in root.iter(SVG + "polyline"):
        pts = [tuple(map(float, p.split(","))) for p in poly.get("points").split()]
        out.append((poly.find(SVG + "title").text, np.array(pts)))
    return out


def test_svg_is_well_formed_and_matches_csv(tmp_path):
    log = sample_log(80)
    csv_path, svg_path = tmp_path / "m.csv", tmp_path / "c.svg"
    write_csv(log, csv_path)
    write_svg({"ball_pixels": read_csv(csv_path).success_rate}, svg_path)
    root = ET.parse(svg_path).getroot()
    assert root.tag == SVG + "svg"
    texts = [t.text for t in root.iter(SVG + "text")]
    assert "episodes" in texts and "success rate" in texts
    ((name, pts),) = polyline_points(root)
    assert name == "ball_pixels"
    assert len(pts) == len(log)
    # invert the y mapping used by the plot (top 40, plot height 310)
    rates = 1.0 - (pts[:, 1] - 40) / 310
    np.testing.assert_allclose(rates, log.success_rate, atol=0.005 / 310 * 2)
    assert np.all(np.diff(pts[:, 0]) > 0)


def test_svg_multiple_series_and_escaping():
    text = render_svg({"a<b": [0.0, 1.0], "c&d": [0.5, 0.5, 0.5]})
    root = ET.fromstring(text)
    names = [n for n, _ in polyline_points(root)]
    assert names == ["a<b", "c&d"]
    assert "href" not in text
    with pytest.raises(ValueError):
        render_svg({})

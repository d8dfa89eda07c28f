import pytest

from utils.figures import LineChart, path_overlay_svg


def test_line_chart_renders_every_series(tmp_path):
    chart = LineChart("Cost <over> friction", "mu", "s/m")
    chart.add("free", [0.25, 1.0, 3.0], [4.0, 2.0, 1.0]).add("dragging", [0.25, 3.0], [6.0, 1.5])
    svg = chart.to_svg()
    assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")
    assert svg.count("<polyline") == 2
    assert "Cost &lt;over&gt; friction" in svg
    path = chart.save(tmp_path / "figs" / "cost.svg")
    assert path.read_text() == svg


def test_line_chart_rejects_ragged_series():
    with pytest.raises(ValueError, match="lengths differ"):
        LineChart("t", "x", "y").add("bad", [1, 2, 3], [1, 2])


def test_flat_and_empty_charts_still_render():
    assert "<polyline" in LineChart("t", "x", "y").add("flat", [0, 1], [2.0, 2.0]).to_svg()
    assert "<polyline" not in LineChart("t", "x", "y").to_svg()


def test_path_overlay(tmp_path):
    path = path_overlay_svg(tmp_path / "paths.svg", 64, 32, {"free": [(1, 1), (10, 5)], "dragging": [(1, 1), (4, 20)]},
                            background="paths_overlay.ppm")
    text = path.read_text()
    assert text.count("<polyline") == 2
    assert 'xlink:href="paths_overlay.ppm"' in text
    assert "<title>dragging</title>" in text

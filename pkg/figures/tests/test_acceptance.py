"""Acceptance: all three figure kinds render from the golden CSVs with their
required elements (cliff shading, cutoff markers, classical-bound contour)
and rerender byte-identically, inside the 30 s budget."""

import time
from pathlib import Path

from figplots import PlotJob, render

DATA = Path(__file__).parent / "data"


def test_figure_acceptance(tmp_path):
    t0 = time.perf_counter()

    info = render(PlotJob(DATA / "blocksize.csv", "blocksize", tmp_path / "b.svg"))
    assert info.shaded_region is not None

    info = render(PlotJob(DATA / "distance.csv", "distance", tmp_path / "d.svg"))
    assert len(info.cutoff_markers) == 3

    info = render(PlotJob(DATA / "landscape.csv", "landscape", tmp_path / "l.svg"))
    assert info.contour_drawn

    for kind in ("blocksize", "distance", "landscape"):
        again = tmp_path / f"{kind}-again.svg"
        render(PlotJob(DATA / f"{kind}.csv", kind, again))
        first = tmp_path / f"{kind[0]}.svg"
        assert again.read_bytes() == first.read_bytes(), kind

    elapsed = time.perf_counter() - t0
    print(f"[PASS] figure rendering acceptance ({elapsed:.2f}s)")
    assert elapsed < 30.0

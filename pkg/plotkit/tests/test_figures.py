import json
from pathlib import Path

import numpy as np
import pytest

from plotkit import FigureSpec, render
from plotkit.cli import main
from plotkit.reportio import MissingColumnsError, load_report


def sidecar(path: Path) -> dict:
    return json.loads(Path(str(path) + ".json").read_text())


def elements_of(side: dict, kind: str) -> list:
    return [e for e in side["elements"] if e["type"] == kind]


class TestRenderKinds:
    def test_scatter_boundaries(self, mini_experiment, tmp_path):
        out = tmp_path / "scatter.svg"
        spec = FigureSpec(report=str(mini_experiment / "final.json"),
                          kind="scatter-boundaries", out=str(out))
        render(spec)
        assert out.exists() and out.stat().st_size > 0
        side = sidecar(out)
        boundary = json.loads((mini_experiment / "boundary.json").read_text())["boundaries"]["JLBC"]
        vlines = elements_of(side, "vline")
        hlines = elements_of(side, "hline")
        assert len(vlines) == 1 and vlines[0]["style"] == "dashed"
        assert vlines[0]["x"] == boundary["cert_threshold"]
        assert len(hlines) == 1 and hlines[0]["style"] == "dashed"
        assert hlines[0]["y"] == boundary["error_threshold"]
        assert elements_of(side, "quadrant-labels")[0]["labels"] == ["I", "II", "III", "IV"]

    def test_histograms(self, mini_experiment, tmp_path):
        out = tmp_path / "hist.svg"
        render(FigureSpec(report=str(mini_experiment / "final.json"), kind="histograms",
                          out=str(out)))
        side = sidecar(out)
        axes = {e["axis"] for e in elements_of(side, "histogram")}
        assert axes == {"certificate", "error"}

    def test_error_fit_band_coverage(self, mini_experiment, tmp_path):
        out = tmp_path / "fit.svg"
        render(FigureSpec(report=str(mini_experiment / "report.json"), kind="error-fit",
                          out=str(out), fit=str(mini_experiment / "fit.json")))
        side = sidecar(out)
        band = elements_of(side, "band")[0]
        # recompute coverage from the raw CSV rows and the fit parameters
        fit = json.loads((mini_experiment / "fit.json").read_text())["error_fit"]
        rows = load_report(mini_experiment / "report.csv").records
        recs = [r for r in rows if r.method == "JLBC"]
        certs = np.array([r.certificate for r in recs])
        errs = np.array([r.error for r in recs])
        pred = fit["a"] * np.exp(-fit["b"] * certs) + fit["c"]
        want = float((np.abs(pred - errs) <= fit["band"]).mean())
        assert abs(band["coverage"] - want) < 1e-12
        assert band["halfwidth"] == fit["band"]
        # matches the pipeline's own coverage computation
        pipeline_cov = json.loads((mini_experiment / "fit.json").read_text())["coverage"]
        assert abs(band["coverage"] - pipeline_cov) < 1e-9

    def test_embedded_fit_from_final_report(self, mini_experiment, tmp_path):
        out = tmp_path / "fit2.svg"
        render(FigureSpec(report=str(mini_experiment / "final.json"), kind="error-fit",
                          out=str(out)))
        assert elements_of(sidecar(out), "curve")


class TestDeterminismAndPurity:
    def test_identical_sidecars_and_images(self, mini_experiment, tmp_path):
        spec_args = dict(report=str(mini_experiment / "final.json"),
                         kind="scatter-boundaries")
        render(FigureSpec(out=str(tmp_path / "a.svg"), **spec_args))
        render(FigureSpec(out=str(tmp_path / "b.svg"), **spec_args))
        assert (tmp_path / "a.svg.json").read_bytes() == (tmp_path / "b.svg.json").read_bytes()
        assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()

    def test_report_not_mutated(self, mini_experiment, tmp_path):
        report = mini_experiment / "final.json"
        before = report.read_bytes()
        render(FigureSpec(report=str(report), kind="histograms", out=str(tmp_path / "h.svg")))
        assert report.read_bytes() == before


class TestErrors:
    def test_empty_report(self, tmp_path):
        empty = tmp_path / "empty.json"
        empty.write_text(json.dumps({"records": [], "provenance": {}}))
        with pytest.raises(ValueError, match="no rows"):
            render(FigureSpec(report=str(empty), kind="histograms", out=str(tmp_path / "x.svg")))

    def test_missing_columns_listed(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("sample_id,method\n1,JLBC\n")
        with pytest.raises(MissingColumnsError) as err:
            load_report(bad)
        msg = str(err.value)
        for col in ("dataset", "certificate", "error"):
            assert col in msg

    def test_unknown_kind(self):
        with pytest.raises(ValueError, match="kind"):
            FigureSpec(report="r.json", kind="pie", out="x.svg")

    def test_missing_boundary(self, mini_experiment, tmp_path):
        with pytest.raises(ValueError, match="boundary"):
            render(FigureSpec(report=str(mini_experiment / "report.json"),
                              kind="scatter-boundaries", out=str(tmp_path / "x.svg")))


class TestCLI:
    def test_render_roundtrip(self, mini_experiment, tmp_path):
        out = tmp_path / "cli.svg"
        rc = main(["render", "--report", str(mini_experiment / "final.json"),
                   "--kind", "scatter-boundaries", "--out", str(out)])
        assert rc == 0
        assert out.exists() and Path(str(out) + ".json").exists()

    def test_bad_report_exit_code(self, tmp_path):
        rc = main(["render", "--report", str(tmp_path / "missing.json"),
                   "--kind", "histograms", "--out", str(tmp_path / "x.svg")])
        assert rc == 2

    def test_csv_input(self, mini_experiment, tmp_path):
        rc = main(["render", "--report", str(mini_experiment / "report.csv"),
                   "--kind", "scatter-boundaries", "--method", "JLBC",
                   "--boundary", str(mini_experiment / "boundary.json"),
                   "--out", str(tmp_path / "c.svg")])
        assert rc == 0

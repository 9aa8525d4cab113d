"""Figure rendering: gate positions, histogram/sweep files, determinism."""

import numpy as np
import pytest

from hydrasum import figures as figs

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


class TestGatePosition:
    def test_manual_label_maps_to_last_weight(self):
        assert figs.gate_position("manual:0.75,0.25") == 0.25
        assert figs.gate_position("manual:1,0") == 0.0

    def test_single_label_maps_to_decoder_index(self):
        assert figs.gate_position("single:0") == 0.0
        assert figs.gate_position("single:1") == 1.0

    def test_unpositioned_labels(self):
        assert figs.gate_position("learned") is None
        assert figs.gate_position("cross:0,1:0.5") is None
        assert figs.gate_position("manual:oops") is None


class TestRendering:
    def test_histogram_writes_png(self, tmp_path):
        path = tmp_path / "hist.png"
        figs.style_histogram({"single:0": [0.1, 0.2], "single:1": [0.8, 0.9]},
                             "ngram_overlap", path)
        assert path.read_bytes()[:8] == PNG_MAGIC

    def test_sweep_writes_png(self, tmp_path):
        path = tmp_path / "sweep.png"
        figs.sweep_curve({"ngram_overlap": [(0.0, 0.1), (1.0, 0.9)]}, path)
        assert path.read_bytes()[:8] == PNG_MAGIC

    def test_report_set_includes_sweep_when_gates_have_positions(self, tmp_path):
        values = {
            "manual:1,0": {"ngram_overlap": [0.0, 0.1], "specificity": [0.2]},
            "manual:0,1": {"ngram_overlap": [0.9, 1.0], "specificity": [0.6]},
        }
        written = figs.render_report_figures(values, tmp_path / "report")
        names = sorted(p.name for p in written)
        assert names == ["report_hist_ngram_overlap.png",
                         "report_hist_specificity.png", "report_sweep.png"]
        assert all(p.read_bytes()[:8] == PNG_MAGIC for p in written)

    def test_no_sweep_without_two_positioned_gates(self, tmp_path):
        """A learned-gate-only report has histograms but no sweep curve."""
        values = {"learned": {"ngram_overlap": [0.4, 0.5], "specificity": [0.3]}}
        written = figs.render_report_figures(values, tmp_path / "report")
        assert sorted(p.name for p in written) == [
            "report_hist_ngram_overlap.png", "report_hist_specificity.png"]

    def test_rendering_is_deterministic(self, tmp_path):
        values = {"single:0": {"ngram_overlap": list(np.linspace(0, 1, 7)),
                               "specificity": [0.25, 0.5]},
                  "single:1": {"ngram_overlap": [0.9], "specificity": [0.75]}}
        first = figs.render_report_figures(values, tmp_path / "one")
        second = figs.render_report_figures(values, tmp_path / "two")
        for a, b in zip(first, second):
            assert a.read_bytes() == b.read_bytes()

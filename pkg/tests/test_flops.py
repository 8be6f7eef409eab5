"""FLOPs accounting: hand oracles, frozen 7B-scale integers, report format."""

import dataclasses
import math

import numpy as np
import pytest

from vlaprune.flops import (
    DEFAULT_BASELINE_VISUAL,
    DEFAULT_PRUNED_VISUAL,
    DEFAULT_TEXT_TOKENS,
    DEFAULT_TOTAL_BUDGET,
    REPORT_HEADER,
    ArchSpec,
    ReportRow,
    attention_quadratic_flops,
    calibrate_overhead,
    decoder_flops,
    emit_report,
    format_cost_table,
    llama7b_arch,
    pipeline_cost,
    retention_stats,
)


class TestArchSpec:
    def test_defaults_are_7b_shaped(self):
        arch = llama7b_arch()
        assert (arch.layers, arch.hidden, arch.ffn, arch.heads) == (
            32,
            4096,
            11008,
            32,
        )
        assert arch.kv_full and arch.gated_mlp
        assert arch.encoder_flops == 0.0 and arch.head_flops == 0.0

    def test_rejects_nonpositive_constants(self):
        with pytest.raises(ValueError):
            ArchSpec(layers=0, hidden=4, ffn=8, heads=1)
        with pytest.raises(ValueError):
            ArchSpec(layers=1, hidden=4, ffn=0, heads=1)

    def test_rejects_indivisible_heads(self):
        with pytest.raises(ValueError, match="divisible"):
            ArchSpec(layers=1, hidden=6, ffn=8, heads=4)

    def test_rejects_negative_overhead(self):
        with pytest.raises(ValueError):
            ArchSpec(layers=1, hidden=4, ffn=8, heads=1, encoder_flops=-1.0)


class TestDecoderOracle:
    """decoder_flops against fully hand-expanded tiny architectures."""

    def test_single_token_single_layer(self):
        # n=1, d=2, f=4, one head, gated MLP, full K/V; per-layer MACs:
        # qo 2*1*2*2=8, kv 8, attn 2*1*1*2=4, mlp 3*1*2*4=24; (8+8+4+24)*2=88
        arch = ArchSpec(layers=1, hidden=2, ffn=4, heads=1)
        assert decoder_flops(1, arch) == 88

    def test_plain_mlp_shared_kv(self):
        # n=3, d=4, f=8, 2 heads, plain MLP, one shared K/V head, 2 layers:
        # qo 2*3*4*4=96, kv 2*3*4*2=48, attn 2*3*3*4=72, mlp 2*3*4*8=192;
        # (96+48+72+192)*2 layers*2 FLOPs = 1632
        arch = ArchSpec(
            layers=2, hidden=4, ffn=8, heads=2, kv_full=False, gated_mlp=False
        )
        assert decoder_flops(3, arch) == 1632

    def test_integer_exact(self):
        arch = llama7b_arch()
        assert isinstance(decoder_flops(542, arch), int)

    def test_rejects_nonpositive_tokens(self):
        arch = ArchSpec(layers=1, hidden=2, ffn=4, heads=1)
        with pytest.raises(ValueError):
            decoder_flops(0, arch)

    def test_layers_scale_linearly(self):
        one = ArchSpec(layers=1, hidden=8, ffn=16, heads=2)
        four = dataclasses.replace(one, layers=4)
        assert decoder_flops(5, four) == 4 * decoder_flops(5, one)

    def test_quadratic_term_isolation(self):
        # all terms except attention are linear in n, so f(2n) - 2 f(n)
        # leaves exactly the quadratic attention surplus
        arch = llama7b_arch()
        iso = decoder_flops(14, arch) - 2 * decoder_flops(7, arch)
        assert iso == 51_380_224
        assert iso == 8 * arch.layers * 7 * 7 * arch.hidden
        assert iso == attention_quadratic_flops(14, arch) - 2 * (
            attention_quadratic_flops(7, arch)
        )


class TestFrozenSevenB:
    """Locked integers for the 7B-shaped bench configuration."""

    def test_baseline_decoder(self):
        arch = llama7b_arch()
        n = DEFAULT_BASELINE_VISUAL + DEFAULT_TEXT_TOKENS
        assert n == 542
        assert decoder_flops(n, arch) == 7_174_006_767_616

    def test_pruned_decoder(self):
        arch = llama7b_arch()
        n = DEFAULT_PRUNED_VISUAL + DEFAULT_TEXT_TOKENS
        assert n == 108
        assert decoder_flops(n, arch) == 1_404_932_456_448

    def test_calibrated_overhead(self):
        arch = calibrate_overhead(llama7b_arch())
        assert arch.encoder_flops == 1_625_993_232_384.0

    def test_reduction_brackets_published_fraction(self):
        arch = calibrate_overhead(llama7b_arch())
        base = pipeline_cost(DEFAULT_BASELINE_VISUAL, DEFAULT_TEXT_TOKENS, arch)
        pruned = pipeline_cost(
            DEFAULT_PRUNED_VISUAL, DEFAULT_TEXT_TOKENS, arch, baseline=base
        )
        assert base.total_flops == DEFAULT_TOTAL_BUDGET
        assert pruned.total_flops == 3_030_925_688_832.0
        red = pruned.reduction_vs_baseline
        assert math.isclose(red, 0.655576626269091, abs_tol=1e-12)
        assert 0.50 <= red <= 0.70


class TestPipelineCost:
    def test_baseline_reduction_is_zero(self):
        arch = ArchSpec(layers=1, hidden=2, ffn=4, heads=1)
        report = pipeline_cost(3, 2, arch)
        assert report.reduction_vs_baseline == 0.0

    def test_overheads_add_but_do_not_shrink(self):
        arch = ArchSpec(
            layers=1, hidden=2, ffn=4, heads=1, encoder_flops=100.0, head_flops=7.0
        )
        bare = ArchSpec(layers=1, hidden=2, ffn=4, heads=1)
        r = pipeline_cost(3, 2, arch)
        assert r.total_flops == pipeline_cost(3, 2, bare).total_flops + 107.0
        assert r.decoder_flops == pipeline_cost(3, 2, bare).decoder_flops

    def test_identical_budgets_give_zero_reduction(self):
        arch = ArchSpec(layers=1, hidden=2, ffn=4, heads=1)
        base = pipeline_cost(4, 1, arch)
        again = pipeline_cost(4, 1, arch, baseline=base)
        assert again.reduction_vs_baseline == 0.0

    def test_rejects_negative_tokens(self):
        arch = ArchSpec(layers=1, hidden=2, ffn=4, heads=1)
        with pytest.raises(ValueError):
            pipeline_cost(-1, 2, arch)


class TestCalibration:
    def test_hits_target_exactly(self):
        arch = calibrate_overhead(llama7b_arch(), target_total=9.0e12)
        total = pipeline_cost(
            DEFAULT_BASELINE_VISUAL, DEFAULT_TEXT_TOKENS, arch
        ).total_flops
        assert total == 9.0e12

    def test_head_term_is_preserved(self):
        arch = calibrate_overhead(llama7b_arch(head_flops=123.0))
        assert arch.head_flops == 123.0
        total = pipeline_cost(
            DEFAULT_BASELINE_VISUAL, DEFAULT_TEXT_TOKENS, arch
        ).total_flops
        assert total == DEFAULT_TOTAL_BUDGET

    def test_rejects_unreachable_target(self):
        with pytest.raises(ValueError, match="exceeds"):
            calibrate_overhead(llama7b_arch(), target_total=1.0e6)


class TestRetentionStats:
    def test_plain_counts(self):
        mean, std = retention_stats([10, 12, 14])
        assert mean == 12.0
        assert math.isclose(std, math.sqrt(8.0 / 3.0), rel_tol=1e-12)

    def test_selection_like_objects(self):
        class Sel:
            def __init__(self, n):
                self.retained_count = n

        mean, std = retention_stats([Sel(3), Sel(5)])
        assert (mean, std) == (4.0, 1.0)

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            retention_stats([])


class TestReport:
    def _rows(self):
        return [
            ReportRow("baseline", 512, 30, 8.8, 0.0, 512.0, 0.0),
            ReportRow("pruned", 78, 30, 3.030925688832, 0.655576626269091, 78.0, 0.0),
        ]

    def test_header_only_when_empty(self, tmp_path):
        path = tmp_path / "bench.csv"
        emit_report([], path)
        assert path.read_text() == ",".join(REPORT_HEADER) + "\n"

    def test_roundtrips_floats_exactly(self, tmp_path):
        path = tmp_path / "bench.csv"
        emit_report(self._rows(), path)
        lines = path.read_text().splitlines()
        assert len(lines) == 3
        fields = lines[2].split(",")
        assert float(fields[3]) == 3.030925688832
        assert float(fields[4]) == 0.655576626269091

    def test_byte_stable(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        emit_report(self._rows(), a)
        emit_report(self._rows(), b)
        assert a.read_bytes() == b.read_bytes()

    def test_format_cost_table_lists_all_rows(self):
        text = format_cost_table(self._rows())
        lines = text.splitlines()
        assert len(lines) == 3
        assert lines[0].startswith("variant")
        assert "baseline" in lines[1] and "pruned" in lines[2]

"""Builders, shape traces, parameter accounting and table reconciliation."""

import numpy as np
import pytest

from svdcnn.architecture import (
    ArchitectureSpec,
    GoldenRow,
    Model,
    ParamReport,
    build_model,
    closed_form_params,
    count_params,
    depth_layout,
    golden_row,
    head_weight_params,
    load_golden_table,
    millions,
    reconcile,
    round2,
    standard_block_weights,
    standard_layer_weights,
    storage_size,
    tdsc_block_weights,
    tdsc_layer_weights,
)
from svdcnn.autograd import ShapeError
from svdcnn.functional import DegenerateStatisticsError

ALL_CONFIGS = [(family, depth) for family in ("vdcnn", "svdcnn") for depth in (9, 17, 29, 49)]


class TestDepthLayout:
    @pytest.mark.parametrize(
        "depth,expected",
        [(9, (2, 2, 2, 2)), (17, (4, 4, 4, 4)), (29, (10, 10, 4, 4)), (49, (16, 16, 10, 6))],
    )
    def test_layouts_and_sums(self, depth, expected):
        layout = depth_layout(depth)
        assert layout == expected
        assert sum(layout) + 1 == depth

    def test_depth_17_identity(self):
        assert 2 * (2 + 2 + 2 + 2) + 1 == 17
        assert sum(2 for _level in range(4) for _block in range(2)) + 1 == 17

    def test_unsupported_depth_lists_valid_ones(self):
        with pytest.raises(ValueError, match=r"9, 17, 29, 49"):
            depth_layout(13)


class TestSpecValidation:
    def test_defaults_are_valid(self):
        spec = ArchitectureSpec("svdcnn")
        assert (spec.seq_len, spec.embed_dim, spec.pooled_len, spec.fc_hidden) == (1024, 16, 8, 2048)

    def test_bad_family(self):
        with pytest.raises(ValueError, match="family"):
            ArchitectureSpec("charcnn")

    def test_bad_depth(self):
        with pytest.raises(ValueError, match="depth"):
            ArchitectureSpec("vdcnn", depth=13)

    def test_seq_len_must_be_multiple_of_eight(self):
        with pytest.raises(ValueError, match="multiple of 8"):
            ArchitectureSpec("svdcnn", seq_len=100)

    def test_final_length_must_divide_by_pooled_len(self):
        with pytest.raises(ValueError, match="divisible"):
            ArchitectureSpec("svdcnn", seq_len=32)  # final length 4 < pooled 8
        ArchitectureSpec("svdcnn", seq_len=32, pooled_len=4)  # fine


class TestBuildAndForward:
    def test_final_feature_shape_svdcnn(self):
        model = build_model(ArchitectureSpec("svdcnn", seq_len=1024), seed=0)
        model.eval()
        trace = []
        idx = np.zeros((1, 1024), dtype=np.int64)
        model.forward(idx, trace=trace)
        assert trace == [(64, 1024), (128, 512), (256, 256), (512, 128)]

    def test_logits_shape(self):
        model = build_model(ArchitectureSpec("svdcnn", seq_len=64), seed=0).eval()
        idx = np.zeros((5, 64), dtype=np.int64)
        assert model.forward(idx).shape == (5, 4)

    def test_eval_forward_is_deterministic(self):
        model = build_model(ArchitectureSpec("vdcnn", seq_len=64), seed=3).eval()
        idx = np.random.default_rng(0).integers(0, 70, size=(2, 64))
        a = model.forward(idx).data
        b = model.forward(idx).data
        assert a.tobytes() == b.tobytes()

    def test_same_seed_builds_identical_models(self):
        spec = ArchitectureSpec("svdcnn", seq_len=64)
        a, b = Model(spec, seed=9), Model(spec, seed=9)
        for (na, ta, _), (nb, tb, _) in zip(a.named_params(), b.named_params()):
            assert na == nb
            assert ta.data.tobytes() == tb.data.tobytes()

    def test_train_mode_requires_batch_of_two(self):
        model = build_model(ArchitectureSpec("svdcnn", seq_len=64), seed=0).train()
        with pytest.raises(DegenerateStatisticsError):
            model.forward(np.zeros((1, 64), dtype=np.int64))

    def test_wrong_sequence_length_rejected(self):
        model = build_model(ArchitectureSpec("svdcnn", seq_len=64), seed=0).eval()
        with pytest.raises(ShapeError, match="length 64"):
            model.forward(np.zeros((2, 32), dtype=np.int64))

    @pytest.mark.parametrize("family,depth", ALL_CONFIGS)
    def test_depth_accounting(self, family, depth):
        model = build_model(ArchitectureSpec(family, depth=depth, seq_len=64), seed=0)
        assert model.conv_depth() == depth

    def test_only_pools_change_length(self):
        model = build_model(ArchitectureSpec("svdcnn", seq_len=64), seed=0).eval()
        trace = []
        model.forward(np.zeros((1, 64), dtype=np.int64), trace=trace)
        lengths = [length for _c, length in trace]
        assert lengths == [64, 32, 16, 8]


class TestHeadCounts:
    def test_vdcnn_head_weights(self):
        assert head_weight_params(ArchitectureSpec("vdcnn")) == 12_591_104

    def test_svdcnn_head_weights(self):
        assert head_weight_params(ArchitectureSpec("svdcnn")) == 16_384

    def test_head_reduction_from_exact_integers(self):
        reduction = round2(100 * (1 - 16_384 / 12_591_104))
        assert reduction == 99.87

    def test_enumerated_head_matches_formula_plus_biases(self):
        spec = ArchitectureSpec("svdcnn", seq_len=64)
        report = count_params(build_model(spec, seed=0))
        assert report.fc == 16_384 + 4
        assert millions(report.fc) == 0.02


class TestParamAccounting:
    @pytest.mark.parametrize("family,depth", ALL_CONFIGS)
    def test_enumeration_equals_closed_form(self, family, depth):
        spec = ArchitectureSpec(family, depth=depth, seq_len=64)
        assert count_params(build_model(spec, seed=0)) == closed_form_params(spec)

    def test_worked_block_examples(self):
        assert standard_block_weights(128, 256) == 294_912
        assert tdsc_block_weights(128, 256) == 99_456

    def test_first_layer_weights(self):
        assert standard_layer_weights(16, 64) == 3_072

    def test_separable_beats_standard_for_every_built_width(self):
        pairs = set()
        for family, depth in ALL_CONFIGS:
            model = build_model(ArchitectureSpec(family, depth=depth, seq_len=64), seed=0)
            pairs.add((model.first_conv.in_channels, model.first_conv.out_channels))
            for blocks in model.levels:
                for block in blocks:
                    pairs.add((block.layer1.in_channels, block.layer1.out_channels))
                    pairs.add((block.layer2.in_channels, block.layer2.out_channels))
        assert pairs  # sanity: the trunk was walked
        for in_ch, out_ch in pairs:
            assert tdsc_layer_weights(in_ch, out_ch) < standard_layer_weights(in_ch, out_ch)

    def test_totals_monotone_in_depth_and_family(self):
        totals = {}
        for family, depth in ALL_CONFIGS:
            totals[(family, depth)] = closed_form_params(ArchitectureSpec(family, depth=depth)).total
        for family in ("vdcnn", "svdcnn"):
            assert totals[(family, 9)] < totals[(family, 17)] < totals[(family, 29)] < totals[(family, 49)]
        for depth in (9, 17, 29, 49):
            assert totals[("svdcnn", depth)] < totals[("vdcnn", depth)]

    def test_report_total_is_category_sum(self):
        report = closed_form_params(ArchitectureSpec("svdcnn"))
        assert report.total == report.embedding + report.conv + report.batchnorm + report.fc


class TestStorage:
    def test_formula_example(self):
        assert abs(storage_size(1_580_000) - 6.03) <= 0.02
        assert round2(storage_size(1_580_000)) == 6.03

    def test_zero(self):
        assert storage_size(0) == 0.0

    def test_reported_total_mismatch_for_largest_standard_model(self):
        # 14.79M params at 4 bytes each is 56.42 MB, not the 54.75 the
        # reference table carries for that row; reconcile flags it.
        assert round2(storage_size(14_790_000)) == 56.42
        table = load_golden_table()
        report = closed_form_params(ArchitectureSpec("vdcnn", depth=9))
        diff = reconcile(report, golden_row(table, "vdcnn", 9))
        assert not diff.reference_self_consistent

    def test_accepts_report_or_count(self):
        report = ParamReport(embedding=0, conv=1_048_576, batchnorm=0, fc=0)
        assert storage_size(report) == storage_size(1_048_576) == 4.0

    def test_squeezed_deep_model_fits_in_6mb(self):
        report = closed_form_params(ArchitectureSpec("svdcnn", depth=29))
        assert report.storage_mb <= 6.1


class TestReconcile:
    def test_squeezed_rows_pass(self):
        table = load_golden_table()
        for depth in (9, 17, 29):
            spec = ArchitectureSpec("svdcnn", depth=depth)
            diff = reconcile(count_params(build_model(spec, seed=0)), golden_row(table, "svdcnn", depth))
            assert not diff.failed
            assert all(c.verdict == "pass" for c in diff.categories)

    def test_standard_conv_rows_flagged_not_failed(self):
        table = load_golden_table()
        for depth in (9, 17, 29):
            spec = ArchitectureSpec("vdcnn", depth=depth)
            diff = reconcile(count_params(build_model(spec, seed=0)), golden_row(table, "vdcnn", depth))
            assert not diff.failed
            conv = next(c for c in diff.categories if c.category == "conv")
            assert conv.verdict == "flag"

    def test_standard_conv_enumeration_value(self):
        report = closed_form_params(ArchitectureSpec("vdcnn", depth=9))
        assert abs(report.conv / 1e6 - 1.75) < 0.03

    def test_identical_report_has_zero_diffs(self):
        report = closed_form_params(ArchitectureSpec("svdcnn", depth=9))
        row = GoldenRow(
            "svdcnn", 9, millions(report.conv), millions(report.fc), millions(report.total),
            round2(report.storage_mb),
        )
        diff = reconcile(report, row)
        assert all(c.rel_diff == 0.0 for c in diff.categories)

    def test_missing_row_is_lookup_error(self):
        table = load_golden_table()
        with pytest.raises(KeyError, match="vdcnn, 49"):
            golden_row(table, "vdcnn", 49)

    def test_out_of_tolerance_unflagged_category_fails(self):
        report = closed_form_params(ArchitectureSpec("svdcnn", depth=9))
        row = GoldenRow("svdcnn", 9, millions(report.conv), 9.99, millions(report.total), round2(report.storage_mb))
        assert reconcile(report, row).failed

    def test_golden_file_missing(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_golden_table(tmp_path / "nope.tsv")


class TestConstantProduct:
    @pytest.mark.parametrize("family,depth", ALL_CONFIGS)
    def test_channels_times_length_constant(self, family, depth):
        model = build_model(ArchitectureSpec(family, depth=depth, seq_len=1024), seed=0).eval()
        trace = []
        model.forward(np.zeros((1, 1024), dtype=np.int64), trace=trace)
        products = [c * length for c, length in trace]
        assert products == [65_536] * 4

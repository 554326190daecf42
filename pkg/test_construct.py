"""
Tests for shift-targeted dataset construction.
"""

import filecmp

import numpy as np
import pytest

from src.augment import AugmentationOp, apply_to_dataset, parse_op_list
from src.construct import Attempt, ConstructionReport, ConstructionStatus, ShiftInterval, construct_dataset
from src.core import OUTPUT_MARKER, ChannelMeanMatrix, load_dataset
from src.errors import DatasetError, ValidationError
from src.features import build_filter_bank, dataset_channel_means
from src.shift import representation_shift


@pytest.fixture
def datasets(source_dir, target_dir):
    return load_dataset(source_dir), load_dataset(target_dir)


@pytest.fixture
def bank():
    return build_filter_bank(0)


def measure(op, source, target, bank, root):
    candidate = apply_to_dataset(op, target, source, root)
    return representation_shift(dataset_channel_means(bank, candidate), dataset_channel_means(bank, source)).representation_shift


def outputs(root):
    return sorted(p.name for p in root.iterdir() if p.name != OUTPUT_MARKER)


def same_files(a, b) -> bool:
    comparison = filecmp.dircmp(a, b)
    if comparison.left_only or comparison.right_only or comparison.funny_files:
        return False
    if not all(filecmp.cmp(a / name, b / name, shallow=False) for name in comparison.common_files):
        return False
    return all(same_files(a / name, b / name) for name in comparison.common_dirs)


class TestShiftInterval:

    def test_parse(self):
        interval = ShiftInterval.parse("0.5, 0.1")
        assert (interval.a, interval.delta) == (0.5, 0.1)
        assert interval.low == pytest.approx(0.4)
        assert interval.high == pytest.approx(0.6)

    def test_open_bounds(self):
        interval = ShiftInterval(1.0, 0.5)
        assert interval.contains(1.0)
        assert not interval.contains(0.5)
        assert not interval.contains(1.5)

    @pytest.mark.parametrize("text", ["0.5", "0.5,0.1,2", "a,b", "0.5,0", "0.5,-1", "nan,1"])
    def test_parse_invalid(self, text):
        with pytest.raises(ValidationError):
            ShiftInterval.parse(text)


class TestConstructDataset:

    def test_identity_op_found(self, tmp_path, datasets, bank):
        source, target = datasets
        baseline = representation_shift(dataset_channel_means(bank, target),
                                        dataset_channel_means(bank, source)).representation_shift
        op = AugmentationOp('color', {'strength': 0.0})
        report = construct_dataset(ShiftInterval(baseline, 0.01), source, target, [op], bank, tmp_path / 'out')

        assert report.status == ConstructionStatus.FOUND
        assert report.found
        assert report.selected == "color:strength=0.0"
        assert report.output_root == tmp_path / 'out' / '01-color'
        assert report.attempts[0].shift == pytest.approx(baseline, abs=1e-12)
        assert load_dataset(report.output_root).entries == target.entries

    def test_impossible_interval_not_found(self, tmp_path, datasets, bank):
        source, target = datasets
        ops = parse_op_list("poster:levels=4;frosted:radius=2")
        report = construct_dataset(ShiftInterval(-1.0, 0.5), source, target, ops, bank, tmp_path / 'out')

        assert report.status == ConstructionStatus.NOT_FOUND
        assert report.selected is None
        assert report.output_root is None
        assert len(report.attempts) == 2
        assert not any(attempt.accepted for attempt in report.attempts)
        assert outputs(tmp_path / 'out') == []

    def test_first_qualifying_op_selected(self, tmp_path, datasets, bank):
        source, target = datasets
        ops = parse_op_list("color:strength=0;poster:levels=2;frosted:radius=2")
        shifts = [measure(op, source, target, bank, tmp_path / f"trial{i}") for i, op in enumerate(ops)]
        assert shifts[0] != shifts[1]

        interval = ShiftInterval(shifts[1], abs(shifts[1] - shifts[0]) / 2)
        report = construct_dataset(interval, source, target, ops, bank, tmp_path / 'out')

        assert report.found
        assert report.selected == "poster:levels=2"
        assert [attempt.accepted for attempt in report.attempts] == [False, True]
        assert report.attempts[1].shift == pytest.approx(shifts[1], abs=1e-12)
        assert outputs(tmp_path / 'out') == ['02-poster']

    def test_return_last(self, tmp_path, datasets, bank):
        source, target = datasets
        ops = parse_op_list("poster:levels=4;mural:radius=1,levels=6")
        report = construct_dataset(ShiftInterval(-1.0, 0.5), source, target, ops, bank, tmp_path / 'out',
                                   return_last=True)

        assert report.status == ConstructionStatus.RETURNED_LAST
        assert not report.found
        assert report.selected == "mural:radius=1,levels=6"
        assert outputs(tmp_path / 'out') == ['02-mural']

    def test_failing_op_is_a_rejection(self, tmp_path, datasets, bank):
        source, target = datasets
        ops = parse_op_list("frosted:radius=20;color:strength=0")
        report = construct_dataset(ShiftInterval(0.0, 1e6), source, target, ops, bank, tmp_path / 'out')

        failed = report.attempts[0]
        assert failed.shift is None and not failed.accepted
        assert "frosted radius 20" in failed.error
        assert report.selected == "color:strength=0.0"
        assert not (tmp_path / 'out' / '01-frosted').exists()

    def test_return_last_skips_failing_final_op(self, tmp_path, datasets, bank):
        source, target = datasets
        ops = parse_op_list("poster:levels=4;frosted:radius=20")
        report = construct_dataset(ShiftInterval(-1.0, 0.5), source, target, ops, bank, tmp_path / 'out',
                                   return_last=True)

        assert report.status == ConstructionStatus.RETURNED_LAST
        assert report.selected == "poster:levels=4"
        assert report.output_root == tmp_path / 'out' / '01-poster'
        assert report.attempts[1].shift is None
        assert outputs(tmp_path / 'out') == ['01-poster']
        assert load_dataset(report.output_root).entries == target.entries

    def test_return_last_with_every_op_failing(self, tmp_path, datasets, bank):
        source, target = datasets
        report = construct_dataset(ShiftInterval(-1.0, 0.5), source, target, parse_op_list("frosted:radius=20"),
                                   bank, tmp_path / 'out', return_last=True)
        assert report.status == ConstructionStatus.NOT_FOUND
        assert report.selected is None
        assert outputs(tmp_path / 'out') == []

    def test_reproducible(self, tmp_path, datasets, bank):
        source, target = datasets
        ops = parse_op_list("lowfreq:beta=0.1;frosted:radius=3", seed=5)
        reports = []
        for name, jobs in (('a', 1), ('b', 8), ('c', 8)):
            report = construct_dataset(ShiftInterval(-1.0, 0.5), source, target, ops, bank, tmp_path / name,
                                       jobs=jobs, return_last=True)
            data = report.to_dict()
            assert data.pop("output_root") == str(tmp_path / name / '02-frosted')
            reports.append(data)

        assert reports[0] == reports[1] == reports[2]
        assert same_files(tmp_path / 'a', tmp_path / 'b')
        assert same_files(tmp_path / 'b', tmp_path / 'c')

    def test_previous_output_replaced(self, tmp_path, datasets, bank):
        source, target = datasets
        ops = parse_op_list("poster")
        construct_dataset(ShiftInterval(-1.0, 0.5), source, target, ops, bank, tmp_path / 'out')
        (tmp_path / 'out' / 'stale').mkdir()
        construct_dataset(ShiftInterval(-1.0, 0.5), source, target, ops, bank, tmp_path / 'out')
        assert not (tmp_path / 'out' / 'stale').exists()

    def test_foreign_output_directory_kept(self, tmp_path, datasets, bank):
        source, target = datasets
        (tmp_path / 'out').mkdir()
        (tmp_path / 'out' / 'notes.txt').write_text('keep me')
        with pytest.raises(DatasetError, match="not written by this toolkit"):
            construct_dataset(ShiftInterval(-1.0, 0.5), source, target, parse_op_list("poster"), bank,
                              tmp_path / 'out')
        assert (tmp_path / 'out' / 'notes.txt').read_text() == 'keep me'

    @pytest.mark.parametrize("which", ["source", "target", "parent"])
    def test_output_overlapping_inputs_refused(self, which, datasets, bank):
        source, target = datasets
        out_root = {"source": source.root, "target": target.root, "parent": target.root.parent}[which]
        before = sorted(p.name for p in target.root.iterdir())
        with pytest.raises(ValidationError, match="overlaps"):
            construct_dataset(ShiftInterval(-1.0, 0.5), source, target, parse_op_list("poster"), bank, out_root)
        assert sorted(p.name for p in target.root.iterdir()) == before
        assert load_dataset(source.root).entries == source.entries

    def test_precomputed_source_features(self, tmp_path, datasets, bank):
        source, target = datasets
        features = dataset_channel_means(bank, source)
        ops = parse_op_list("poster:levels=3")
        with_features = construct_dataset(ShiftInterval(-1.0, 0.5), source, target, ops, bank, tmp_path / 'a',
                                           source_features=features)
        without = construct_dataset(ShiftInterval(-1.0, 0.5), source, target, ops, bank, tmp_path / 'b')
        assert with_features.attempts == without.attempts

    def test_source_feature_channel_mismatch(self, tmp_path, datasets, bank):
        source, target = datasets
        with pytest.raises(ValidationError, match="channel-count mismatch"):
            construct_dataset(ShiftInterval(0.1, 0.1), source, target, parse_op_list("poster"), bank,
                              tmp_path / 'out', source_features=ChannelMeanMatrix(np.zeros((3, 5))))

    def test_empty_op_list(self, tmp_path, datasets, bank):
        source, target = datasets
        with pytest.raises(ValidationError):
            construct_dataset(ShiftInterval(0.1, 0.1), source, target, [], bank, tmp_path / 'out')


class TestConstructionReport:

    def test_to_dict_keys(self, tmp_path, datasets, bank):
        source, target = datasets
        report = construct_dataset(ShiftInterval(-1.0, 0.5), source, target, parse_op_list("poster"), bank,
                                   tmp_path / 'out')
        data = report.to_dict()
        assert list(data) == ["interval", "status", "selected", "output_root", "attempts"]
        assert data["status"] == "not_found"
        assert data["selected"] is None
        assert data["attempts"][0]["op"] == "poster:levels=8"

    def test_accepted_outside_interval_rejected(self):
        with pytest.raises(ValidationError):
            ConstructionReport(ShiftInterval(1.0, 0.1), (Attempt("poster:levels=8", 5.0, True),),
                               "poster:levels=8", None, ConstructionStatus.FOUND)

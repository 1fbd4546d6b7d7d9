#!/usr/bin/env python3
"""
Tests for run-config files and the command-line entry point
"""
import json
import os

import numpy as np
import pandas as pd
import pytest

from app import main
from config.run_config import format_run_config, parse_run_config
from models.config import MamAppConfig
from nn.tensor import Tensor, set_debug_numerics
from repositories.checkpoint_repository import BinaryCheckpointRepository
from services import training_service as training_module
from services.evaluation_service import EvaluationService
from services.model_service import ModelService
from tests.conftest import write_image_folder
from utils.errors import ConfigError

TOY_RUN_CONFIG = """
# toy architecture for fast end-to-end runs
image_size = 16
stem_channels = 4, 8
d_model = 8
d_inner = 8
d_state = 4
dt_rank = 1
num_blocks = 1
batch_size = 4
epochs = 2
augment = false
"""


@pytest.fixture(autouse=True)
def reset_debug_numerics():
    yield
    set_debug_numerics(False)


@pytest.fixture
def dataset_root(tmp_path):
    return write_image_folder(tmp_path / 'leaves', {'healthy': 8, 'rust': 8, 'scab': 8},
                              colors=[(30, 160, 40), (170, 90, 20), (90, 90, 90)])


class TestRunConfig:
    """key = value run configuration files"""

    def test_values_are_typed(self):
        run_config = parse_run_config(TOY_RUN_CONFIG)
        config = run_config.model_config()
        assert config.input_size == (16, 16, 3)
        assert config.stem_channels == (4, 8)
        assert config.num_blocks == 1
        assert run_config.options['augment'] is False

    def test_flags_override_file_values(self):
        config = parse_run_config(TOY_RUN_CONFIG).model_config(epochs=7, batch_size=None, image_size=32)
        assert config.epochs == 7
        assert config.batch_size == 4
        assert config.input_size == (32, 32, 3)

    def test_every_problem_is_listed_with_its_line(self):
        text = "d_model = 8\nlearning_rate = 0.1\nd_model = 16\nepochs = many\nnot a pair\n"
        with pytest.raises(ConfigError) as info:
            parse_run_config(text, 'run.cfg')
        violations = info.value.violations
        assert len(violations) == 4
        assert violations[0].startswith("line 2: unknown key 'learning_rate'")
        assert violations[1].startswith("line 3: duplicate key 'd_model'")
        assert violations[2].startswith('line 4: cannot parse epochs')
        assert violations[3].startswith('line 5:')

    def test_optional_tuples(self):
        config = parse_run_config("norm_mean = 0.5, 0.5, 0.5\nnorm_std = 0.25, 0.25, 0.25\n").model_config()
        assert config.norm_mean == (0.5, 0.5, 0.5)
        assert parse_run_config("norm_mean = none\n").config_values['norm_mean'] is None

    def test_format_round_trip(self):
        config = MamAppConfig(num_classes=3, class_names=['a', 'b', 'c'], epochs=9)
        text = format_run_config(config, {'data': '/data/potato'})
        parsed = parse_run_config(text)
        assert parsed.model_config() == config
        assert parsed.options == {'data': '/data/potato'}


class TestCommands:
    """Exit codes and printed output of each command"""

    def test_params_reports_reference_count(self, capsys):
        assert main(['params']) == 0
        output = capsys.readouterr().out
        assert 'total: 30,980' in output
        assert 'paper: 51,000' in output
        assert 'mixer.in_proj: 10,560' in output

    def test_params_for_potato_head(self, capsys):
        assert main(['params', '--num-classes', '3']) == 0
        assert 'head: 99' in capsys.readouterr().out

    def test_split_prints_counts(self, tmp_path, dataset_root, capsys):
        manifest = str(tmp_path / 'out' / 'split_manifest.csv')
        assert main(['split', '--data', dataset_root, '--out', manifest, '--seed', '3']) == 0
        output = capsys.readouterr().out
        total_row = [line for line in output.splitlines() if line.startswith('Total')][0]
        assert total_row.split() == ['Total', '15', '3', '6', '24']
        assert 'imbalance ratio: 1.00' in output
        assert len(pd.read_csv(manifest)) == 24
        with open(tmp_path / 'out' / 'manifest.json') as fh:
            assert json.load(fh)['files'] == ['split_manifest.csv']

    def test_split_profile_mismatch(self, tmp_path, dataset_root, capsys):
        code = main(['split', '--data', dataset_root, '--out', str(tmp_path / 'm.csv'), '--profile', 'potato'])
        assert code == 2
        assert "does not match profile 'potato'" in capsys.readouterr().err

    def test_missing_dataset(self, tmp_path, capsys):
        assert main(['split', '--data', str(tmp_path / 'missing'), '--out', str(tmp_path / 'm.csv')]) == 2
        assert 'does not exist' in capsys.readouterr().err

    def test_bad_run_config(self, tmp_path, dataset_root, capsys):
        cfg = tmp_path / 'run.cfg'
        cfg.write_text('epochs = 1\nwidth = 3\n')
        assert main(['train', '--config', str(cfg), '--data', dataset_root, '--out', str(tmp_path / 'run')]) == 2
        assert "unknown key 'width'" in capsys.readouterr().err

    def test_missing_checkpoint(self, tmp_path, capsys):
        image = tmp_path / 'leaf.png'
        write_image_folder(tmp_path / 'img', {'a': 1})
        os.replace(tmp_path / 'img' / 'a' / 'img_000.png', image)
        assert main(['predict', '--ckpt', str(tmp_path / 'none.ckpt'), '--image', str(image)]) == 2

    def test_non_finite_loss_exits_with_numeric_failure(self, tmp_path, dataset_root, capsys, monkeypatch):
        monkeypatch.setattr(training_module, 'smoothed_cross_entropy',
                            lambda logits, labels, smoothing=0.1: Tensor(np.array(np.inf)))
        cfg = tmp_path / 'run.cfg'
        cfg.write_text(TOY_RUN_CONFIG)
        assert main(['train', '--config', str(cfg), '--data', dataset_root, '--out', str(tmp_path / 'run')]) == 3
        assert 'Non-finite loss inf at epoch 0, batch 0' in capsys.readouterr().err


@pytest.mark.slow
class TestEndToEnd:
    """train -> eval -> predict -> features on a toy dataset"""

    def test_pipeline(self, tmp_path, dataset_root, capsys):
        cfg = tmp_path / 'run.cfg'
        cfg.write_text(TOY_RUN_CONFIG)
        run_dir = str(tmp_path / 'run')

        assert main(['train', '--config', str(cfg), '--data', dataset_root, '--out', run_dir, '--seed', '5']) == 0
        assert 'epochs completed: 2' in capsys.readouterr().out
        for name in ('best.ckpt', 'last.ckpt', 'train_log.csv', 'train_summary.json', 'split_manifest.csv',
                     'manifest.json'):
            assert os.path.exists(os.path.join(run_dir, name))

        ckpt = os.path.join(run_dir, 'best.ckpt')
        eval_dir = str(tmp_path / 'eval')
        assert main(['eval', '--ckpt', ckpt, '--data', dataset_root, '--out', eval_dir]) == 0
        output = capsys.readouterr().out
        assert 'samples: 6' in output
        with open(os.path.join(eval_dir, 'metrics.json')) as fh:
            metrics = json.load(fh)
        assert metrics['micro']['p'] == metrics['accuracy']
        assert metrics['class_names'] == ['healthy', 'rust', 'scab']

        image = os.path.join(dataset_root, 'rust', 'img_000.png')
        assert main(['predict', '--ckpt', ckpt, '--image', image]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] in ('healthy', 'rust', 'scab')
        assert sum(float(line.split(':')[1]) for line in lines[1:]) == pytest.approx(1.0, abs=1e-5)

        features_dir = str(tmp_path / 'features')
        assert main(['features', '--ckpt', ckpt, '--manifest', os.path.join(run_dir, 'split_manifest.csv'),
                     '--pca', '2', '--out', features_dir]) == 0
        assert len(pd.read_csv(os.path.join(features_dir, 'features.csv'))) == 6
        assert list(pd.read_csv(os.path.join(features_dir, 'pca.csv')).columns) == ['path', 'class_name', 'pc1',
                                                                                    'pc2']
        with open(os.path.join(features_dir, 'manifest.json')) as fh:
            assert json.load(fh)['files'] == ['features.csv', 'pca.csv', 'pca.json']

    def test_eval_accuracy_is_trace_over_total_of_the_confusion_file(self, tmp_path, dataset_root):
        cfg = tmp_path / 'run.cfg'
        cfg.write_text(TOY_RUN_CONFIG)
        run_dir = tmp_path / 'run'
        assert main(['train', '--config', str(cfg), '--data', dataset_root, '--out', str(run_dir)]) == 0
        eval_dir = tmp_path / 'eval'
        assert main(['eval', '--ckpt', str(run_dir / 'best.ckpt'), '--data', dataset_root,
                     '--out', str(eval_dir)]) == 0

        cm = EvaluationService().read_confusion(str(eval_dir / 'confusion.csv'))
        with open(eval_dir / 'metrics.json') as fh:
            stored = json.load(fh)
        assert cm.total == 6
        assert stored['accuracy'] == pytest.approx(np.trace(cm.counts) / cm.total, abs=1e-12)
        assert stored['micro']['f1'] == pytest.approx(stored['accuracy'], abs=1e-12)

    def test_resume_continues_optimizer_and_epochs(self, tmp_path, dataset_root, capsys):
        cfg = tmp_path / 'run.cfg'
        cfg.write_text(TOY_RUN_CONFIG)
        common = ['--config', str(cfg), '--data', dataset_root, '--seed', '5']
        full_dir = tmp_path / 'full'
        assert main(['train', *common, '--out', str(full_dir)]) == 0

        run_dir = tmp_path / 'resumed'
        assert main(['train', *common, '--out', str(run_dir), '--epochs', '1']) == 0
        models = ModelService(BinaryCheckpointRepository())
        first = models.load_checkpoint(str(run_dir / 'last.ckpt'))
        assert first.state['epoch'] == 0
        # 15 train images in batches of 4
        assert first.optimizer.step == 4
        capsys.readouterr()

        assert main(['train', *common, '--out', str(run_dir), '--resume', str(run_dir / 'last.ckpt')]) == 0
        assert 'epochs completed: 2' in capsys.readouterr().out
        resumed = models.load_checkpoint(str(run_dir / 'last.ckpt'))
        full = models.load_checkpoint(str(full_dir / 'last.ckpt'))
        assert resumed.state['epoch'] == 1
        assert resumed.optimizer.step == full.optimizer.step == 8
        for name, moment in full.optimizer.exp_avg.items():
            np.testing.assert_allclose(resumed.optimizer.exp_avg[name], moment, rtol=1e-6, atol=1e-12)
            np.testing.assert_allclose(resumed.optimizer.exp_avg_sq[name], full.optimizer.exp_avg_sq[name],
                                       rtol=1e-6, atol=1e-12)
        assert pd.read_csv(run_dir / 'train_log.csv')['epoch'].tolist() == [0, 1]

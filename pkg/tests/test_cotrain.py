import numpy as np
import pytest

from roadcotrain import cotrain
from roadcotrain.augment import AugmentParams
from roadcotrain.cotrain import (ConfidenceSelection, CotrainConfig, OptimConfig, blum_mitchell,
                                 cotrain_loop, example_confidence, fork_pair, make_learner, make_pair,
                                 run_cell, run_experiment, select_confident, train_baseline, train_supervised)
from roadcotrain.data import DatasetSplit, TwoViewExample
from roadcotrain.losses import LabelMask
from roadcotrain.models import ConfigError, ModelConfig, init_model, predict
from roadcotrain.numgrad import Tensor
from roadcotrain.synthetic import CAMERA_MEAN, CAMERA_STD, LIDAR_MEAN, LIDAR_STD, SceneParams, synth_dataset

SMALL = SceneParams(height=10, width=12)
MODELS = {
    "lidar": ModelConfig(channel_widths=(4,), input_mean=LIDAR_MEAN, input_std=LIDAR_STD),
    "camera": ModelConfig(channel_widths=(4,), input_mean=CAMERA_MEAN, input_std=CAMERA_STD),
}


@pytest.fixture(scope="module")
def split():
    return synth_dataset(7, n_labeled=4, n_unlabeled=6, n_validation=4, params=SMALL)


def _cfg(**kw):
    base = dict(supervised_steps=10, semisup_steps=12, lambda_cot=1.0, eval_every=4, seed=3)
    base.update(kw)
    return CotrainConfig(**base)


def _pair(cfg, stream=("t",)):
    lid = make_learner("lidar", MODELS["lidar"], cfg, *stream)
    cam = make_learner("camera", MODELS["camera"], cfg, *stream)
    return make_pair(lid, cam, cfg, *stream)


def _params(learner):
    return {k: v.data.tobytes() for k, v in learner.model.params.items()}


def test_lambda_zero_matches_baseline_bit_for_bit(split):
    cfg = _cfg(lambda_cot=0.0)
    base = _pair(cfg)
    a = cotrain_loop(fork_pair(base, cfg, "fork"), split.train, split.unlabeled, cfg, split.validation)
    b = train_baseline(fork_pair(base, cfg, "fork"), split.train, cfg, split.validation)
    assert a.history == b.history
    for view in ("lidar", "camera"):
        assert _params(a.learner(view)) == _params(b.learner(view))
        assert a.learner(view).updates == b.learner(view).updates


def test_positive_lambda_changes_trajectory(split):
    cfg = _cfg()
    base = _pair(cfg)
    a = cotrain_loop(fork_pair(base, cfg, "fork"), split.train, split.unlabeled, cfg)
    b = train_baseline(fork_pair(base, cfg, "fork"), split.train, cfg)
    assert _params(a.lidar) != _params(b.lidar)


@pytest.mark.parametrize("k", [1, 3, 6])
def test_role_swap_accounting(split, k):
    cfg = _cfg(semisup_steps=2 * k)
    pair = cotrain_loop(_pair(cfg), split.train, split.unlabeled, cfg)
    for view in ("lidar", "camera"):
        assert pair.learner(view).updates == {"supervised": k, "cotrain": k}
    assert pair.current_student == "lidar"
    assert pair.iteration == 2 * k


def test_teacher_untouched_within_iteration(split):
    cfg = _cfg(semisup_steps=6)
    pair = _pair(cfg)
    snapshots = []

    def before_and_after(it, p):
        snapshots.append((it, _params(p.lidar), _params(p.camera)))

    start = (_params(pair.lidar), _params(pair.camera))
    cotrain_loop(pair, split.train, split.unlabeled, cfg, progress=before_and_after)
    prev_l, prev_c = start
    for it, lid, cam in snapshots:
        # odd iterations train lidar, even ones camera (1-based)
        if it % 2 == 1:
            assert cam == prev_c and lid != prev_l
        else:
            assert lid == prev_l and cam != prev_c
        prev_l, prev_c = lid, cam


def test_labeled_set_not_mutated(split):
    labeled = list(split.train)
    ids = [id(x) for x in labeled]
    cfg = _cfg()
    cotrain_loop(_pair(cfg), labeled, split.unlabeled, cfg)
    assert [id(x) for x in labeled] == ids and len(labeled) == len(split.train)


def test_empty_sets_rejected(split):
    cfg = _cfg()
    with pytest.raises(ConfigError):
        cotrain_loop(_pair(cfg), split.train, [], cfg)
    with pytest.raises(ConfigError):
        train_supervised(init_model(MODELS["camera"]), [], "camera", 5, cfg)


def test_train_supervised_zero_steps_is_identity(split):
    m = init_model(MODELS["camera"])
    out = train_supervised(m, split.train, "camera", 0, _cfg())
    assert {k: v.data.tobytes() for k, v in out.params.items()} == {k: v.data.tobytes() for k, v in m.params.items()}


def test_train_supervised_deterministic(split):
    cfg = _cfg()
    a = train_supervised(init_model(MODELS["lidar"]), split.train, "lidar", 8, cfg, "x")
    b = train_supervised(init_model(MODELS["lidar"]), split.train, "lidar", 8, cfg, "x")
    assert all(a.params[k].data.tobytes() == b.params[k].data.tobytes() for k in a.params)


def test_memorizes_single_example(split):
    ex = split.train[0]
    model = train_supervised(init_model(ModelConfig(input_mean=CAMERA_MEAN, input_std=CAMERA_STD)), [ex],
                             "camera", 200, CotrainConfig(supervised_steps=200, optim=OptimConfig(eta0=1e-2)))
    acc = (predict(model, ex.camera).data.argmax(axis=0) == ex.label.classes).mean()
    assert acc > 0.99


def _separable(n, gen, shift):
    """Camera carries the label as a colour offset; the lidar's channel 0 is the label itself."""
    out = []
    for i in range(n):
        cls = np.zeros((8, 8), dtype=int)
        cls[:, : int(gen.integers(2, 7))] = 1
        cam = 0.5 + shift * (cls - 0.5)[None] + gen.normal(0, 0.05, size=(3, 8, 8))
        lid = np.stack([cls.astype(float), np.zeros((8, 8)), np.zeros((8, 8))])
        out.append(TwoViewExample(cam, lid, LabelMask.all_valid(cls), f"s{i // 4}", i, "UM"))
    return out


def _frozen_teacher_run(lam):
    gen = np.random.default_rng(11)
    labeled = _separable(1, gen, 0.3)
    unlabeled = [e.without_label() for e in _separable(40, gen, 0.3)]
    validation = _separable(8, gen, 0.3)
    # lidar teacher reads the label straight from channel 0
    teacher = init_model(ModelConfig(channel_widths=(), kernel_size=1))
    w = np.zeros((2, 3, 1, 1))
    w[1, 0, 0, 0], w[0, 0, 0, 0] = 20.0, -20.0
    teacher = teacher.with_params({"head.weight": Tensor(w, requires_grad=True),
                                   "head.bias": Tensor([10.0, -10.0], requires_grad=True)})
    assert cotrain.evaluate(teacher, validation, "lidar") == 1.0
    cfg = CotrainConfig(supervised_steps=1, semisup_steps=500, eval_every=50, lambda_cot=lam, seed=0,
                        augment=AugmentParams(enabled=False), optim=OptimConfig(eta0=5e-3))
    pair = make_pair(teacher, init_model(ModelConfig(channel_widths=(4,), seed=5)), cfg, "frozen")
    pair.lidar.frozen = True
    cotrain_loop(pair, labeled, unlabeled, cfg, validation)
    return pair


def test_frozen_perfect_teacher_improves_student():
    pair = _frozen_teacher_run(1.0)
    f1 = [row["f1_camera"] for row in pair.history]
    assert f1[-1] > f1[0]
    assert pair.lidar.updates == {"supervised": 0, "cotrain": 0}
    assert pair.camera.updates == {"supervised": 250, "cotrain": 250}
    # the one labeled frame alone gets the student less far
    alone = _frozen_teacher_run(0.0)
    assert f1[-1] > alone.history[-1]["f1_camera"]


def test_history_rows(split):
    cfg = _cfg(semisup_steps=10, eval_every=4)
    pair = cotrain_loop(_pair(cfg), split.train, split.unlabeled, cfg, split.validation)
    assert [r["iteration"] for r in pair.history] == [0, 4, 8, 10]
    assert {"ce_lidar", "ce_camera", "kl_lidar", "kl_camera", "f1_lidar", "f1_camera", "lr"} <= set(pair.history[1])


# -- original co-training -----------------------------------------------------

def _road_prob_fixture():
    road = [0.99, 0.9, 0.6, 0.2, 0.05]
    stats = [example_confidence(np.stack([np.full((2, 2), 1 - r), np.full((2, 2), r)])) for r in road]
    return [s[0] for s in stats], [s[1] for s in stats]


def test_confidence_selection_picks_extremes():
    conf, pos = _road_prob_fixture()
    assert select_confident(conf, pos, ConfidenceSelection(1, 1)) == ([0], [4])


def test_confidence_selection_exclusion_and_shortfall():
    conf, pos = _road_prob_fixture()
    assert select_confident(conf, pos, ConfidenceSelection(1, 1), exclude={0, 4}) == ([1], [3])
    # only negatives left: the positive slot takes the best leftover
    assert select_confident(conf, pos, ConfidenceSelection(1, 1), exclude={0, 1, 2}) == ([3], [4])


@pytest.mark.parametrize("kw", [{"p": -1}, {"p": 0, "n": 0}])
def test_confidence_selection_validation(kw):
    with pytest.raises(ConfigError):
        ConfidenceSelection(**kw)


@pytest.mark.parametrize("p,n,k", [(1, 1, 3), (2, 1, 2)])
def test_blum_mitchell_growth(split, p, n, k):
    cfg = _cfg(supervised_steps=3)
    big = synth_dataset(8, 2, 40, 1, SMALL)
    _, _, grown, report = blum_mitchell(MODELS["lidar"], MODELS["camera"], split.train, big.unlabeled,
                                        ConfidenceSelection(p, n), k, 12, cfg, "bm")
    step = 2 * p + 2 * n
    assert report.labeled_sizes == [len(split.train) + step * i for i in range(k + 1)]
    assert len(grown) == len(split.train) + step * k and not report.terminated_early
    keys = [e.key for e in grown[len(split.train):]]
    assert len(set(keys)) == len(keys)
    assert all(e.label is not None for e in grown)


def test_blum_mitchell_zero_iterations(split):
    cfg = _cfg(supervised_steps=5)
    a, b, grown, report = blum_mitchell(MODELS["lidar"], MODELS["camera"], split.train, split.unlabeled,
                                        ConfidenceSelection(), 0, 4, cfg, "bm")
    assert grown == list(split.train) and report.iterations_completed == 0
    ref = train_supervised(init_model(MODELS["lidar"]), split.train, "lidar", 5, cfg)
    assert a.config == ref.config


def test_blum_mitchell_pool_exhaustion(split):
    cfg = _cfg(supervised_steps=2)
    _, _, grown, report = blum_mitchell(MODELS["lidar"], MODELS["camera"], split.train, split.unlabeled,
                                        ConfidenceSelection(1, 1), 5, 6, cfg, "bm")
    assert report.terminated_early and report.iterations_completed == 1
    assert len(grown) == len(split.train) + 4
    assert "pool" in report.reason


def test_blum_mitchell_pool_too_large(split):
    with pytest.raises(ConfigError):
        blum_mitchell(MODELS["lidar"], MODELS["camera"], split.train, split.unlabeled,
                      ConfidenceSelection(), 1, 99, _cfg(), "bm")


# -- experiment runner --------------------------------------------------------

def test_run_cell_without_semisup_phase_matches(split):
    cfg = _cfg(semisup_steps=0, lambda_cot=0.0)
    res = run_cell(split, 4, cfg, MODELS)
    for view in ("lidar", "camera"):
        assert res.scores[("cotrain", view)] == res.scores[("supervised", view)]


def test_run_experiment_table(split):
    other = DatasetSplit(1, split.train, split.validation, split.unlabeled, {2: [0, 1], 4: [0, 1, 2, 3]})
    first = DatasetSplit(0, split.train, split.validation, split.unlabeled, {2: [1, 3], 4: [0, 1, 2, 3]})
    cfg = _cfg(semisup_steps=4)
    rep = run_experiment([first, other], [2, 4], cfg, MODELS)
    assert len(rep.cells) == 4
    assert rep.table.sizes() == [2, 4]
    for size in (2, 4):
        for view in ("lidar", "camera"):
            for method in ("supervised", "cotrain"):
                assert rep.table.stats(size, view, method)[2] == 2
    again = run_experiment([first, other], [2, 4], cfg, MODELS)
    assert again.rows() == rep.rows()


def test_config_validation():
    with pytest.raises(ConfigError):
        CotrainConfig(lambda_cot=-1)
    with pytest.raises(ConfigError):
        CotrainConfig(batch_size=0)
    assert CotrainConfig(semisup_steps=0).semisup_steps == 0


def test_batches_accumulate(split):
    cfg = _cfg(batch_size=3, semisup_steps=4)
    pair = cotrain_loop(_pair(cfg), split.train, split.unlabeled, cfg)
    assert pair.lidar.updates == {"supervised": 2, "cotrain": 2}

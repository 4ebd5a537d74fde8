"""Training loops: supervised phase, role-swapping co-training, its no-agreement
baseline, and the original pool-based co-training.

A *step* feeds one example to a network. Gradients of ``batch_size``
consecutive steps of the same kind are averaged before one Adam update.
"""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import numgrad as ng
from . import seeding
from .augment import AugmentParams, augment
from .data import DatasetSplit, TwoViewExample
from .evaluation import ScoreTable, dataset_f1
from .losses import CotrainWeight, LabelMask, cross_entropy, kl_divergence
from .models import ConfigError, Model, ModelConfig, init_model, predict
from .optim import AdamState, PolySchedule, adam_step, poly_lr

log = logging.getLogger(__name__)

LIDAR, CAMERA = "lidar", "camera"


@dataclass(frozen=True)
class OptimConfig:
    eta0: float = 5e-4
    alpha_exp: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def adam_state(self, params) -> AdamState:
        return AdamState.for_params(params, beta1=self.beta1, beta2=self.beta2, epsilon=self.epsilon)


@dataclass(frozen=True)
class CotrainConfig:
    supervised_steps: int = 2000
    semisup_steps: int = 2000
    batch_size: int = 1
    lambda_cot: float = 1.0
    seed: int = 0
    eval_every: int = 1000
    optim: OptimConfig = field(default_factory=OptimConfig)
    augment: AugmentParams = field(default_factory=AugmentParams)
    # drop lidar pixels without a return from the agreement loss
    kl_ignore_uncovered: bool = False

    def __post_init__(self):
        if isinstance(self.optim, dict):
            object.__setattr__(self, "optim", OptimConfig(**self.optim))
        if isinstance(self.augment, dict):
            object.__setattr__(self, "augment", AugmentParams.from_dict(self.augment))
        if self.supervised_steps < 1 or self.batch_size < 1 or self.eval_every < 1:
            raise ConfigError("supervised_steps, batch_size and eval_every must be >= 1")
        if self.semisup_steps < 0:
            raise ConfigError("semisup_steps must be >= 0")
        try:
            CotrainWeight(self.lambda_cot)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["augment"] = self.augment.to_dict()
        return d


@dataclass(frozen=True)
class ConfidenceSelection:
    p: int = 1
    n: int = 1

    def __post_init__(self):
        if self.p < 0 or self.n < 0 or self.p + self.n < 1:
            raise ConfigError("need p >= 0, n >= 0 and p + n >= 1")


class EpochSampler:
    """Cycles through ``range(n)`` in freshly shuffled epochs."""

    def __init__(self, n: int, gen: np.random.Generator):
        if n < 1:
            raise ConfigError("cannot sample from an empty dataset")
        self.n = n
        self.gen = gen
        self._order: list[int] = []

    def next(self) -> int:
        if not self._order:
            self._order = [int(i) for i in self.gen.permutation(self.n)[::-1]]
        return self._order.pop()


@dataclass
class Learner:
    """One view's network with its optimizer state and private random streams."""

    view: str
    model: Model
    adam: AdamState
    labeled_rng: np.random.Generator
    augment_rng: np.random.Generator
    updates: dict[str, int] = field(default_factory=lambda: {"supervised": 0, "cotrain": 0})
    frozen: bool = False
    _sampler: EpochSampler | None = None

    def sampler(self, n: int) -> EpochSampler:
        if self._sampler is None or self._sampler.n != n:
            self._sampler = EpochSampler(n, self.labeled_rng)
        return self._sampler

    def predict(self, example: TwoViewExample) -> np.ndarray:
        return predict(self.model, example.view(self.view)).data


@dataclass
class TrainerPair:
    lidar: Learner
    camera: Learner
    unlabeled_rng: np.random.Generator
    current_student: str = LIDAR
    iteration: int = 0
    history: list[dict] = field(default_factory=list)
    # view -> (best validation F1, iteration, model at that point)
    best: dict[str, tuple[float, int, Model]] = field(default_factory=dict)
    _unl_sampler: EpochSampler | None = None

    def learner(self, view: str) -> Learner:
        return self.lidar if view == LIDAR else self.camera

    def student(self) -> Learner:
        return self.learner(self.current_student)

    def teacher(self) -> Learner:
        return self.learner(CAMERA if self.current_student == LIDAR else LIDAR)

    def swap(self) -> None:
        self.current_student = CAMERA if self.current_student == LIDAR else LIDAR

    def unlabeled_sampler(self, n: int) -> EpochSampler:
        if self._unl_sampler is None or self._unl_sampler.n != n:
            self._unl_sampler = EpochSampler(n, self.unlabeled_rng)
        return self._unl_sampler


def make_learner(view: str, config: ModelConfig, cfg: CotrainConfig, *stream) -> Learner:
    model = init_model(config)
    return Learner(view, model, cfg.optim.adam_state(model.params),
                   seeding.rng(cfg.seed, *stream, view, "labeled"),
                   seeding.rng(cfg.seed, *stream, view, "augment"))


def make_pair(lidar: Learner | Model, camera: Learner | Model, cfg: CotrainConfig, *stream) -> TrainerPair:
    """Fresh pair with the random streams keyed by ``(cfg.seed, *stream)``."""
    learners = []
    for view, item in ((LIDAR, lidar), (CAMERA, camera)):
        if isinstance(item, Model):
            item = Learner(view, item, cfg.optim.adam_state(item.params),
                           seeding.rng(cfg.seed, *stream, view, "labeled"),
                           seeding.rng(cfg.seed, *stream, view, "augment"))
        learners.append(item)
    return TrainerPair(learners[0], learners[1], seeding.rng(cfg.seed, *stream, "unlabeled"))


def fork_pair(pair: TrainerPair, cfg: CotrainConfig, *stream) -> TrainerPair:
    """Copy models and optimizer state; restart the random streams from ``stream``.

    Two forks made with the same ``stream`` see identical labeled draws and
    augmentations, which is what makes the baseline and co-training runs
    comparable step for step.
    """
    learners = []
    for lr in (pair.lidar, pair.camera):
        learners.append(Learner(lr.view, lr.model.copy(), lr.adam.copy(),
                                seeding.rng(cfg.seed, *stream, lr.view, "labeled"),
                                seeding.rng(cfg.seed, *stream, lr.view, "augment"),
                                dict(lr.updates), lr.frozen))
    return TrainerPair(learners[0], learners[1], seeding.rng(cfg.seed, *stream, "unlabeled"),
                       pair.current_student)


def _grads(model: Model) -> dict[str, np.ndarray]:
    return {k: (np.zeros(p.shape) if p.grad is None else p.grad) for k, p in model.params.items()}


def _apply(learner: Learner, lr: float, batch: int, kind: str) -> None:
    grads = {k: g / batch for k, g in _grads(learner.model).items()}
    params, learner.adam = adam_step(learner.model.params, grads, learner.adam, lr)
    learner.model = learner.model.with_params(params)
    learner.updates[kind] += 1


def supervised_update(learner: Learner, labeled: Sequence[TwoViewExample], batch: int, lr: float,
                      aug: AugmentParams) -> float:
    """Accumulate cross-entropy gradients over ``batch`` labeled draws, then step."""
    ng.zero_grad(learner.model.params.values())
    sampler = learner.sampler(len(labeled))
    total = 0.0
    for _ in range(batch):
        ex = labeled[sampler.next()]
        ex = augment(ex, learner.augment_rng, aug)
        pred = predict(learner.model, ex.view(learner.view), track=True)
        loss = cross_entropy(pred, ex.label)
        ng.backward(loss)
        total += loss.item()
    _apply(learner, lr, batch, "supervised")
    return total / batch


def _agreement_mask(example: TwoViewExample, student: Learner, teacher: Learner, ignore_uncovered: bool):
    if not ignore_uncovered or example.lidar_coverage is None:
        return None
    if LIDAR not in (student.view, teacher.view):
        return None
    mask = example.lidar_coverage > 0
    return mask if mask.any() else None


def cotrain_update(student: Learner, teacher: Learner, unlabeled: Sequence[TwoViewExample],
                   sampler: EpochSampler, batch: int, lr: float, weight: float,
                   ignore_uncovered: bool = False) -> float:
    """Pull the student toward the teacher's soft prediction on ``batch`` unlabeled draws."""
    ng.zero_grad(student.model.params.values())
    total = 0.0
    for _ in range(batch):
        ex = unlabeled[sampler.next()]
        target = teacher.predict(ex)
        pred = predict(student.model, ex.view(student.view), track=True)
        kl = kl_divergence(target, pred, _agreement_mask(ex, student, teacher, ignore_uncovered))
        ng.backward(ng.scale(kl, weight))
        total += kl.item()
    _apply(student, lr, batch, "cotrain")
    return total / batch


def evaluate(model_or_learner, validation: Sequence[TwoViewExample], view: str | None = None,
             threshold: float = 0.5) -> float:
    """Micro-averaged F1 of one network over a labeled set."""
    if isinstance(model_or_learner, Learner):
        model, view = model_or_learner.model, model_or_learner.view
    else:
        model = model_or_learner
    preds = (predict(model, ex.view(view)).data for ex in validation)
    return dataset_f1(preds, (ex.label for ex in validation), threshold)


def fit_learner(learner: Learner, labeled: Sequence[TwoViewExample], steps: int,
                config: CotrainConfig) -> Learner:
    """Supervised phase on a learner: ``steps`` examples fed, poly decay over those steps."""
    if not labeled:
        raise ConfigError("the labeled set is empty")
    if steps <= 0:
        return learner
    sched = PolySchedule(config.optim.eta0, steps, config.optim.alpha_exp)
    fed = 0
    while fed < steps:
        b = min(config.batch_size, steps - fed)
        supervised_update(learner, labeled, b, poly_lr(fed, sched), config.augment)
        fed += b
    return learner


def train_supervised(model: Model, labeled: Sequence[TwoViewExample], view: str, steps: int,
                     config: CotrainConfig, *stream) -> Model:
    """Train ``model`` on one view of ``labeled`` from a fresh Adam state.

    Random streams are keyed by ``(config.seed, *stream, view)``.
    """
    learner = Learner(view, model, config.optim.adam_state(model.params),
                      seeding.rng(config.seed, *stream, view, "labeled"),
                      seeding.rng(config.seed, *stream, view, "augment"))
    return fit_learner(learner, labeled, steps, config).model


class _Tracker:
    """Remembers each learner's best validation F1 and the parameters that achieved it."""

    def __init__(self, pair: TrainerPair, validation, eval_every: int):
        self.pair = pair
        self.validation = validation
        self.eval_every = eval_every
        self.best = pair.best
        self._losses: dict[str, list[float]] = {}

    def loss(self, name: str, value: float) -> None:
        self._losses.setdefault(name, []).append(value)

    def maybe(self, it: int, final: bool = False, lr: float | None = None) -> None:
        if self.validation is None or not (final or it % self.eval_every == 0):
            return
        row: dict = {"iteration": it}
        if lr is not None:
            row["lr"] = lr
        for name in sorted(self._losses):
            vals = self._losses[name]
            row[name] = sum(vals) / len(vals)
        self._losses = {}
        for lr in (self.pair.lidar, self.pair.camera):
            f1 = evaluate(lr, self.validation)
            row[f"f1_{lr.view}"] = f1
            if lr.view not in self.best or f1 > self.best[lr.view][0]:
                self.best[lr.view] = (f1, it, lr.model)
        self.pair.history.append(row)
        log.debug("iteration %d %s", it, row)


def _semisup_loop(pair: TrainerPair, labeled, unlabeled, config: CotrainConfig, validation,
                  use_agreement: bool, progress: Callable[[int, TrainerPair], None] | None) -> TrainerPair:
    if not labeled:
        raise ConfigError("the labeled set is empty")
    if use_agreement and not unlabeled:
        raise ConfigError("co-training needs a nonempty unlabeled set")
    iters = config.semisup_steps
    sched = PolySchedule(config.optim.eta0, max(iters, 1), config.optim.alpha_exp)
    tracker = _Tracker(pair, validation, config.eval_every)
    tracker.maybe(0)
    for it in range(iters):
        lr = poly_lr(it, sched)
        student, teacher = pair.student(), pair.teacher()
        if not student.frozen:
            ce = supervised_update(student, labeled, config.batch_size, lr, config.augment)
            tracker.loss(f"ce_{student.view}", ce)
            if use_agreement:
                kl = cotrain_update(student, teacher, unlabeled, pair.unlabeled_sampler(len(unlabeled)),
                                    config.batch_size, lr, config.lambda_cot, config.kl_ignore_uncovered)
                tracker.loss(f"kl_{student.view}", kl)
        pair.swap()
        pair.iteration += 1
        tracker.maybe(it + 1, final=it + 1 == iters, lr=lr)
        if progress is not None:
            progress(it + 1, pair)
    return pair


def cotrain_loop(pair: TrainerPair, labeled: Sequence[TwoViewExample], unlabeled: Sequence[TwoViewExample],
                 config: CotrainConfig, validation: Sequence[TwoViewExample] | None = None,
                 progress: Callable[[int, TrainerPair], None] | None = None) -> TrainerPair:
    """Role-swapping co-training.

    Each iteration the current student takes one supervised update on its own
    view of labeled data, then one update toward the teacher's soft prediction
    on an unlabeled example weighted by ``lambda_cot``; then the roles swap.
    With ``lambda_cot == 0`` the agreement update is skipped entirely, so the
    run reduces to :func:`train_baseline`. The labeled set is never modified.
    """
    return _semisup_loop(pair, labeled, unlabeled, config, validation,
                         use_agreement=config.lambda_cot > 0, progress=progress)


def train_baseline(pair: TrainerPair, labeled: Sequence[TwoViewExample], config: CotrainConfig,
                   validation: Sequence[TwoViewExample] | None = None) -> TrainerPair:
    """The semi-supervised phase with the agreement term removed."""
    return _semisup_loop(pair, labeled, [], config, validation, use_agreement=False, progress=None)


# ---------------------------------------------------------------------------
# original pool-based co-training

@dataclass
class BlumMitchellReport:
    iterations_completed: int
    labeled_sizes: list[int]
    terminated_early: bool = False
    reason: str = ""


def example_confidence(probs: np.ndarray) -> tuple[float, bool]:
    """(mean max-class probability, majority predicted class is road)."""
    conf = float(probs.max(axis=0).mean())
    positive = bool((probs.argmax(axis=0) == 1).mean() >= 0.5)
    return conf, positive


def select_confident(confidence: Sequence[float], positive: Sequence[bool], sel: ConfidenceSelection,
                     exclude: set[int] = frozenset()) -> tuple[list[int], list[int]]:
    """Indices of the ``p`` most confident positives and ``n`` most confident negatives.

    Ties go to the lower index. When one polarity runs short, the remaining
    slots take the most confident leftovers of either polarity, so a pool
    with at least ``p + n`` free items always yields ``p + n`` picks.
    """
    conf = np.asarray(confidence, dtype=np.float64)
    pos = np.asarray(positive, dtype=bool)
    order = sorted((i for i in range(conf.size) if i not in exclude), key=lambda i: (-conf[i], i))
    pos_pick = [i for i in order if pos[i]][:sel.p]
    neg_pick = [i for i in order if not pos[i]][:sel.n]
    taken = set(pos_pick) | set(neg_pick)
    short = sel.p + sel.n - len(taken)
    extra = [i for i in order if i not in taken][:short]
    for i in extra:
        (pos_pick if len(pos_pick) < sel.p else neg_pick).append(i)
    return pos_pick, neg_pick


def _self_labeled(example: TwoViewExample, probs: np.ndarray) -> TwoViewExample:
    return example.with_label(LabelMask.all_valid(probs.argmax(axis=0)))


def blum_mitchell(f1: Model | ModelConfig, f2: Model | ModelConfig, labeled: Sequence[TwoViewExample],
                  unlabeled: Sequence[TwoViewExample], sel: ConfidenceSelection, iterations: int,
                  pool_size: int, config: CotrainConfig, *stream) -> tuple[Model, Model, list[TwoViewExample],
                                                                           BlumMitchellReport]:
    """Pool-based co-training with hard self-labels.

    ``f1`` is the lidar network, ``f2`` the camera network; each is a model
    whose parameters serve as the starting point of every retraining, or a
    config to initialise one from. Every iteration both are retrained on the
    current labeled set, each adds its ``p`` most confident positive and ``n``
    most confident negative pool examples (labels from its own per-pixel
    argmax), and the pool is refilled with ``2p + 2n`` random unlabeled
    examples. After the last iteration both are retrained once more on the
    grown set.

    Returns both models, the final labeled set and a run report.
    """
    if pool_size > len(unlabeled):
        raise ConfigError(f"pool_size {pool_size} exceeds {len(unlabeled)} unlabeled examples")
    if not labeled:
        raise ConfigError("blum_mitchell needs a nonempty labeled set")
    start = {LIDAR: f1 if isinstance(f1, Model) else init_model(f1),
             CAMERA: f2 if isinstance(f2, Model) else init_model(f2)}
    gen = seeding.rng(config.seed, *stream, "blum-mitchell")
    remaining = [int(i) for i in gen.permutation(len(unlabeled))]
    pool = remaining[:pool_size]
    remaining = remaining[pool_size:]
    grown = list(labeled)
    report = BlumMitchellReport(0, [len(grown)])
    per_round = 2 * (sel.p + sel.n)

    def fit(run: int) -> tuple[Learner, Learner]:
        out = []
        for view in (LIDAR, CAMERA):
            model = start[view].copy()
            learner = Learner(view, model, config.optim.adam_state(model.params),
                              seeding.rng(config.seed, *stream, "bm", run, view, "labeled"),
                              seeding.rng(config.seed, *stream, "bm", run, view, "augment"))
            out.append(fit_learner(learner, grown, config.supervised_steps, config))
        return out[0], out[1]

    for it in range(iterations):
        if len(pool) < per_round:
            report.terminated_early = True
            report.reason = f"pool has {len(pool)} examples, iteration {it} needs {per_round}"
            log.info("blum_mitchell stopping early: %s", report.reason)
            break
        a, b = fit(it)
        picked: set[int] = set()
        additions = []
        for learner in (a, b):
            probs = [learner.predict(unlabeled[u]) for u in pool]
            stats = [example_confidence(p) for p in probs]
            pos, neg = select_confident([s[0] for s in stats], [s[1] for s in stats], sel, picked)
            for k in pos + neg:
                picked.add(k)
                additions.append(_self_labeled(unlabeled[pool[k]], probs[k]))
        grown.extend(additions)
        pool = [u for k, u in enumerate(pool) if k not in picked]
        refill, remaining = remaining[:per_round], remaining[per_round:]
        pool.extend(refill)
        report.iterations_completed += 1
        report.labeled_sizes.append(len(grown))
    a, b = fit(iterations)
    return a.model, b.model, grown, report


# ---------------------------------------------------------------------------
# experiment runner

METHODS = ("supervised", "cotrain")


@dataclass
class CellResult:
    split_id: int
    size: int
    scores: dict[tuple[str, str], float]
    history: dict[str, list[dict]]
    models: dict[tuple[str, str], Model] = field(default_factory=dict, repr=False)

    def rows(self) -> list[dict]:
        return [{"split": self.split_id, "N": self.size, "view": v, "method": m, "f1": f}
                for (m, v), f in sorted(self.scores.items())]


def _best_f1(pair: TrainerPair, view: str) -> tuple[float, Model]:
    if view in pair.best:
        return pair.best[view][0], pair.best[view][2]
    return float("nan"), pair.learner(view).model


def run_cell(split: DatasetSplit, size: int, config: CotrainConfig, model_configs: dict[str, ModelConfig],
             methods: Sequence[str] = METHODS) -> CellResult:
    """Supervised phase, then the baseline and/or co-training continuation, for one (split, N)."""
    stream = ("cell", split.id, size)
    labeled = split.subset(size)
    learners = {}
    for view in (LIDAR, CAMERA):
        mc = replace(model_configs[view], seed=seeding.derive_seed(config.seed, *stream, view, "init"))
        learners[view] = make_learner(view, mc, config, *stream, "phase1")
        fit_learner(learners[view], labeled, config.supervised_steps, config)
    base_pair = make_pair(learners[LIDAR], learners[CAMERA], config, *stream, "phase1")
    scores: dict[tuple[str, str], float] = {}
    history: dict[str, list[dict]] = {}
    models: dict[tuple[str, str], Model] = {}
    for method in methods:
        pair = fork_pair(base_pair, config, *stream, "phase2")
        if method == "supervised":
            train_baseline(pair, labeled, config, split.validation)
        elif method == "cotrain":
            cotrain_loop(pair, labeled, split.unlabeled, config, split.validation)
        else:
            raise ConfigError(f"unknown method {method!r}")
        for view in (LIDAR, CAMERA):
            f1, model = _best_f1(pair, view)
            scores[(method, view)] = f1
            models[(method, view)] = model
        history[method] = pair.history
    return CellResult(split.id, size, scores, history, models)


@dataclass
class ExperimentReport:
    table: ScoreTable
    cells: list[CellResult]

    def rows(self) -> list[dict]:
        return [r for c in self.cells for r in c.rows()]


def _cell_job(args):
    split, size, config, model_configs, methods = args
    res = run_cell(split, size, config, model_configs, methods)
    res.models = {}
    return res


def run_experiment(splits: Sequence[DatasetSplit], subset_sizes: Sequence[int], config: CotrainConfig,
                   model_configs: dict[str, ModelConfig], methods: Sequence[str] = METHODS, jobs: int = 1,
                   on_cell: Callable[[CellResult], None] | None = None) -> ExperimentReport:
    """Every (split, subset size) cell, aggregated into a table of mean ± std F1."""
    jobs_list = [(s, int(n), config, model_configs, tuple(methods)) for s in splits for n in subset_sizes]
    if jobs > 1 and len(jobs_list) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            cells = list(ex.map(_cell_job, jobs_list))
            if on_cell is not None:
                for c in cells:
                    on_cell(c)
    else:
        cells = []
        for args in jobs_list:
            res = run_cell(*args)
            log.info("cell split=%d N=%d %s", res.split_id, res.size,
                     {f"{m}/{v}": round(f, 4) for (m, v), f in sorted(res.scores.items())})
            if on_cell is not None:
                on_cell(res)
            cells.append(res)
    table = ScoreTable()
    for c in cells:
        for (method, view), f1 in c.scores.items():
            table.add(c.size, view, method, c.split_id, f1)
    return ExperimentReport(table, cells)

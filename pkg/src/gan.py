"""Обучение WGAN-GP: безусловный и условный варианты, разогрев критика, учет латентных выборок."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict
from tqdm import tqdm

from .autodiff import ComputationGraph, Gradient, gradient, gradient_as_graph
from .data import sample_latent
from .network import Network, init
from .optim import AdamState, adam_step
from .schemas import (
    Architecture,
    ConfigError,
    DataError,
    IterationRecord,
    LatentConfig,
    NumericError,
    OTCurvePoint,
    PairedDataset,
    TrainConfig
)
from .utils import EpochBatcher, ProgressTracker, make_rng


class BatchMismatchError(DataError):
    """Батчи разной длины или выборка меньше батча."""
    pass


class ArchitectureMismatchError(ConfigError):
    """Архитектуры сетей не согласованы с данными."""
    pass


class TrainingDivergedError(NumericError):
    """Нечисловое значение целевой функции во время обучения."""
    pass


CRITIC_PREFIX = "critic"
GENERATOR_PREFIX = "gen"


def _joint(x: np.ndarray, cond: Optional[np.ndarray]) -> np.ndarray:
    return x if cond is None else np.concatenate([x, cond], axis=1)


def _strip_prefix(grads: Gradient, prefix: str) -> Gradient:
    cut = len(prefix) + 1
    return Gradient({name[cut:]: value for name, value in grads.items()})


def _param_names(nodes: Dict[str, int], prefix: str) -> List[str]:
    return [f"{prefix}.{name}" for name in nodes]


def _decay_rates(net: Network, config: TrainConfig) -> Dict[str, float]:
    """Коэффициенты weight decay по параметрам; смещения по флагу decay_biases."""
    return {
        name: config.weight_decay if (name.startswith("W") or config.decay_biases) else 0.0
        for name in net.parameters()
    }


@dataclass
class CriticObjective:
    """Граф целевой функции критика.

    loss = -objective + penalty минимизируется по параметрам критика.
    """
    graph: ComputationGraph
    objective: int
    penalty: int
    loss: int
    param_names: List[str] = field(default_factory=list)

    def values(self) -> Tuple[float, float]:
        return float(self.graph.value(self.objective)), float(self.graph.value(self.penalty))

    def critic_gradient(self) -> Gradient:
        """Градиент loss по параметрам критика (имена без префикса)."""
        grads = gradient(self.graph, self.loss, self.param_names)
        return _strip_prefix(grads, CRITIC_PREFIX)


def critic_objective(
    critic: Network,
    generator: Network,
    real_batch: np.ndarray,
    cond_batch: Optional[np.ndarray],
    latent_batch: np.ndarray,
    mix_batch: np.ndarray,
    penalty_weight: float
) -> CriticObjective:
    """Целевая функция критика со штрафом на градиент в точках интерполяции.

    objective = mean f(X[,Y]) - mean f(g(Z[,Y])[,Y]);
    penalty = λ·mean(|∇_x f(x̃[,Y])| - 1)², x̃ = U·X + (1 - U)·g(Z[,Y]), Y не смешивается.
    """
    if penalty_weight < 0:
        raise ConfigError(f"вес штрафа должен быть неотрицательным: {penalty_weight}")

    real_batch = np.atleast_2d(np.asarray(real_batch, dtype=np.float64))
    latent_batch = np.atleast_2d(np.asarray(latent_batch, dtype=np.float64))
    mix_batch = np.asarray(mix_batch, dtype=np.float64).reshape(-1)
    m = len(real_batch)
    lengths = {len(latent_batch), len(mix_batch)}
    if cond_batch is not None:
        cond_batch = np.atleast_2d(np.asarray(cond_batch, dtype=np.float64))
        lengths.add(len(cond_batch))
    if lengths != {m}:
        raise BatchMismatchError(f"длины батчей не совпадают: {m} и {sorted(lengths)}")
    if np.any(mix_batch < 0) or np.any(mix_batch > 1):
        raise ValueError("коэффициенты смешивания должны лежать в [0, 1]")

    generated = generator.forward(_joint(latent_batch, cond_batch))
    mixed = mix_batch[:, None] * real_batch + (1.0 - mix_batch[:, None]) * generated

    graph = ComputationGraph()
    nodes = critic.bind(graph, CRITIC_PREFIX)
    real = graph.input("real", _joint(real_batch, cond_batch))
    fake = graph.input("fake", _joint(generated, cond_batch))
    interp = graph.input("interp", mixed)
    if cond_batch is not None:
        interp_joint = graph.concat_cols(interp, graph.input("cond", cond_batch))
    else:
        interp_joint = interp

    mean_real = graph.mean(critic.apply(graph, real, nodes))
    mean_fake = graph.mean(critic.apply(graph, fake, nodes))
    objective = graph.add(mean_real, graph.affine(mean_fake, -1.0))
    # строки независимы, поэтому градиент суммы дает градиенты по каждой точке
    interp_total = graph.sum(critic.apply(graph, interp_joint, nodes))

    def penalty_reducer(work: ComputationGraph, grad_nodes: List[int]) -> int:
        deviation = work.affine(work.row_norm(grad_nodes[0]), 1.0, -1.0)
        return work.affine(work.mean(work.square(deviation)), penalty_weight)

    work = gradient_as_graph(graph, interp_total, ["interp"], reducer=penalty_reducer)
    penalty = work.root
    loss = work.add(work.affine(objective, -1.0), penalty)
    work.root = loss

    return CriticObjective(
        graph=work,
        objective=objective,
        penalty=penalty,
        loss=loss,
        param_names=_param_names(nodes, CRITIC_PREFIX)
    )


def generator_objective(
    critic: Network,
    generator: Network,
    cond_batch: Optional[np.ndarray],
    latent_batch: np.ndarray
) -> Tuple[ComputationGraph, int, List[str]]:
    """Граф -mean f(g(Z[,Y])[,Y]) с параметрами генератора как листьями."""
    graph = ComputationGraph()
    gen_nodes = generator.bind(graph, GENERATOR_PREFIX)
    critic_nodes = critic.bind(graph, CRITIC_PREFIX)

    z = graph.input("latent", latent_batch)
    if cond_batch is not None:
        cond = graph.input("cond", cond_batch)
        generated = generator.apply(graph, graph.concat_cols(z, cond), gen_nodes)
        critic_input = graph.concat_cols(generated, cond)
    else:
        generated = generator.apply(graph, z, gen_nodes)
        critic_input = generated

    root = graph.affine(graph.mean(critic.apply(graph, critic_input, critic_nodes)), -1.0)
    graph.root = root
    return graph, root, _param_names(gen_nodes, GENERATOR_PREFIX)


def generator_step(
    critic: Network,
    generator: Network,
    cond_batch: Optional[np.ndarray],
    latent_batch: np.ndarray,
    state: AdamState,
    decay: float | Dict[str, float] = 0.0
) -> Tuple[Network, AdamState, float]:
    """Один шаг Adam по параметрам генератора; возвращает генератор, состояние и -mean f."""
    latent_batch = np.atleast_2d(np.asarray(latent_batch, dtype=np.float64))
    if cond_batch is not None:
        cond_batch = np.atleast_2d(np.asarray(cond_batch, dtype=np.float64))
        if len(cond_batch) != len(latent_batch):
            raise BatchMismatchError(
                f"длины батчей не совпадают: {len(latent_batch)} и {len(cond_batch)}"
            )

    graph, root, names = generator_objective(critic, generator, cond_batch, latent_batch)
    value = float(graph.value(root))
    grads = _strip_prefix(gradient(graph, root, names), GENERATOR_PREFIX)
    params, state = adam_step(state, generator.parameters(), grads, decay)
    return generator.with_parameters(params), state, value


class TrainedModel(BaseModel):
    """Обученные генератор и критик с историей."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    generator: Network
    critic: Network
    latent: LatentConfig
    history: List[IterationRecord] = []
    ot_curve: List[OTCurvePoint] = []

    @property
    def conditional(self) -> bool:
        return self.generator.arch.input_dim > self.latent.dim

    def generate(self, latent_batch: np.ndarray, cond_batch: Optional[np.ndarray] = None) -> np.ndarray:
        """g(Z[,Y]) для заданных латентных векторов."""
        if self.conditional and cond_batch is None:
            raise ArchitectureMismatchError("условному генератору нужны условия")
        return self.generator.forward(_joint(np.atleast_2d(latent_batch), cond_batch))

    def sample(self, count: int, rng: np.random.Generator, condition: Optional[np.ndarray] = None) -> np.ndarray:
        """count точек генератора; condition - одно условие y или батч условий."""
        z = sample_latent(self.latent, count, rng)
        cond = None
        if condition is not None:
            condition = np.asarray(condition, dtype=np.float64)
            cond = np.tile(condition, (count, 1)) if condition.ndim == 1 else condition
        return self.generate(z, cond)

    def history_summary(self) -> Dict[str, float]:
        """Итог истории для отчета."""
        if not self.history:
            return {}
        last = self.history[-1]
        return {
            "iterations": float(last.iteration),
            "epochs": float(last.epoch),
            "critic_iterations": float(sum(r.critic_iterations for r in self.history)),
            "latent_draws": float(last.latent_draws),
            "critic_objective": last.critic_objective,
            "penalty": last.penalty,
            "generator_objective": last.generator_objective,
        }


EpochCallback = Callable[[int, Network, Network], Optional[List[OTCurvePoint]]]


class WGANTrainer:
    """Цикл WGAN-GP с фиксированным числом эпох."""

    def __init__(
        self,
        config: TrainConfig,
        data: PairedDataset,
        gen_arch: Architecture,
        critic_arch: Architecture,
        show_progress: bool = False
    ):
        self.config = config
        self.data = data
        self.gen_arch = gen_arch
        self.critic_arch = critic_arch
        self.show_progress = show_progress
        self._check()

        self.iters_per_epoch = len(data) // config.batch_size
        self.total_iters = config.epochs * self.iters_per_epoch

    def _check(self):
        config, data = self.config, self.data
        if config.conditional and not data.conditional:
            raise ArchitectureMismatchError("условное обучение требует выборку с Y")
        if len(data) < config.batch_size:
            raise BatchMismatchError(
                f"выборка размера {len(data)} меньше батча {config.batch_size}"
            )

        d, d_y, d_z = data.x_dim, data.y_dim, config.latent.dim
        expected = {
            "вход генератора": (self.gen_arch.input_dim, d_z + d_y),
            "выход генератора": (self.gen_arch.output_dim, d),
            "вход критика": (self.critic_arch.input_dim, d + d_y),
            "выход критика": (self.critic_arch.output_dim, 1),
        }
        for what, (actual, needed) in expected.items():
            if actual != needed:
                raise ArchitectureMismatchError(f"{what}: {actual}, ожидается {needed}")

    def is_warmup(self, iteration: int) -> bool:
        """Итерации 1..initial_iters и каждая кратная every идут с длинным циклом критика."""
        warmup = self.config.warmup
        if iteration <= warmup.initial_iters:
            return True
        return warmup.every > 0 and iteration % warmup.every == 0

    def _adam(self) -> AdamState:
        c = self.config
        return AdamState(learning_rate=c.learning_rate, beta1=c.beta1, beta2=c.beta2, eps=c.eps)

    def run(self, on_epoch_end: Optional[EpochCallback] = None) -> TrainedModel:
        config, data = self.config, self.data
        m = config.batch_size
        cond_all = data.Y if data.conditional else None

        init_rng = make_rng(config.seed, "init")
        generator = init(self.gen_arch, init_rng)
        critic = init(self.critic_arch, init_rng)
        batcher = EpochBatcher(len(data), m, make_rng(config.seed, "shuffle"))
        latent_rng = make_rng(config.seed, "latent")
        mixing_rng = make_rng(config.seed, "mixing")

        gen_state, critic_state = self._adam(), self._adam()
        gen_decay = _decay_rates(generator, config)
        critic_decay = _decay_rates(critic, config)

        history: List[IterationRecord] = []
        ot_curve: List[OTCurvePoint] = []
        draws = 0

        logger.info(
            f"Обучение WGAN-GP: n={len(data)}, m={m}, эпох={config.epochs}, "
            f"итераций генератора={self.total_iters}, условное={data.conditional}"
        )
        tracker = ProgressTracker(self.total_iters, "Обучение WGAN-GP", config.log_every)

        for iteration in tqdm(
            range(1, self.total_iters + 1),
            desc="Итерации генератора",
            disable=not self.show_progress
        ):
            critic_iters = config.warmup.critic_iters if self.is_warmup(iteration) else config.n_critic
            cond = None
            for _ in range(critic_iters):
                idx = batcher.next()
                real = data.X[idx]
                cond = None if cond_all is None else cond_all[idx]
                z = sample_latent(config.latent, m, latent_rng)
                mix = mixing_rng.uniform(0.0, 1.0, size=m)
                draws += m

                objective = critic_objective(critic, generator, real, cond, z, mix, config.penalty_weight)
                params, critic_state = adam_step(
                    critic_state, critic.parameters(), objective.critic_gradient(), critic_decay
                )
                critic = critic.with_parameters(params)

            critic_value, penalty_value = objective.values()

            # генератор использует условия последнего реального батча критика
            z = sample_latent(config.latent, m, latent_rng)
            draws += m
            generator, gen_state, gen_value = generator_step(
                critic, generator, cond, z, gen_state, gen_decay
            )

            if not np.isfinite([critic_value, penalty_value, gen_value]).all():
                logger.error(f"Нечисловое значение на итерации {iteration}")
                raise TrainingDivergedError(
                    f"итерация {iteration}: objective={critic_value}, "
                    f"penalty={penalty_value}, generator={gen_value}"
                )

            epoch = (iteration - 1) // self.iters_per_epoch + 1
            record = IterationRecord(
                iteration=iteration,
                epoch=epoch,
                critic_iterations=critic_iters,
                critic_objective=critic_value,
                penalty=penalty_value,
                generator_objective=gen_value,
                latent_draws=draws
            )
            history.append(record)
            logger.debug(
                f"it={iteration} epoch={epoch} critic={critic_value:.5f} "
                f"penalty={penalty_value:.5f} gen={gen_value:.5f}"
            )
            tracker.update(
                f"critic={critic_value:.4f} penalty={penalty_value:.4f} gen={gen_value:.4f}"
            )

            if on_epoch_end is not None and iteration % self.iters_per_epoch == 0:
                points = on_epoch_end(epoch, generator, critic)
                if points:
                    ot_curve.extend(points)

        tracker.finish()
        return TrainedModel(
            generator=generator,
            critic=critic,
            latent=config.latent,
            history=history,
            ot_curve=ot_curve
        )


def train(
    config: TrainConfig,
    data: PairedDataset,
    gen_arch: Architecture,
    critic_arch: Architecture,
    on_epoch_end: Optional[EpochCallback] = None,
    show_progress: bool = False
) -> TrainedModel:
    """Обучить WGAN-GP; полностью детерминировано при заданном seed."""
    trainer = WGANTrainer(config, data, gen_arch, critic_arch, show_progress)
    return trainer.run(on_epoch_end)

import numpy as np
import pytest

from src.gan import (
    ArchitectureMismatchError,
    BatchMismatchError,
    TrainedModel,
    WGANTrainer,
    critic_objective,
    generator_step,
    train
)
from src.network import Network, init
from src.optim import AdamState
from src.schemas import (
    Architecture,
    ConfigError,
    DatasetKind,
    LatentConfig,
    PairedDataset,
    TrainConfig,
    WarmupConfig
)
from src.transport import exact_w1
from src.utils import make_rng


def linear_net(w) -> Network:
    w = np.atleast_2d(np.asarray(w, dtype=np.float64))
    return Network(arch=Architecture(widths=[w.shape[1], w.shape[0]]), weights=[w], biases=[])


def dataset(rng, n=64, d=2, d_y=0) -> PairedDataset:
    return PairedDataset(
        X=rng.uniform(size=(n, d)),
        Y=rng.uniform(size=(n, d_y)) if d_y else None,
        kind=DatasetKind.FILE
    )


# --- целевая функция критика ---------------------------------------------------

def test_critic_objective_hand_example():
    critic = linear_net([[2.0]])
    generator = linear_net([[0.0]])
    obj = critic_objective(critic, generator, np.array([[1.0]]), None, np.array([[0.3]]), np.array([0.5]), 0.1)
    objective, penalty = obj.values()
    assert objective == pytest.approx(2.0)
    assert penalty == pytest.approx(0.1)


def test_constant_critic_penalty_is_weight(rng):
    critic = Network(
        arch=Architecture(widths=[2, 4, 1]),
        weights=[np.zeros((4, 2)), np.zeros((1, 4))],
        biases=[np.zeros(4)]
    )
    generator = init(Architecture(widths=[3, 4, 2]), rng)
    obj = critic_objective(
        critic, generator, rng.uniform(size=(8, 2)), None,
        rng.uniform(size=(8, 3)), rng.uniform(size=8), 0.7
    )
    objective, penalty = obj.values()
    assert objective == 0.0
    assert penalty == pytest.approx(0.7, abs=1e-5)


def test_unit_linear_critic_has_zero_penalty(rng):
    critic = linear_net([[0.6, 0.8]])
    generator = init(Architecture(widths=[3, 5, 2]), rng)
    obj = critic_objective(
        critic, generator, rng.normal(size=(10, 2)), None,
        rng.uniform(size=(10, 3)), rng.uniform(size=10), 10.0
    )
    assert obj.values()[1] == pytest.approx(0.0, abs=1e-10)


def test_objective_scales_with_last_layer(rng):
    critic = init(Architecture(widths=[2, 6, 1]), rng)
    generator = init(Architecture(widths=[3, 4, 2]), rng)
    batches = (rng.uniform(size=(12, 2)), None, rng.uniform(size=(12, 3)), rng.uniform(size=12))
    base = critic_objective(critic, generator, *batches, 0.1).values()[0]
    scaled_critic = critic.with_parameters({"W1": 3.0 * critic.weights[1]})
    scaled = critic_objective(scaled_critic, generator, *batches, 0.1).values()[0]
    assert scaled == pytest.approx(3.0 * base, rel=1e-12, abs=1e-14)


def with_output_offset(critic: Network, offset: float, bias: float = 2.0) -> Network:
    """Добавить всегда активный нейрон: нулевые входные веса, смещение bias, выходной вес offset / bias."""
    w0, w1 = critic.weights
    widths = list(critic.arch.widths)
    widths[1] += 1
    return Network(
        arch=Architecture(widths=widths),
        weights=[np.vstack([w0, np.zeros((1, w0.shape[1]))]), np.hstack([w1, [[offset / bias]]])],
        biases=[np.append(critic.biases[0], bias)]
    )


def test_objective_ignores_constant_output_offset(rng):
    critic = init(Architecture(widths=[2, 6, 1]), rng)
    critic = critic.with_parameters({"b1": rng.uniform(-0.5, 0.5, size=6)})
    generator = init(Architecture(widths=[3, 4, 2]), rng)
    batches = (rng.uniform(size=(12, 2)), None, rng.uniform(size=(12, 3)), rng.uniform(size=12))
    shifted = with_output_offset(critic, 7.5)
    x = rng.uniform(size=(5, 2))
    np.testing.assert_allclose(shifted.forward(x), critic.forward(x) + 7.5, rtol=1e-12)

    base = critic_objective(critic, generator, *batches, 0.1).values()
    moved = critic_objective(shifted, generator, *batches, 0.1).values()
    assert moved[0] == pytest.approx(base[0], abs=1e-10)
    assert moved[1] == pytest.approx(base[1], abs=1e-10)


def test_conditional_penalty_uses_unmixed_condition(rng):
    # f(x, y) = 0.6x + 0.8y: градиент по x равен 0.6 независимо от y
    critic = linear_net([[0.6, 0.8]])
    generator = init(Architecture(widths=[3, 4, 1]), rng)
    obj = critic_objective(
        critic, generator, rng.uniform(size=(6, 1)), rng.uniform(size=(6, 1)),
        rng.uniform(size=(6, 2)), rng.uniform(size=6), 1.0
    )
    assert obj.values()[1] == pytest.approx(0.16, abs=1e-9)


def test_critic_gradient_has_network_names(rng):
    critic = init(Architecture(widths=[2, 3, 1]), rng)
    generator = init(Architecture(widths=[3, 3, 2]), rng)
    obj = critic_objective(
        critic, generator, rng.uniform(size=(4, 2)), None,
        rng.uniform(size=(4, 3)), rng.uniform(size=4), 0.1
    )
    grads = obj.critic_gradient()
    assert set(grads) == set(critic.parameters())
    grads.check_congruent(critic.parameters())


def test_critic_objective_errors(rng):
    critic = linear_net([[1.0]])
    generator = linear_net([[1.0]])
    with pytest.raises(ConfigError):
        critic_objective(critic, generator, np.ones((2, 1)), None, np.ones((2, 1)), np.ones(2), -0.1)
    with pytest.raises(BatchMismatchError):
        critic_objective(critic, generator, np.ones((2, 1)), None, np.ones((3, 1)), np.ones(2), 0.1)


# --- шаг генератора -------------------------------------------------------------

def test_constant_critic_leaves_generator_unchanged(rng):
    critic = Network(
        arch=Architecture(widths=[2, 3, 1]),
        weights=[np.zeros((3, 2)), np.zeros((1, 3))],
        biases=[np.zeros(3)]
    )
    generator = init(Architecture(widths=[3, 4, 2]), rng)
    new, _, value = generator_step(critic, generator, None, rng.uniform(size=(8, 3)), AdamState())
    assert value == 0.0
    for name, param in generator.parameters().items():
        np.testing.assert_array_equal(new.parameters()[name], param)


def test_linear_critic_pushes_generator_up():
    critic = linear_net([[1.0]])
    generator = linear_net([[0.5]])
    z = np.array([[0.2], [0.4], [0.9]])
    new, _, value = generator_step(critic, generator, None, z, AdamState(learning_rate=0.01))
    assert value == pytest.approx(-0.5 * z.mean())
    assert new.weights[0][0, 0] > 0.5


def test_zero_latent_batch_gives_no_update():
    new, state, _ = generator_step(linear_net([[1.0]]), linear_net([[0.5]]), None, np.zeros((4, 1)), AdamState())
    assert new.weights[0][0, 0] == 0.5
    assert state.t == 1


def test_generator_step_condition_mismatch(rng):
    generator = init(Architecture(widths=[2, 3, 1]), rng)
    critic = init(Architecture(widths=[2, 3, 1]), rng)
    with pytest.raises(BatchMismatchError):
        generator_step(critic, generator, np.ones((3, 1)), np.ones((4, 1)), AdamState())


# --- цикл обучения ---------------------------------------------------------------

def test_one_epoch_accounting(rng):
    config = TrainConfig(batch_size=64, n_critic=5, epochs=1, warmup=WarmupConfig(initial_iters=0, every=0))
    model = train(config, dataset(rng), Architecture(widths=[3, 8, 2]), Architecture(widths=[2, 8, 1]))
    assert len(model.history) == 1
    record = model.history[0]
    assert record.critic_iterations == 5
    assert record.epoch == 1
    assert record.latent_draws == 6 * 64
    assert record.penalty >= 0


def test_training_is_deterministic(rng, fast_config):
    data = dataset(rng)
    gen_arch, critic_arch = Architecture(widths=[3, 6, 2]), Architecture(widths=[2, 6, 1])
    a = train(fast_config, data, gen_arch, critic_arch)
    b = train(fast_config, data, gen_arch, critic_arch)
    assert [r.model_dump() for r in a.history] == [r.model_dump() for r in b.history]
    for name, value in a.generator.parameters().items():
        assert value.tobytes() == b.generator.parameters()[name].tobytes()


def test_history_and_epoch_callback(rng, fast_config):
    data = dataset(rng, n=50)
    seen = []

    def on_epoch_end(epoch, generator, critic):
        seen.append(epoch)
        return None

    model = train(fast_config, data, Architecture(widths=[3, 4, 2]), Architecture(widths=[2, 4, 1]), on_epoch_end)
    # 50 // 16 = 3 итерации на эпоху
    assert len(model.history) == 6
    assert [r.epoch for r in model.history] == [1, 1, 1, 2, 2, 2]
    assert seen == [1, 2]
    draws = [r.latent_draws for r in model.history]
    assert draws == sorted(draws)
    assert model.history_summary()["critic_iterations"] == 12.0


def test_conditional_training(rng, fast_config):
    config = fast_config.model_copy(update={"conditional": True})
    data = dataset(rng, n=32, d=1, d_y=2)
    model = train(config, data, Architecture(widths=[5, 6, 1]), Architecture(widths=[3, 6, 1]))
    assert model.conditional
    samples = model.sample(7, np.random.default_rng(0), condition=np.array([0.1, 0.2]))
    assert samples.shape == (7, 1)


def test_warmup_schedule(rng):
    config = TrainConfig(batch_size=8, warmup=WarmupConfig(initial_iters=25, every=100, critic_iters=100))
    trainer = WGANTrainer(config, dataset(rng, n=16), Architecture(widths=[3, 4, 2]), Architecture(widths=[2, 4, 1]))
    assert all(trainer.is_warmup(it) for it in range(1, 26))
    assert not trainer.is_warmup(26)
    assert trainer.is_warmup(100)
    assert trainer.is_warmup(200)
    assert not trainer.is_warmup(101)


def test_architecture_mismatch(rng, fast_config):
    with pytest.raises(ArchitectureMismatchError):
        train(fast_config, dataset(rng), Architecture(widths=[3, 4, 3]), Architecture(widths=[2, 4, 1]))
    with pytest.raises(ArchitectureMismatchError):
        train(fast_config, dataset(rng), Architecture(widths=[3, 4, 2]), Architecture(widths=[2, 4, 2]))
    conditional = fast_config.model_copy(update={"conditional": True})
    with pytest.raises(ArchitectureMismatchError):
        train(conditional, dataset(rng), Architecture(widths=[3, 4, 2]), Architecture(widths=[2, 4, 1]))


def test_sample_smaller_than_batch(rng, fast_config):
    with pytest.raises(BatchMismatchError):
        train(fast_config, dataset(rng, n=10), Architecture(widths=[3, 4, 2]), Architecture(widths=[2, 4, 1]))


def test_conditional_model_requires_condition(rng):
    model = TrainedModel(
        generator=init(Architecture(widths=[4, 3, 1]), rng),
        critic=init(Architecture(widths=[2, 3, 1]), rng),
        latent=LatentConfig(dim=3)
    )
    with pytest.raises(ArchitectureMismatchError):
        model.sample(5, rng)


@pytest.mark.slow
def test_two_point_smoke():
    improved = 0
    for seed in range(5):
        data = PairedDataset(X=np.tile([[0.0], [1.0]], (128, 1)), kind=DatasetKind.FILE)
        config = TrainConfig(
            learning_rate=1e-3,
            batch_size=64,
            epochs=500,
            warmup=WarmupConfig(initial_iters=0, every=0),
            latent=LatentConfig(dim=1),
            seed=seed,
            log_every=10000
        )
        gen_arch = Architecture(widths=[1, 16, 1])
        critic_arch = Architecture(widths=[1, 32, 32, 1])
        initial = init(gen_arch, make_rng(seed, "init"))
        model = train(config, data, gen_arch, critic_arch)

        eval_rng = np.random.default_rng(seed + 100)
        z = eval_rng.uniform(size=(256, 1))
        before = exact_w1(initial.forward(z), data.X)
        after = exact_w1(model.generator.forward(z), data.X)
        improved += after < before
    assert improved >= 4

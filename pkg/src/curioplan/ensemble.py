"""Particle ensemble of dynamics/reward networks over normalized coordinates.

The posterior over model parameters is represented by n independently
initialized particles; each particle is a (dynamics, reward) pair of small
dense nets. Both conditionals are isotropic Gaussians in *normalized*
coordinates:

    z' ~ N(z + dyn(z, a_norm), sigma_x^2 I)     z = normalized state
    r_norm ~ N(rew(z', a_norm), sigma_r^2)

The dynamics net predicts the normalized state delta; raw-space states and
rewards are recovered through the running normalizer. Log-density ratios
between particles are invariant to this (affine) change of coordinates.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ShapeError, TrainingDivergence
from .nn import MlpParams, RmsProp, backward, forward, gaussian_nll, init_mlp

CHECKPOINT_VERSION = 1

_STD_FLOOR = 1e-8


@dataclass
class GaussianHeadConfig:
    """Fixed standard deviations of the dynamics and reward Gaussians
    (normalized units)."""

    sigma_x: float = 0.1
    sigma_r: float = 0.1

    def __post_init__(self):
        if self.sigma_x <= 0.0 or self.sigma_r <= 0.0:
            raise ConfigurationError("sigma_x and sigma_r must be positive")


@dataclass
class RunningStat:
    """Welford accumulator for per-dimension mean/std over a vector stream."""

    dim: int
    count: int = 0
    mean: np.ndarray = None
    m2: np.ndarray = None

    def __post_init__(self):
        if self.mean is None:
            self.mean = np.zeros(self.dim)
        if self.m2 is None:
            self.m2 = np.zeros(self.dim)

    def update(self, batch: np.ndarray) -> None:
        batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
        for row in batch:
            self.count += 1
            delta = row - self.mean
            self.mean = self.mean + delta / self.count
            self.m2 = self.m2 + delta * (row - self.mean)

    @property
    def std(self) -> np.ndarray:
        if self.count < 2:
            return np.ones(self.dim)
        return np.sqrt(self.m2 / self.count)

    @property
    def scale(self) -> np.ndarray:
        """Std with degenerate dimensions mapped to 1 (keeps the transform invertible)."""
        s = self.std
        return np.where(s > _STD_FLOOR, s, 1.0)

    @property
    def offset(self) -> np.ndarray:
        return self.mean if self.count >= 2 else np.zeros(self.dim)


@dataclass
class Normalizer:
    """Running normalization of states, actions, and rewards."""

    state: RunningStat
    action: RunningStat
    reward: RunningStat

    @classmethod
    def create(cls, state_dim: int, action_dim: int) -> "Normalizer":
        return cls(RunningStat(state_dim), RunningStat(action_dim), RunningStat(1))

    def update(self, states, actions, rewards) -> None:
        self.state.update(states)
        self.action.update(actions)
        self.reward.update(np.asarray(rewards, dtype=np.float64).reshape(-1, 1))

    def norm_state(self, x):
        return (np.asarray(x, dtype=np.float64) - self.state.offset) / self.state.scale

    def denorm_state(self, z):
        return self.state.offset + self.state.scale * np.asarray(z, dtype=np.float64)

    def norm_action(self, a):
        return (np.asarray(a, dtype=np.float64) - self.action.offset) / self.action.scale

    def norm_reward(self, r):
        return (np.asarray(r, dtype=np.float64) - self.reward.offset[0]) / self.reward.scale[0]

    def denorm_reward(self, r_norm):
        return self.reward.offset[0] + self.reward.scale[0] * np.asarray(r_norm, dtype=np.float64)


@dataclass
class Particle:
    """One posterior sample of the model parameters."""

    dynamics: MlpParams
    reward: MlpParams


@dataclass
class EnsembleParams:
    """The particle set; all particles share an architecture."""

    particles: list[Particle]

    @property
    def n(self) -> int:
        return len(self.particles)

    def validate(self) -> None:
        if self.n < 2:
            raise ConfigurationError("ensemble needs n >= 2 particles")
        dyn_shapes = self.particles[0].dynamics.layer_shapes()
        rew_shapes = self.particles[0].reward.layer_shapes()
        for p in self.particles:
            p.dynamics.validate()
            p.reward.validate()
            if p.dynamics.layer_shapes() != dyn_shapes or p.reward.layer_shapes() != rew_shapes:
                raise ShapeError("particles do not share an architecture")


def init_ensemble(
    arch: list[int], n: int, seed: int, activation: str = "tanh"
) -> EnsembleParams:
    """Initialize n particles with independent streams from a splittable seed.

    ``arch`` is the dynamics-net layer list (input = state_dim + action_dim,
    output = state_dim); the reward net reuses the input and hidden sizes with
    a scalar output.
    """
    if n < 2:
        raise ConfigurationError(f"n must be >= 2, got {n}")
    if len(arch) < 2:
        raise ConfigurationError("arch needs at least 2 layers")
    rew_arch = list(arch[:-1]) + [1]
    particles = []
    for child in np.random.SeedSequence(seed).spawn(n):
        dyn_ss, rew_ss = child.spawn(2)
        particles.append(
            Particle(
                dynamics=init_mlp(arch, np.random.default_rng(dyn_ss), activation),
                reward=init_mlp(rew_arch, np.random.default_rng(rew_ss), activation),
            )
        )
    return EnsembleParams(particles=particles)


@dataclass
class EnsembleModel:
    """Particle set plus the shared normalizer and Gaussian head."""

    params: EnsembleParams
    normalizer: Normalizer
    head: GaussianHeadConfig

    @property
    def n(self) -> int:
        return self.params.n

    @property
    def state_dim(self) -> int:
        return self.params.particles[0].dynamics.out_dim

    @property
    def action_dim(self) -> int:
        return self.params.particles[0].dynamics.in_dim - self.state_dim

    @classmethod
    def create(
        cls,
        state_dim: int,
        action_dim: int,
        hidden: tuple[int, ...] = (64, 64),
        n: int = 5,
        seed: int = 0,
        sigma_x: float = 0.1,
        sigma_r: float = 0.1,
        activation: str = "tanh",
    ) -> "EnsembleModel":
        arch = [state_dim + action_dim, *hidden, state_dim]
        return cls(
            params=init_ensemble(arch, n, seed, activation),
            normalizer=Normalizer.create(state_dim, action_dim),
            head=GaussianHeadConfig(sigma_x=sigma_x, sigma_r=sigma_r),
        )


@dataclass
class EnsembleOptimizer:
    """Per-particle RMSProp states (dynamics and reward nets)."""

    dyn: list[RmsProp] = field(default_factory=list)
    rew: list[RmsProp] = field(default_factory=list)

    @classmethod
    def for_model(cls, model: EnsembleModel, lr: float = 1e-3, rho: float = 0.9,
                  eps: float = 1e-8) -> "EnsembleOptimizer":
        return cls(
            dyn=[RmsProp.for_params(p.dynamics, lr, rho, eps) for p in model.params.particles],
            rew=[RmsProp.for_params(p.reward, lr, rho, eps) for p in model.params.particles],
        )


def _dyn_io(model: EnsembleModel, x_prev, action, x_next):
    """Normalized dynamics inputs/targets for a transition batch."""
    z_prev = model.normalizer.norm_state(x_prev)
    z_next = model.normalizer.norm_state(x_next)
    a_norm = model.normalizer.norm_action(action)
    return np.concatenate([z_prev, a_norm], axis=-1), z_next - z_prev


def _rew_io(model: EnsembleModel, action, x_next, reward):
    z_next = model.normalizer.norm_state(x_next)
    a_norm = model.normalizer.norm_action(action)
    r_norm = model.normalizer.norm_reward(np.asarray(reward, dtype=np.float64))
    return np.concatenate([z_next, a_norm], axis=-1), r_norm.reshape(-1, 1)


def train_step(
    model: EnsembleModel,
    batch: tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray],
    optimizer: EnsembleOptimizer,
) -> np.ndarray:
    """One gradient step for every particle on the same transition batch.

    ``batch`` is (x_prev, action, x_next, reward) arrays with a shared leading
    dimension. Each particle is updated from its own gradients only; particles
    never interact, so any particle permutation commutes with this update.
    Returns the per-particle mean loss (dynamics NLL + reward NLL).
    """
    x_prev, action, x_next, reward = (np.atleast_2d(np.asarray(v, dtype=np.float64))
                                      for v in batch[:3])
    reward = np.asarray(batch[3], dtype=np.float64).reshape(-1)
    if x_prev.shape[0] == 0:
        raise ConfigurationError("empty training batch")
    if not (x_prev.shape == x_next.shape and x_prev.shape[0] == action.shape[0] == reward.shape[0]):
        raise ShapeError("batch arrays disagree on the leading dimension")

    b = x_prev.shape[0]
    dyn_in, dyn_target = _dyn_io(model, x_prev, action, x_next)
    rew_in, rew_target = _rew_io(model, action, x_next, reward)

    losses = np.empty(model.n)
    for i, particle in enumerate(model.params.particles):
        mu_dyn = forward(particle.dynamics, dyn_in)
        nll_dyn, g_dyn = gaussian_nll(mu_dyn, dyn_target, model.head.sigma_x)
        mu_rew = forward(particle.reward, rew_in)
        nll_rew, g_rew = gaussian_nll(mu_rew, rew_target, model.head.sigma_r)
        loss = float(nll_dyn.mean() + nll_rew.mean())
        if not np.isfinite(loss):
            raise TrainingDivergence(i)
        losses[i] = loss
        dyn_grads, _ = backward(particle.dynamics, dyn_in, g_dyn / b)
        rew_grads, _ = backward(particle.reward, rew_in, g_rew / b)
        optimizer.dyn[i].update(particle.dynamics, dyn_grads)
        optimizer.rew[i].update(particle.reward, rew_grads)
    return losses


# ---------------------------------------------------------------------------
# Checkpoint file format (single .npz, bitwise round trip)
# ---------------------------------------------------------------------------


def _mlp_arrays(prefix: str, params: MlpParams, out: dict) -> None:
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        out[f"{prefix}_w{l}"] = w
        out[f"{prefix}_b{l}"] = b


def _mlp_from_arrays(prefix: str, n_layers: int, data, activation: str) -> MlpParams:
    return MlpParams(
        weights=[np.array(data[f"{prefix}_w{l}"]) for l in range(n_layers)],
        biases=[np.array(data[f"{prefix}_b{l}"]) for l in range(n_layers)],
        activation=activation,
    )


def save_ensemble(path, model: EnsembleModel, seed: int | None = None) -> None:
    """Write a versioned checkpoint: architecture, weights, normalizer, seed."""
    p0 = model.params.particles[0]
    meta = {
        "version": CHECKPOINT_VERSION,
        "n": model.n,
        "dyn_layers": p0.dynamics.n_layers,
        "rew_layers": p0.reward.n_layers,
        "activation": p0.dynamics.activation,
        "sigma_x": model.head.sigma_x,
        "sigma_r": model.head.sigma_r,
        "seed": seed,
        "norm_counts": [model.normalizer.state.count, model.normalizer.action.count,
                        model.normalizer.reward.count],
    }
    arrays: dict = {"meta": np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)}
    for i, particle in enumerate(model.params.particles):
        _mlp_arrays(f"p{i}_dyn", particle.dynamics, arrays)
        _mlp_arrays(f"p{i}_rew", particle.reward, arrays)
    for name, stat in (("state", model.normalizer.state), ("action", model.normalizer.action),
                       ("reward", model.normalizer.reward)):
        arrays[f"norm_{name}_mean"] = stat.mean
        arrays[f"norm_{name}_m2"] = stat.m2
    np.savez(path, **arrays)


def load_ensemble(path) -> tuple[EnsembleModel, int | None]:
    """Read a checkpoint written by :func:`save_ensemble`."""
    with np.load(path) as data:
        meta = json.loads(bytes(np.array(data["meta"])).decode())
        if meta["version"] != CHECKPOINT_VERSION:
            raise ConfigurationError(f"unsupported checkpoint version {meta['version']}")
        particles = []
        for i in range(meta["n"]):
            particles.append(
                Particle(
                    dynamics=_mlp_from_arrays(f"p{i}_dyn", meta["dyn_layers"], data,
                                              meta["activation"]),
                    reward=_mlp_from_arrays(f"p{i}_rew", meta["rew_layers"], data,
                                            meta["activation"]),
                )
            )
        counts = meta["norm_counts"]
        stats = {}
        for j, name in enumerate(("state", "action", "reward")):
            mean = np.array(data[f"norm_{name}_mean"])
            stats[name] = RunningStat(dim=mean.shape[0], count=int(counts[j]), mean=mean,
                                      m2=np.array(data[f"norm_{name}_m2"]))
    model = EnsembleModel(
        params=EnsembleParams(particles=particles),
        normalizer=Normalizer(state=stats["state"], action=stats["action"],
                              reward=stats["reward"]),
        head=GaussianHeadConfig(sigma_x=meta["sigma_x"], sigma_r=meta["sigma_r"]),
    )
    return model, meta["seed"]

"""REINFORCE with a Gaussian policy over two continuous envelope actions.

The policy is a numpy MLP 9 -> 100 -> 50 -> 30 (tanh) with two mean heads
squashed onto the action interval by an affine sigmoid, plus two
state-independent log-standard-deviations.  Every episode applies one action
pair per time step as a piecewise-constant envelope; the only reward is the
final fidelity.
"""

from dataclasses import dataclass, field
import csv
import io
import math
import os
import struct
import zipfile

import numpy as np

from . import heom, lindblad, model
from .errors import ConfigurationError, CorruptCheckpointError, NumericalError
from .integrate import rk4_step, substeps_for

ISOLATED = "isolated"
LINDBLAD_CONST = "lindblad-const"
LINDBLAD_TD = "lindblad-td"
HEOM = "heom"
BACKENDS = (ISOLATED, LINDBLAD_CONST, LINDBLAD_TD, HEOM)
ABSOLUTE = "absolute"
DELTA = "delta"

LOG_STD_MIN, LOG_STD_MAX = -5.0, 1.0
POLICY_MAGIC = b"VPOLICY1"
HIDDEN = (100, 50, 30)
N_OBS = 9


def observe(rho):
    """The nine real degrees of freedom of a Hermitian 3x3 matrix."""
    r = np.asarray(rho)
    return np.array([
        r[0, 0].real, r[1, 1].real, r[2, 2].real,
        r[0, 1].real, r[0, 1].imag,
        r[0, 2].real, r[0, 2].imag,
        r[1, 2].real, r[1, 2].imag,
    ])


def unobserve(s):
    """Inverse of :func:`observe`."""
    rho = np.diag(np.asarray(s[:3], dtype=complex))
    for (i, j), k in (((0, 1), 3), ((0, 2), 5), ((1, 2), 7)):
        rho[i, j] = s[k] + 1j * s[k + 1]
        rho[j, i] = s[k] - 1j * s[k + 1]
    return rho


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class PolicyNetwork:
    """Gaussian policy; parameters live in ``self.params`` (list of arrays)."""

    names = ("W1", "b1", "W2", "b2", "W3", "b3", "Wm", "bm", "log_std")

    def __init__(self, low, high, rng=None, hidden=HIDDEN, init_std_frac=0.1, head_scale=0.01):
        self.low = np.broadcast_to(np.asarray(low, dtype=float), (2,)).copy()
        self.high = np.broadcast_to(np.asarray(high, dtype=float), (2,)).copy()
        if np.any(self.high < self.low):
            raise ConfigurationError("action interval must satisfy low <= high")
        self.hidden = tuple(hidden)
        rng = rng if rng is not None else np.random.default_rng(0)
        sizes = (N_OBS,) + self.hidden
        params = []
        for a, b in zip(sizes[:-1], sizes[1:]):
            params += [rng.normal(0.0, 1.0 / math.sqrt(a), (a, b)), np.zeros(b)]
        params += [rng.normal(0.0, head_scale / math.sqrt(sizes[-1]), (sizes[-1], 2)), np.zeros(2)]
        width = np.maximum(self.high - self.low, 1e-12)
        params.append(np.clip(np.log(init_std_frac * width), LOG_STD_MIN, LOG_STD_MAX))
        self.params = params

    # parameter vector helpers
    def get_flat(self):
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, v):
        k = 0
        for p in self.params:
            p[...] = v[k:k + p.size].reshape(p.shape)
            k += p.size

    @property
    def n_params(self):
        return sum(p.size for p in self.params)

    def std(self):
        return np.exp(np.clip(self.params[-1], LOG_STD_MIN, LOG_STD_MAX))

    def forward(self, s):
        """Means for a batch of observations (n, 9); returns (mean, cache)."""
        x = np.atleast_2d(s)
        acts = [x]
        for li in range(len(self.hidden)):
            w, b = self.params[2 * li], self.params[2 * li + 1]
            acts.append(np.tanh(acts[-1] @ w + b))
        wm, bm = self.params[-3], self.params[-2]
        z = acts[-1] @ wm + bm
        sig = _sigmoid(z)
        mean = self.low + (self.high - self.low) * sig
        return mean, (acts, sig)

    def mean(self, s):
        return self.forward(s)[0][0]

    def log_prob(self, s, a):
        mean, _ = self.forward(s)
        ls = np.clip(self.params[-1], LOG_STD_MIN, LOG_STD_MAX)
        u = (np.atleast_2d(a) - mean) / np.exp(ls)
        return np.sum(-0.5 * u**2 - ls - 0.5 * math.log(2 * math.pi), axis=1)

    def log_prob_grad(self, s, a, weights=None):
        """Sum over rows of weight * grad ln pi(a|s); one gradient per parameter array."""
        a = np.atleast_2d(a)
        mean, (acts, sig) = self.forward(s)
        n = a.shape[0]
        w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
        raw = self.params[-1]
        ls = np.clip(raw, LOG_STD_MIN, LOG_STD_MAX)
        var = np.exp(2 * ls)
        diff = a - mean
        g_mean = w[:, None] * diff / var
        g_ls = np.sum(w[:, None] * (diff**2 / var - 1.0), axis=0)
        g_ls = np.where((raw > LOG_STD_MIN) & (raw < LOG_STD_MAX), g_ls, 0.0)
        dz = g_mean * (self.high - self.low) * sig * (1.0 - sig)
        grads = [None] * len(self.params)
        grads[-1] = g_ls
        grads[-3] = acts[-1].T @ dz
        grads[-2] = dz.sum(axis=0)
        delta = dz @ self.params[-3].T
        for li in range(len(self.hidden) - 1, -1, -1):
            delta = delta * (1.0 - acts[li + 1] ** 2)
            grads[2 * li] = acts[li].T @ delta
            grads[2 * li + 1] = delta.sum(axis=0)
            if li:
                delta = delta @ self.params[2 * li].T
        return grads

    def sample(self, s, rng):
        """Clipped Gaussian action, pre-clip sample and its log-density."""
        mean = self.mean(s)
        raw = mean + self.std() * rng.standard_normal(2)
        return np.clip(raw, self.low, self.high), raw, float(self.log_prob(s, raw)[0])

    def copy(self):
        other = PolicyNetwork.__new__(PolicyNetwork)
        other.low, other.high, other.hidden = self.low.copy(), self.high.copy(), self.hidden
        other.params = [p.copy() for p in self.params]
        return other

    # persistence
    def to_bytes(self):
        head = POLICY_MAGIC + struct.pack("<I", 1) + struct.pack("<I", len(self.hidden))
        head += struct.pack(f"<{len(self.hidden)}I", *self.hidden)
        body = np.concatenate([self.low, self.high, self.get_flat()]).astype("<f8")
        return head + body.tobytes()

    @classmethod
    def from_bytes(cls, blob):
        if blob[:8] != POLICY_MAGIC:
            raise CorruptCheckpointError("not a policy checkpoint")
        (version,) = struct.unpack_from("<I", blob, 8)
        if version != 1:
            raise CorruptCheckpointError(f"unsupported policy version {version}")
        (nh,) = struct.unpack_from("<I", blob, 12)
        hidden = struct.unpack_from(f"<{nh}I", blob, 16)
        body = np.frombuffer(blob, dtype="<f8", offset=16 + 4 * nh)
        pol = cls(body[:2], body[2:4], hidden=hidden)
        if body.size - 4 != pol.n_params:
            raise CorruptCheckpointError("policy checkpoint has the wrong length")
        pol.set_flat(body[4:].copy())
        return pol


def sample_action(policy, s, rng):
    a, raw, logp = policy.sample(s, rng)
    return a, raw, logp


def log_prob_grad(policy, s, a):
    return policy.log_prob_grad(s, a)


# environment ---------------------------------------------------------------

@dataclass
class EnvConfig:
    backend: str = ISOLATED
    n_steps: int | None = None
    action_mode: str = ABSOLUTE
    low: float = 0.0
    high: float = 3.0
    guess: model.ControlField | None = None
    spec: model.SystemSpec = field(default_factory=model.SystemSpec)
    picture: str | None = None
    channels: list | None = None
    heom_config: heom.HeomConfig | None = None
    rho0: np.ndarray | None = None
    target: np.ndarray | None = None
    step_limit: float = 0.1

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise ConfigurationError(f"unknown backend {self.backend!r}")
        if self.action_mode not in (ABSOLUTE, DELTA):
            raise ConfigurationError(f"unknown action mode {self.action_mode!r}")
        if self.picture is None:
            self.picture = model.SCHRODINGER if self.backend == HEOM else model.RWA
        if self.backend == HEOM and self.picture != model.SCHRODINGER:
            raise ConfigurationError("the HEOM backend runs in the Schrodinger picture")
        if self.n_steps is None:
            self.n_steps = self.guess.n_intervals if self.guess is not None else (
                100 if self.picture == model.SCHRODINGER else 50)
        if self.high < self.low:
            raise ConfigurationError("action interval must satisfy low <= high")
        if self.action_mode == DELTA:
            if self.guess is None:
                raise ConfigurationError("delta mode needs a guess field")
            if self.guess.n_intervals != self.n_steps or self.guess.picture != self.picture:
                raise ConfigurationError("guess field must match the step count and picture")
        if self.backend in (LINDBLAD_CONST, LINDBLAD_TD) and self.channels is None:
            self.channels = lindblad.default_channels()
        if self.backend == LINDBLAD_CONST and any(not c.rate.is_constant() for c in self.channels):
            raise ConfigurationError("lindblad-const needs constant rates")
        if self.backend == HEOM and self.heom_config is None:
            self.heom_config = heom.HeomConfig(spec=self.spec)
        if self.rho0 is None:
            self.rho0 = model.ground_state()
        if self.target is None:
            self.target = (model.carrier_frame_target(spec=self.spec)
                           if self.picture == model.SCHRODINGER else model.target_state())

    @property
    def grid(self):
        return np.linspace(0.0, 1.0, self.n_steps + 1)

    def action_bounds(self):
        return self.low, self.high

    def max_envelope(self):
        if self.action_mode == ABSOLUTE:
            return max(abs(self.low), abs(self.high))
        return self.guess.max_amplitude() + max(abs(self.low), abs(self.high))


class Environment:
    """One episode at a time; ``step`` applies one action pair over one interval."""

    def __init__(self, config):
        self.config = config
        c = config
        self.spec = c.spec
        kw = {}
        if c.picture == model.SCHRODINGER:
            kw = dict(omega_y=c.spec.omega_y, omega_z=c.spec.omega_z)
        self._field_kw = dict(picture=c.picture, interpolation="previous", **kw)
        amp = c.max_envelope()
        if c.backend == HEOM:
            self.hier = heom.build_hierarchy(c.heom_config)
            self.nsub = c.heom_config.substeps or substeps_for(
                self.hier.rate_bound(2 * amp), 1.0 / c.n_steps, c.heom_config.step_limit)
        else:
            bound_field = model.ControlField.constant(amp, amp, n_steps=c.n_steps, spec=c.spec,
                                                      **self._field_kw)
            rate = model.hamiltonian_norm_bound(bound_field, c.spec)
            if c.channels:
                rate += lindblad._rate_bound(c.channels)
            self.nsub = substeps_for(rate, 1.0 / c.n_steps, c.step_limit)
        self.reset()

    def reset(self):
        c = self.config
        g = c.grid
        self.env_y = np.zeros_like(g)
        self.env_z = np.zeros_like(g)
        self.field = model.ControlField(g, self.env_y, self.env_z, check_sampling=False,
                                        **self._field_kw)
        self.env_y, self.env_z = self.field.env_y, self.field.env_z
        self.rho = np.array(c.rho0, dtype=complex)
        self.bath_state = None
        self.k = 0
        return observe(self.rho)

    def envelope_for(self, action, k):
        c = self.config
        a = np.clip(np.asarray(action, dtype=float), c.low, c.high)
        if c.action_mode == DELTA:
            return a + np.array([c.guess.env_y[k], c.guess.env_z[k]])
        return a

    def _advance(self, k):
        c = self.config
        if c.backend == HEOM:
            init = self.rho if self.bath_state is None else self.bath_state
            res = heom.propagate_heom(init, self.field, c.heom_config, interval=(k, k + 1),
                                      substeps=self.nsub, hierarchy=self.hier)
            self.bath_state = res.state
            self.rho = res.state.rho.copy()
            return
        h = model.hamiltonian_provider(self.field, self.spec)
        chans = c.channels if c.backend in (LINDBLAD_CONST, LINDBLAD_TD) else ()
        hs = self.field.dt / self.nsub
        t0 = self.field.grid[k]

        def rhs(t, y):
            return lindblad.lindblad_rhs(y, t, h(t, k), chans)

        rho = self.rho
        for j in range(self.nsub):
            rho = rk4_step(rhs, t0 + j * hs, rho, hs)
        self.rho = rho

    def step(self, action):
        """Returns (observation, reward, done)."""
        k = self.k
        ey, ez = self.envelope_for(action, k)
        self.env_y[k], self.env_z[k] = ey, ez
        if k + 1 == self.config.n_steps:
            self.env_y[k + 1], self.env_z[k + 1] = ey, ez
        self._advance(k)
        self.k += 1
        done = self.k == self.config.n_steps
        reward = model.fidelity(self.rho, self.config.target) if done else 0.0
        return observe(self.rho), reward, done

    def current_field(self):
        return self.field.with_envelopes(self.env_y.copy(), self.env_z.copy())


def env_step(env, action):
    return env.step(action)


# training ----------------------------------------------------------------

@dataclass
class TrainerConfig:
    learning_rate: float = 1e-3
    batch_size: int = 10
    episodes: int = 100
    seed: int = 0
    baseline: bool = True
    optimizer: str = "adam"
    init_std_frac: float = 0.1

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigurationError("learning rate must be positive")
        if self.batch_size < 1 or self.episodes < 1:
            raise ConfigurationError("batch size and episode count must be positive")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigurationError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class EpisodeRecord:
    observations: np.ndarray
    actions: np.ndarray
    ret: float
    field: model.ControlField


class _Adam:
    def __init__(self, params, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            mh = m / (1 - self.b1**self.t)
            vh = v / (1 - self.b2**self.t)
            p += self.lr * mh / (np.sqrt(vh) + self.eps)


def run_episode(policy, env, rng, deterministic=False):
    s = env.reset()
    obs, acts = [], []
    ret = 0.0
    done = False
    while not done:
        if deterministic:
            raw = policy.mean(s)
        else:
            _, raw, _ = policy.sample(s, rng)
        obs.append(s)
        acts.append(raw)
        s, ret, done = env.step(raw)
    return EpisodeRecord(np.array(obs), np.array(acts), float(ret), env.current_field())


def reinforce_update(policy, episodes, learning_rate, baseline=True, optimizer=None):
    """theta += eta (1/M) sum (R - b) sum_t grad ln pi; returns (mean return, applied)."""
    returns = np.array([e.ret for e in episodes])
    b = returns.mean() if baseline else 0.0
    grads = [np.zeros_like(p) for p in policy.params]
    for e, r in zip(episodes, returns):
        if r - b == 0.0:
            continue
        g = policy.log_prob_grad(e.observations, e.actions,
                                 weights=np.full(len(e.actions), (r - b) / len(episodes)))
        for acc, gi in zip(grads, g):
            acc += gi
    if not all(np.all(np.isfinite(g)) for g in grads):
        return float(returns.mean()), False
    if optimizer is not None:
        optimizer.step(policy.params, grads)
    else:
        for p, g in zip(policy.params, grads):
            p += learning_rate * g
    return float(returns.mean()), True


@dataclass
class TrainingHistory:
    episode_returns: np.ndarray
    episode_areas: np.ndarray
    trajectory_returns: np.ndarray
    policy: PolicyNetwork
    best_return: float
    best_field: model.ControlField
    final_return: float
    final_field: model.ControlField
    skipped_updates: int = 0

    def rows(self):
        return [(i + 1, float(r), float(a[0]), float(a[1]))
                for i, (r, a) in enumerate(zip(self.episode_returns, self.episode_areas))]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("episode", "return", "area_y", "area_z"))
            w.writerows(self.rows())


TRAIN_MAGIC = "VTRAIN1"


def _save_training_state(path, policy, opt, ep, ep_ret, ep_area, traj_ret, best, skipped):
    """Atomic npz snapshot of everything needed to continue training bit-exactly."""
    data = dict(magic=np.array(TRAIN_MAGIC), episode=np.array(ep), params=policy.get_flat(),
                ep_ret=np.array(ep_ret, dtype=float), ep_area=np.array(ep_area, dtype=float).reshape(-1, 2),
                traj_ret=np.array(traj_ret, dtype=float), best_ret=np.array(best[0]),
                skipped=np.array(skipped))
    if best[1] is not None:
        data.update(best_y=best[1].env_y, best_z=best[1].env_z)
    if opt is not None:
        data.update(adam_t=np.array(opt.t), adam_m=np.concatenate([m.ravel() for m in opt.m]),
                    adam_v=np.concatenate([v.ravel() for v in opt.v]))
    # a fixed zip timestamp keeps identical runs byte-identical
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        for name, arr in data.items():
            info = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
            with zf.open(info, "w") as fh:
                np.lib.format.write_array(fh, np.asanyarray(arr), allow_pickle=False)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(buf.getvalue())
    os.replace(tmp, path)


def _unflatten_into(arrays, flat):
    i = 0
    for a in arrays:
        a[...] = flat[i:i + a.size].reshape(a.shape)
        i += a.size


def _load_training_state(path):
    try:
        with np.load(path) as z:
            data = {k: z[k] for k in z.files}
    except (OSError, ValueError) as exc:
        raise CorruptCheckpointError(f"cannot read training checkpoint {path}: {exc}") from exc
    if str(data.get("magic")) != TRAIN_MAGIC:
        raise CorruptCheckpointError(f"{path} is not a training checkpoint")
    return data


def train(env_config, trainer_config, progress=None, checkpoint_path=None, resume=False):
    """Run ``episodes`` policy updates, each over a batch of M trajectories.

    Randomness comes from per-trajectory generators seeded by
    (seed, episode, member), so histories are reproducible.  With
    ``checkpoint_path`` the state is saved after every update; ``resume``
    continues from it and reproduces the uninterrupted run exactly.
    """
    tc = trainer_config
    env = Environment(env_config)
    policy = PolicyNetwork(env_config.low, env_config.high,
                           rng=np.random.default_rng([tc.seed, 0xC0FFEE]),
                           init_std_frac=tc.init_std_frac)
    opt = _Adam(policy.params, tc.learning_rate) if tc.optimizer == "adam" else None
    ep_ret, ep_area, traj_ret = [], [], []
    best = (-np.inf, None)
    skipped = 0
    start = 0
    if resume and checkpoint_path is not None:
        if os.path.exists(checkpoint_path):
            d = _load_training_state(checkpoint_path)
            if d["params"].size != policy.n_params:
                raise CorruptCheckpointError("checkpoint policy size does not match")
            policy.set_flat(d["params"])
            start = int(d["episode"])
            ep_ret = list(d["ep_ret"])
            ep_area = list(d["ep_area"])
            traj_ret = [list(r) for r in d["traj_ret"]]
            skipped = int(d["skipped"])
            if "best_y" in d:
                best = (float(d["best_ret"]), env.field.with_envelopes(d["best_y"], d["best_z"]))
            if opt is not None and "adam_t" in d:
                opt.t = int(d["adam_t"])
                _unflatten_into(opt.m, d["adam_m"])
                _unflatten_into(opt.v, d["adam_v"])
    for ep in range(start, tc.episodes):
        batch = []
        for m in range(tc.batch_size):
            rng = np.random.default_rng([tc.seed, ep, m])
            rec = run_episode(policy, env, rng)
            if not 0.0 <= rec.ret <= 1.0 + 1e-6:
                raise NumericalError(f"return {rec.ret} outside [0, 1]")
            batch.append(rec)
            if rec.ret > best[0]:
                best = (rec.ret, rec.field)
        mean_ret, ok = reinforce_update(policy, batch, tc.learning_rate, tc.baseline, opt)
        skipped += not ok
        ep_ret.append(mean_ret)
        ep_area.append(np.mean([e.field.areas() for e in batch], axis=0))
        traj_ret.append([e.ret for e in batch])
        if checkpoint_path is not None:
            _save_training_state(checkpoint_path, policy, opt, ep + 1, ep_ret, ep_area, traj_ret,
                                 best, skipped)
        if progress is not None:
            progress(ep, mean_ret)
    final = run_episode(policy, env, None, deterministic=True)
    return TrainingHistory(np.array(ep_ret), np.array(ep_area).reshape(-1, 2), np.array(traj_ret),
                           policy, float(best[0]), best[1], final.ret, final.field, skipped)

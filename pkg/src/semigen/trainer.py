"""Training loops for SIG, GAN and GAN-SI, with logging, checkpoints and multi-seed runs."""

import glob
import hashlib
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
import yaml

from . import __version__
from . import autodiff as ad
from . import samplers
from .losses import LambdaController, combine_generator_terms, gan_disc_loss, gan_gen_loss, sig_loss_HM
from .metrics import DEFAULT_EVAL_SAMPLES, discrete_fit_report, mode_report
from .models import (ObservationModel, discriminate, load_checkpoint, make_discriminator, make_generator,
                     sample_x, save_checkpoint)

log = logging.getLogger(__name__)

REGIMES = ("sig", "gan", "gan-si")
LOG_COLUMNS = ("step", "total", "gan_term", "sig_term", "lambda", "disc_loss", "wall_time")


class TrainingDiverged(FloatingPointError):
    def __init__(self, step, message, dump_path=None):
        self.step = step
        self.dump_path = dump_path
        where = f"; offending batch written to {dump_path}" if dump_path else ""
        super().__init__(f"step {step}: {message}{where}")


@dataclass
class TrainConfig:
    """Everything needed to reproduce a training run.

    ``lam`` is either a nonnegative number or ``"auto"``. ``sample_mode``
    chooses what evaluation scores: generator outputs (``"theta"``) or full
    observations (``"x"``); ``"auto"`` uses theta for continuous data and x
    for count data.
    """

    regime: str = "sig"
    dataset: dict = field(default_factory=lambda: {"kind": "gmm-grid"})
    train_size: int = 100_000
    noise_dim: int = 10
    gen_hidden: list = field(default_factory=lambda: [100, 100])
    disc_hidden: list = field(default_factory=lambda: [100])
    observation: dict = field(default_factory=lambda: {"kind": "gaussian", "sigma": 0.1})
    batch_n: int = 256
    batch_m: int = 256
    steps: int = 20_000
    lam: object = "auto"
    lambda_interval: int = 100
    lambda_decay: float = 0.99
    gan_weight: float = 1.0
    lr: float = 2e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    eval_interval: int = 5000
    eval_samples: int = DEFAULT_EVAL_SAMPLES
    sample_mode: str = "auto"
    checkpoint_interval: int = 5000
    fused: bool = True
    sigma_start: object = 1.0
    sigma_anneal_steps: int = 12_000

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}; expected one of {REGIMES}")
        if self.batch_n < 1 or self.batch_m < 1:
            raise ValueError("batch sizes N and M must be at least 1")
        if self.steps < 0:
            raise ValueError("steps must be nonnegative")
        if self.lam != "auto" and float(self.lam) < 0:
            raise ValueError(f"lambda must be nonnegative or 'auto', got {self.lam}")
        if self.sigma_start is not None and not float(self.sigma_start) > 0:
            raise ValueError("sigma_start must be positive")
        if self.sample_mode not in ("auto", "theta", "x"):
            raise ValueError(f"unknown sample_mode {self.sample_mode!r}")
        self.spec  # validates the dataset block

    @property
    def spec(self):
        d = dict(self.dataset)
        return samplers.make_spec(d.pop("kind"), **d)

    @property
    def obs(self):
        if self.regime == "gan":
            return None
        d = dict(self.observation)
        d.setdefault("dim", self.spec.dim)
        return ObservationModel.from_dict(d)

    def obs_at(self, step):
        """Observation model used for the training loss at ``step``.

        With ``sigma_start`` set, a gaussian sigma decays geometrically from
        ``sigma_start`` to the configured value over ``sigma_anneal_steps``.
        """
        obs = self.obs
        if obs is None or obs.kind != "gaussian" or self.sigma_start is None or step >= self.sigma_anneal_steps:
            return obs
        frac = step / self.sigma_anneal_steps
        sigma = float(self.sigma_start) ** (1 - frac) * obs.sigma ** frac
        return ObservationModel(obs.kind, sigma, obs.dim)

    @property
    def output_transform(self):
        obs = self.obs
        if obs is not None and obs.kind == "poisson":
            return "softplus"
        if obs is None and self.spec.discrete:
            return "softplus"
        return "identity"

    @property
    def resolved_sample_mode(self):
        if self.sample_mode != "auto":
            return self.sample_mode
        return "x" if self.spec.discrete else "theta"

    def to_dict(self):
        return asdict(self)

    def config_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def replace(self, **changes):
        d = self.to_dict()
        d.update(changes)
        return TrainConfig(**d)

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            d = yaml.safe_load(fh) or {}
        return cls.from_dict(d)


class TrainState:
    """Mutable state of one run: networks, optimizers, RNG stream, lambda tracker."""

    def __init__(self, config):
        self.config = config
        spec = config.spec
        self.spec = spec
        self.obs = config.obs
        data = spec.sample(samplers.make_rng(config.seed, samplers.STREAM_DATA), config.train_size)
        self.data = np.asarray(data, dtype=np.float64).reshape(config.train_size, spec.dim)
        self.gen = make_generator(config.noise_dim, config.gen_hidden, spec.dim, config.output_transform,
                                  rng=samplers.make_rng(config.seed, samplers.STREAM_GEN_INIT))
        self.disc = None
        if config.regime != "sig":
            self.disc = make_discriminator(spec.dim, config.disc_hidden,
                                           rng=samplers.make_rng(config.seed, samplers.STREAM_DISC_INIT))
        opt = dict(lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.eps)
        self.gen_opt = ad.AdamState.for_params(self.gen.params, **opt)
        self.disc_opt = ad.AdamState.for_params(self.disc.params, **opt) if self.disc else None
        self.rng = samplers.make_rng(config.seed, samplers.STREAM_TRAIN)
        fixed = None
        if config.regime == "sig":
            fixed = 1.0
        elif config.regime == "gan":
            fixed = 0.0
        elif config.lam != "auto":
            fixed = float(config.lam)
        self.lam = LambdaController(fixed=fixed, decay=config.lambda_decay, interval=config.lambda_interval)
        self.step = 0
        self.out_dir = None

    # ------------------------------------------------------------ batches

    def sample_batch(self):
        cfg = self.config
        idx = self.rng.integers(0, len(self.data), size=cfg.batch_n)
        x = self.data[idx]
        z = samplers.sample_noise(self.rng, cfg.batch_m, cfg.noise_dim)
        return x, z

    def _fail(self, message, **batch):
        dump = None
        if self.out_dir:
            dump = os.path.join(self.out_dir, f"diverged_step{self.step}.npz")
            np.savez(dump, **batch)
        raise TrainingDiverged(self.step, message, dump)

    # ------------------------------------------------------------ checkpoints

    def checkpoint_arrays(self):
        arrays = [(p.name, p.value) for p in self.gen.params]
        if self.disc:
            arrays += [(p.name, p.value) for p in self.disc.params]
        for tag, params, opt in (("gen", self.gen.params, self.gen_opt), ("disc", self.disc and self.disc.params,
                                                                            self.disc_opt)):
            if opt is None:
                continue
            arrays += [(f"adam.{tag}.m.{p.name}", m) for p, m in zip(params, opt.m)]
            arrays += [(f"adam.{tag}.v.{p.name}", v) for p, v in zip(params, opt.v)]
        return arrays

    def manifest(self):
        cfg = self.config
        return {
            "format": "semigen-checkpoint-1",
            "version": __version__,
            "step": self.step,
            "seed": cfg.seed,
            "config": cfg.to_dict(),
            "config_hash": cfg.config_hash(),
            "generator": self.gen.architecture(),
            "discriminator": self.disc.architecture() if self.disc else None,
            "observation": self.obs.to_dict() if self.obs else None,
            "dataset": self.spec.to_dict(),
            "adam_steps": {"gen": self.gen_opt.step, "disc": self.disc_opt.step if self.disc_opt else None},
            "rng_state": self.rng.bit_generator.state,
            "lambda_state": self.lam.state(),
        }

    def save(self, path_prefix):
        return save_checkpoint(path_prefix, self.manifest(), self.checkpoint_arrays())

    @classmethod
    def load(cls, path_prefix):
        manifest, arrays = load_checkpoint(path_prefix)
        state = cls(TrainConfig.from_dict(manifest["config"]))
        state.restore(manifest, arrays)
        return state

    def restore(self, manifest, arrays):
        if manifest["generator"] != self.gen.architecture():
            raise ValueError(f"checkpoint generator {manifest['generator']} does not match "
                             f"configured generator {self.gen.architecture()}")
        for net in (self.gen, self.disc):
            for p in (net.params if net else []):
                got = arrays[p.name].shape if p.name in arrays else None
                if got != p.shape:
                    raise ValueError(f"checkpoint array {p.name} has shape {got}, architecture expects {p.shape}")
        for p in self.gen.params:
            p.value = arrays[p.name].copy()
        if self.disc:
            for p in self.disc.params:
                p.value = arrays[p.name].copy()
        for tag, params, opt in (("gen", self.gen.params, self.gen_opt),
                                 ("disc", self.disc.params if self.disc else None, self.disc_opt)):
            if opt is None:
                continue
            opt.m = [arrays[f"adam.{tag}.m.{p.name}"].copy() for p in params]
            opt.v = [arrays[f"adam.{tag}.v.{p.name}"].copy() for p in params]
            opt.step = manifest["adam_steps"][tag]
        self.rng.bit_generator.state = manifest["rng_state"]
        self.lam.load_state(manifest["lambda_state"])
        self.step = manifest["step"]

    # ------------------------------------------------------------ sampling

    def generate(self, count, seed_key=None, mode=None, seed=None):
        """Draw ``count`` samples from the current generator on a dedicated stream.

        The stream is keyed by (seed, step) so repeated calls at one step agree.
        """
        cfg = self.config
        key = self.step if seed_key is None else seed_key
        rng = samplers.make_rng(cfg.seed if seed is None else seed, samplers.STREAM_EVAL, key)
        z = samplers.sample_noise(rng, count, cfg.noise_dim)
        theta = self.gen.predict(z)
        mode = mode or cfg.resolved_sample_mode
        if mode == "theta":
            return theta
        obs = self.obs
        if obs is None and self.spec.discrete:
            obs = ObservationModel("poisson", dim=1)
        elif obs is None:
            obs = ObservationModel("gaussian", sigma=cfg.observation.get("sigma", 0.1), dim=self.spec.dim)
        return sample_x(obs, theta, rng)

    def evaluate(self, count=None):
        count = self.config.eval_samples if count is None else count
        samples = self.generate(count)
        return evaluate_samples(samples, self.spec)


def evaluate_samples(samples, spec):
    """Metric dictionary appropriate to the dataset kind."""
    if spec.discrete:
        rep = discrete_fit_report(np.rint(samples).astype(np.int64), spec, window=20)
        rep.pop("pmf_table")
        return rep
    if spec.centers:
        return mode_report(samples, spec).to_dict()
    radius = np.sqrt((np.asarray(samples, dtype=np.float64) ** 2).sum(axis=1))
    target = spec.params.get("radius", 2.0)
    return {"sample_count": int(len(radius)), "radius_mean": float(radius.mean()),
            "radius_std": float(radius.std()), "radius_abs_error": float(abs(radius.mean() - target))}
    return {"mean_radius": float(radius.mean()), "radius_std": float(radius.std()),
            "sample_count": int(len(radius))}


# ---------------------------------------------------------------- train steps

def _check_finite(state, value, what, **batch):
    if not math.isfinite(value):
        state._fail(f"non-finite {what} ({value})", **batch)


def train_step_sig(state):
    """One maximum-likelihood step on the H_M estimator."""
    x, z = state.sample_batch()
    theta = state.gen(z)
    loss = sig_loss_HM(state.config.obs_at(state.step), x, theta, fused=state.config.fused)
    _check_finite(state, loss.value, "SIG loss", x=x, z=z)
    grads = ad.backward(loss.tensor)
    ad.adam_step(state.gen.params, grads, state.gen_opt)
    row = {"step": state.step, "total": loss.value, "gan_term": 0.0, "sig_term": loss.value,
           "lambda": 1.0, "disc_loss": 0.0}
    state.step += 1
    return row


def train_step_gan_si(state):
    """One mini-batch step in the order of the GAN-SI algorithm.

    Sample x and z, map z to theta, form the discriminator gradient and the
    generator gradient (both at the current parameters), then apply both Adam
    updates. Vanilla GAN is the same step with lambda fixed to 0.
    """
    cfg = state.config
    x, z = state.sample_batch()
    theta = state.gen(z)

    real = discriminate(state.disc, x)
    fake_const = discriminate(state.disc, theta.detach())
    d_loss = gan_disc_loss(real, fake_const)
    _check_finite(state, d_loss.value, "discriminator loss", x=x, z=z)
    d_grads = ad.backward(d_loss.tensor)
    d_grads = [d_grads.get(p, np.zeros_like(p.value)) for p in state.disc.params]

    auto = state.lam.fixed is None
    gan = gan_gen_loss(discriminate(state.disc, theta)) if cfg.gan_weight != 0 else None
    sig = None
    if auto or state.lam.fixed != 0:
        sig = sig_loss_HM(cfg.obs_at(state.step), x, theta, fused=cfg.fused)
    if auto:
        state.lam.observe(state.step, gan.value if gan else 0.0, sig.value)
    lam = state.lam.value(state.step)
    g_loss = combine_generator_terms(gan, sig, lam, cfg.gan_weight)
    _check_finite(state, g_loss.value, "generator loss", x=x, z=z)
    g_grads = ad.backward(g_loss.tensor)
    g_grads = [g_grads.get(p, np.zeros_like(p.value)) for p in state.gen.params]

    ad.adam_step(state.disc.params, d_grads, state.disc_opt)
    ad.adam_step(state.gen.params, g_grads, state.gen_opt)
    b = g_loss.breakdown
    row = {"step": state.step, "total": g_loss.value, "gan_term": b["gan_term"], "sig_term": b["sig_term"],
           "lambda": lam, "disc_loss": d_loss.value}
    state.step += 1
    return row


def train_step(state):
    if state.config.regime == "sig":
        return train_step_sig(state)
    return train_step_gan_si(state)


# ---------------------------------------------------------------- experiments

@dataclass
class RunRecord:
    config: dict
    seed: int
    out_dir: str
    evaluations: list
    final: dict
    checkpoints: list
    log_path: str
    samples_path: str
    wall_clock: float
    version: str = __version__

    def to_dict(self):
        return asdict(self)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        if os.path.isdir(path):
            path = os.path.join(path, "run.json")
        with open(path) as fh:
            return cls(**json.load(fh))


def _fmt(v):
    return repr(float(v)) if isinstance(v, float) else str(v)


def latest_checkpoint(out_dir):
    found = sorted(glob.glob(os.path.join(out_dir, "checkpoints", "step_*.json")))
    return found[-1][:-5] if found else None


def run_experiment(config, out_dir, resume=False, stop_after=None):
    """Train one seed, evaluating at intervals and at the end; write all artifacts to ``out_dir``.

    ``stop_after`` halts (after checkpointing) once that many steps are done;
    it exists to exercise interruption and resume.
    """
    os.makedirs(os.path.join(out_dir, "checkpoints"), exist_ok=True)
    t0 = time.time()
    ckpt = latest_checkpoint(out_dir) if resume else None
    if ckpt:
        state = TrainState.load(ckpt)
        if state.config.to_dict() != config.to_dict():
            raise ValueError(f"config in {ckpt} differs from the requested config")
        log.info("resuming %s from step %d", out_dir, state.step)
    else:
        state = TrainState(config)
        with open(os.path.join(out_dir, "config.json"), "w") as fh:
            json.dump(config.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")
    state.out_dir = out_dir
    log_path = os.path.join(out_dir, "train_log.csv")
    evals_path = os.path.join(out_dir, "evaluations.json")
    rows_kept = []
    evaluations = []
    if ckpt:
        with open(log_path) as fh:
            next(fh)
            rows_kept = [line for line in fh if int(line.split(",", 1)[0]) < state.step]
        with open(evals_path) as fh:
            evaluations = [e for e in json.load(fh) if e["step"] <= state.step]
    log_fh = open(log_path, "w")
    log_fh.write(",".join(LOG_COLUMNS) + "\n")
    log_fh.writelines(rows_kept)
    checkpoints = sorted({p[:-5] for p in glob.glob(os.path.join(out_dir, "checkpoints", "step_*.json"))})

    def checkpoint():
        prefix = os.path.join(out_dir, "checkpoints", f"step_{state.step:08d}")
        state.save(prefix)
        if prefix not in checkpoints:
            checkpoints.append(prefix)
        log_fh.flush()
        with open(evals_path, "w") as fh:
            json.dump(evaluations, fh, indent=1, sort_keys=True)

    try:
        while state.step < config.steps:
            row = train_step(state)
            row["wall_time"] = time.time() - t0
            log_fh.write(",".join(_fmt(row[c]) for c in LOG_COLUMNS) + "\n")
            done = state.step
            if done < config.steps and config.eval_interval > 0 and done % config.eval_interval == 0:
                evaluations.append({"step": done, "metrics": state.evaluate()})
            if config.checkpoint_interval > 0 and done % config.checkpoint_interval == 0:
                checkpoint()
            if stop_after is not None and done >= stop_after:
                checkpoint()
                log_fh.close()
                return None
        final = state.evaluate()
        evaluations.append({"step": state.step, "metrics": final})
        checkpoint()
    finally:
        if not log_fh.closed:
            log_fh.close()

    samples_path = os.path.join(out_dir, "samples.csv")
    samplers.write_samples_csv(samples_path, state.generate(config.eval_samples))
    record = RunRecord(config=config.to_dict(), seed=config.seed, out_dir=out_dir, evaluations=evaluations,
                       final=final, checkpoints=checkpoints, log_path=log_path, samples_path=samples_path,
                       wall_clock=time.time() - t0)
    record.save(os.path.join(out_dir, "run.json"))
    return record


def _run_one(args):
    config, out_dir, resume = args
    return run_experiment(config, out_dir, resume=resume)


def run_multi_seed(config, out_root, n_seeds=5, workers=None, resume=False):
    """Run seeds ``seed + 0 .. seed + n_seeds - 1`` and aggregate their final metrics."""
    jobs = []
    for i in range(n_seeds):
        cfg = config.replace(seed=config.seed + i)
        jobs.append((cfg, os.path.join(out_root, f"seed_{cfg.seed}"), resume))
    workers = workers or 1
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_one, jobs))
    else:
        records = [_run_one(j) for j in jobs]
    return records, aggregate_records(records)


# ---------------------------------------------------------------- aggregation

SUMMARY_METRICS = {
    "continuous": [("modes", "modes_captured"), ("high-quality proportion", "hq_proportion"),
                   ("KL (mode bins)", "kl_modes"), ("KL (26-bin)", "kl_to_data"),
                   ("classifier score", "classifier_score")],
    "discrete": [("TV distance", "tv_distance"), ("TV {0..20}", "tv_window"), ("KL", "kl")],
}


def mean_std(values):
    """Mean and sample standard deviation (0 for a single value)."""
    arr = np.asarray(values, dtype=np.float64)
    std = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
    return float(arr.mean()), std


def fmt_pm(mean, std):
    def short(v):
        s = f"{v:.2f}".rstrip("0").rstrip(".")
        return "0" if s in ("-0", "") else s
    return f"{short(mean)}±{short(std)}"


def aggregate_records(records):
    """Per-metric mean and standard deviation across runs of one dataset spec."""
    if not records:
        raise ValueError("no run records to aggregate")
    specs = {json.dumps(r.config["dataset"], sort_keys=True) for r in records}
    if len(specs) > 1:
        raise ValueError(f"runs use different dataset specs: {sorted(specs)}")
    kind = "discrete" if records[0].final.get("tv_distance") is not None else "continuous"
    rows = []
    for label, key in SUMMARY_METRICS[kind]:
        vals = [r.final[key] for r in records if key in r.final]
        if not vals:
            continue
        m, s = mean_std(vals)
        rows.append({"metric": label, "key": key, "mean": m, "std": s, "formatted": fmt_pm(m, s),
                     "values": vals})
    return {"regime": records[0].config["regime"], "dataset": records[0].config["dataset"],
            "n_runs": len(records), "seeds": [r.seed for r in records], "rows": rows}


def format_summary(summary):
    head = f"{summary['regime']} on {summary['dataset']['kind']} ({summary['n_runs']} runs)"
    width = max(len(r["metric"]) for r in summary["rows"])
    lines = [head] + [f"{r['metric'].ljust(width)}  {r['formatted']}" for r in summary["rows"]]
    return "\n".join(lines)


def summary_csv(summary):
    lines = ["metric,mean,std"]
    lines += [f"{r['metric']},{r['mean']!r},{r['std']!r}" for r in summary["rows"]]
    return "\n".join(lines) + "\n"


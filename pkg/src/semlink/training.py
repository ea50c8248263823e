"""Staged training and evaluation of the end-to-end QA link.

The curriculum has four stages:
  s1  semantic encoder + fuser on lossless features, no channel
  s2  codec inserted at a fixed rate over the noisy channel, codec trained alone
  s3  rate predictors unfrozen, task loss + lambda * soft bandwidth cost
  s4  everything unfrozen for joint fine-tuning at a colder temperature

Freezing works by exclusion: each stage's optimizer is built over only that
stage's trainable parameter group, so frozen parameters are bit-identical
after any number of steps. All randomness flows from one root seed through
labeled streams, which makes runs replayable and metrics files byte-stable.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from . import allocator as A
from . import codec as C
from . import fuser as F
from . import tensor as T
from .allocator import MaskAndSideInfo
from .channel import ChannelConfig, apply_channel, compute_bcr
from .checkpoint import load_checkpoint, load_into, save_checkpoint
from .codec import EncodeDiagnostics, JSCCodec
from .data import VOCAB_SIZE, QATask, batch_text, batch_videos, build_tasks
from .encoder import EncoderConfig, SemanticEncoder, SyntheticVideoProvider
from .errors import ContractError, InputError
from .fuser import Fuser
from .rng import derive_rng
from .tensor import Tape, Tensor, backward

STAGES = ("s1", "s2", "s3", "s4")
# temperature schedule: tau = init * decay**epoch
TAU_SCHEDULE = {"s3": (5.0, 0.9), "s4": (1.0, 0.95)}
DEFAULT_EPOCHS = {"s1": 10, "s2": 10, "s3": 10, "s4": 5}
DEFAULT_LRS = {"s1": 1e-3, "s2": 1e-3, "s3": 1e-3, "s4": 3e-4}
GRAD_CLIP_NORM = 5.0
METRICS_COLUMNS = ("stage", "epoch", "step", "loss_total", "loss_task",
                   "loss_rate_bits", "accuracy", "tau", "snr_db", "mean_k", "bcr")

# trainable parameter groups per stage; zeta = semantic encoder, theta =
# codec encoder blocks + shared rate embedding, phi = codec decoder,
# epsilon = rate predictors, nu = fuser (text encoder included)
TRAINABLE_GROUPS = {
    "s1": frozenset({"zeta", "nu"}),
    "s2": frozenset({"theta", "phi"}),
    "s3": frozenset({"theta", "phi", "epsilon"}),
    "s4": frozenset({"zeta", "theta", "phi", "epsilon", "nu"}),
}


def param_group(name: str) -> str:
    if name.startswith("enc."):
        return "zeta"
    if name.startswith("jsc.enc.pred"):
        return "epsilon"
    if name.startswith("jsc.dec."):
        return "phi"
    if name.startswith("fuser."):
        return "nu"
    return "theta"   # jsc.enc.block*, jsc.rate_embedding


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    out_dir: str = "run"
    n_train: int = 2000
    n_test: int = 500
    batch_size: int = 16
    snr_lo: float = -5.0
    snr_hi: float = 15.0
    channel_kind: str = "awgn"
    sigma_h: float = 1.0
    snr_adaptive: bool = False
    fixed_k: int | None = None      # per-token rate of the fixed-rate variant
    lambda_rate: float = 0.0        # bandwidth pressure in s3/s4
    l_c: int = 4
    l_f: int = 4
    r: int = 10
    m: int = 64
    d: int = 32
    jsc_layers: int = 4
    heads: int = 4

    @property
    def l_v(self) -> int:
        return self.l_c * self.l_f

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(l_v=self.l_v, l_c=self.l_c, l_f=self.l_f,
                             r=self.r, m=self.m, d=self.d)


@dataclass(frozen=True)
class StagePlan:
    name: str
    epochs: int
    lr: float
    tau_init: float | None = None    # defaults per TAU_SCHEDULE in s3/s4
    tau_decay: float | None = None

    def __post_init__(self) -> None:
        if self.name not in STAGES:
            raise ContractError(f"unknown stage {self.name!r}")
        if self.epochs < 1 or self.lr <= 0:
            raise ContractError(f"stage {self.name}: epochs/lr out of range")


def default_plan(cfg: TrainConfig, epochs: dict | None = None,
                 lrs: dict | None = None) -> list[StagePlan]:
    """The four-stage curriculum; fixed-rate variants skip s3 (no allocator)."""
    epochs = {**DEFAULT_EPOCHS, **(epochs or {})}
    lrs = {**DEFAULT_LRS, **(lrs or {})}
    names = ("s1", "s2", "s4") if cfg.fixed_k is not None else STAGES
    return [StagePlan(n, epochs[n], lrs[n]) for n in names]


class ModelBundle:
    """Semantic encoder, codec and fuser built from one root seed via labeled
    init streams, so variants that differ in one component share the others'
    initialization bit-for-bit."""

    def __init__(self, cfg: TrainConfig) -> None:
        self.cfg = cfg
        self.encoder = SemanticEncoder(cfg.encoder_config(), cfg.heads,
                                       derive_rng(cfg.seed, "init.encoder"))
        self.codec = JSCCodec(cfg.l_v, cfg.d, cfg.jsc_layers, cfg.heads,
                              derive_rng(cfg.seed, "init.codec"),
                              snr_adaptive=cfg.snr_adaptive)
        self.fuser = Fuser(cfg.d, cfg.heads, VOCAB_SIZE,
                           derive_rng(cfg.seed, "init.fuser"))
        self.provider = SyntheticVideoProvider(cfg.encoder_config(),
                                               world_seed=cfg.seed)

    def named_params(self) -> dict[str, Tensor]:
        out = self.encoder.named_params("enc")
        out.update(self.codec.named_params())
        out.update(self.fuser.named_params())
        return out

    def group_params(self, groups: frozenset[str]) -> dict[str, Tensor]:
        return {n: p for n, p in self.named_params().items()
                if param_group(n) in groups}


class Adam:
    """Adaptive-moment descent with global-norm gradient clipping. Missing
    gradients (parameters off the loss path this step) count as zeros."""

    def __init__(self, params: dict[str, Tensor], lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8,
                 clip_norm: float = GRAD_CLIP_NORM) -> None:
        if lr <= 0:
            raise ContractError(f"lr must be > 0, got {lr}")
        self.names = sorted(params)
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.clip_norm = clip_norm
        self.m = {n: np.zeros_like(params[n].data) for n in self.names}
        self.v = {n: np.zeros_like(params[n].data) for n in self.names}
        self.t = 0

    def step(self) -> float:
        """One update over the managed set; returns the pre-clip grad norm."""
        grads = {}
        sq = 0.0
        for n in self.names:
            g = self.params[n].grad
            g = np.zeros_like(self.params[n].data) if g is None else g
            grads[n] = g
            sq += float((g * g).sum())
        norm = float(np.sqrt(sq))
        if self.clip_norm and norm > self.clip_norm:
            scale = self.clip_norm / norm
            grads = {n: g * scale for n, g in grads.items()}
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for n in self.names:
            g = grads[n]
            self.m[n] = self.beta1 * self.m[n] + (1.0 - self.beta1) * g
            self.v[n] = self.beta2 * self.v[n] + (1.0 - self.beta2) * g * g
            update = (self.m[n] / bc1) / (np.sqrt(self.v[n] / bc2) + self.eps)
            self.params[n].data -= self.lr * update
        return norm


def zero_all_grads(bundle: ModelBundle) -> None:
    for p in bundle.named_params().values():
        p.grad = None


@dataclass
class StepSettings:
    stage: str
    tau: float = 1.0
    snr_db: float | None = None
    channel_kind: str = "awgn"
    sigma_h: float = 1.0
    fixed_k: int | None = None
    mode: str = "sample_st"          # selection mode when the allocator runs

    def __post_init__(self) -> None:
        if self.stage not in STAGES:
            raise ContractError(f"unknown stage {self.stage!r}")
        if self.stage != "s1" and self.snr_db is None:
            raise ContractError(f"stage {self.stage} transmits and needs snr_db")


@dataclass
class StepDiagnostics:
    answers: np.ndarray
    used_channel: bool
    encode_diag: EncodeDiagnostics | None = None
    rate_cost: Tensor | None = None   # per-sample soft bandwidth surrogate


def forward_step(batch, models: ModelBundle, st: StepSettings,
                 rng: np.random.Generator | None,
                 y_v: Tensor | None = None, y_q: Tensor | None = None,
                 ) -> tuple[Tensor, MaskAndSideInfo | None, StepDiagnostics]:
    """Run one mini-batch through the stage-appropriate pipeline.

    s1 feeds video semantics straight into the fuser; later stages insert
    encode -> channel -> decode. One rng serves both the rate sampler and the
    channel noise, consumed in that order. y_v / y_q accept precomputed
    constants for stages whose producers are frozen.
    """
    o, f, ids, pad, labels = batch
    if y_v is None:
        y_v = models.encoder(T.constant(o), T.constant(f))
    if y_q is None:
        y_q = models.fuser.text(ids, pad)

    side: MaskAndSideInfo | None = None
    ediag: EncodeDiagnostics | None = None
    rate_cost: Tensor | None = None
    if st.stage == "s1":
        y_hat = y_v
    else:
        # s2 trains the codec at full rate unless this is a fixed-rate variant
        force = (st.fixed_k or models.cfg.d) if st.stage == "s2" else st.fixed_k
        s_v, side, ediag = C.encode(models.codec.enc, y_v, tau=st.tau, rng=rng,
                                    snr_db=st.snr_db, mode=st.mode, force_k=force)
        if ediag.sample is not None:
            rate_cost = A.rate_surrogate(ediag.sample.soft, models.codec.enc.rates)
        chan = ChannelConfig(st.channel_kind, float(st.snr_db), st.sigma_h)
        s_hat = apply_channel(s_v, side, chan, rng)
        y_hat = C.decode(models.codec.dec, s_hat, side)

    fused = F.fuse(y_hat, y_q, pad, models.fuser)
    scores, answers = F.predict(fused, y_q, pad, models.fuser)
    diag = StepDiagnostics(answers=answers, used_channel=st.stage != "s1",
                           encode_diag=ediag, rate_cost=rate_cost)
    return scores, side, diag


@dataclass
class LossParts:
    total: Tensor
    task: float
    rate: float    # mean soft bandwidth surrogate; 0 when the allocator is off


def stage_loss(stage: str, scores: Tensor, labels, mask_soft_rates: Tensor | None = None,
               lambda_rate: float = 0.0) -> LossParts:
    """s1/s2: cross-entropy. s3/s4: cross-entropy + lambda * mean soft rate."""
    if stage not in STAGES:
        raise ContractError(f"unknown stage {stage!r}")
    ce = F.task_loss(scores, labels)
    if stage in ("s3", "s4") and mask_soft_rates is not None:
        n = max(1, int(np.prod(mask_soft_rates.shape))) if mask_soft_rates.shape else 1
        rate_mean = T.scale(T.sum_axes(mask_soft_rates), 1.0 / n)
        total = T.add(ce, T.scale(rate_mean, lambda_rate))
        return LossParts(total, float(ce.data), float(rate_mean.data))
    return LossParts(ce, float(ce.data), 0.0)


def anneal_tau(stage: str, epoch: int, tau_init: float | None = None,
               tau_decay: float | None = None) -> float:
    """tau = init * decay**epoch; only the sampling stages have a schedule."""
    if stage not in TAU_SCHEDULE:
        raise ContractError(f"stage {stage} does not anneal a temperature")
    if epoch < 0:
        raise ContractError(f"epoch must be >= 0, got {epoch}")
    init, decay = TAU_SCHEDULE[stage]
    init = init if tau_init is None else tau_init
    decay = decay if tau_decay is None else tau_decay
    return float(init * decay ** epoch)


def _iter_batches(tasks: list[QATask], provider: SyntheticVideoProvider,
                  order, batch_size: int, with_video: bool = True):
    """Yield (task indices, (o, f, ids, pad, labels)); video features are
    skipped when a stage serves them from a frozen-encoder cache."""
    for start in range(0, len(order), batch_size):
        idx = np.asarray(order[start:start + batch_size])
        chunk = [tasks[i] for i in idx]
        o, f = batch_videos(provider, chunk) if with_video else (None, None)
        ids, pad, labels = batch_text(chunk)
        yield idx, (o, f, ids, pad, labels)


def _precompute_features(bundle: ModelBundle, tasks: list[QATask],
                         batch_size: int, want_y_v: bool, want_y_q: bool,
                         ) -> tuple[np.ndarray | None, np.ndarray | None]:
    """Evaluate frozen submodels once per stage. Values are bit-identical to
    an in-step recomputation, and the frozen parameters receive no gradient
    either way, so training trajectories do not depend on the cache."""
    cfg = bundle.cfg
    y_v = y_q = None
    for idx, batch in _iter_batches(tasks, bundle.provider, np.arange(len(tasks)),
                                    batch_size, with_video=want_y_v):
        o, f, ids, pad, _ = batch
        if want_y_v:
            out = bundle.encoder(T.constant(o), T.constant(f)).data
            if y_v is None:
                y_v = np.empty((len(tasks),) + out.shape[1:])
            y_v[idx] = out
        if want_y_q:
            out = bundle.fuser.text(ids, pad).data
            if y_q is None:
                y_q = np.empty((len(tasks),) + out.shape[1:])
            y_q[idx] = out
    return y_v, y_q


def _checkpoint_meta(cfg: TrainConfig, stage: str) -> dict:
    # out_dir is where a run happened, not what was trained; keeping it out
    # makes checkpoints byte-identical across output directories
    raw = asdict(cfg)
    raw.pop("out_dir")
    return {"stage": stage, "train_config": raw}


def models_from_checkpoint(path) -> tuple[ModelBundle, dict]:
    """Rebuild the exact model assembly a checkpoint was saved from."""
    ck = load_checkpoint(path)
    raw = ck.meta.get("train_config")
    if raw is None:
        raise ContractError(f"{path}: checkpoint lacks train_config metadata")
    cfg = TrainConfig(**raw)
    bundle = ModelBundle(cfg)
    load_into(bundle.named_params(), ck.params)
    return bundle, ck.meta


def _rewrite_metrics(path: Path, keep_stages: set[str]) -> list[dict]:
    """On resume, drop rows from stages that will be re-run."""
    rows: list[dict] = []
    if path.exists():
        with open(path, newline="") as fh:
            rows = [r for r in csv.DictReader(fh) if r["stage"] in keep_stages]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_COLUMNS)
        for r in rows:
            w.writerow([r[c] for c in METRICS_COLUMNS])
    return rows


def run_training(plan: list[StagePlan], cfg: TrainConfig, *,
                 preload=None, resume: bool = True, on_epoch=None,
                 ) -> tuple[ModelBundle, list[dict]]:
    """Execute the staged curriculum; checkpoints land after each stage.

    A rerun over the same output directory resumes at the first stage without
    a checkpoint. `preload` seeds the assembly from an earlier run (typically
    a finished stage-1 checkpoint); missing names stay at initialization.
    """
    if [sp.name for sp in plan] != sorted({sp.name for sp in plan}):
        raise ContractError("plan stages must be unique and in order s1..s4")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    bundle = ModelBundle(cfg)
    if preload is not None:
        load_into(bundle.named_params(), load_checkpoint(preload).params, strict=False)

    done = set()
    for sp in plan:
        if resume and (out / f"stage_{sp.name}.ckpt").exists():
            done.add(sp.name)
        else:
            break
    metrics_path = out / "metrics.csv"
    rows = _rewrite_metrics(metrics_path, done)

    tasks = build_tasks(cfg.seed, cfg.n_train, "train")
    global_step = sum(int(r["step"]) for r in rows[-1:]) if rows else 0
    for sp in plan:
        ckpt_path = out / f"stage_{sp.name}.ckpt"
        if sp.name in done:
            ck = load_checkpoint(ckpt_path)
            load_into(bundle.named_params(), ck.params)
            continue
        groups = TRAINABLE_GROUPS[sp.name]
        if cfg.fixed_k is not None:
            if sp.name == "s3":
                raise ContractError("fixed-rate training has no allocator stage s3")
            groups = groups - {"epsilon"}
        opt = Adam(bundle.group_params(groups), sp.lr)
        # frozen producers are evaluated once per stage; identical values,
        # no gradients lost (their parameters are excluded from the optimizer)
        yv_cache, yq_cache = _precompute_features(
            bundle, tasks, cfg.batch_size,
            want_y_v="zeta" not in groups, want_y_q="nu" not in groups)
        for epoch in range(sp.epochs):
            tau = (anneal_tau(sp.name, epoch, sp.tau_init, sp.tau_decay)
                   if sp.name in TAU_SCHEDULE else 1.0)
            order = derive_rng(cfg.seed, f"train.order.{sp.name}", epoch
                               ).permutation(len(tasks))
            snr_rng = derive_rng(cfg.seed, f"train.snr.{sp.name}", epoch)
            step_rng = derive_rng(cfg.seed, f"train.step.{sp.name}", epoch)
            agg = {"loss_total": 0.0, "loss_task": 0.0, "loss_rate_bits": 0.0,
                   "hits": 0, "n": 0, "snr": 0.0, "mean_k": 0.0, "bcr": 0.0,
                   "batches": 0}
            for idx, batch in _iter_batches(tasks, bundle.provider, order,
                                            cfg.batch_size,
                                            with_video=yv_cache is None):
                snr = (None if sp.name == "s1"
                       else float(snr_rng.uniform(cfg.snr_lo, cfg.snr_hi)))
                st = StepSettings(stage=sp.name, tau=tau, snr_db=snr,
                                  channel_kind=cfg.channel_kind, sigma_h=cfg.sigma_h,
                                  fixed_k=cfg.fixed_k)
                labels = batch[4]
                with Tape():
                    scores, side, diag = forward_step(
                        batch, bundle, st, step_rng,
                        y_v=None if yv_cache is None else T.constant(yv_cache[idx]),
                        y_q=None if yq_cache is None else T.constant(yq_cache[idx]))
                    parts = stage_loss(sp.name, scores, labels, diag.rate_cost,
                                       cfg.lambda_rate)
                    backward(parts.total)
                opt.step()
                zero_all_grads(bundle)
                global_step += 1
                bsz = len(labels)
                agg["loss_total"] += float(parts.total.data) * bsz
                agg["loss_task"] += parts.task * bsz
                agg["loss_rate_bits"] += parts.rate * bsz
                agg["hits"] += int((diag.answers == labels).sum())
                agg["n"] += bsz
                agg["batches"] += 1
                if side is not None:
                    agg["snr"] += snr
                    agg["mean_k"] += float(side.k.mean())
                    agg["bcr"] += compute_bcr(side).bcr
            nb = agg["batches"]
            row = {
                "stage": sp.name, "epoch": epoch, "step": global_step,
                "loss_total": agg["loss_total"] / agg["n"],
                "loss_task": agg["loss_task"] / agg["n"],
                "loss_rate_bits": agg["loss_rate_bits"] / agg["n"],
                "accuracy": agg["hits"] / agg["n"],
                "tau": tau if sp.name in TAU_SCHEDULE else 0.0,
                "snr_db": agg["snr"] / nb if sp.name != "s1" else 0.0,
                "mean_k": agg["mean_k"] / nb if sp.name != "s1" else 0.0,
                "bcr": agg["bcr"] / nb if sp.name != "s1" else 0.0,
            }
            rows.append(row)
            with open(metrics_path, "a", newline="") as fh:
                csv.writer(fh, lineterminator="\n").writerow(
                    [row[c] for c in METRICS_COLUMNS])
            if on_epoch is not None:
                on_epoch(row)
        save_checkpoint(ckpt_path, bundle.named_params(), seed=cfg.seed,
                        meta=_checkpoint_meta(cfg, sp.name))
    final = out / "model.ckpt"
    save_checkpoint(final, bundle.named_params(), seed=cfg.seed,
                    meta=_checkpoint_meta(cfg, plan[-1].name))
    return bundle, rows


def lossless_accuracy(bundle: ModelBundle, tasks: list[QATask],
                      batch_size: int = 32) -> float:
    """Channel-free answer accuracy (the stage-1 configuration)."""
    hits = 0
    order = np.arange(len(tasks))
    for _, batch in _iter_batches(tasks, bundle.provider, order, batch_size):
        st = StepSettings(stage="s1")
        _, _, diag = forward_step(batch, bundle, st, None)
        hits += int((diag.answers == batch[4]).sum())
    return hits / len(tasks)


def evaluate_sweep(bundle: ModelBundle, snrs, channel_kind: str, n_tasks: int,
                   seed: int, *, noise_draws: int = 5, sigma_h: float = 1.0,
                   batch_size: int = 32, tasks: list[QATask] | None = None,
                   ) -> list[dict]:
    """Monte Carlo accuracy/bandwidth table over an SNR grid.

    Rate selection is deterministic argmax; the randomness is channel noise
    only. Each (snr, draw) cell derives its own noise stream, so the table is
    independent of evaluation order. Semantics and allocations are computed
    once per SNR and reused across noise draws (they do not depend on the
    noise). half_width is the 95% normal-approximation binomial half-width.
    """
    cfg = bundle.cfg
    if tasks is None:
        tasks = build_tasks(cfg.seed, n_tasks, "test")
    if len(tasks) < n_tasks:
        raise InputError(f"asked for {n_tasks} tasks, have {len(tasks)}")
    tasks = tasks[:n_tasks]
    y_v, y_q = _precompute_features(bundle, tasks, batch_size, True, True)
    order = np.arange(len(tasks))
    chunks = [(idx, batch[3], batch[4])
              for idx, batch in _iter_batches(tasks, bundle.provider, order,
                                              batch_size, with_video=False)]
    out = []
    for snr in snrs:
        encoded = []
        for idx, pad, labels in chunks:
            s_v, side, _ = C.encode(bundle.codec.enc, T.constant(y_v[idx]),
                                    snr_db=float(snr), mode="argmax",
                                    force_k=cfg.fixed_k)
            encoded.append((idx, pad, labels, s_v, side))
        hits, total = 0, 0
        sum_k, bcr_sum, cells = 0.0, 0.0, 0
        for draw in range(noise_draws):
            # noise streams keyed by SNR value, not grid position, so the
            # table is independent of the order snrs are listed in
            rng = derive_rng(seed, f"eval.{channel_kind}.snr{float(snr)!r}", draw)
            chan = ChannelConfig(channel_kind, float(snr), sigma_h)
            for idx, pad, labels, s_v, side in encoded:
                s_hat = apply_channel(s_v, side, chan, rng)
                y_hat = C.decode(bundle.codec.dec, s_hat, side)
                yq_c = T.constant(y_q[idx])
                fused = F.fuse(y_hat, yq_c, pad, bundle.fuser)
                _, answers = F.predict(fused, yq_c, pad, bundle.fuser)
                hits += int((answers == labels).sum())
                total += len(labels)
                sum_k += float(side.k.sum(axis=-1).mean())
                bcr_sum += compute_bcr(side).bcr
                cells += 1
        acc = hits / total
        out.append({
            "snr_db": float(snr), "channel": channel_kind, "accuracy": acc,
            "half_width": 1.96 * float(np.sqrt(acc * (1.0 - acc) / total)),
            "mean_sum_k": sum_k / cells, "mean_bcr": bcr_sum / cells,
            "n": total,
        })
    return out


def allocation_profile(bundle: ModelBundle, snrs, n_tasks: int, *,
                       batch_size: int = 32, tasks: list[QATask] | None = None,
                       ) -> list[dict]:
    """Deterministic (argmax, noise-free) allocation statistics per SNR:
    per-token mean rate and the histogram over candidate rates."""
    cfg = bundle.cfg
    if cfg.fixed_k is not None:
        raise ContractError("fixed-rate models do not allocate; nothing to report")
    if tasks is None:
        tasks = build_tasks(cfg.seed, n_tasks, "test")
    tasks = tasks[:n_tasks]
    y_v, _ = _precompute_features(bundle, tasks, batch_size, True, False)
    rates = bundle.codec.enc.rates.rates
    out = []
    for snr in snrs:
        _, side, _ = C.encode(bundle.codec.enc, T.constant(y_v),
                              snr_db=float(snr), mode="argmax")
        k = side.k                                # (n_tasks, l_v)
        hist = {r: int((k == r).sum()) for r in rates}
        out.append({"snr_db": float(snr), "mean_k_per_token": k.mean(axis=0),
                    "mean_sum_k": float(k.sum(axis=1).mean()), "hist": hist})
    return out

"""Experiment configuration: a small INI dialect with strict validation.

Sections and keys are fixed by a schema; unknown names, bad types and
malformed lines are rejected with the offending line number. The resolved
configuration (defaults filled in) can be rendered back to text; parsing that
echo reproduces the same configuration, which is what makes reruns from an
output directory exact.

    [train]
    seed = 0
    stages = s1,s2,s3,s4
    ...
    [model]
    d = 32
    ...
    [stage.s3]
    epochs = 10
    lr = 0.001
    tau_init = 5.0
    tau_decay = 0.9
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .errors import ConfigError
from .training import (DEFAULT_EPOCHS, DEFAULT_LRS, STAGES, TAU_SCHEDULE,
                       StagePlan, TrainConfig)

_TRAIN_KEYS = ("seed", "out_dir", "stages", "preload", "n_train", "n_test",
               "batch_size", "snr_lo", "snr_hi", "channel_kind", "sigma_h",
               "snr_adaptive", "fixed_k", "lambda_rate")
_MODEL_KEYS = ("l_c", "l_f", "r", "m", "d", "jsc_layers", "heads")
_STAGE_KEYS = ("epochs", "lr", "tau_init", "tau_decay")
_CHANNEL_KINDS = ("awgn", "rayleigh_block")

_INT = ("seed", "n_train", "n_test", "batch_size") + _MODEL_KEYS + ("epochs",)
_FLOAT = ("snr_lo", "snr_hi", "sigma_h", "lambda_rate", "lr", "tau_init",
          "tau_decay")
_BOOL = ("snr_adaptive",)
_OPT_INT = ("fixed_k",)
_OPT_STR = ("preload",)


@dataclass
class ExperimentConfig:
    train: TrainConfig
    plan: list[StagePlan]
    preload: str | None = None


def _convert(section: str, key: str, raw: str, line: int):
    def bad(expected):
        raise ConfigError(f"line {line}: {section}.{key} expects {expected}, "
                          f"got {raw!r}")
    if key in _OPT_INT:
        if raw.lower() in ("", "none"):
            return None
    elif key in _OPT_STR:
        return None if raw.lower() in ("", "none") else raw
    elif key in _BOOL:
        if raw.lower() in ("true", "yes", "1"):
            return True
        if raw.lower() in ("false", "no", "0"):
            return False
        bad("a boolean")
    elif key in _FLOAT:
        try:
            return float(raw)
        except ValueError:
            bad("a real number")
    elif key not in _INT:
        return raw
    try:
        return int(raw)
    except ValueError:
        bad("an integer")


def parse_config_text(text: str) -> tuple[dict[str, dict[str, tuple[str, int]]],
                                          dict[str, int]]:
    """Raw sections -> {key: (value, line)}, plus section header lines."""
    sections: dict[str, dict[str, tuple[str, int]]] = {}
    header_lines: dict[str, int] = {}
    current: str | None = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith(("#", ";")):
            continue
        if stripped.startswith("["):
            if not stripped.endswith("]") or len(stripped) < 3:
                raise ConfigError(f"line {lineno}: malformed section header {stripped!r}")
            current = stripped[1:-1].strip()
            if current in sections:
                raise ConfigError(f"line {lineno}: duplicate section [{current}]")
            sections[current] = {}
            header_lines[current] = lineno
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {stripped!r}")
        if current is None:
            raise ConfigError(f"line {lineno}: key outside any [section]")
        key, _, value = stripped.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in sections[current]:
            raise ConfigError(f"line {lineno}: duplicate key {key!r} in [{current}]")
        sections[current][key] = (value.strip(), lineno)
    return sections, header_lines


def resolve_config(text: str, *, seed: int | None = None,
                   out_dir: str | None = None) -> ExperimentConfig:
    """Parse, validate against the schema, apply CLI overrides, build plans."""
    sections, header_lines = parse_config_text(text)
    for name, body in sections.items():
        if name in ("train", "model"):
            allowed = _TRAIN_KEYS if name == "train" else _MODEL_KEYS
        elif name.startswith("stage."):
            stage = name[len("stage."):]
            if stage not in STAGES:
                raise ConfigError(f"line {header_lines[name]}: "
                                  f"unknown stage section [{name}]")
            allowed = _STAGE_KEYS
        else:
            raise ConfigError(f"line {header_lines[name]}: "
                              f"unknown section [{name}]")
        for key, (_, line) in body.items():
            if key not in allowed:
                raise ConfigError(f"line {line}: unknown key {key!r} in [{name}]")

    values: dict[str, object] = {}
    stage_raw: dict[str, dict[str, object]] = {}
    for name, body in sections.items():
        for key, (raw, line) in body.items():
            converted = _convert(name, key, raw, line)
            if name.startswith("stage."):
                stage_raw.setdefault(name[len("stage."):], {})[key] = converted
            else:
                values[key] = converted

    stages_value = values.pop("stages", None)
    preload = values.pop("preload", None)
    if seed is not None:
        values["seed"] = seed
    if out_dir is not None:
        values["out_dir"] = out_dir

    cfg_fields = {f.name for f in fields(TrainConfig)}
    try:
        cfg = TrainConfig(**{k: v for k, v in values.items() if k in cfg_fields})
    except Exception as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc
    if cfg.channel_kind not in _CHANNEL_KINDS:
        raise ConfigError(f"train.channel_kind must be one of {_CHANNEL_KINDS}, "
                          f"got {cfg.channel_kind!r}")
    candidates = tuple(2 ** (i + 1) for i in range(max(cfg.d.bit_length() - 1, 0)))
    if cfg.fixed_k is not None and cfg.fixed_k not in candidates:
        raise ConfigError(f"train.fixed_k={cfg.fixed_k} is not a candidate rate "
                          f"for d={cfg.d} (choose from {candidates})")

    if stages_value is None:
        stage_names = [s for s in STAGES if not (cfg.fixed_k is not None and s == "s3")]
    else:
        stage_names = [s.strip() for s in str(stages_value).split(",") if s.strip()]
        for s in stage_names:
            if s not in STAGES:
                raise ConfigError(f"train.stages: unknown stage {s!r}")
        if stage_names != sorted(set(stage_names)):
            raise ConfigError("train.stages must be unique and ordered s1..s4")
        if cfg.fixed_k is not None and "s3" in stage_names:
            raise ConfigError("fixed_k is set; stage s3 (rate adaptation) "
                              "cannot run")

    plan = []
    for s in stage_names:
        body = stage_raw.get(s, {})
        extra = {k for k in ("tau_init", "tau_decay") if body.get(k) is not None}
        if extra and s not in TAU_SCHEDULE:
            raise ConfigError(f"stage.{s}: {sorted(extra)} only apply to s3/s4")
        # normalize schedule defaults so the rendered echo parses back to an
        # identical ExperimentConfig
        sched = TAU_SCHEDULE.get(s, (None, None))
        tau_init = body.get("tau_init")
        tau_decay = body.get("tau_decay")
        plan.append(StagePlan(
            name=s,
            epochs=body.get("epochs", DEFAULT_EPOCHS[s]),
            lr=body.get("lr", DEFAULT_LRS[s]),
            tau_init=sched[0] if tau_init is None else tau_init,
            tau_decay=sched[1] if tau_decay is None else tau_decay,
        ))
    for s in stage_raw:
        if s not in stage_names:
            raise ConfigError(f"[stage.{s}] configured but {s} is not in "
                              f"train.stages")
    return ExperimentConfig(train=cfg, plan=plan, preload=preload)


def load_config(path, *, seed: int | None = None, out_dir: str | None = None,
                ) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return resolve_config(text, seed=seed, out_dir=out_dir)


def default_config(*, seed: int | None = None, out_dir: str | None = None,
                   ) -> ExperimentConfig:
    return resolve_config("[train]\n", seed=seed, out_dir=out_dir)


def _fmt(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def render_config(ec: ExperimentConfig) -> str:
    """Canonical text with every effective value explicit; parsing the result
    reproduces `ec` exactly."""
    cfg = ec.train
    lines = ["[train]"]
    lines.append(f"seed = {_fmt(cfg.seed)}")
    lines.append(f"out_dir = {cfg.out_dir}")
    lines.append(f"stages = {','.join(sp.name for sp in ec.plan)}")
    lines.append(f"preload = {_fmt(ec.preload)}")
    for key in ("n_train", "n_test", "batch_size", "snr_lo", "snr_hi",
                "channel_kind", "sigma_h", "snr_adaptive", "fixed_k",
                "lambda_rate"):
        lines.append(f"{key} = {_fmt(getattr(cfg, key))}")
    lines.append("")
    lines.append("[model]")
    for key in _MODEL_KEYS:
        lines.append(f"{key} = {_fmt(getattr(cfg, key))}")
    for sp in ec.plan:
        lines.append("")
        lines.append(f"[stage.{sp.name}]")
        lines.append(f"epochs = {_fmt(sp.epochs)}")
        lines.append(f"lr = {_fmt(sp.lr)}")
        if sp.name in TAU_SCHEDULE:
            lines.append(f"tau_init = {_fmt(sp.tau_init)}")
            lines.append(f"tau_decay = {_fmt(sp.tau_decay)}")
    return "\n".join(lines) + "\n"

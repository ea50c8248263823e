"""Runtime invariant battery behind the selftest subcommand.

Each check re-derives its expectation on the spot (finite differences, closed
forms, Monte Carlo) rather than comparing against stored constants, so a
passing battery certifies the installed build on this machine. Sizes are
trimmed for a few-second run; the failure messages carry the measured values.
"""

from __future__ import annotations

import math
import tempfile
from pathlib import Path

import numpy as np

from . import allocator as A
from . import tensor as T
from .channel import (ChannelConfig, apply_channel, draw_channel_state,
                      flatten_r2c, c2r_unflatten, noise_sigma2, transmit)
from .checkpoint import load_checkpoint, save_checkpoint
from .config import default_config, render_config, resolve_config
from .errors import SemlinkError
from .rng import derive_rng


class CheckFailure(SemlinkError):
    pass


def _require(ok: bool, msg: str) -> None:
    if not ok:
        raise CheckFailure(msg)


def check_autodiff_fd(seed: int) -> str:
    """Central finite differences on a composite of the core ops."""
    rng = derive_rng(seed, "selftest.fd")
    x = T.Tensor(rng.normal(size=(3, 5)), requires_grad=True)
    w = T.Tensor(rng.normal(size=(5, 4)) * 0.5, requires_grad=True)
    tgt = T.constant(np.eye(4)[rng.integers(0, 4, size=3)])

    def loss_value() -> float:
        h = T.gelu(T.matmul(x, w))
        p = T.softmax_lastaxis(h)
        return float(-np.sum(tgt.data * np.log(np.clip(p.data, 1e-12, None))) / 3)

    with T.Tape():
        h = T.gelu(T.matmul(x, w))
        p = T.softmax_lastaxis(h)
        ce = T.scale(T.sum_axes(T.mul(tgt, T.log(T.clip_min(p, 1e-12))), (0, 1)),
                     -1.0 / 3)
        T.backward(ce)
    worst = 0.0
    for leaf in (x, w):
        flat = leaf.data.reshape(-1)
        for j in rng.choice(flat.size, size=8, replace=False):
            keep = flat[j]
            eps = 1e-6 * max(1.0, abs(keep))
            flat[j] = keep + eps
            up = loss_value()
            flat[j] = keep - eps
            dn = loss_value()
            flat[j] = keep
            fd = (up - dn) / (2 * eps)
            an = leaf.grad.reshape(-1)[j]
            rel = abs(fd - an) / max(abs(fd), abs(an), 1e-8)
            worst = max(worst, rel)
    _require(worst < 1e-4, f"worst relative gradient error {worst:.2e} >= 1e-4")
    return f"worst rel err {worst:.2e}"


def check_gumbel_frequencies(seed: int) -> str:
    """Hard-sample frequencies match the decision row (Gumbel-Max property)."""
    rng = derive_rng(seed, "selftest.gumbel")
    draws = 20000
    probs = rng.dirichlet(np.ones(5), size=4)          # 4 rows over 5 choices
    tiled = np.broadcast_to(probs, (draws, 4, 5))
    sample = A.gumbel_sample(T.constant(tiled), tau=1.0, rng=rng)
    freq = sample.hard.mean(axis=0)
    tv = float(np.max(0.5 * np.abs(freq - probs).sum(axis=-1)))
    _require(tv < 0.03, f"total variation {tv:.4f} >= 0.03 over {draws} draws")
    return f"max TV {tv:.4f} over {draws} draws"


def check_straight_through(seed: int) -> str:
    """Forward is the hard one-hot bit-exactly; gradient is the soft path's."""
    for i in range(10):
        rng_logits = derive_rng(seed, "selftest.st", i)
        raw = rng_logits.random(size=(6, 4)) + 0.05
        w = rng_logits.normal(size=(6, 4))

        def grad_of(select):
            leaf = T.Tensor(raw, requires_grad=True)
            with T.Tape():
                sample = A.gumbel_sample(T.softmax_lastaxis(leaf), 1.0,
                                         derive_rng(seed, "selftest.st.g", i))
                out = select(sample)
                T.backward(T.sum_axes(T.mul(out, T.constant(w)), (0, 1)))
            return sample.hard, leaf.grad

        hard_st, g_st = grad_of(A.straight_through_select)
        hard_soft, g_soft = grad_of(lambda s: s.soft)
        sample = A.gumbel_sample(T.softmax_lastaxis(T.constant(raw)), 1.0,
                                 derive_rng(seed, "selftest.st.g", i))
        st = A.straight_through_select(sample)
        _require(np.array_equal(st.data, sample.hard), "forward != hard one-hot")
        _require(np.array_equal(hard_st, hard_soft), "replayed draws diverged")
        _require(np.array_equal(g_st, g_soft), "ST gradient != soft gradient")
    return "10 instances bit-exact"


def check_channel_statistics(seed: int) -> str:
    """Noise power, Rayleigh gain magnitude and the unit power constraint."""
    rng = derive_rng(seed, "selftest.channel")
    n = 100_000
    unit = np.exp(1j * rng.uniform(0, 2 * math.pi, n))
    from .channel import SymbolStream
    stream = SymbolStream(symbols=unit, power=1.0, norm_factor=1.0)
    for snr in (0.0, 10.0):
        out, _ = transmit(stream, ChannelConfig("awgn", snr), rng)
        measured = float(np.mean(np.abs(out.symbols - unit) ** 2))
        want = noise_sigma2(snr)
        _require(abs(measured - want) / want < 0.02,
                 f"awgn noise power {measured:.4f} vs {want:.4f} at {snr} dB")
    h = draw_channel_state(ChannelConfig("rayleigh_block", 10.0, 1.0), rng, n)
    want = math.sqrt(math.pi / 2)
    got = float(np.mean(np.abs(h)))
    _require(abs(got - want) / want < 0.02, f"|h| mean {got:.4f} vs {want:.4f}")
    rates = A.CandidateRates(16)
    ladder = np.array(rates.rates)
    for i in range(100):
        r = derive_rng(seed, "selftest.power", i)
        k = ladder[r.integers(0, rates.q, size=(6,))]
        side = A.mask_from_b(k, rates.d)
        y = r.normal(scale=3.0, size=(6, 16)) * side.mask
        s = flatten_r2c(y, side)
        power = float(np.mean(np.abs(s.symbols) ** 2)) if s.symbols.size else 0.0
        _require(power <= 1.0 + 1e-9, f"power constraint violated: {power}")
    return "noise/gain within 2%, power <= 1"


def check_protocol_roundtrip(seed: int) -> str:
    """Noiseless modulate/demodulate is exact; side info is a bijection."""
    rng = derive_rng(seed, "selftest.proto")
    rates = A.CandidateRates(16)
    ladder = np.array(rates.rates)
    k = ladder[rng.integers(0, rates.q, size=(8,))]
    side = A.mask_from_b(k, rates.d)
    y = rng.normal(scale=2.0, size=(8, 16)) * side.mask
    stream = flatten_r2c(y, side)
    back = c2r_unflatten(stream, side, stream.norm_factor)
    err = float(np.max(np.abs(back - y)))
    _require(err < 1e-12, f"roundtrip error {err:.2e} >= 1e-12")
    for i in range(1000):
        kk = ladder[derive_rng(seed, "selftest.bij", i).integers(0, rates.q, size=(4,))]
        s2 = A.side_info_from_bytes(A.mask_from_b(kk, rates.d).side_info_bytes(),
                                    kk.shape, rates.d)
        _require(np.array_equal(s2.k, kk), "k -> bytes -> k changed side info")
        _require(np.array_equal(s2.mask.sum(axis=-1), s2.k), "mask row sums != k")
    _require(A.rate_loss_hard(side) == float(side.k.sum()),
             "hard rate loss != sum of k")
    return "roundtrip <= 1e-12, 1000 bijections, rate sum exact"


def check_rng_streams(seed: int) -> str:
    a1 = derive_rng(seed, "selftest.stream").random(8)
    a2 = derive_rng(seed, "selftest.stream").random(8)
    b1 = derive_rng(seed, "selftest.other").random(8)
    c1 = derive_rng(seed, "selftest.stream", 1).random(8)
    _require(np.array_equal(a1, a2), "same label replays differently")
    _require(not np.array_equal(a1, b1), "different labels collide")
    _require(not np.array_equal(a1, c1), "different indices collide")
    return "replayable, label- and index-separated"


def check_checkpoint_roundtrip(seed: int) -> str:
    rng = derive_rng(seed, "selftest.ckpt")
    params = {f"p{i}": T.Tensor(rng.normal(size=(3, i + 1)), requires_grad=True)
              for i in range(4)}
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "a.ckpt"
        save_checkpoint(path, params, seed=seed)
        bytes_a = path.read_bytes()
        save_checkpoint(Path(tmp) / "b.ckpt", dict(reversed(params.items())),
                        seed=seed)
        _require((Path(tmp) / "b.ckpt").read_bytes() == bytes_a,
                 "entry order leaked into checkpoint bytes")
        loaded = load_checkpoint(path)
        for name, p in params.items():
            _require(np.array_equal(loaded.params[name], p.data),
                     f"{name} not bit-identical after reload")
    return "byte-stable and bit-identical"


def check_config_echo(seed: int) -> str:
    ec = default_config(seed=seed, out_dir="out")
    _require(resolve_config(render_config(ec)) == ec,
             "rendered config does not parse back to itself")
    return "echo parses back identically"


ALL_CHECKS = (
    ("autodiff-finite-difference", check_autodiff_fd),
    ("gumbel-sample-frequencies", check_gumbel_frequencies),
    ("straight-through-exactness", check_straight_through),
    ("channel-statistics", check_channel_statistics),
    ("protocol-roundtrip", check_protocol_roundtrip),
    ("rng-stream-separation", check_rng_streams),
    ("checkpoint-roundtrip", check_checkpoint_roundtrip),
    ("config-echo-roundtrip", check_config_echo),
)


def run_all(seed: int = 0) -> list[tuple[str, bool, str]]:
    results = []
    for name, fn in ALL_CHECKS:
        try:
            results.append((name, True, fn(seed)))
        except Exception as exc:
            results.append((name, False, f"{type(exc).__name__}: {exc}"))
    return results

import sys, time
sys.path.insert(0, "/root/pkg/src")
import semlink.training as TR
from semlink.data import build_tasks

BASE = "/root/pkg/.calib"
S1 = f"{BASE}/base_s1/stage_s1.ckpt"
SNRS = [-5.0, 0.0, 5.0, 10.0]


def report(tag, bundle):
    rows = TR.evaluate_sweep(bundle, SNRS, "awgn", 500, seed=0)
    for r in rows:
        print(f"{tag} snr={r['snr_db']:+.0f} acc={r['accuracy']:.4f} "
              f"hw={r['half_width']:.4f} sum_k={r['mean_sum_k']:.1f} "
              f"bcr={r['mean_bcr']:.5f}", flush=True)


def run(tag, cfg, plan, preload):
    t0 = time.time()
    bundle, _ = TR.run_training(
        plan, cfg, preload=preload, resume=True,
        on_epoch=lambda r: print(f"{tag} {r['stage']} e{r['epoch']} "
                                 f"loss={r['loss_total']:.4f} acc={r['accuracy']:.3f} "
                                 f"mean_k={r['mean_k']:.2f}", flush=True))
    print(f"{tag} trained in {time.time()-t0:.0f}s", flush=True)
    report(tag, bundle)
    return bundle


# shared stage-2: codec at full rate, content assembly
cfg_s2 = TR.TrainConfig(seed=0, out_dir=f"{BASE}/shared_s2")
run("s2", cfg_s2, [TR.StagePlan("s2", 10, 1e-3)], S1)
S2 = f"{BASE}/shared_s2/stage_s2.ckpt"

post = [TR.StagePlan("s3", 10, 1e-3), TR.StagePlan("s4", 5, 3e-4)]
run("ca_lo", TR.TrainConfig(seed=0, out_dir=f"{BASE}/ca_lo", lambda_rate=2e-4),
    post, S2)
run("ca_hi", TR.TrainConfig(seed=0, out_dir=f"{BASE}/ca_hi", lambda_rate=1e-3),
    post, S2)

run("snr_ad", TR.TrainConfig(seed=0, out_dir=f"{BASE}/snr_ad",
                             lambda_rate=1e-3, snr_adaptive=True),
    [TR.StagePlan("s2", 10, 1e-3)] + post, S1)
print("CHAIN DONE", flush=True)

import sys, time
sys.path.insert(0, "/root/pkg/src")
import semlink.training as TR
from semlink.data import build_tasks

cfg = TR.TrainConfig(seed=0, out_dir="/root/pkg/.calib/base_s1")
plan = [TR.StagePlan("s1", 10, 1e-3)]
t0 = time.time()
bundle, rows = TR.run_training(plan, cfg, resume=True,
                               on_epoch=lambda r: print(f"s1 e{r['epoch']} loss={r['loss_total']:.4f} acc={r['accuracy']:.3f}", flush=True))
test = build_tasks(cfg.seed, cfg.n_test, "test")
acc = TR.lossless_accuracy(bundle, test)
print(f"DONE in {time.time()-t0:.0f}s; stage-1 test accuracy = {acc:.4f}", flush=True)

# throwaway calibration runner (not part of the package)
import sys, time, json
sys.path.insert(0, "src")
import numpy as np
from tccalign.data import SyntheticConfig, generate_synthetic, split_dataset
from tccalign.embedder import EmbedderConfig, init_params, embed_array
from tccalign.metrics import kendalls_tau, cycle_consistency_fraction
from tccalign.train import TrainConfig, train, evaluate


def run(loss="tcc_regression", steps=2000, seed=0, stride=15, augment=0.05,
        ds_seed=7, quick_eval=True):
    cfg = SyntheticConfig(num_sequences=50, min_len=60, max_len=120,
                          num_phases=4, noise_std=0.05, seed=ds_seed)
    seqs = generate_synthetic(cfg)
    ec = EmbedderConfig(input_dim=16, context_stride=stride)
    tc = TrainConfig(embedder=ec, loss=loss, steps=steps, seed=seed,
                     augment_std=augment)
    t0 = time.perf_counter()
    res = train(tc, seqs)
    dt = time.perf_counter() - t0
    rep = evaluate(res.params, seqs, split="val")
    return dict(loss=loss, seed=seed, stride=stride, steps=steps,
                train_s=round(dt, 1), tau=round(rep.tau, 4),
                cyc=round(rep.cycle_fraction, 4),
                acc=dict((str(k), round(v, 4)) for k, v in rep.classification_accuracy.items()),
                r2=round(rep.progression_r2, 4),
                first_loss=round(res.losses[0], 4), last_loss=round(res.losses[-1], 4))


def untrained(ds_seed=7, stride=15):
    cfg = SyntheticConfig(num_sequences=50, min_len=60, max_len=120,
                          num_phases=4, noise_std=0.05, seed=ds_seed)
    seqs = generate_synthetic(cfg)
    _, va = split_dataset(seqs)
    ec = EmbedderConfig(input_dim=16, context_stride=stride)
    taus = []
    for sd in (0, 1, 2):
        p = init_params(ec, sd)
        emb = {s.id: embed_array(p, s) for s in va}
        ts = [kendalls_tau(emb[a.id], emb[b.id])
              for a in va for b in va if a.id != b.id]
        taus.append(float(np.mean(ts)))
    return taus


if __name__ == "__main__":
    mode = sys.argv[1] if len(sys.argv) > 1 else "quick"
    if mode == "untrained":
        print("untrained taus:", untrained())
    elif mode == "quick":
        print("untrained taus:", untrained())
        print(json.dumps(run(steps=200)))
    elif mode == "full":
        print("untrained taus:", untrained())
        for sd in (0, 1, 2):
            print(json.dumps(run(steps=2000, seed=sd)))
    elif mode == "one":
        print(json.dumps(run(steps=int(sys.argv[2]), seed=int(sys.argv[3]),
                             loss=sys.argv[4] if len(sys.argv) > 4 else "tcc_regression")))

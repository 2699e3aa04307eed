import sys, time
import numpy as np
from kgpathrec.config import RunConfig, derive_seed
from kgpathrec.graph import Dataset
from kgpathrec.synthetic import SynthConfig, generate_synthetic
from kgpathrec import pipeline

def run(seed=0, epochs=80, lr=3e-3, batch=8, dim=16,
        guidance=0.5, consistency=0.6, entropy=0.01, verbose=True):
    t0 = time.time()
    synth = SynthConfig(users=24, categories=8, items_per_category=6,
                        brands=6, features=16, purchases_per_user=6,
                        mentions_per_user=3, features_per_item=2,
                        cross_links=16, planted_pairs=24, min_plant_hops=4,
                        max_hops=6, chain_chaff_features=6)
    res = generate_synthetic(synth, derive_seed(seed, "synth"))
    dataset = Dataset(res.kg, res.assignment, res.split)
    cfg = RunConfig(dim=dim, hidden=2*dim, gnn_layers=3, attention_layers=2,
                    trade_off=0.4, max_len=6, consistency_weight=consistency,
                    guidance_weight=guidance, entropy_weight=entropy,
                    epochs=epochs, lr=lr, batch_size=batch,
                    pretrain_epochs=50, seed=seed,
                    beam_widths=(10,5,5,3,2,2), top_k=10)
    table, hist = pipeline.pretrain(dataset, cfg)
    store = pipeline.init_store(dataset, cfg)
    def hr(store):
        _, report = pipeline.evaluate(dataset, table, store, cfg)
        return report
    r0 = hr(store)
    t1 = time.time()
    store, stats = pipeline.train(dataset, table, cfg, store=store)
    ttrain = time.time()-t1
    if verbose:
        for s in stats[::max(1,len(stats)//8)]:
            print(f"  ep{s.epoch:3d} hit={s.hit_rate:.2f} retE={s.mean_return_entity:.2f} retC={s.mean_return_category:.2f} loss={s.loss:.3f}")
    r1 = hr(store)
    print(f"seed={seed} untrainedHR={r0.hit_ratio:.3f} trainedHR={r1.hit_ratio:.3f} "
          f"ratio={r1.hit_ratio/max(r0.hit_ratio,1e-9):.1f} train={ttrain:.0f}s total={time.time()-t0:.0f}s")
    return r0.hit_ratio, r1.hit_ratio

if __name__ == "__main__":
    seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
    run(seed=seed)

import sys, time
import numpy as np
from kgpathrec.config import RunConfig, derive_seed
from kgpathrec.graph import Dataset
from kgpathrec.synthetic import SynthConfig, generate_synthetic
from kgpathrec import pipeline
from kgpathrec.metrics import evaluate_rankings

def run(seed=0, epochs=50, dim=32, verbose=True):
    t0 = time.time()
    synth = SynthConfig(users=24, categories=8, items_per_category=6,
                        brands=6, features=16, purchases_per_user=6,
                        mentions_per_user=3, features_per_item=2,
                        cross_links=16, planted_pairs=24, min_plant_hops=4,
                        max_hops=6, chain_chaff_features=6)
    res = generate_synthetic(synth, derive_seed(seed, "synth"))
    dataset = Dataset(res.kg, res.assignment, res.split)
    print("entities:", res.report["entities"], "ratio:", round(res.report["triples_per_entity"],1))
    cfg = RunConfig(dim=dim, hidden=2*dim, gnn_layers=3, attention_layers=2,
                    trade_off=0.4, max_len=6, consistency_weight=0.6,
                    guidance_weight=0.5, epochs=epochs, lr=1e-4,
                    batch_size=32, pretrain_epochs=50, seed=seed,
                    beam_widths=(10,5,5,3,2,2), top_k=10)
    table, hist = pipeline.pretrain(dataset, cfg)
    print(f"pretrain {time.time()-t0:.0f}s loss {hist[0]:.3f}->{hist[-1]:.3f}")
    store = pipeline.init_store(dataset, cfg)

    def hr(store):
        lists, report = pipeline.evaluate(dataset, table, store, cfg)
        return report
    r0 = hr(store)
    print(f"untrained: HR={r0.hit_ratio:.3f} NDCG={r0.ndcg:.3f} ({time.time()-t0:.0f}s)")
    t1 = time.time()
    store, stats = pipeline.train(dataset, table, cfg, store=store)
    n_users = len(dataset.split.users())
    print(f"train {time.time()-t1:.0f}s episodes={epochs*n_users}")
    if verbose:
        for s in stats[::max(1,len(stats)//10)]:
            print(f"  ep{s.epoch:3d} hit={s.hit_rate:.2f} retE={s.mean_return_entity:.2f} loss={s.loss:.3f}")
    r1 = hr(store)
    print(f"trained:   HR={r1.hit_ratio:.3f} NDCG={r1.ndcg:.3f}")
    print(f"TOTAL {time.time()-t0:.0f}s  ratio={r1.hit_ratio/max(r0.hit_ratio,1e-9):.1f}x")
    return r0.hit_ratio, r1.hit_ratio

if __name__ == "__main__":
    seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
    epochs = int(sys.argv[2]) if len(sys.argv) > 2 else 50
    run(seed=seed, epochs=epochs)

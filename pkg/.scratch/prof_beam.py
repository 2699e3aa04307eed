import cProfile, pstats, time
import numpy as np
from kgpathrec.config import RunConfig, derive_seed
from kgpathrec.graph import Dataset
from kgpathrec.synthetic import SynthConfig, generate_synthetic
from kgpathrec import pipeline
from kgpathrec.encoder import compute_item_vectors
from kgpathrec.inference import BeamSearcher

synth = SynthConfig(users=24, categories=8, items_per_category=6,
                    purchases_per_user=6, planted_pairs=24, min_plant_hops=4,
                    max_hops=6, chain_chaff_features=6)
res = generate_synthetic(synth, 1)
dataset = Dataset(res.kg, res.assignment, res.split)
cfg = RunConfig(dim=32, hidden=64, epochs=0, pretrain_epochs=2, seed=0,
                beam_widths=(10,5,5,3,2,2))
table, _ = pipeline.pretrain(dataset, cfg)
store = pipeline.init_store(dataset, cfg)
cache = compute_item_vectors(store, dataset.kg, table, dataset.assignment,
                             pipeline.encoder_config(cfg))
searcher = BeamSearcher(store, dataset, table, pipeline.policy_config(cfg), cache)
user = dataset.split.users()[0]
t0 = time.time()
paths = searcher.search(user, [10,5,5,3,2,2], 6)
print(f"one user: {time.time()-t0:.2f}s, {len(paths)} paths")
pr = cProfile.Profile(); pr.enable()
searcher.search(user, [10,5,5,3,2,2], 6)
pr.disable()
pstats.Stats(pr).sort_stats("cumulative").print_stats(14)

import sys, time
import numpy as np
from collections import deque
from kgpathrec.config import RunConfig, derive_seed
from kgpathrec.graph import Dataset
from kgpathrec.synthetic import SynthConfig, generate_synthetic
from kgpathrec import pipeline, policy as pol
from kgpathrec.encoder import compute_item_vectors
from kgpathrec.inference import BeamSearcher, rank_candidates
from kgpathrec.training import train_category_set

seed = 0
synth = SynthConfig(users=24, categories=8, items_per_category=6,
                    brands=6, features=16, purchases_per_user=6,
                    mentions_per_user=3, features_per_item=2,
                    cross_links=16, planted_pairs=24, min_plant_hops=4,
                    max_hops=6, chain_chaff_features=6)
res = generate_synthetic(synth, derive_seed(seed, "synth"))
dataset = Dataset(res.kg, res.assignment, res.split)
cfg = RunConfig(dim=16, hidden=32, gnn_layers=3, attention_layers=2,
                trade_off=0.4, max_len=6, epochs=80, lr=3e-3, batch_size=8,
                pretrain_epochs=50, seed=seed, beam_widths=(10,5,5,3,2,2))
table, _ = pipeline.pretrain(dataset, cfg)
store = pipeline.init_store(dataset, cfg)
store, stats = pipeline.train(dataset, table, cfg, store=store)
print("final hit rate:", stats[-1].hit_rate)

cache = compute_item_vectors(store, dataset.kg, table, dataset.assignment,
                             pipeline.encoder_config(cfg), seed=derive_seed(seed,"train"))
searcher = BeamSearcher(store, dataset, table, pipeline.policy_config(cfg), cache)

kg = dataset.kg
def bfs_path(src, dst):
    seen = {src: None}; q = deque([src])
    while q:
        n = q.popleft()
        if n == dst: break
        for r, nxt in kg.outgoing(n):
            if nxt not in seen:
                seen[nxt] = (n, r); q.append(nxt)
    path = []; n = dst
    while seen[n] is not None:
        p, r = seen[n]; path.append((r, n)); n = p
    return list(reversed(path))

for user, target in res.planted[:4]:
    paths = searcher.search(user, [10,5,5,3,2,2], 6)
    ranked = rank_candidates(kg, paths, user, dataset.split.train_items(user), 10)
    terminals = {}
    for p in paths:
        t = p.terminal
        if t is not None:
            terminals.setdefault(t, []).append(p.score)
    n_item_cand = sum(1 for t in terminals if kg.is_item(t) and t not in dataset.split.train_items(user))
    target_found = target in terminals
    tscore = max(terminals[target]) if target_found else None
    top = [(kg.entities[r.item].name, round(r.score,2)) for r in ranked.entries]
    print(f"user {kg.entities[user].name} target {kg.entities[target].name}: "
          f"paths={len(paths)} item-candidates={n_item_cand} target_found={target_found} "
          f"target_best={tscore if tscore is None else round(tscore,2)}")
    print(f"   top10: {top}")
    # chain probabilities under greedy category
    path = bfs_path(user, target)
    c0 = sorted(train_category_set(dataset, user))[0]
    hist = searcher.encoder.start(searcher.vectors.entity(user), searcher.vectors.category(c0),
                                  searcher.vectors.marker(), searcher.vectors.entity(user))
    cs = pol.CategoryState(user, c0, c0, 0)
    es = pol.EntityState(user, user, pol.START_RELATION, 0)
    probs_along = []
    for (r, e) in path:
        cat_actions = searcher.pruner.category_actions(cs)
        cl = pol.category_logits(searcher.params, searcher.vectors, cs, cat_actions, hist.y_category)
        ci = int(np.argmax(pol.softmax_values(cl)))
        ca = cat_actions[ci]
        ncs = pol.apply_category_action(cs, ca)
        ent_actions = searcher.pruner.entity_actions(es)
        el = pol.entity_logits(searcher.params, searcher.vectors, es, ent_actions,
                               hist.y_entity, searcher.vectors.category(ca.category))
        ep = pol.softmax_values(el)
        idx = next((i for i,a in enumerate(ent_actions) if (a.relation,a.entity)==(r,e)), None)
        rank_of = None if idx is None else int(np.argsort(-ep).tolist().index(idx))+1
        probs_along.append((kg.relations[r].name, kg.entities[e].name,
                            None if idx is None else round(float(ep[idx]),3),
                            rank_of, len(ent_actions)))
        if idx is None: break
        a = ent_actions[idx]
        nes = pol.apply_entity_action(es, a)
        y_c, cc = searcher.encoder.step_category(hist, searcher.vectors.category(ncs.category))
        y_e, ce = searcher.encoder.step_entity(hist, searcher.vectors.relation(a.relation),
                                               searcher.vectors.entity(nes.entity))
        hist = pol.HistoryState(y_c, y_e, cc, ce)
        cs, es = ncs, nes
    print(f"   chain: {probs_along}")

"""
Linking entities the model never saw
====================================

A tenth of the X entities in the planted graph only appear after the training
cutoff. The GNN has no per-entity parameters, so once those entities are
attached to the inference graph it can rank their r3 links right away. TransE
stores one vector per entity and refuses.
"""

import numpy as np

from vulnkg.baselines import TransEConfig, TransductiveOnlyError, transe_train
from vulnkg.evalrank import evaluate_split, random_baseline
from vulnkg.fusion import EmbeddingCache, LocalHashEmbedder, entity_text_matrix
from vulnkg.kgstore import split_inductive
from vulnkg.synthetic import PlantedConfig, planted_graph
from vulnkg.trainer import TrainConfig, train

g = planted_graph(1, PlantedConfig(new_fraction=0.1, descriptions=True))
split = split_inductive(g, "2023-01-01", "2023-10-18", valid_fraction=0.1, seed=0, test_fraction=0.3)
seen = split.part("train").degree > 0
print(split.counts())
print(f"test heads unseen during training: {np.mean(~seen[g.heads[split.test]]):.0%}")

###############################################################################
# Description embeddings from the local hashing embedder; switch to
# RemoteEmbedder for a real embedding service.

text = entity_text_matrix(g, LocalHashEmbedder(64), EmbeddingCache(dim=64))
cfg = TrainConfig(dim=16, relation_layers=3, entity_layers=3, negatives=16, batch_size=32, epochs=10,
                  learning_rate=5e-3, text_dim=64, fusion_hidden=32)
ckpt = train(split.part("train"), cfg, text, task_relations=split.task_relations)

###############################################################################
# Tail queries (new X, r3, ?) ranked against the inference graph.

rep = evaluate_split(ckpt.predictor(), split, text=text, both_directions=False).reports["all"]
print(f"MRR {rep.mrr:.3f}  Hits@1 {rep.hits[1]:.3f}  Hits@10 {rep.hits[10]:.3f}  "
      f"(random scores: MRR {random_baseline(split, both_directions=False):.3f})")

try:
    transe_train(split, TransEConfig())
except TransductiveOnlyError as exc:
    print(f"TransE: {exc}")

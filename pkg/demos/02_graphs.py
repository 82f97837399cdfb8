# The two kinds of graph: user-item propagation and item-item kNN.
# Run: python demos/02_graphs.py

import numpy as np

from hpmrec.graphs import ItemItemGraph, build_knn_graph, build_norm_adj, propagate

np.set_printoptions(precision=3, suppress=True)

# 2 users, 3 items. user 0 bought items 0 and 1, user 1 bought items 1 and 2
pairs = np.array([[0, 0], [0, 1], [1, 1], [1, 2]])
adj = build_norm_adj(pairs, num_users=2, num_items=3)
print("normalized adjacency (users first, then items):")
print(adj.toarray())

# one-hot embeddings make it easy to follow where mass goes
h0 = np.eye(5)
layers = propagate(adj, h0, num_layers=2)
print("after one hop, user 0 sees items:", layers[1][0, 2:])
print("after two hops, user 0 sees user 1 with weight", round(layers[2][0, 1], 3))

# item-item graphs come from content features: top-k cosine neighbours
visual = np.array([[1.0, 0.0], [0.9, 0.1], [0.0, 1.0], [0.1, 0.9]])
textual = np.array([[1.0, 1.0, 0.0], [0.0, 1.0, 1.0], [1.0, 1.0, 0.1], [0.0, 1.0, 1.0]])
knn_v = build_knn_graph(visual, k=1)
knn_t = build_knn_graph(textual, k=1)
print("visual neighbour of each item:", knn_v.indices)
print("textual neighbour of each item:", knn_t.indices)

# fusion weights are a softmax over modalities; the sparsity pattern is fixed
graph = ItemItemGraph({"visual": knn_v, "textual": knn_t})
for alpha in ([0.0, 0.0], [4.0, -4.0]):
    op = graph.operator(np.array(alpha), norm="sym")
    print(f"alpha={alpha} -> fused operator\n{op.toarray()}")

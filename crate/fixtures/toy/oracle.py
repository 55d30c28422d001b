"""Writes the toy dataset, its hand-built checkpoint and reference metrics.

The reference computation uses dense matrices and a full sort per user, so it
shares no code with the Rust implementation.
"""
import json
import struct

import numpy as np

M, N, O, D, LAYERS = 5, 12, 4, 2, 1

user_item = [(0, 0), (0, 1), (0, 3), (1, 4), (1, 5), (1, 6), (2, 7), (2, 8), (2, 9),
             (3, 10), (3, 11), (3, 0), (4, 2), (4, 5), (4, 8)]
bundle_item = [(b, 3 * b + k) for b in range(O) for k in range(3)]
ub_train = [(0, 0), (1, 1), (2, 2), (3, 3), (4, 0), (4, 1)]
ub_valid = [(0, 3), (2, 1)]
ub_test = [(1, 2), (3, 0), (4, 2), (0, 1)]

users_b = np.array([[0.5, -0.25], [0.25, 0.75], [-0.5, 0.5], [1.0, 0.0], [0.0, -0.5]])
bundles_b = np.array([[0.75, 0.25], [-0.25, 1.0], [0.5, 0.5], [-1.0, 0.25]])
items = np.array([[0.1 * (i + 1), 0.05 * (6 - i)] for i in range(N)])
users_i = np.array([[0.25, 0.25], [-0.75, 0.5], [0.5, -0.5], [0.0, 1.0], [0.5, 0.5]])


def write_pairs(name, pairs):
    with open(name, "w") as f:
        for a, b in pairs:
            f.write(f"{a}\t{b}\n")


def propagate(pairs, nl, nr, left, right):
    adj = np.zeros((nl + nr, nl + nr))
    for a, b in pairs:
        adj[a, nl + b] = adj[nl + b, a] = 1.0
    deg = adj.sum(axis=1)
    inv = np.where(deg > 0, 1.0 / np.sqrt(np.where(deg > 0, deg, 1.0)), 0.0)
    norm = inv[:, None] * adj * inv[None, :]
    layer = np.vstack([left, right])
    fused = layer.copy()
    for _ in range(LAYERS):
        layer = norm @ layer
        fused += layer
    return fused[:nl], fused[nl:]


def mean_op(lists, cols):
    out = np.zeros((len(lists), cols))
    for r, lst in enumerate(lists):
        for c in lst:
            out[r, c] = 1.0 / len(lst)
    return out


def by_left(pairs, n):
    out = [[] for _ in range(n)]
    for a, b in pairs:
        out[a].append(b)
    return out


def by_right(pairs, n):
    out = [[] for _ in range(n)]
    for a, b in pairs:
        out[b].append(a)
    return out


def metrics(scores, split, masked, ks):
    rel = by_left(split, M)
    out = {}
    users = [u for u in range(M) if rel[u]]
    for k in ks:
        rec, nd = [], []
        for u in users:
            cand = [b for b in range(O) if b not in masked[u]]
            cand.sort(key=lambda b: (-scores[u, b], b))
            top = cand[:k]
            hits = [i for i, b in enumerate(top) if b in rel[u]]
            rec.append(len(hits) / len(rel[u]))
            dcg = sum(1.0 / np.log2(i + 2) for i in hits)
            idcg = sum(1.0 / np.log2(i + 2) for i in range(min(k, len(rel[u]))))
            nd.append(dcg / idcg)
        out[f"recall@{k}"] = float(np.mean(rec))
        out[f"ndcg@{k}"] = float(np.mean(nd))
    return out


def main():
    with open("data_size.txt", "w") as f:
        f.write(f"{M} {O} {N}\n")
    write_pairs("user_item.txt", user_item)
    write_pairs("bundle_item.txt", bundle_item)
    write_pairs("user_bundle_train.txt", ub_train)
    write_pairs("user_bundle_valid.txt", ub_valid)
    write_pairs("user_bundle_test.txt", ub_test)

    with open("model.ckpt", "wb") as f:
        f.write(b"EBR1")
        f.write(struct.pack("<5Q", M, N, O, D, 0))
        for t in (users_b, bundles_b, items, users_i):
            f.write(struct.pack(f"<{t.size}d", *t.ravel()))

    ub_u, ub_b = propagate(ub_train, M, O, users_b, bundles_b)
    ui_u, ui_i = propagate(user_item, M, N, users_i, items)
    affiliation = mean_op(by_left(bundle_item, O), N) @ ui_i
    mediated = mean_op(by_right(ub_train, O), M) @ (mean_op(by_left(user_item, M), N) @ ui_i)
    scores = ub_u @ ub_b.T + ui_u @ (affiliation + mediated).T

    train = by_left(ub_train, M)
    valid = by_left(ub_valid, M)
    ks = [1, 2, 3]
    result = {
        "valid": metrics(scores, ub_valid, train, ks),
        "test": metrics(scores, ub_test, [train[u] + valid[u] for u in range(M)], ks),
        "test_unmasked_valid": metrics(scores, ub_test, train, ks),
        "scores": scores.tolist(),
    }
    print(json.dumps(result, indent=1))


if __name__ == "__main__":
    main()

"""Shared test oracles: brute-force graph-conv evaluation, manual
convolution, permutation utilities, and a central finite-difference
gradient checker. Everything here is intentionally loop-based and
independent of the library's vectorized paths."""

import numpy as np
import torch

from pastegan.scenegraph import SceneGraph


def relu(x):
    return np.maximum(x, 0.0)


def linear_manual(x, weight, bias):
    return weight @ x + bias


def conv2d_manual(x, weight, bias, pad=1):
    """Scalar-loop 2-D convolution (cross-correlation, stride 1)."""
    cin, h, w = x.shape
    cout, cin_w, kh, kw = weight.shape
    assert cin == cin_w
    xp = np.zeros((cin, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
    xp[:, pad:pad + h, pad:pad + w] = x
    out = np.zeros((cout, h, w), dtype=x.dtype)
    for co in range(cout):
        for i in range(h):
            for j in range(w):
                acc = bias[co]
                for ci in range(cin):
                    for di in range(kh):
                        for dj in range(kw):
                            acc += weight[co, ci, di, dj] * xp[ci, i + di, j + dj]
                out[co, i, j] = acc
    return out


def _layer_params(layer):
    return {name: p.detach().numpy().astype(np.float64)
            for name, p in layer.named_parameters()}


def vector_gcn_oracle(net, obj_vecs, pred_vecs, edges):
    """Candidate-set enumeration of the vector GCN with explicit loops."""
    z = [v.detach().numpy().astype(np.float64) for v in obj_vecs]
    zp = [v.detach().numpy().astype(np.float64) for v in pred_vecs]
    for layer in net.layers:
        p = _layer_params(layer)
        cands = {i: [] for i in range(len(z))}
        new_zp = []
        for e, (s, o) in enumerate(edges.tolist()):
            x = np.concatenate([z[s], zp[e], z[o]])
            t = relu(linear_manual(x, p["trunk.weight"], p["trunk.bias"]))
            cands[s].append(relu(linear_manual(t, p["head_s.weight"], p["head_s.bias"])))
            new_zp.append(relu(linear_manual(t, p["head_p.weight"], p["head_p.bias"])))
            cands[o].append(relu(linear_manual(t, p["head_o.weight"], p["head_o.bias"])))
        z = [np.mean(cands[i], axis=0) for i in range(len(z))]
        zp = new_zp
    return np.stack(z), np.stack(zp)


def feature_gcn_2d_oracle(net, node_maps, pred_maps, edges):
    """Candidate-set enumeration of the 2-D GCN with scalar convolutions."""
    v = [m.detach().numpy().astype(np.float64) for m in node_maps]
    vp = [m.detach().numpy().astype(np.float64) for m in pred_maps]
    for layer in net.layers:
        p = _layer_params(layer)
        pad = layer.trunk.padding[0]
        cands = {i: [] for i in range(len(v))}
        new_vp = []
        for e, (s, o) in enumerate(edges.tolist()):
            x = np.concatenate([v[s], vp[e], v[o]], axis=0)
            t = relu(conv2d_manual(x, p["trunk.weight"], p["trunk.bias"], pad))
            cands[s].append(relu(conv2d_manual(t, p["head_s.weight"], p["head_s.bias"], pad)))
            new_vp.append(relu(conv2d_manual(t, p["head_p.weight"], p["head_p.bias"], pad)))
            cands[o].append(relu(conv2d_manual(t, p["head_o.weight"], p["head_o.bias"], pad)))
        v = [np.mean(cands[i], axis=0) for i in range(len(v))]
        vp = new_vp
    return np.stack(v), np.stack(vp)


def permute_augmented_graph(g: SceneGraph, perm):
    """Relabel the non-image objects of an augmented graph.

    ``perm[i]`` is the new position of old object i; the image node stays
    last. Edge list order is preserved, only endpoint indices move.
    """
    assert g.augmented and len(perm) == g.num_objects - 1
    full = list(perm) + [g.num_objects - 1]
    objects = [0] * g.num_objects
    for old, new in enumerate(full):
        objects[new] = g.objects[old]
    edges = tuple((full[s], p, full[o]) for s, p, o in g.edges)
    return SceneGraph(tuple(objects), edges, augmented=True)


def fd_gradcheck(loss_fn, params, n_samples, rng, eps=1e-6, rel_tol=1e-4):
    """Compare autograd gradients with central finite differences on
    randomly sampled parameter entries. Returns the worst relative error
    among entries whose signal exceeds the finite-difference noise floor.

    The central difference itself is only accurate to about
    eps_machine * |loss| / eps (rounding of the two loss evaluations), so
    the check is |fd - an| <= atol + rel_tol * max(|fd|, |an|) with atol
    set to that bound. ``loss_fn`` must be a pure function of the current
    parameter values.
    """
    params = [p for p in params if p.requires_grad]
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    atol = 4.0 * np.finfo(np.float64).eps * max(1.0, abs(float(loss))) / eps
    flat = [(p, g) for p, g in zip(params, grads)]
    worst = 0.0
    for _ in range(n_samples):
        pi = int(rng.integers(len(flat)))
        p, g = flat[pi]
        idx = int(rng.integers(p.numel()))
        an = 0.0 if g is None else float(g.reshape(-1)[idx])
        with torch.no_grad():
            orig = float(p.reshape(-1)[idx])
            p.reshape(-1)[idx] = orig + eps
            lp = float(loss_fn())
            p.reshape(-1)[idx] = orig - eps
            lm = float(loss_fn())
            p.reshape(-1)[idx] = orig
        fd = (lp - lm) / (2 * eps)
        gap = abs(fd - an)
        assert gap <= atol + rel_tol * max(abs(fd), abs(an)), (
            f"gradient mismatch at param {pi} index {idx}: fd={fd:.6e} an={an:.6e} "
            f"gap={gap:.3e} atol={atol:.3e}")
        # relative error is only resolvable where the signal dominates noise
        if max(abs(fd), abs(an)) * rel_tol > atol:
            worst = max(worst, gap / max(abs(fd), abs(an)))
    return worst

"""Finite-difference gradient verification.

The oracle is central differences on the pure forward evaluation; it
never touches the tape, so analytic and numeric gradients come from
independent code paths.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import ops
from .tensor import Tape, Tensor, grad, paused, recording


def finite_difference(f: Callable[[], Tensor], param: Tensor,
                      h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar f() wrt every entry of param."""
    base = param.data.copy()
    out = np.zeros_like(base)
    flat = out.reshape(-1)

    def eval_at(i: int, delta: float) -> float:
        shifted = base.copy()
        shifted.reshape(-1)[i] += delta
        param.data = shifted
        with paused():
            return f().item()

    for i in range(base.size):
        flat[i] = (eval_at(i, +h) - eval_at(i, -h)) / (2.0 * h)
    param.data = base
    return out


def check_gradients(f: Callable[[], Tensor], params: Sequence[Tensor],
                    h: float = 1e-5, tol: float = 1e-4) -> float:
    """Compare analytic gradients of scalar ``f()`` against central
    differences for every tensor in ``params``.

    Error metric is |analytic - numeric| / max(1, |numeric|), elementwise.
    Returns the worst relative error; raises AssertionError above ``tol``.
    """
    tape = Tape()
    with recording(tape):
        loss = f()
    analytic = grad(loss, params, tape)
    worst = 0.0
    for p, a in zip(params, analytic):
        numeric = finite_difference(f, p, h=h)
        rel = np.abs(a.data - numeric) / np.maximum(1.0, np.abs(numeric))
        worst = max(worst, float(rel.max()) if rel.size else 0.0)
        assert rel.max() <= tol, (
            f"gradient mismatch: rel err {rel.max():.3e} > {tol} "
            f"(param shape {p.shape})")
    return worst


def standard_battery(seed: int = 0, tol: float = 1e-4) -> list[tuple[str, float]]:
    """Finite-difference checks covering every differentiable primitive
    plus three compositions shaped like the model's hot paths. Returns
    (name, worst relative error) per case."""
    rng = np.random.default_rng(seed)

    def t(*shape, scale=1.0):
        return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)

    results = []

    def run(name, f, params):
        results.append((name, check_gradients(f, params, tol=tol)))

    a, b = t(4, 3), t(4, 3)
    run("add", lambda: ops.sum_(ops.mul(ops.add(a, b), a)), [a, b])
    run("sub", lambda: ops.sum_(ops.mul(ops.sub(a, b), b)), [a, b])
    run("mul", lambda: ops.sum_(ops.mul(a, b)), [a, b])
    dnum, dden = t(4, 3), Tensor(rng.standard_normal((4, 3)) + 3.0,
                                 requires_grad=True)
    run("div", lambda: ops.sum_(ops.div(dnum, dden)), [dnum, dden])
    run("neg_scalar_mul", lambda: ops.sum_(ops.scalar_mul(ops.neg(a), 1.7)), [a])
    e = t(3, 3, scale=0.5)
    run("exp", lambda: ops.sum_(ops.exp(e)), [e])
    lg = Tensor(np.abs(rng.standard_normal((3, 3))) + 0.5, requires_grad=True)
    run("log", lambda: ops.sum_(ops.log(lg)), [lg])
    run("sqrt", lambda: ops.sum_(ops.sqrt(lg)), [lg])
    run("sigmoid", lambda: ops.sum_(ops.sigmoid(a)), [a])
    run("softplus", lambda: ops.sum_(ops.softplus(a)), [a])
    sl = Tensor(0.3, requires_grad=True)
    run("prelu", lambda: ops.sum_(ops.prelu(a, sl)), [a, sl])
    m1, m2 = t(3, 4), t(4, 2)
    run("matmul", lambda: ops.sum_(ops.matmul(m1, m2)), [m1, m2])
    run("transpose_reshape",
        lambda: ops.sum_(ops.mul(ops.reshape(ops.transpose(m1), (3, 4)), m1)),
        [m1])
    br = t(1, 4)
    run("broadcast_to",
        lambda: ops.sum_(ops.mul(ops.broadcast_to(br, (5, 4)),
                                 ops.broadcast_to(br, (5, 4)))), [br])
    c1, c2 = t(3, 2), t(3, 5)
    run("concat", lambda: ops.sum_(ops.exp(
        ops.scalar_mul(ops.concat([c1, c2], axis=1), 0.3))), [c1, c2])
    nr = t(2, 6)
    run("narrow", lambda: ops.sum_(ops.mul(ops.narrow(nr, 1, 1, 3),
                                           ops.narrow(nr, 1, 0, 3))), [nr])
    tab = t(6, 3)
    idx = np.array([0, 3, 3, 5])
    run("take_rows", lambda: ops.sum_(ops.exp(
        ops.scalar_mul(ops.take_rows(tab, idx), 0.5))), [tab])
    run("sum_axes", lambda: ops.sum_(ops.mul(
        ops.sum_(tab, axis=1, keepdims=True), tab)), [tab])
    run("mean", lambda: ops.mean(ops.mul(tab, tab)), [tab])
    mx = Tensor(rng.standard_normal((4, 5)), requires_grad=True)
    run("max_rows", lambda: ops.sum_(ops.max_(mx, axis=1)), [mx])
    run("l2_normalize", lambda: ops.sum_(ops.mul(
        ops.l2_normalize(tab), ops.l2_normalize(tab))), [tab])
    ca, cb = t(4, 3), t(4, 3)
    run("cosine_rows", lambda: ops.sum_(ops.cosine_rows(ca, cb)), [ca, cb])
    run("logsumexp_rows", lambda: ops.sum_(ops.logsumexp_rows(mx)), [mx])

    # composition shaped like one propagation round + fusion
    from .sparse import SparseMatrix, spmm
    import scipy.sparse as sp
    adj = sp.random(5, 7, density=0.4, random_state=7, format="csr")
    adj.data[:] = np.abs(adj.data) + 0.1
    smat = SparseMatrix(adj)
    u0, i0, w = t(5, 3), t(7, 3), t(3, 3)
    run("spmm_fusion", lambda: ops.sum_(ops.prelu(
        ops.matmul(ops.add(spmm(smat, i0), u0), w), sl)), [u0, i0, w, sl])

    # composition shaped like the contrastive head
    va, vb = t(6, 3), t(6, 3)
    anchors = np.array([0, 2, 4])
    negs = np.array([1, 3, 5])
    def cl():
        aa = ops.l2_normalize(ops.take_rows(va, anchors))
        pp = ops.l2_normalize(ops.take_rows(vb, anchors))
        nn = ops.l2_normalize(ops.take_rows(vb, negs))
        pos = ops.sum_(ops.mul(aa, pp), axis=1, keepdims=True)
        logits = ops.scalar_mul(ops.concat([pos, ops.matmul(
            aa, ops.transpose(nn))], axis=1), 1.0 / 0.1)
        return ops.sum_(ops.sub(ops.logsumexp_rows(logits),
                                ops.reshape(ops.scalar_mul(pos, 10.0), (3,))))
    run("contrastive_head", cl, [va, vb])

    # differentiate a meta loss through one SGD lookahead step; this one
    # needs its own tape (the inner grad call), so it is checked by hand
    th = t(4)
    wts = Tensor(np.abs(rng.standard_normal(3)) + 0.5, requires_grad=True)
    feats = Tensor(rng.standard_normal((3, 4)))
    probe = Tensor(rng.standard_normal(4))

    def lookahead():
        tape = Tape()
        with recording(tape):
            preds = ops.matmul(feats, ops.reshape(th, (4, 1)))
            per = ops.reshape(ops.mul(preds, preds), (3,))
            inner = ops.sum_(ops.mul(wts, per))
            (g,) = grad(inner, [th], tape, create_graph=True)
            shifted = ops.sub(th, ops.scalar_mul(g, 0.05))
            s = ops.sum_(ops.mul(shifted, probe))
            outer = ops.mul(s, s)
        return outer, tape

    outer, tape = lookahead()
    (aw,) = grad(outer, [wts], tape)
    numeric = finite_difference(lambda: lookahead()[0], wts)
    rel = np.abs(aw.data - numeric) / np.maximum(1.0, np.abs(numeric))
    worst = float(rel.max())
    assert worst <= tol, f"lookahead gradient rel err {worst:.3e} > {tol}"
    results.append(("lookahead_through_update", worst))
    return results

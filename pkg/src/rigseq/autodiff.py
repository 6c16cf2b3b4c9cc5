"""Reverse-mode automatic differentiation on an explicit tape.

A tape is a flat, append-only list of nodes. Each node stores its
forward values, the ids of its parents, and a closure that turns the
gradient arriving at the node into gradients for those parents. Hard
selection masks enter the graph as constants, so no gradient flows
through a discrete choice; soft weighting and the soft state update are
ordinary differentiable nodes.

All node values are float64 numpy arrays with exactly two axes, batch
rows first; scalars are shaped (1, 1). Node values are never mutated
after creation. Leaves reference caller-owned arrays, so in-place
optimizer updates are visible to tapes built afterwards.
"""

import numpy as np

from . import kernels


class ShapeError(ValueError):
    """An operation received arrays with incompatible shapes."""


class TapeError(RuntimeError):
    """The tape was used in an invalid order (e.g. backward twice)."""


class _Node:
    __slots__ = ("values", "parents", "vjp")

    def __init__(self, values, parents, vjp):
        self.values = values
        self.parents = parents
        self.vjp = vjp


class Tensor:
    """Handle to one node of a tape."""

    __slots__ = ("tape", "id")

    def __init__(self, tape, node_id):
        self.tape = tape
        self.id = node_id

    @property
    def values(self):
        return self.tape.nodes[self.id].values

    @property
    def shape(self):
        return self.tape.nodes[self.id].values.shape

    @property
    def grad(self):
        """Gradient after backward. Only leaf gradients are retained;
        interior nodes (and leaves the loss never touched) read as zeros."""
        if self.tape.gradients is None:
            raise TapeError("gradients requested before backward")
        g = self.tape.gradients.get(self.id)
        if g is None:
            return np.zeros_like(self.values)
        return g

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __repr__(self):
        return f"Tensor(id={self.id}, shape={self.shape})"


class Tape:
    """Append-only record of forward operations, walked once backward."""

    def __init__(self):
        self.nodes = []
        self.gradients = None

    def leaf(self, values):
        """Wrap a caller-owned array as a differentiable leaf (no copy)."""
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim != 2:
            raise ShapeError(f"leaf: expected a 2-D array, got shape {arr.shape}")
        return self._record(arr, (), None)

    def _record(self, values, parents, vjp):
        self.nodes.append(_Node(values, parents, vjp))
        return Tensor(self, len(self.nodes) - 1)

    def backward(self, loss):
        """Accumulate gradients of a scalar loss into self.gradients."""
        if self.gradients is not None:
            raise TapeError("backward already called on this tape")
        if not isinstance(loss, Tensor) or loss.tape is not self:
            raise TapeError("loss does not belong to this tape")
        if loss.values.size != 1:
            raise ShapeError(
                f"backward: loss must be scalar, got shape {loss.values.shape}"
            )
        grads = {loss.id: np.ones_like(loss.values)}
        for nid in range(loss.id, -1, -1):
            dy = grads.get(nid)
            node = self.nodes[nid]
            if dy is None or node.vjp is None:
                continue
            for pid, dp in zip(node.parents, node.vjp(dy)):
                held = grads.get(pid)
                grads[pid] = dp if held is None else held + dp
            # interior gradients are fully distributed; drop them so the
            # live set stays proportional to the graph frontier
            del grads[nid]
        self.gradients = grads

    def reset(self):
        self.nodes = []
        self.gradients = None


def _values(x):
    if isinstance(x, Tensor):
        return x.values
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    return arr


def _require_tensor(op, x):
    if not isinstance(x, Tensor):
        raise TypeError(f"{op}: expected a Tensor, got {type(x).__name__}")
    return x


def _same_tape(op, a, b):
    if a.tape is not b.tape:
        raise TapeError(f"{op}: operands recorded on different tapes")


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to the parent shape (2-D only)."""
    for ax in (0, 1):
        if shape[ax] == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def _broadcastable(op, sa, sb):
    for ax in (0, 1):
        if sa[ax] != sb[ax] and sa[ax] != 1 and sb[ax] != 1:
            raise ShapeError(f"{op}: incompatible shapes {sa} and {sb}")


def add(a, b):
    _require_tensor("add", a)
    bv = _values(b)
    if bv.ndim != 2:
        raise ShapeError(f"add: expected a 2-D operand, got shape {bv.shape}")
    _broadcastable("add", a.shape, bv.shape)
    out = a.values + bv
    if isinstance(b, Tensor):
        _same_tape("add", a, b)
        ash, bsh = a.shape, b.shape

        def vjp(dy):
            return _unbroadcast(dy, ash), _unbroadcast(dy, bsh)

        return a.tape._record(out, (a.id, b.id), vjp)

    ash = a.shape

    def vjp(dy):
        return (_unbroadcast(dy, ash),)

    return a.tape._record(out, (a.id,), vjp)


def sub(a, b):
    if isinstance(b, Tensor):
        return add(a, neg(b))
    return add(a, -_values(b))


def neg(x):
    _require_tensor("neg", x)

    def vjp(dy):
        return (-dy,)

    return x.tape._record(-x.values, (x.id,), vjp)


def mul(a, b):
    _require_tensor("mul", a)
    bv = _values(b)
    if bv.ndim != 2:
        raise ShapeError(f"mul: expected a 2-D operand, got shape {bv.shape}")
    _broadcastable("mul", a.shape, bv.shape)
    out = a.values * bv
    if isinstance(b, Tensor):
        _same_tape("mul", a, b)
        av, ash, bsh = a.values, a.shape, b.shape

        def vjp(dy):
            return _unbroadcast(dy * bv, ash), _unbroadcast(dy * av, bsh)

        return a.tape._record(out, (a.id, b.id), vjp)

    ash = a.shape

    def vjp(dy):
        return (_unbroadcast(dy * bv, ash),)

    return a.tape._record(out, (a.id,), vjp)


def linear(x, w, b=None):
    """x @ w.T (+ b). w is (out, in); b, if given, is (1, out)."""
    _require_tensor("linear", x)
    _require_tensor("linear", w)
    _same_tape("linear", x, w)
    xv, wv = x.values, w.values
    if xv.shape[1] != wv.shape[1]:
        raise ShapeError(f"linear: incompatible shapes {xv.shape} and {wv.shape}")
    out = xv @ wv.T
    if b is None:

        def vjp(dy):
            return dy @ wv, dy.T @ xv

        return x.tape._record(out, (x.id, w.id), vjp)

    _require_tensor("linear", b)
    _same_tape("linear", x, b)
    if b.shape != (1, wv.shape[0]):
        raise ShapeError(f"linear: bias shape {b.shape} does not match out dim {wv.shape[0]}")
    out = out + b.values

    def vjp(dy):
        return dy @ wv, dy.T @ xv, dy.sum(axis=0, keepdims=True)

    return x.tape._record(out, (x.id, w.id, b.id), vjp)


def sigmoid(x):
    _require_tensor("sigmoid", x)
    y = kernels.sigmoid(x.values)

    def vjp(dy):
        return (kernels.sigmoid_grad(y, dy),)

    return x.tape._record(y, (x.id,), vjp)


def tanh(x):
    _require_tensor("tanh", x)
    y = kernels.tanh(x.values)

    def vjp(dy):
        return (kernels.tanh_grad(y, dy),)

    return x.tape._record(y, (x.id,), vjp)


def softmax(x):
    """Row-wise softmax."""
    _require_tensor("softmax", x)
    y = kernels.softmax_rows(x.values)

    def vjp(dy):
        return (kernels.softmax_rows_grad(y, dy),)

    return x.tape._record(y, (x.id,), vjp)


def concat_cols(tensors):
    """Concatenate tensors along columns."""
    if not tensors:
        raise ValueError("concat_cols: need at least one tensor")
    first = _require_tensor("concat_cols", tensors[0])
    rows = first.shape[0]
    for t in tensors[1:]:
        _require_tensor("concat_cols", t)
        _same_tape("concat_cols", first, t)
        if t.shape[0] != rows:
            raise ShapeError(
                f"concat_cols: incompatible shapes {first.shape} and {t.shape}"
            )
    out = np.concatenate([t.values for t in tensors], axis=1)
    widths = [t.shape[1] for t in tensors]
    offsets = np.cumsum([0] + widths)

    def vjp(dy):
        return tuple(
            dy[:, offsets[i] : offsets[i + 1]] for i in range(len(widths))
        )

    return first.tape._record(out, tuple(t.id for t in tensors), vjp)


def slice_cols(x, start, stop):
    _require_tensor("slice_cols", x)
    cols = x.shape[1]
    if not (0 <= start < stop <= cols):
        raise ShapeError(f"slice_cols: [{start}:{stop}] out of range for {x.shape}")
    out = np.ascontiguousarray(x.values[:, start:stop])
    xsh = x.shape

    def vjp(dy):
        full = np.zeros(xsh)
        full[:, start:stop] = dy
        return (full,)

    return x.tape._record(out, (x.id,), vjp)


def reshape(x, rows, cols):
    _require_tensor("reshape", x)
    if rows * cols != x.values.size:
        raise ShapeError(f"reshape: cannot view {x.shape} as ({rows}, {cols})")
    out = x.values.reshape(rows, cols)
    xsh = x.shape

    def vjp(dy):
        return (dy.reshape(xsh),)

    return x.tape._record(out, (x.id,), vjp)


def repeat_cols(x, repeats):
    """Repeat each column `repeats` times: (B, n) -> (B, n*repeats)."""
    _require_tensor("repeat_cols", x)
    if repeats < 1:
        raise ValueError(f"repeat_cols: repeats must be positive, got {repeats}")
    out = np.repeat(x.values, repeats, axis=1)
    b, n = x.shape

    def vjp(dy):
        return (dy.reshape(b, n, repeats).sum(axis=2),)

    return x.tape._record(out, (x.id,), vjp)


def rowdot(a, b):
    """Per-row inner product: two (B, d) tensors -> (B, 1)."""
    _require_tensor("rowdot", a)
    _require_tensor("rowdot", b)
    _same_tape("rowdot", a, b)
    if a.shape != b.shape:
        raise ShapeError(f"rowdot: incompatible shapes {a.shape} and {b.shape}")
    av, bv = a.values, b.values
    out = np.einsum("ij,ij->i", av, bv)[:, None]

    def vjp(dy):
        return dy * bv, dy * av

    return a.tape._record(out, (a.id, b.id), vjp)


def concat_rows(tensors):
    """Concatenate equal-width tensors along rows."""
    if not tensors:
        raise ValueError("concat_rows: need at least one tensor")
    first = _require_tensor("concat_rows", tensors[0])
    cols = first.shape[1]
    for t in tensors[1:]:
        _require_tensor("concat_rows", t)
        _same_tape("concat_rows", first, t)
        if t.shape[1] != cols:
            raise ShapeError(
                f"concat_rows: incompatible shapes {first.shape} and {t.shape}"
            )
    out = np.concatenate([t.values for t in tensors], axis=0)
    offsets = np.cumsum([0] + [t.shape[0] for t in tensors])

    def vjp(dy):
        return tuple(
            dy[offsets[i] : offsets[i + 1], :] for i in range(len(tensors))
        )

    return first.tape._record(out, tuple(t.id for t in tensors), vjp)


def slice_rows(x, start, stop):
    _require_tensor("slice_rows", x)
    rows = x.shape[0]
    if not (0 <= start < stop <= rows):
        raise ShapeError(f"slice_rows: [{start}:{stop}] out of range for {x.shape}")
    out = np.ascontiguousarray(x.values[start:stop, :])
    xsh = x.shape

    def vjp(dy):
        full = np.zeros(xsh)
        full[start:stop, :] = dy
        return (full,)

    return x.tape._record(out, (x.id,), vjp)


def tile_rows(x, copies):
    """Stack `copies` repeats of x along rows: (B, W) -> (copies*B, W)."""
    _require_tensor("tile_rows", x)
    if copies < 1:
        raise ValueError(f"tile_rows: copies must be positive, got {copies}")
    out = np.tile(x.values, (copies, 1))
    b, w = x.shape

    def vjp(dy):
        return (dy.reshape(copies, b, w).sum(axis=0),)

    return x.tape._record(out, (x.id,), vjp)


def rows_to_cols(x, groups):
    """Turn row blocks into column blocks: (G*B, W) -> (B, G*W).

    Row block g of the input becomes column block g of the output, so a
    per-group "tall" layout becomes one wide row per underlying sample.
    """
    _require_tensor("rows_to_cols", x)
    rows, w = x.shape
    if groups < 1 or rows % groups:
        raise ShapeError(f"rows_to_cols: {rows} rows do not split into {groups}")
    b = rows // groups
    out = x.values.reshape(groups, b, w).transpose(1, 0, 2).reshape(b, groups * w)

    def vjp(dy):
        return (dy.reshape(b, groups, w).transpose(1, 0, 2).reshape(rows, w),)

    return x.tape._record(out, (x.id,), vjp)


def grouped_linear(x, ws, bs=None, w_stack=None, b_stack=None):
    """Per-row-block linear map: one node standing in for len(ws) linears.

    x is (G*B, in) in G row blocks; block g is multiplied by ws[g].T
    (each (out, in)) plus optionally bs[g] (each (1, out)). Passing the
    same weight tensor for every group is allowed (its gradient
    contributions accumulate), which is how shared parameters ride the
    grouped path.

    w_stack/b_stack, if given, must be the numpy stacks of the current
    ws/bs values ((G, out, in) and (G, 1, out)); callers that run many
    steps against the same bound parameters pass them to avoid
    re-stacking per step.
    """
    _require_tensor("grouped_linear", x)
    if not ws:
        raise ValueError("grouped_linear: need at least one weight block")
    for w in ws:
        _require_tensor("grouped_linear", w)
        _same_tape("grouped_linear", x, w)
    groups = len(ws)
    wout, win = ws[0].shape
    for w in ws[1:]:
        if w.shape != (wout, win):
            raise ShapeError(
                f"grouped_linear: weight blocks differ: {ws[0].shape} vs {w.shape}"
            )
    rows, cols = x.shape
    if cols != win or rows % groups:
        raise ShapeError(
            f"grouped_linear: input {x.shape} does not fit {groups} blocks "
            f"of weights {(wout, win)}"
        )
    b = rows // groups
    if w_stack is None:
        w_stack = np.stack([w.values for w in ws])
    x3 = x.values.reshape(groups, b, win)
    out3 = np.matmul(x3, w_stack.transpose(0, 2, 1))
    parents = (x.id,) + tuple(w.id for w in ws)
    if bs is None:

        def vjp(dy):
            dy3 = dy.reshape(groups, b, wout)
            dx = np.matmul(dy3, w_stack).reshape(rows, win)
            dws = np.matmul(dy3.transpose(0, 2, 1), x3)
            return (dx, *dws)

        return x.tape._record(out3.reshape(rows, wout), parents, vjp)

    if len(bs) != groups:
        raise ValueError(
            f"grouped_linear: {groups} weight blocks but {len(bs)} bias blocks"
        )
    for bias in bs:
        _require_tensor("grouped_linear", bias)
        _same_tape("grouped_linear", x, bias)
        if bias.shape != (1, wout):
            raise ShapeError(
                f"grouped_linear: bias shape {bias.shape} does not match "
                f"out dim {wout}"
            )
    if b_stack is None:
        b_stack = np.stack([bias.values for bias in bs])
    out3 = out3 + b_stack
    parents = parents + tuple(bias.id for bias in bs)

    def vjp(dy):
        dy3 = dy.reshape(groups, b, wout)
        dx = np.matmul(dy3, w_stack).reshape(rows, win)
        dws = np.matmul(dy3.transpose(0, 2, 1), x3)
        dbs = dy3.sum(axis=1, keepdims=True)
        return (dx, *dws, *(dbs[g] for g in range(groups)))

    return x.tape._record(out3.reshape(rows, wout), parents, vjp)


def grouped_take_cols(x, idx):
    """Per-row-block column gather: block g keeps columns idx[g].

    idx is a (G, W_out) integer array, strictly increasing along each
    row (so the scatter in the backward pass never collides). idx is a
    constant and carries no gradient.
    """
    _require_tensor("grouped_take_cols", x)
    idx = np.asarray(idx)
    if idx.ndim != 2:
        raise ShapeError(f"grouped_take_cols: idx must be 2-D, got {idx.shape}")
    groups, wq = idx.shape
    rows, w = x.shape
    if groups < 1 or rows % groups:
        raise ShapeError(
            f"grouped_take_cols: {rows} rows do not split into {groups}"
        )
    if wq < 1 or idx.min() < 0 or idx.max() >= w:
        raise ShapeError(
            f"grouped_take_cols: idx out of range for width {w}"
        )
    if not np.all(np.diff(idx, axis=1) > 0):
        raise ValueError(
            "grouped_take_cols: idx rows must be strictly increasing"
        )
    b = rows // groups
    x3 = x.values.reshape(groups, b, w)
    out = np.empty((groups, b, wq))
    for g in range(groups):
        np.take(x3[g], idx[g], axis=1, out=out[g])
    out = out.reshape(rows, wq)

    def vjp(dy):
        dy3 = dy.reshape(groups, b, wq)
        full = np.zeros((groups, b, w))
        for g in range(groups):
            full[g][:, idx[g]] = dy3[g]
        return (full.reshape(rows, w),)

    return x.tape._record(out, (x.id,), vjp)


def where_mask(mask, a, b):
    """Select a where mask is true, b elsewhere; mask is a constant.

    Selected entries pass through bit-for-bit, and the gradient to the
    unselected operand is exactly zero.
    """
    _require_tensor("where_mask", a)
    _require_tensor("where_mask", b)
    _same_tape("where_mask", a, b)
    if a.shape != b.shape:
        raise ShapeError(f"where_mask: incompatible shapes {a.shape} and {b.shape}")
    m = np.asarray(mask, dtype=bool)
    _broadcastable("where_mask", m.shape if m.ndim == 2 else (1, 1), a.shape)
    out = np.where(m, a.values, b.values)
    ash, bsh = a.shape, b.shape

    def vjp(dy):
        da = np.where(m, dy, 0.0)
        db = np.where(m, 0.0, dy)
        return _unbroadcast(da, ash), _unbroadcast(db, bsh)

    return a.tape._record(out, (a.id, b.id), vjp)


def sum_all(x):
    """Sum every entry to a (1, 1) scalar."""
    _require_tensor("sum_all", x)
    out = np.array([[x.values.sum()]])
    xsh = x.shape

    def vjp(dy):
        return (np.full(xsh, dy[0, 0]),)

    return x.tape._record(out, (x.id,), vjp)


def lstm_pointwise(z, c_prev):
    """Fused LSTM gate nonlinearity; returns (h, c).

    z holds the four gate preactivations as (B, 4d) columns ordered
    [forget, input, output, candidate]; c_prev is (B, d).
    """
    _require_tensor("lstm_pointwise", z)
    _require_tensor("lstm_pointwise", c_prev)
    _same_tape("lstm_pointwise", z, c_prev)
    b, four_d = z.shape
    d = four_d // 4
    if four_d != 4 * d or c_prev.shape != (b, d):
        raise ShapeError(
            f"lstm_pointwise: incompatible shapes {z.shape} and {c_prev.shape}"
        )
    cv = c_prev.values
    h, c, saved = kernels.lstm_point_fwd(z.values, cv)
    hc = np.concatenate([h, c], axis=1)

    def vjp(dy):
        dz, dc_prev = kernels.lstm_point_bwd(saved, cv, dy[:, :d], dy[:, d:])
        return dz, dc_prev

    fused = z.tape._record(hc, (z.id, c_prev.id), vjp)
    return slice_cols(fused, 0, d), slice_cols(fused, d, 2 * d)


def masked_cross_entropy(logits, targets, mask):
    """Summed cross-entropy over masked rows; returns a (1, 1) tensor.

    targets is an int vector of class indices per row; rows with a
    false mask entry contribute nothing (their target may be -1). The
    caller divides by the masked count to get a mean.
    """
    _require_tensor("masked_cross_entropy", logits)
    lv = logits.values
    t = np.asarray(targets)
    m = np.asarray(mask, dtype=bool)
    rows, classes = lv.shape
    if t.shape != (rows,) or m.shape != (rows,):
        raise ShapeError(
            f"masked_cross_entropy: logits {lv.shape} need targets and mask "
            f"of shape ({rows},), got {t.shape} and {m.shape}"
        )
    active = t[m]
    if active.size and (active.min() < 0 or active.max() >= classes):
        raise ValueError(
            f"masked_cross_entropy: target out of range for {classes} classes"
        )
    safe_t = np.where(m, t, 0)
    shifted = lv - lv.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    nll = log_z - shifted[np.arange(rows), safe_t]
    out = np.array([[float((nll * m).sum())]])
    sm = kernels.softmax_rows(lv)

    def vjp(dy):
        dl = sm.copy()
        dl[np.arange(rows), safe_t] -= 1.0
        dl *= m[:, None]
        dl *= dy[0, 0]
        return (dl,)

    return logits.tape._record(out, (logits.id,), vjp)


def topk_mask(scores, k):
    """Boolean mask of the k largest scores (no gradient; ties keep the
    lowest index). Accepts a 1-D or 2-D array; returns the same shape."""
    arr = np.asarray(scores, dtype=np.float64)
    if arr.ndim == 1:
        n = arr.shape[0]
        if not 1 <= k <= n:
            raise ValueError(f"topk_mask: k={k} out of range for {n} scores")
        return kernels.topk_rows(arr[None, :], k)[0]
    if arr.ndim == 2:
        n = arr.shape[1]
        if not 1 <= k <= n:
            raise ValueError(f"topk_mask: k={k} out of range for {n} scores")
        return kernels.topk_rows(arr, k)
    raise ShapeError(f"topk_mask: expected 1-D or 2-D scores, got shape {arr.shape}")


def finite_diff_check(loss_fn, params, grads, eps=1e-5, sample=None, seed=0):
    """Compare analytic gradients against central finite differences.

    loss_fn re-evaluates the scalar loss from the current contents of
    the arrays in `params`, which are perturbed in place and restored.
    `grads` maps the same names to analytic gradients. With `sample`
    set, at most that many coordinates per array are probed, drawn
    deterministically from `seed`; otherwise every coordinate is.

    Returns (max_rel_err, worst) where worst names the offending
    coordinate as (name, flat_index, fd_value, analytic_value). The
    relative error denominator is floored at 1e-2 so that coordinates
    where both values vanish compare by absolute difference instead of
    amplifying finite-difference noise.
    """
    if set(params) != set(grads):
        raise ValueError(
            f"finite_diff_check: param names {sorted(params)} != grad names {sorted(grads)}"
        )
    rng = np.random.default_rng(seed)
    max_err = 0.0
    worst = (None, -1, 0.0, 0.0)
    for name in sorted(params):
        arr = params[name]
        an = grads[name]
        if arr.shape != an.shape:
            raise ShapeError(
                f"finite_diff_check: {name} param {arr.shape} vs grad {an.shape}"
            )
        size = arr.size
        if sample is None or size <= sample:
            coords = range(size)
        else:
            coords = np.sort(rng.choice(size, size=sample, replace=False))
        flat_p = arr.reshape(-1)
        flat_g = an.reshape(-1)
        for idx in coords:
            orig = flat_p[idx]
            flat_p[idx] = orig + eps
            f_plus = float(loss_fn())
            flat_p[idx] = orig - eps
            f_minus = float(loss_fn())
            flat_p[idx] = orig
            fd = (f_plus - f_minus) / (2.0 * eps)
            err = abs(fd - flat_g[idx]) / max(abs(fd), abs(flat_g[idx]), 1e-2)
            if err > max_err:
                max_err = err
                worst = (name, int(idx), fd, float(flat_g[idx]))
    return max_err, worst

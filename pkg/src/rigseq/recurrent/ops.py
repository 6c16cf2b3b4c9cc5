"""Tape-level building blocks for the recurrent units.

A step never mutates the incoming state: every cell reads the previous
step's hidden states and the caller receives fresh tensors. Hard
selection masks are plain numpy arrays computed outside the tape, so
discrete choices carry no gradient; frozen cells pass their state
through bit-for-bit via where_mask.
"""

from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from .. import kernels


@dataclass
class StepTrace:
    """Selection record for one step (only built on request).

    Shapes: cell_scores (B, N); active (B, N) bool; input_sel
    (B, N, K) bool; hidden_sel (B, N, N) bool; update_weights
    (B, N, 2) with columns [keep_previous, take_candidate], or None
    when the soft state update is disabled. In the soft ablation modes
    the corresponding mask is all-true and the tracked weights are not
    recorded here.
    """

    cell_scores: np.ndarray
    active: np.ndarray
    input_sel: np.ndarray
    hidden_sel: np.ndarray
    update_weights: np.ndarray | None


def lstm_step(x, h_prev, c_prev, w_gates, bias):
    """One step of a plain LSTM; returns (h, c)."""
    z = ad.linear(ad.concat_cols([x, h_prev]), w_gates, bias)
    return ad.lstm_pointwise(z, c_prev)


def gridlstm_step(x, hs, cs, gates, biases, w_stack=None, b_stack=None):
    """One step of a grid of cells sharing the context [x, h^1..h^N].

    Each cell applies its own gate weights to the shared context and
    updates its own (h, c); returns (new_hs, new_cs). All cells run as
    one tall row-block batch (block j = cell j), which keeps the tape
    short and shares its numerics with the selective unit's step.
    w_stack/b_stack optionally carry the pre-stacked gate parameters.
    """
    n_cells = len(cs)
    batch = x.shape[0]
    ctx = ad.concat_cols([x] + list(hs))
    ctx_tall = ad.tile_rows(ctx, n_cells)
    z_tall = ad.grouped_linear(
        ctx_tall, list(gates), list(biases), w_stack=w_stack, b_stack=b_stack
    )
    c_prev_tall = ad.concat_rows(cs)
    h_tall, c_tall = ad.lstm_pointwise(z_tall, c_prev_tall)
    new_hs = [
        ad.slice_rows(h_tall, j * batch, (j + 1) * batch) for j in range(n_cells)
    ]
    new_cs = [
        ad.slice_rows(c_tall, j * batch, (j + 1) * batch) for j in range(n_cells)
    ]
    return new_hs, new_cs


def _random_rows(rng, rows, n, k):
    if rng is None:
        raise ValueError("random selection mode needs an rng")
    return kernels.topk_rows(rng.random((rows, n)), k)


def selection_masks(config, view_vals, h_vals, rng=None):
    """Hard selection for one step, computed outside the tape.

    view_vals is (B, K, view_width) and h_vals is (B, N, d). Returns
    (cell_scores, active, input_sel, hidden_sel); see StepTrace for
    shapes. Input-view/hidden-state scores are inner products against
    the previous hidden states; ties keep the lowest index, so the
    all-zero initial state selects deterministically. cell_scores is
    zero-filled when no mode needs it (it is then only informational).
    """
    batch, n_views, view_w = view_vals.shape
    n_cells = config.n_cells
    d = h_vals.shape[2]
    k_in = min(config.n_input_sel, n_views)
    need_pair = (config.cell_mode == "normal" and config.n_active < n_cells) or (
        config.input_mode == "normal" and k_in < n_views
    )
    if need_pair:
        if view_w != d:
            raise ValueError(
                "input/cell selection scores need view width == cell_dim "
                f"(got {view_w} and {d}); enable input_transform or match dims"
            )
        pair = np.einsum("bkd,bnd->bkn", view_vals, h_vals)
        cell_scores = pair.sum(axis=1)
    else:
        pair = None
        cell_scores = np.zeros((batch, n_cells))

    if config.cell_mode == "random":
        active = _random_rows(rng, batch, n_cells, config.n_active)
    elif config.cell_mode == "all":
        active = np.ones((batch, n_cells), dtype=bool)
    else:
        active = kernels.topk_rows(cell_scores, config.n_active)

    if config.input_mode == "random":
        flat = _random_rows(rng, batch * n_cells, n_views, k_in)
        input_sel = flat.reshape(batch, n_cells, n_views)
    elif config.input_mode == "normal" and pair is not None:
        per_cell = np.ascontiguousarray(pair.transpose(0, 2, 1))
        flat = kernels.topk_rows(per_cell.reshape(batch * n_cells, n_views), k_in)
        input_sel = flat.reshape(batch, n_cells, n_views)
    else:
        input_sel = np.ones((batch, n_cells, n_views), dtype=bool)

    keep = config.n_hidden_sel + 1
    if config.hidden_mode == "random":
        scores = rng.random((batch, n_cells, n_cells)) if rng is not None else None
        if scores is None:
            raise ValueError("random selection mode needs an rng")
        scores[:, np.arange(n_cells), np.arange(n_cells)] = 2.0
        flat = kernels.topk_rows(scores.reshape(batch * n_cells, n_cells), keep)
        hidden_sel = flat.reshape(batch, n_cells, n_cells)
    elif config.hidden_mode == "normal" and keep < n_cells:
        sim = np.einsum("bjd,bkd->bjk", h_vals, h_vals)
        sim[:, np.arange(n_cells), np.arange(n_cells)] = np.inf
        flat = kernels.topk_rows(sim.reshape(batch * n_cells, n_cells), keep)
        hidden_sel = flat.reshape(batch, n_cells, n_cells)
    else:
        hidden_sel = np.ones((batch, n_cells, n_cells), dtype=bool)
    return cell_scores, active, input_sel, hidden_sel


def soft_state_update(h_prev, h_tilde, query):
    """Blend the previous and candidate hidden states per row.

    weights = softmax([<h_prev, query>, <h_tilde, query>]); returns
    (h, weights) where h = w0*h_prev + w1*h_tilde. The memory cell is
    not the caller's concern here and passes through unchanged.
    """
    scores = ad.concat_cols([ad.rowdot(h_prev, query), ad.rowdot(h_tilde, query)])
    weights = ad.softmax(scores)
    w_prev = ad.slice_cols(weights, 0, 1)
    w_new = ad.slice_cols(weights, 1, 2)
    h = ad.add(ad.mul(w_prev, h_prev), ad.mul(w_new, h_tilde))
    return h, weights


def rig_step(config, bound, x, hs, cs, rng=None, collect=False):
    """One step of the multi-cell unit with selection.

    Per cell: assemble the context [input views, h^1..h^N] with
    unselected blocks zero-filled, run the LSTM update, optionally
    blend old and new hidden state (soft update, queried by the context
    without the cell's own hidden slot), then freeze the cell entirely
    unless it was activated. Returns (new_hs, new_cs, trace).

    All cells are processed as one tall row-block batch (block j holds
    cell j's rows), so the tape records a handful of grouped nodes per
    step instead of a full set per cell.
    """
    n_cells, d = config.n_cells, config.cell_dim
    batch = x.shape[0]
    if config.input_transform:
        x_tiled = ad.tile_rows(x, config.n_views)
        views_tall = ad.grouped_linear(
            x_tiled,
            [bound[f"transform_{k}"] for k in range(config.n_views)],
            w_stack=bound.get("~transforms"),
        )
        views_cat = ad.rows_to_cols(views_tall, config.n_views)
        view_vals = (
            views_tall.values.reshape(config.n_views, batch, d).transpose(1, 0, 2)
        )
        n_views, view_w = config.n_views, d
    else:
        views_cat = x
        view_vals = x.values[:, None, :]
        n_views, view_w = 1, x.shape[1]
    hs_cat = ad.concat_cols(hs)
    h_vals = np.stack([h.values for h in hs], axis=1)
    cell_scores, active, input_sel, hidden_sel = selection_masks(
        config, view_vals, h_vals, rng
    )

    h_prev_tall = ad.concat_rows(hs)
    c_prev_tall = ad.concat_rows(cs)
    views_tiled = ad.tile_rows(views_cat, n_cells)
    hs_tiled = ad.tile_rows(hs_cat, n_cells)

    if config.input_mode == "soft" and n_views > 1:
        cols = [
            ad.rowdot(
                ad.tile_rows(ad.slice_cols(views_cat, k * view_w, (k + 1) * view_w),
                             n_cells),
                h_prev_tall,
            )
            for k in range(n_views)
        ]
        vweights = ad.repeat_cols(ad.softmax(ad.concat_cols(cols)), view_w)
        vpart = ad.mul(vweights, views_tiled)
    else:
        vmask = np.repeat(
            input_sel.transpose(1, 0, 2).reshape(n_cells * batch, n_views)
            .astype(np.float64),
            view_w,
            axis=1,
        )
        vpart = ad.mul(views_tiled, vmask)
    if config.hidden_mode == "soft":
        cols = [
            ad.rowdot(h_prev_tall, ad.tile_rows(hk, n_cells)) for hk in hs
        ]
        hweights = ad.repeat_cols(ad.softmax(ad.concat_cols(cols)), d)
        hpart = ad.mul(hweights, hs_tiled)
    else:
        hmask = np.repeat(
            hidden_sel.transpose(1, 0, 2).reshape(n_cells * batch, n_cells)
            .astype(np.float64),
            d,
            axis=1,
        )
        hpart = ad.mul(hs_tiled, hmask)
    ctx = ad.concat_cols([vpart, hpart])
    z = ad.grouped_linear(
        ctx,
        [bound[f"cell{j}_gates"] for j in range(n_cells)],
        [bound[f"cell{j}_bias"] for j in range(n_cells)],
        w_stack=bound.get("~gates"),
        b_stack=bound.get("~biases"),
    )
    h_tilde_tall, c_new_tall = ad.lstm_pointwise(z, c_prev_tall)

    soft_w = None
    if config.soft_update:
        width = n_views * view_w + n_cells * d
        q_idx = np.empty((n_cells, width - d), dtype=np.int64)
        all_cols = np.arange(width)
        for j in range(n_cells):
            lo = n_views * view_w + j * d
            q_idx[j] = np.concatenate([all_cols[:lo], all_cols[lo + d:]])
        q_ctx = ad.grouped_take_cols(ctx, q_idx)
        if config.shared_query:
            q_ws = [bound["query"]] * n_cells
        else:
            q_ws = [bound[f"cell{j}_query"] for j in range(n_cells)]
        query = ad.grouped_linear(q_ctx, q_ws, w_stack=bound.get("~queries"))
        scores = ad.concat_cols(
            [ad.rowdot(h_prev_tall, query), ad.rowdot(h_tilde_tall, query)]
        )
        weights = ad.softmax(scores)
        w_prev = ad.slice_cols(weights, 0, 1)
        w_new = ad.slice_cols(weights, 1, 2)
        h_new_tall = ad.add(
            ad.mul(w_prev, h_prev_tall), ad.mul(w_new, h_tilde_tall)
        )
        if collect:
            soft_w = np.ascontiguousarray(
                weights.values.reshape(n_cells, batch, 2).transpose(1, 0, 2)
            )
    else:
        h_new_tall = h_tilde_tall

    keep_tall = active.T.reshape(n_cells * batch, 1)
    h_out = ad.where_mask(keep_tall, h_new_tall, h_prev_tall)
    c_out = ad.where_mask(keep_tall, c_new_tall, c_prev_tall)
    new_hs = [
        ad.slice_rows(h_out, j * batch, (j + 1) * batch) for j in range(n_cells)
    ]
    new_cs = [
        ad.slice_rows(c_out, j * batch, (j + 1) * batch) for j in range(n_cells)
    ]

    trace = None
    if collect:
        trace = StepTrace(cell_scores, active, input_sel, hidden_sel, soft_w)
    return new_hs, new_cs, trace

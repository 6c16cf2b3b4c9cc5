"""Sequence models over the step ops: a plain LSTM, a grid of
jointly-updated cells, and the selective multi-cell unit.

A model owns its parameters as a name -> float64 array dict in a fixed
order (the serialization order). bind() wraps those arrays as tape
leaves without copying, so in-place optimizer updates are visible to
the next tape. All models share the same step/readout interface, so
the training loop is architecture-agnostic.
"""

from dataclasses import dataclass, replace

import numpy as np

from .. import autodiff as ad
from . import ops

ARCHES = ("lstm", "gridlstm", "riglstm")
CELL_MODES = ("normal", "all", "random")
CONTEXT_MODES = ("normal", "all", "random", "soft")
RECURRENT_INITS = ("uniform", "orthogonal")


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters (everything a checkpoint needs).

    input_dim is the width of the vector fed to the recurrent unit each
    step; with embed_vocab > 0 the raw input is a token id embedded to
    that width. The readout emits out_slots independent groups of
    out_classes logits. n_hidden_sel counts selected hidden states
    besides the cell's own, which is always kept.
    """

    arch: str
    input_dim: int
    cell_dim: int
    n_cells: int = 1
    n_views: int = 1
    n_active: int = 1
    n_input_sel: int = 1
    n_hidden_sel: int = 0
    cell_mode: str = "normal"
    input_mode: str = "normal"
    hidden_mode: str = "normal"
    soft_update: bool = True
    input_transform: bool = True
    shared_query: bool = False
    forget_bias: float = 1.0
    recurrent_init: str = "uniform"
    out_slots: int = 1
    out_classes: int = 10
    embed_vocab: int = 0


def validate_config(config):
    """Raise ValueError naming the offending field."""
    c = config
    if c.arch not in ARCHES:
        raise ValueError(f"arch must be one of {ARCHES}, got {c.arch!r}")
    for field in ("input_dim", "cell_dim", "n_cells", "out_slots"):
        if getattr(c, field) < 1:
            raise ValueError(f"{field} must be positive, got {getattr(c, field)}")
    if c.out_classes < 2:
        raise ValueError(f"out_classes must be at least 2, got {c.out_classes}")
    if c.embed_vocab < 0:
        raise ValueError(f"embed_vocab must be non-negative, got {c.embed_vocab}")
    if c.recurrent_init not in RECURRENT_INITS:
        raise ValueError(
            f"recurrent_init must be one of {RECURRENT_INITS}, "
            f"got {c.recurrent_init!r}"
        )
    if c.arch == "lstm" and c.n_cells != 1:
        raise ValueError(f"lstm uses a single cell, got n_cells={c.n_cells}")
    if c.arch != "riglstm":
        return
    if c.n_views < 1:
        raise ValueError(f"n_views must be positive, got {c.n_views}")
    if not 1 <= c.n_active <= c.n_cells:
        raise ValueError(
            f"n_active must be in [1, n_cells={c.n_cells}], got {c.n_active}"
        )
    if not 1 <= c.n_input_sel <= c.n_views:
        raise ValueError(
            f"n_input_sel must be in [1, n_views={c.n_views}], got {c.n_input_sel}"
        )
    if not 0 <= c.n_hidden_sel <= c.n_cells - 1:
        raise ValueError(
            f"n_hidden_sel must be in [0, n_cells-1={c.n_cells - 1}], "
            f"got {c.n_hidden_sel}"
        )
    if c.cell_mode not in CELL_MODES:
        raise ValueError(f"cell_mode must be one of {CELL_MODES}, got {c.cell_mode!r}")
    if c.input_mode not in CONTEXT_MODES:
        raise ValueError(
            f"input_mode must be one of {CONTEXT_MODES}, got {c.input_mode!r}"
        )
    if c.hidden_mode not in CONTEXT_MODES:
        raise ValueError(
            f"hidden_mode must be one of {CONTEXT_MODES}, got {c.hidden_mode!r}"
        )
    needs_scores = (c.cell_mode == "normal" and c.n_active < c.n_cells) or (
        c.input_mode == "normal"
        and c.input_transform
        and c.n_input_sel < c.n_views
    )
    if needs_scores and not c.input_transform and c.input_dim != c.cell_dim:
        raise ValueError(
            "selection scores with input_transform off need "
            f"input_dim == cell_dim, got {c.input_dim} and {c.cell_dim}"
        )


@dataclass
class UnitState:
    """Per-cell hidden and memory tensors for one step."""

    hs: list
    cs: list


def _uniform(rng, out_dim, in_dim):
    # research-standard fan-in scaling
    bound = 1.0 / np.sqrt(in_dim)
    return rng.uniform(-bound, bound, size=(out_dim, in_dim))


def _gate_bias(d, forget=1.0):
    # forget gate starts open so early gradients reach back in time;
    # larger values extend the reach on long-dormancy tasks
    b = np.zeros((1, 4 * d))
    b[0, :d] = forget
    return b


def _orth_rows(rng, rows, cols):
    """Rows-orthonormal (rows, cols) matrix via QR, rows <= cols."""
    a = rng.standard_normal((cols, rows))
    q, r = np.linalg.qr(a)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return (q * signs).T


def _orth_recurrent(rng, w, d, slab):
    """Overwrite each gate's trailing recurrent slab with orthonormal
    rows; near-isometric state-to-state Jacobians at init preserve
    signal over long unrolls."""
    lo = w.shape[1] - slab
    for g in range(4):
        w[g * d:(g + 1) * d, lo:] = _orth_rows(rng, d, slab)


def _attach_cell_stacks(bound, params, n_cells):
    """Cache stacked per-cell gate weights/biases on a bound dict.

    The "~"-prefixed keys cannot collide with parameter names. Stacks
    are snapshots of the current parameter values; they stay valid for
    the lifetime of one tape because the optimizer only mutates
    parameters between tapes.
    """
    bound["~gates"] = np.stack(
        [params[f"cell{j}_gates"] for j in range(n_cells)]
    )
    bound["~biases"] = np.stack(
        [params[f"cell{j}_bias"] for j in range(n_cells)]
    )


class SequenceModel:
    """Shared parameter plumbing; subclasses fill self.params and step."""

    def __init__(self, config, seed=0):
        validate_config(config)
        self.config = config
        self.params = {}
        rng = np.random.default_rng(seed)
        if config.embed_vocab > 0:
            self.params["embed"] = _uniform(rng, config.input_dim, config.embed_vocab)
        self._build(rng)
        slots = config.out_slots * config.out_classes
        self.params["readout_w"] = _uniform(rng, slots, self._readout_in())
        self.params["readout_b"] = np.zeros((1, slots))

    def _build(self, rng):
        raise NotImplementedError

    def _readout_in(self):
        return self.config.n_cells * self.config.cell_dim

    def param_count(self):
        return int(sum(p.size for p in self.params.values()))

    def bind(self, tape):
        return {name: tape.leaf(arr) for name, arr in self.params.items()}

    def init_state(self, tape, batch):
        d = self.config.cell_dim
        hs = [tape.leaf(np.zeros((batch, d))) for _ in range(self.config.n_cells)]
        cs = [tape.leaf(np.zeros((batch, d))) for _ in range(self.config.n_cells)]
        return UnitState(hs, cs)

    def input_tensor(self, tape, bound, x):
        """Wrap one step of raw input as a tensor, embedding token ids."""
        if self.config.embed_vocab > 0:
            idx = np.asarray(x)
            if idx.ndim != 1:
                raise ad.ShapeError(
                    f"input_tensor: expected token ids of shape (batch,), got {idx.shape}"
                )
            onehot = np.zeros((idx.shape[0], self.config.embed_vocab))
            onehot[np.arange(idx.shape[0]), idx.astype(int)] = 1.0
            return ad.linear(tape.leaf(onehot), bound["embed"])
        arr = np.asarray(x, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != self.config.input_dim:
            raise ad.ShapeError(
                f"input_tensor: expected (batch, {self.config.input_dim}), got {arr.shape}"
            )
        return tape.leaf(arr)

    def step(self, bound, x, state, rng=None, collect=False):
        raise NotImplementedError

    def readout(self, bound, state):
        feat = state.hs[0] if len(state.hs) == 1 else ad.concat_cols(state.hs)
        return ad.linear(feat, bound["readout_w"], bound["readout_b"])


class LstmModel(SequenceModel):
    def _build(self, rng):
        c = self.config
        in_dim = c.input_dim + c.cell_dim
        gates = _uniform(rng, 4 * c.cell_dim, in_dim)
        if c.recurrent_init == "orthogonal":
            _orth_recurrent(rng, gates, c.cell_dim, c.cell_dim)
        self.params["cell0_gates"] = gates
        self.params["cell0_bias"] = _gate_bias(c.cell_dim, c.forget_bias)

    def step(self, bound, x, state, rng=None, collect=False):
        h, c = ops.lstm_step(
            x, state.hs[0], state.cs[0], bound["cell0_gates"], bound["cell0_bias"]
        )
        return UnitState([h], [c]), None


class GridLstmModel(SequenceModel):
    def _build(self, rng):
        c = self.config
        in_dim = c.input_dim + c.n_cells * c.cell_dim
        for j in range(c.n_cells):
            gates = _uniform(rng, 4 * c.cell_dim, in_dim)
            if c.recurrent_init == "orthogonal":
                _orth_recurrent(rng, gates, c.cell_dim, c.n_cells * c.cell_dim)
            self.params[f"cell{j}_gates"] = gates
            self.params[f"cell{j}_bias"] = _gate_bias(c.cell_dim, c.forget_bias)

    def bind(self, tape):
        bound = super().bind(tape)
        _attach_cell_stacks(bound, self.params, self.config.n_cells)
        return bound

    def step(self, bound, x, state, rng=None, collect=False):
        gates = [bound[f"cell{j}_gates"] for j in range(self.config.n_cells)]
        biases = [bound[f"cell{j}_bias"] for j in range(self.config.n_cells)]
        hs, cs = ops.gridlstm_step(
            x, state.hs, state.cs, gates, biases,
            w_stack=bound.get("~gates"), b_stack=bound.get("~biases"),
        )
        return UnitState(hs, cs), None


class RigLstmModel(SequenceModel):
    def _build(self, rng):
        c = self.config
        view_w = c.cell_dim if c.input_transform else c.input_dim
        views = c.n_views if c.input_transform else 1
        ctx_in = views * view_w + c.n_cells * c.cell_dim
        query_in = ctx_in - c.cell_dim
        if c.input_transform:
            for k in range(c.n_views):
                self.params[f"transform_{k}"] = _uniform(rng, c.cell_dim, c.input_dim)
        if c.soft_update and c.shared_query:
            self.params["query"] = _uniform(rng, c.cell_dim, query_in)
        for j in range(c.n_cells):
            gates = _uniform(rng, 4 * c.cell_dim, ctx_in)
            if c.recurrent_init == "orthogonal":
                _orth_recurrent(rng, gates, c.cell_dim, c.n_cells * c.cell_dim)
            self.params[f"cell{j}_gates"] = gates
            self.params[f"cell{j}_bias"] = _gate_bias(c.cell_dim, c.forget_bias)
            if c.soft_update and not c.shared_query:
                self.params[f"cell{j}_query"] = _uniform(rng, c.cell_dim, query_in)

    def bind(self, tape):
        bound = super().bind(tape)
        c = self.config
        _attach_cell_stacks(bound, self.params, c.n_cells)
        if c.input_transform:
            bound["~transforms"] = np.stack(
                [self.params[f"transform_{k}"] for k in range(c.n_views)]
            )
        if c.soft_update:
            if c.shared_query:
                bound["~queries"] = np.stack([self.params["query"]] * c.n_cells)
            else:
                bound["~queries"] = np.stack(
                    [self.params[f"cell{j}_query"] for j in range(c.n_cells)]
                )
        return bound

    def step(self, bound, x, state, rng=None, collect=False):
        hs, cs, trace = ops.rig_step(
            self.config, bound, x, state.hs, state.cs, rng=rng, collect=collect
        )
        return UnitState(hs, cs), trace


def build_model(config, seed=0):
    cls = {"lstm": LstmModel, "gridlstm": GridLstmModel, "riglstm": RigLstmModel}[
        config.arch
    ]
    return cls(config, seed=seed)


def degenerate_to_grid(config):
    """The selective unit config that matches a grid of plain cells:
    every cell active, every context block kept, no soft update, no
    input transforms."""
    return replace(
        config,
        arch="riglstm",
        n_active=config.n_cells,
        n_hidden_sel=config.n_cells - 1,
        n_views=1,
        n_input_sel=1,
        soft_update=False,
        input_transform=False,
    )

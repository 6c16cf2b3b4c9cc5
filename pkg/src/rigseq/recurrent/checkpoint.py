"""Binary model checkpoints.

Layout: an 8-byte magic "RIGCKPT1"; a little-endian int32 block (a
field count, then the architecture fields in CONFIG_FIELDS order); then
every parameter array as raw little-endian float64 in the model's
declared parameter order. A cell's gate matrix is stored as its four
(d, in) row blocks in gate order [forget, input, output, candidate],
which is exactly the stacked matrix's memory layout; the readout pair
comes last. Array shapes are derived from the config, so no per-array
headers exist.

Init-only settings (forget_bias, recurrent_init) are not part of the
header: a restored model's arrays are overwritten with the stored
values, so how they were first initialized cannot affect it.
"""

import numpy as np

from .models import ARCHES, CONTEXT_MODES, ModelConfig, build_model

MAGIC = b"RIGCKPT1"

CONFIG_FIELDS = (
    "arch",
    "input_dim",
    "cell_dim",
    "n_cells",
    "n_views",
    "n_active",
    "n_input_sel",
    "n_hidden_sel",
    "cell_mode",
    "input_mode",
    "hidden_mode",
    "soft_update",
    "input_transform",
    "shared_query",
    "out_slots",
    "out_classes",
    "embed_vocab",
)

_ARCH_CODES = {name: i + 1 for i, name in enumerate(ARCHES)}
_MODE_CODES = {name: i for i, name in enumerate(CONTEXT_MODES)}


def _config_to_ints(config):
    out = []
    for field in CONFIG_FIELDS:
        value = getattr(config, field)
        if field == "arch":
            out.append(_ARCH_CODES[value])
        elif field.endswith("_mode"):
            out.append(_MODE_CODES[value])
        elif isinstance(value, bool):
            out.append(int(value))
        else:
            out.append(int(value))
    return np.asarray(out, dtype="<i4")


def _config_from_ints(values):
    if len(values) != len(CONFIG_FIELDS):
        raise ValueError(
            f"checkpoint config block has {len(values)} fields, "
            f"expected {len(CONFIG_FIELDS)}"
        )
    arches = {v: k for k, v in _ARCH_CODES.items()}
    modes = {v: k for k, v in _MODE_CODES.items()}
    kwargs = {}
    for field, raw in zip(CONFIG_FIELDS, values):
        raw = int(raw)
        if field == "arch":
            if raw not in arches:
                raise ValueError(f"checkpoint has unknown arch code {raw}")
            kwargs[field] = arches[raw]
        elif field.endswith("_mode"):
            if raw not in modes:
                raise ValueError(f"checkpoint has unknown {field} code {raw}")
            kwargs[field] = modes[raw]
        elif field in ("soft_update", "input_transform", "shared_query"):
            kwargs[field] = bool(raw)
        else:
            kwargs[field] = raw
    return ModelConfig(**kwargs)


def save_checkpoint(path, model):
    ints = _config_to_ints(model.config)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(np.asarray([len(ints)], dtype="<i4").tobytes())
        fh.write(ints.tobytes())
        for arr in model.params.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < len(MAGIC) or data[: len(MAGIC)] != MAGIC:
        raise ValueError(f"bad checkpoint magic in {path}")
    offset = len(MAGIC)
    if len(data) < offset + 4:
        raise ValueError("truncated checkpoint: missing config field count")
    count = int(np.frombuffer(data, dtype="<i4", count=1, offset=offset)[0])
    offset += 4
    if len(data) < offset + 4 * count:
        raise ValueError("truncated checkpoint: config block")
    ints = np.frombuffer(data, dtype="<i4", count=count, offset=offset)
    offset += 4 * count
    config = _config_from_ints(ints)
    model = build_model(config)
    for name, arr in model.params.items():
        nbytes = arr.size * 8
        if len(data) < offset + nbytes:
            raise ValueError(f"truncated checkpoint: parameter {name}")
        values = np.frombuffer(data, dtype="<f8", count=arr.size, offset=offset)
        arr[...] = values.reshape(arr.shape)
        offset += nbytes
    if offset != len(data):
        raise ValueError(f"trailing bytes after readout: {len(data) - offset}")
    return model

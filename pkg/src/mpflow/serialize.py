"""Model JSON serialization.

Document shape:

    {"dim": D,
     "layers": [{"kind": "upper"|"lower"|"shear", "s": int?, "i": int?,
                 "shift": {"type": "mlp", "dims": [...], "activation": "...",
                           "weights": [flat row-major per layer],
                           "biases": [per layer]}
                        | {"type": "fixed", "id": "...", "params": [...]}}]}

Every float is written with 17 significant digits, which round-trips IEEE
doubles exactly, so serialize(deserialize(serialize(net))) is byte-identical.
"""

from __future__ import annotations

import json

import numpy as np

from .coupling import LOWER, SHEAR, UPPER, MPNet, lower_layer, shear_layer, upper_layer
from .errors import ParseError
from .mlp import ACTIVATIONS, Mlp
from .shifts import FixedShift, MlpShift, fixed_shift


def fmt17(x: float) -> str:
    """Decimal text for a float with 17 significant digits."""
    if not np.isfinite(x):
        raise ParseError(f"cannot serialize non-finite number {x!r}")
    return format(float(x), ".17g")


def dump_json(obj) -> str:
    """JSON text with floats at 17 significant digits and stable key order."""
    if isinstance(obj, dict):
        items = ", ".join(f"{json.dumps(k)}: {dump_json(v)}" for k, v in obj.items())
        return "{" + items + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(dump_json(v) for v in obj) + "]"
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt17(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    raise ParseError(f"cannot serialize object of type {type(obj).__name__}")


def _shift_doc(shift):
    if isinstance(shift, MlpShift):
        return {
            "type": "mlp",
            "dims": list(shift.mlp.layer_dims),
            "activation": shift.mlp.activation,
            "weights": [w.reshape(-1).tolist() for w in shift.mlp.weights],
            "biases": [b.tolist() for b in shift.mlp.biases],
        }
    if isinstance(shift, FixedShift):
        return {"type": "fixed", "id": shift.id, "params": shift.params.tolist()}
    raise ParseError(f"cannot serialize shift of type {type(shift).__name__}")


def net_to_doc(net: MPNet) -> dict:
    layers = []
    for layer in net.layers:
        doc = {"kind": layer.kind}
        if layer.kind in (UPPER, LOWER):
            doc["s"] = layer.s
        else:
            doc["i"] = layer.i
        doc["shift"] = _shift_doc(layer.shift)
        layers.append(doc)
    return {"dim": net.dim, "layers": layers}


def serialize(net: MPNet) -> bytes:
    return dump_json(net_to_doc(net)).encode("utf-8")


def _expect(doc, key, types, where):
    if key not in doc:
        raise ParseError(f"missing field {where}.{key}")
    val = doc[key]
    if not isinstance(val, types) or isinstance(val, bool):
        raise ParseError(f"field {where}.{key} has wrong type {type(val).__name__}")
    return val


def _float_list(val, where):
    if not isinstance(val, list):
        raise ParseError(f"field {where} must be a list of numbers")
    out = []
    for idx, v in enumerate(val):
        if not isinstance(v, (int, float)) or isinstance(v, bool):
            raise ParseError(f"field {where}[{idx}] is not a number")
        out.append(float(v))
    return np.array(out)


def _parse_mlp_shift(doc, where) -> MlpShift:
    dims = _expect(doc, "dims", list, where)
    if len(dims) < 2 or any(not isinstance(d, int) or d < 1 for d in dims):
        raise ParseError(f"field {where}.dims must be >= 2 positive integers")
    activation = _expect(doc, "activation", str, where)
    if activation not in ACTIVATIONS:
        raise ParseError(f"field {where}.activation must be one of {ACTIVATIONS}")
    raw_w = _expect(doc, "weights", list, where)
    raw_b = _expect(doc, "biases", list, where)
    n_layers = len(dims) - 1
    if len(raw_w) != n_layers or len(raw_b) != n_layers:
        raise ParseError(f"field {where}.weights/biases must have {n_layers} entries")
    weights, biases = [], []
    for l in range(n_layers):
        fan_in, fan_out = dims[l], dims[l + 1]
        w = _float_list(raw_w[l], f"{where}.weights[{l}]")
        if w.size != fan_out * fan_in:
            raise ParseError(f"field {where}.weights[{l}] must have {fan_out * fan_in} entries")
        b = _float_list(raw_b[l], f"{where}.biases[{l}]")
        if b.size != fan_out:
            raise ParseError(f"field {where}.biases[{l}] must have {fan_out} entries")
        weights.append(w.reshape(fan_out, fan_in))
        biases.append(b)
    if not all(np.all(np.isfinite(w)) for w in weights) or not all(
        np.all(np.isfinite(b)) for b in biases
    ):
        raise ParseError(f"field {where} contains non-finite parameters")
    return MlpShift(Mlp(tuple(dims), tuple(weights), tuple(biases), activation))


def _parse_shift(doc, where, in_dim, out_dim):
    if not isinstance(doc, dict):
        raise ParseError(f"field {where} must be an object")
    kind = _expect(doc, "type", str, where)
    if kind == "mlp":
        shift = _parse_mlp_shift(doc, where)
        if shift.in_dim != in_dim or shift.out_dim != out_dim:
            raise ParseError(
                f"field {where}: shift maps dim {shift.in_dim} -> {shift.out_dim}, "
                f"layer requires {in_dim} -> {out_dim}"
            )
        return shift
    if kind == "fixed":
        sid = _expect(doc, "id", str, where)
        params = _float_list(_expect(doc, "params", list, where), f"{where}.params")
        return fixed_shift(sid, params, in_dim, out_dim)
    raise ParseError(f"field {where}.type must be 'mlp' or 'fixed'")


def net_from_doc(doc) -> MPNet:
    if not isinstance(doc, dict):
        raise ParseError("model document must be an object")
    unknown = set(doc) - {"dim", "layers"}
    if unknown:
        raise ParseError(f"unknown field {sorted(unknown)[0]}")
    dim = _expect(doc, "dim", int, "model")
    if dim < 2:
        raise ParseError("field model.dim must be >= 2")
    raw_layers = _expect(doc, "layers", list, "model")
    layers = []
    for idx, entry in enumerate(raw_layers):
        where = f"layers[{idx}]"
        if not isinstance(entry, dict):
            raise ParseError(f"field {where} must be an object")
        kind = _expect(entry, "kind", str, where)
        try:
            if kind in (UPPER, LOWER):
                s = _expect(entry, "s", int, where)
                if not 2 <= s <= dim:
                    raise ParseError(f"field {where}.s must be in [2, {dim}]")
                if kind == UPPER:
                    shift = _parse_shift(entry["shift"], f"{where}.shift", dim - s + 1, s - 1)
                    layers.append(upper_layer(dim, s, shift))
                else:
                    shift = _parse_shift(entry["shift"], f"{where}.shift", s - 1, dim - s + 1)
                    layers.append(lower_layer(dim, s, shift))
            elif kind == SHEAR:
                i = _expect(entry, "i", int, where)
                if not 1 <= i <= dim:
                    raise ParseError(f"field {where}.i must be in [1, {dim}]")
                shift = _parse_shift(entry["shift"], f"{where}.shift", dim - 1, 1)
                layers.append(shear_layer(dim, i, shift))
            else:
                raise ParseError(f"field {where}.kind must be 'upper', 'lower' or 'shear'")
        except KeyError as exc:
            raise ParseError(f"missing field {where}.{exc.args[0]}") from exc
    return MPNet(dim, tuple(layers))


def deserialize(data) -> MPNet:
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}") from exc
    return net_from_doc(doc)


def save_net(net: MPNet, path):
    with open(path, "wb") as fh:
        fh.write(serialize(net))


def load_net(path) -> MPNet:
    with open(path, "rb") as fh:
        return deserialize(fh.read())

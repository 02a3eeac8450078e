"""JSON weight files: every array stored as its shape plus flat row-major data."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .cnn import CnnD3F
from .mixture import MixtureD3F
from .mlp import MlpD3F

FORMAT = "ldperf-d3f"
VERSION = 1


def _arrays(params: dict) -> list:
    return [{"name": k, "shape": list(v.shape), "data": v.ravel().tolist()}
            for k, v in params.items()]


def _unarrays(layers: list) -> dict:
    out = {}
    for layer in layers:
        data = np.asarray(layer["data"], dtype=float)
        shape = tuple(layer["shape"])
        if data.size != int(np.prod(shape)):
            raise ValueError(f"layer {layer['name']}: {data.size} values for shape {shape}")
        out[layer["name"]] = data.reshape(shape)
    return out


def to_dict(model) -> dict:
    if isinstance(model, MlpD3F):
        body = {"kind": "mlp", "layers": _arrays(model.params),
                "loss_history": list(model.loss_history)}
    elif isinstance(model, CnnD3F):
        body = {"kind": "cnn", "height": model.height, "width": model.width,
                "layers": _arrays(model.params), "loss_history": list(model.loss_history),
                "train_accuracy": model.train_accuracy}
    elif isinstance(model, MixtureD3F):
        comps = []
        for sc in model.scorers:
            if not isinstance(sc, MlpD3F):
                raise TypeError("only mixtures of trained networks can be saved")
            comps.append(to_dict(sc))
        body = {"kind": "mixture", "thetas": list(model.thetas), "prior": list(model.prior),
                "components": comps}
    else:
        raise TypeError(f"cannot serialise {type(model).__name__}")
    return {"format": FORMAT, "version": VERSION, **body}


def from_dict(d: dict):
    if d.get("format") != FORMAT:
        raise ValueError("not a decision-function weight file")
    if d.get("version") != VERSION:
        raise ValueError(f"unsupported weight file version {d.get('version')}")
    kind = d.get("kind")
    if kind == "mlp":
        return MlpD3F(_unarrays(d["layers"]), tuple(d.get("loss_history", ())))
    if kind == "cnn":
        return CnnD3F(int(d["height"]), int(d["width"]), _unarrays(d["layers"]),
                      tuple(d.get("loss_history", ())),
                      float(d.get("train_accuracy", float("nan"))))
    if kind == "mixture":
        comps = [from_dict({"format": FORMAT, "version": VERSION, **c}) for c in d["components"]]
        return MixtureD3F(d["thetas"], comps, d["prior"])
    raise ValueError(f"unknown model kind {kind!r}")


def save_weights(model, path) -> None:
    Path(path).write_text(json.dumps(to_dict(model)))


def load_weights(path):
    return from_dict(json.loads(Path(path).read_text()))

"""Model persistence: a JSON manifest plus one binary blob per parameter.

Layout of a model directory:
    manifest.json            spec, epochs completed, per-epoch losses
    layer{i}.weight          tensor blob (see tensor.save_tensor)
    layer{i}.bias            tensor blob
"""

from __future__ import annotations

import json
from pathlib import Path

from ..errors import ParseError
from ..tensor import load_tensor, save_tensor
from ..util import atomic_write_text
from .network import Network, NetworkSpec, init

MANIFEST_NAME = "manifest.json"
FORMAT_NAME = "deepuq-model"


def save_network(net: Network, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format": FORMAT_NAME,
        "spec": net.spec.to_dict(),
        "epochs_completed": net.epochs_completed,
        "epoch_losses": net.epoch_losses,
    }
    for name, arr in net.parameters().items():
        save_tensor(directory / name, arr)
    atomic_write_text(directory / MANIFEST_NAME, json.dumps(manifest, indent=2, sort_keys=True))


def load_network(directory) -> Network:
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    if not manifest_path.exists():
        raise ParseError(f"no {MANIFEST_NAME} in {directory}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != FORMAT_NAME:
        raise ParseError(f"{manifest_path}: unexpected format {manifest.get('format')!r}")
    spec = NetworkSpec.from_dict(manifest["spec"])
    net = init(spec)
    values = {name: load_tensor(directory / name) for name in net.parameters()}
    net.set_parameters(values)
    net.epochs_completed = int(manifest["epochs_completed"])
    net.epoch_losses = [float(x) for x in manifest["epoch_losses"]]
    return net

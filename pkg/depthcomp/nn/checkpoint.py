"""
Checkpoint container.

Layout: magic, format version, length-prefixed JSON header, then the raw
little-endian bytes of every named array in header order. The header is
serialised with sorted keys and fixed separators and nothing time-dependent
is stored, so save -> load -> save reproduces the file byte for byte.
"""
import json
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional

import numpy as np
from pydantic import ValidationError

from depthcomp.models.schemas import CheckpointHeader, NetworkConfig, TensorEntry
from depthcomp.nn.layers import Module
from depthcomp.utils.errors import FormatError, IncompatibleCheckpointError
from depthcomp.utils.logger import app_logger

MAGIC = b"DCKPT"
FORMAT_VERSION = 1

ADAM_M_PREFIX = "adam.m."
ADAM_V_PREFIX = "adam.v."


@dataclass
class Checkpoint:
    """Everything needed to restore a model and continue its optimisation."""
    network: NetworkConfig
    state: "OrderedDict[str, np.ndarray]"
    adam_m: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)
    adam_v: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)
    adam_t: int = 0
    epoch: int = 0
    step: int = 0
    rng_state: Optional[Dict] = None

    @classmethod
    def from_model(cls, model: Module, **kwargs) -> "Checkpoint":
        state = OrderedDict((k, np.array(v)) for k, v in model.state_dict().items())
        return cls(network=model.config, state=state, **kwargs)

    def restore(self, model: Module) -> None:
        """
        Load parameters and buffers into `model`.

        The saved network settings must equal the model's except for
        max_depth, which only scales the output (warm starts change it).

        Raises:
            IncompatibleCheckpointError: Naming the first differing network field,
                or the first parameter whose shape differs
        """
        field_name = config_mismatch(self.network, model.config)
        if field_name is not None:
            raise IncompatibleCheckpointError(
                f"checkpoint network {field_name}={getattr(self.network, field_name)!r}, "
                f"model has {getattr(model.config, field_name)!r}"
            )
        model.load_state_dict(self.state)
        if self.network.max_depth != model.config.max_depth:
            app_logger.info(
                f"Checkpoint max_depth {self.network.max_depth} m restored into a {model.config.max_depth} m model"
            )


def config_mismatch(saved: NetworkConfig, current: NetworkConfig) -> Optional[str]:
    """First field, in declaration order, where two configs differ; max_depth is ignored."""
    for name in NetworkConfig.model_fields:
        if name != "max_depth" and getattr(saved, name) != getattr(current, name):
            return name
    return None


def _le(array: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(array, dtype=array.dtype.newbyteorder("<"))


def save_checkpoint(checkpoint: Checkpoint, path: Path) -> Path:
    """Write `checkpoint` to `path`, creating parent directories."""
    arrays = OrderedDict(checkpoint.state)
    for name, m in checkpoint.adam_m.items():
        arrays[ADAM_M_PREFIX + name] = m
    for name, v in checkpoint.adam_v.items():
        arrays[ADAM_V_PREFIX + name] = v

    entries, blobs, offset = [], [], 0
    for name, array in arrays.items():
        data = _le(np.asarray(array))
        blob = data.tobytes()
        entries.append(
            TensorEntry(name=name, dtype=data.dtype.str, shape=list(data.shape), offset=offset, nbytes=len(blob))
        )
        blobs.append(blob)
        offset += len(blob)

    header = CheckpointHeader(
        format_version=FORMAT_VERSION,
        network=checkpoint.network.model_dump(mode="json"),
        epoch=checkpoint.epoch,
        step=checkpoint.step,
        adam_t=checkpoint.adam_t,
        rng_state=checkpoint.rng_state,
        entries=entries,
    )
    header_bytes = json.dumps(header.model_dump(mode="json"), sort_keys=True, separators=(",", ":")).encode()

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(FORMAT_VERSION.to_bytes(2, "little"))
        fh.write(len(header_bytes).to_bytes(8, "little"))
        fh.write(header_bytes)
        for blob in blobs:
            fh.write(blob)
    app_logger.debug(f"Saved checkpoint {path} (epoch={checkpoint.epoch}, step={checkpoint.step})")
    return path


def load_checkpoint(path: Path) -> Checkpoint:
    """
    Read a checkpoint written by save_checkpoint.

    Raises:
        FormatError: If the file is missing or truncated
        IncompatibleCheckpointError: If it is not a checkpoint or has another format version
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise FormatError(f"cannot read checkpoint {path}: {e}") from e

    if not raw.startswith(MAGIC):
        raise IncompatibleCheckpointError(f"{path} is not a depth completion checkpoint")
    pos = len(MAGIC)
    version = int.from_bytes(raw[pos:pos + 2], "little")
    if version != FORMAT_VERSION:
        raise IncompatibleCheckpointError(
            f"checkpoint {path} has format version {version}, this build reads version {FORMAT_VERSION}"
        )
    pos += 2
    header_len = int.from_bytes(raw[pos:pos + 8], "little")
    pos += 8
    try:
        header = CheckpointHeader.model_validate_json(raw[pos:pos + header_len])
        network = NetworkConfig.model_validate(header.network)
    except ValidationError as e:
        raise FormatError(f"checkpoint {path} has a malformed header: {e}") from e
    body = memoryview(raw)[pos + header_len:]

    state, adam_m, adam_v = OrderedDict(), OrderedDict(), OrderedDict()
    for entry in header.entries:
        if entry.offset + entry.nbytes > len(body):
            raise FormatError(f"checkpoint {path} is truncated at {entry.name}")
        array = np.frombuffer(body[entry.offset:entry.offset + entry.nbytes], dtype=np.dtype(entry.dtype))
        array = array.reshape(entry.shape).astype(np.dtype(entry.dtype).newbyteorder("="))
        if entry.name.startswith(ADAM_M_PREFIX):
            adam_m[entry.name[len(ADAM_M_PREFIX):]] = array
        elif entry.name.startswith(ADAM_V_PREFIX):
            adam_v[entry.name[len(ADAM_V_PREFIX):]] = array
        else:
            state[entry.name] = array

    return Checkpoint(
        network=network,
        state=state,
        adam_m=adam_m,
        adam_v=adam_v,
        adam_t=header.adam_t,
        epoch=header.epoch,
        step=header.step,
        rng_state=header.rng_state,
    )

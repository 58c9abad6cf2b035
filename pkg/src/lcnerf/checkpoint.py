"""Single-file binary checkpoint container.

Layout: magic ``LCNF``, format version u32, entry count u32, then per
entry a length-prefixed UTF-8 name, u32 rank, u32 dims, and raw float32
data. Everything little-endian. Non-tensor state (config text, RNG bytes,
counters) is stored as float32 arrays so one entry type covers the file.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
import torch

MAGIC = b"LCNF"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


def write_container(path, entries: dict[str, np.ndarray]) -> None:
    """Write named float32 arrays; entry order follows the dict order."""
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<II", VERSION, len(entries))
    for name, array in entries.items():
        # np.ascontiguousarray would promote rank-0 arrays to rank 1.
        arr = np.asarray(array, dtype="<f4", order="C")
        encoded = name.encode("utf-8")
        blob += struct.pack("<I", len(encoded))
        blob += encoded
        blob += struct.pack("<I", arr.ndim)
        blob += struct.pack(f"<{arr.ndim}I", *arr.shape)
        blob += arr.tobytes()
    Path(path).write_bytes(bytes(blob))


def read_container(path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    view = memoryview(data)
    offset = 0

    def take(count: int) -> memoryview:
        nonlocal offset
        if offset + count > len(view):
            raise CheckpointError(f"checkpoint {path} is truncated at byte {offset}")
        chunk = view[offset:offset + count]
        offset += count
        return chunk

    if bytes(take(4)) != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise CheckpointError(
            f"checkpoint version {version} unsupported (this build reads version {VERSION})"
        )
    entries: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = bytes(take(name_len)).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}I", take(4 * rank)) if rank else ()
        size = int(np.prod(shape, dtype=np.int64)) if rank else 1
        arr = np.frombuffer(take(4 * size), dtype="<f4").reshape(shape)
        entries[name] = arr.copy()
    return entries


def encode_text(text: str) -> np.ndarray:
    """UTF-8 bytes as float32 values (0..255 are exact in float32)."""
    return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).astype(np.float32)


def decode_text(array: np.ndarray) -> str:
    return array.astype(np.uint8).tobytes().decode("utf-8")


def encode_bytes(raw: bytes) -> np.ndarray:
    return np.frombuffer(raw, dtype=np.uint8).astype(np.float32)


def decode_bytes(array: np.ndarray) -> bytes:
    return array.astype(np.uint8).tobytes()


def module_entries(prefix: str, module: torch.nn.Module) -> dict[str, np.ndarray]:
    # Copies: numpy() would alias live parameter memory.
    return {
        prefix + name: tensor.detach().cpu().numpy().copy()
        for name, tensor in module.state_dict().items()
    }


def load_module(prefix: str, module: torch.nn.Module,
                entries: dict[str, np.ndarray]) -> None:
    state = {}
    for name, tensor in module.state_dict().items():
        key = prefix + name
        if key not in entries:
            raise CheckpointError(f"checkpoint is missing tensor {key}")
        state[name] = torch.from_numpy(entries[key]).reshape(tensor.shape)
    module.load_state_dict(state)


def optimizer_entries(prefix: str, optimizer: torch.optim.Optimizer) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    state = optimizer.state_dict()["state"]
    for index, slots in state.items():
        for slot, value in slots.items():
            if torch.is_tensor(value):
                out[f"{prefix}{index}.{slot}"] = value.detach().cpu().numpy().copy()
            else:
                out[f"{prefix}{index}.{slot}"] = np.asarray([float(value)], dtype=np.float32)
    return out


def load_optimizer(prefix: str, optimizer: torch.optim.Optimizer,
                   entries: dict[str, np.ndarray]) -> None:
    """Restore Adam slots saved by ``optimizer_entries``.

    The optimizer must be freshly constructed over the same parameter
    order; missing prefixes mean the optimizer had not stepped yet.
    """
    state_dict = optimizer.state_dict()
    params = [p for group in optimizer.param_groups for p in group["params"]]
    state: dict[int, dict] = {}
    for key, array in entries.items():
        if not key.startswith(prefix):
            continue
        index_str, slot = key[len(prefix):].split(".", 1)
        index = int(index_str)
        if slot == "step":
            value = torch.tensor(float(array.reshape(-1)[0]))
        else:
            # Clone: Adam keeps the given tensor object when dtype and
            # device already match, so a from_numpy view would alias the
            # caller's array.
            value = torch.from_numpy(array).reshape(params[index].shape).clone()
        state.setdefault(index, {})[slot] = value
    state_dict["state"] = state
    optimizer.load_state_dict(state_dict)

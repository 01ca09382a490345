"""Binary message encoding.

Frame: ``u32 length`` (of everything after it) + ``u8 tag`` + fixed-width
little-endian fields. Row/column ids are u32, counts and increments i64,
request/transaction ids u64. Variable-length arrays are preceded by a u32 count.
"""

import struct
from typing import NamedTuple

import numpy as np

U32 = np.dtype("<u4")
I64 = np.dtype("<i8")

_HDR = struct.Struct("<IB")
HEADER_SIZE = _HDR.size


class PullReq(NamedTuple):
    req_id: int
    rows: np.ndarray
    cols: np.ndarray  # empty means all columns


class PullResp(NamedTuple):
    req_id: int
    values: np.ndarray  # (len(rows), ncols) int64


class TxidReq(NamedTuple):
    client: int
    req_id: int


class TxidResp(NamedTuple):
    req_id: int
    txid: int


class PushData(NamedTuple):
    client: int
    txid: int
    rows: np.ndarray
    cols: np.ndarray
    incs: np.ndarray


class PushAck(NamedTuple):
    txid: int


class TxidRelease(NamedTuple):
    client: int
    txid: int
    floor: int


class ReleaseAck(NamedTuple):
    txid: int


class Command(NamedTuple):
    """Driver to worker: run ``kind`` (INIT / ITERATE / STOP) for ``iteration``."""

    kind: int
    iteration: int


class Report(NamedTuple):
    """Worker to driver: phase finished (status 0) or aborted (status != 0)."""

    worker: int
    iteration: int
    drained_pushes: int
    status: int


CMD_INIT, CMD_ITERATE, CMD_STOP = 1, 2, 3

_S_PULLREQ = struct.Struct("<QII")
_S_PULLRESP = struct.Struct("<QII")
_S_TXIDREQ = struct.Struct("<IQ")
_S_TXIDRESP = struct.Struct("<QQ")
_S_PUSH = struct.Struct("<IQI")
_S_U64 = struct.Struct("<Q")
_S_RELEASE = struct.Struct("<IQQ")
_S_COMMAND = struct.Struct("<BQ")
_S_REPORT = struct.Struct("<IQQB")

_PUSH_CELL = np.dtype([("row", "<u4"), ("col", "<u4"), ("inc", "<i8")])

TAGS = {
    PullReq: 1, PullResp: 2, TxidReq: 3, TxidResp: 4, PushData: 5, PushAck: 6,
    TxidRelease: 7, ReleaseAck: 8, Command: 16, Report: 17,
}


class WireError(ValueError):
    pass


def _frame(tag, body):
    return _HDR.pack(len(body) + 1, tag) + body


def encode(msg) -> bytes:
    t = type(msg)
    if t is PullReq:
        rows = np.asarray(msg.rows, dtype=U32)
        cols = np.asarray(msg.cols, dtype=U32)
        return _frame(1, _S_PULLREQ.pack(msg.req_id, len(rows), len(cols)) + rows.tobytes() + cols.tobytes())
    if t is PullResp:
        vals = np.asarray(msg.values, dtype=I64)
        return _frame(2, _S_PULLRESP.pack(msg.req_id, vals.shape[0], vals.shape[1]) + vals.tobytes())
    if t is TxidReq:
        return _frame(3, _S_TXIDREQ.pack(msg.client, msg.req_id))
    if t is TxidResp:
        return _frame(4, _S_TXIDRESP.pack(msg.req_id, msg.txid))
    if t is PushData:
        cells = np.empty(len(msg.rows), dtype=_PUSH_CELL)
        cells["row"] = msg.rows
        cells["col"] = msg.cols
        cells["inc"] = msg.incs
        return _frame(5, _S_PUSH.pack(msg.client, msg.txid, len(cells)) + cells.tobytes())
    if t is PushAck:
        return _frame(6, _S_U64.pack(msg.txid))
    if t is TxidRelease:
        return _frame(7, _S_RELEASE.pack(msg.client, msg.txid, msg.floor))
    if t is ReleaseAck:
        return _frame(8, _S_U64.pack(msg.txid))
    if t is Command:
        return _frame(16, _S_COMMAND.pack(msg.kind, msg.iteration))
    if t is Report:
        return _frame(17, _S_REPORT.pack(msg.worker, msg.iteration, msg.drained_pushes, msg.status))
    raise WireError(f"cannot encode {t.__name__}")


def decode(data: bytes):
    if len(data) < HEADER_SIZE:
        raise WireError("short frame")
    length, tag = _HDR.unpack_from(data)
    if length != len(data) - 4:
        raise WireError(f"frame length {length} does not match payload {len(data) - 4}")
    off = HEADER_SIZE
    try:
        if tag == 1:
            req_id, nr, nc = _S_PULLREQ.unpack_from(data, off)
            off += _S_PULLREQ.size
            rows = np.frombuffer(data, U32, nr, off)
            cols = np.frombuffer(data, U32, nc, off + 4 * nr)
            return PullReq(req_id, rows, cols)
        if tag == 2:
            req_id, nr, nc = _S_PULLRESP.unpack_from(data, off)
            vals = np.frombuffer(data, I64, nr * nc, off + _S_PULLRESP.size).reshape(nr, nc)
            return PullResp(req_id, vals)
        if tag == 3:
            return TxidReq(*_S_TXIDREQ.unpack_from(data, off))
        if tag == 4:
            return TxidResp(*_S_TXIDRESP.unpack_from(data, off))
        if tag == 5:
            client, txid, n = _S_PUSH.unpack_from(data, off)
            cells = np.frombuffer(data, _PUSH_CELL, n, off + _S_PUSH.size)
            return PushData(client, txid, cells["row"], cells["col"], cells["inc"])
        if tag == 6:
            return PushAck(*_S_U64.unpack_from(data, off))
        if tag == 7:
            return TxidRelease(*_S_RELEASE.unpack_from(data, off))
        if tag == 8:
            return ReleaseAck(*_S_U64.unpack_from(data, off))
        if tag == 16:
            return Command(*_S_COMMAND.unpack_from(data, off))
        if tag == 17:
            return Report(*_S_REPORT.unpack_from(data, off))
    except (struct.error, ValueError) as exc:
        raise WireError(f"malformed frame with tag {tag}: {exc}") from None
    raise WireError(f"unknown message tag {tag}")

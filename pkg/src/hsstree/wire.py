"""Binary wire format: frames, key blobs, model blobs and messages.

Everything is big-endian with fixed widths derived from the modulus size:
a group element mod N**2 occupies ceil(2*modulus_bits/8) bytes, so one
ciphertext is four elements (3072 bytes at the 3072-bit profile), and a
share occupies ceil(modulus_bits/8) bytes. Frames and blobs start with a
4-byte magic and a version byte; every decoder raises DecodeError on any
malformed input.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

from .errors import DecodeError
from .hss import Ciphertext, EvalKey, PublicKey
from .protocol import (
    ClientQuery,
    EncryptedBits,
    EncryptedModel,
    EncryptedNodeTest,
    EncryptedTree,
    FeatureMap,
    MODES,
    ServerResponse,
)
from .tree import (
    FEATURE_CATEGORICAL,
    FEATURE_NUMERIC,
    KIND_MEMBER,
    KIND_THRESHOLD,
)

FRAME_MAGIC = b"HSTF"
BLOB_MAGIC = b"HSTB"
VERSION = 1

MSG_MODEL_UPLOAD = 0x01
MSG_QUERY = 0x02
MSG_RESPONSE = 0x03
MSG_ERROR = 0x04
MSG_PING = 0x05
KNOWN_MSG_TYPES = (MSG_MODEL_UPLOAD, MSG_QUERY, MSG_RESPONSE, MSG_ERROR, MSG_PING)

BLOB_PUBLIC_KEY = 0x01
BLOB_EVAL_KEY = 0x02
BLOB_MODEL = 0x03
BLOB_FEATURE_MAP = 0x04

FRAME_HEADER_LEN = 4 + 1 + 1 + 8
MAX_FRAME_PAYLOAD = 1 << 34

MODEL_ID_BYTES = 32
QUERY_ID_BYTES = 16
NONCE_BYTES = 16

# Decoder sanity caps; anything beyond these is a malformed payload.
_MAX_MODULUS_BITS = 1 << 16
_MAX_T = 64
_MAX_HEIGHT = 32
_MAX_TREES = 4096
_MAX_FEATURES = 1 << 20
_MAX_SET = 4096


def element_width(modulus_bits: int) -> int:
    """Serialized width of one group element mod N**2."""
    return (2 * modulus_bits + 7) // 8


def share_width(modulus_bits: int) -> int:
    return (modulus_bits + 7) // 8


def ciphertext_width(modulus_bits: int) -> int:
    return 4 * element_width(modulus_bits)


class Reader:
    def __init__(self, data: bytes):
        self._data = memoryview(data)
        self._pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self._pos + n > len(self._data):
            raise DecodeError("truncated payload")
        out = self._data[self._pos : self._pos + n].tobytes()
        self._pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return int.from_bytes(self.take(2), "big")

    def u32(self) -> int:
        return int.from_bytes(self.take(4), "big")

    def u64(self) -> int:
        return int.from_bytes(self.take(8), "big")

    def big(self, width: int) -> int:
        return int.from_bytes(self.take(width), "big")

    def field(self) -> bytes:
        return self.take(self.u32())

    def expect_end(self) -> None:
        if self._pos != len(self._data):
            raise DecodeError("trailing bytes after payload")


class Writer:
    def __init__(self):
        self._parts: list[bytes] = []

    def raw(self, data: bytes) -> "Writer":
        self._parts.append(bytes(data))
        return self

    def u8(self, v: int) -> "Writer":
        return self.raw(v.to_bytes(1, "big"))

    def u16(self, v: int) -> "Writer":
        return self.raw(v.to_bytes(2, "big"))

    def u32(self, v: int) -> "Writer":
        return self.raw(v.to_bytes(4, "big"))

    def u64(self, v: int) -> "Writer":
        return self.raw(v.to_bytes(8, "big"))

    def big(self, v: int, width: int) -> "Writer":
        return self.raw(int(v).to_bytes(width, "big"))

    def field(self, data: bytes) -> "Writer":
        return self.u32(len(data)).raw(data)

    def getvalue(self) -> bytes:
        return b"".join(self._parts)


# -- frames -------------------------------------------------------------------


def encode_frame(msg_type: int, payload: bytes) -> bytes:
    return (
        FRAME_MAGIC
        + VERSION.to_bytes(1, "big")
        + msg_type.to_bytes(1, "big")
        + len(payload).to_bytes(8, "big")
        + payload
    )


def decode_frame(data: bytes) -> tuple[int, bytes]:
    r = Reader(data)
    if r.take(4) != FRAME_MAGIC:
        raise DecodeError("bad frame magic")
    if r.u8() != VERSION:
        raise DecodeError("unsupported frame version")
    msg_type = r.u8()
    if msg_type not in KNOWN_MSG_TYPES:
        raise DecodeError(f"unknown message type {msg_type:#x}")
    length = r.u64()
    if length > MAX_FRAME_PAYLOAD:
        raise DecodeError("overlong frame length")
    payload = r.take(length)
    r.expect_end()
    return msg_type, payload


def decode_frame_header(header: bytes) -> tuple[int, int]:
    """Validate a 14-byte header, returning (msg_type, payload length)."""
    if len(header) != FRAME_HEADER_LEN:
        raise DecodeError("short frame header")
    if header[:4] != FRAME_MAGIC:
        raise DecodeError("bad frame magic")
    if header[4] != VERSION:
        raise DecodeError("unsupported frame version")
    msg_type = header[5]
    if msg_type not in KNOWN_MSG_TYPES:
        raise DecodeError(f"unknown message type {msg_type:#x}")
    length = int.from_bytes(header[6:], "big")
    if length > MAX_FRAME_PAYLOAD:
        raise DecodeError("overlong frame length")
    return msg_type, length


# -- blob envelope --------------------------------------------------------------


def _blob(kind: int, body: bytes) -> bytes:
    return BLOB_MAGIC + VERSION.to_bytes(1, "big") + kind.to_bytes(1, "big") + body


def _open_blob(data: bytes, kind: int) -> Reader:
    r = Reader(data)
    if r.take(4) != BLOB_MAGIC:
        raise DecodeError("bad blob magic")
    if r.u8() != VERSION:
        raise DecodeError("unsupported blob version")
    if r.u8() != kind:
        raise DecodeError("unexpected blob kind")
    return r


def _read_modulus_bits(r: Reader) -> int:
    bits = r.u32()
    if not 16 <= bits <= _MAX_MODULUS_BITS or bits % 2:
        raise DecodeError("implausible modulus size")
    return bits


# -- keys -----------------------------------------------------------------------


def encode_public_key(pk: PublicKey) -> bytes:
    w = Writer()
    w.u32(pk.modulus_bits)
    w.u16(pk.d_bits)
    for value in (pk.n, pk.g, pk.h, pk.enc_of_d[0], pk.enc_of_d[1]):
        w.field(int(value).to_bytes((int(value).bit_length() + 7) // 8 or 1, "big"))
    return _blob(BLOB_PUBLIC_KEY, w.getvalue())


def decode_public_key(data: bytes) -> PublicKey:
    r = _open_blob(data, BLOB_PUBLIC_KEY)
    bits = _read_modulus_bits(r)
    d_bits = r.u16()
    if not 0 < d_bits < bits:
        raise DecodeError("implausible secret size")
    n, g, h, e0, e1 = (int.from_bytes(r.field(), "big") for _ in range(5))
    r.expect_end()
    if n <= 1:
        raise DecodeError("bad modulus")
    return PublicKey(
        n=n, g=g, h=h, enc_of_d=(e0, e1), modulus_bits=bits, d_bits=d_bits
    )


def encode_eval_key(ek: EvalKey, modulus_bits: int) -> bytes:
    w = Writer()
    w.u32(modulus_bits)
    w.u8(ek.sigma)
    w.field(int(ek.n).to_bytes((int(ek.n).bit_length() + 7) // 8 or 1, "big"))
    w.field(int(ek.d_share).to_bytes(share_width(modulus_bits), "big"))
    w.field(ek.k_prf)
    return _blob(BLOB_EVAL_KEY, w.getvalue())


def decode_eval_key(data: bytes) -> EvalKey:
    r = _open_blob(data, BLOB_EVAL_KEY)
    _read_modulus_bits(r)
    sigma = r.u8()
    if sigma not in (0, 1):
        raise DecodeError("bad server index")
    n = int.from_bytes(r.field(), "big")
    d_share = int.from_bytes(r.field(), "big")
    k_prf = r.field()
    r.expect_end()
    if len(k_prf) != 16:
        raise DecodeError("bad PRF key length")
    return EvalKey(sigma=sigma, d_share=d_share, k_prf=k_prf, n=n)


# -- ciphertexts ------------------------------------------------------------------


def _write_ciphertext(w: Writer, ct: Ciphertext, width: int) -> None:
    for el in (ct.main[0], ct.main[1], ct.companion[0], ct.companion[1]):
        w.big(el, width)


def _read_ciphertext(r: Reader, width: int) -> Ciphertext:
    vals = [r.big(width) for _ in range(4)]
    return Ciphertext(main=(vals[0], vals[1]), companion=(vals[2], vals[3]))


def encode_ciphertext(ct: Ciphertext, modulus_bits: int) -> bytes:
    w = Writer()
    _write_ciphertext(w, ct, element_width(modulus_bits))
    return w.getvalue()


def decode_ciphertext(data: bytes, modulus_bits: int) -> Ciphertext:
    r = Reader(data)
    ct = _read_ciphertext(r, element_width(modulus_bits))
    r.expect_end()
    return ct


# -- encrypted model ---------------------------------------------------------------


_KIND_CODE = {KIND_THRESHOLD: 0, KIND_MEMBER: 1}
_KIND_NAME = {0: KIND_THRESHOLD, 1: KIND_MEMBER}
_FEATURE_CODE = {FEATURE_NUMERIC: 0, FEATURE_CATEGORICAL: 1}
_FEATURE_NAME = {0: FEATURE_NUMERIC, 1: FEATURE_CATEGORICAL}


def _write_dims(w: Writer, model, modulus_bits: int) -> None:
    w.u32(modulus_bits)
    w.u32(model.n)
    w.u16(model.t)
    w.u16(model.frac_bits)
    for kind in model.feature_kinds:
        w.u8(_FEATURE_CODE[kind])


def _read_dims(r: Reader) -> tuple[int, int, int, int, tuple[str, ...]]:
    bits = _read_modulus_bits(r)
    n = r.u32()
    t = r.u16()
    frac_bits = r.u16()
    if not 1 <= n <= _MAX_FEATURES:
        raise DecodeError("implausible feature count")
    if not 1 <= t <= _MAX_T or frac_bits >= t:
        raise DecodeError("implausible bit width")
    kinds = []
    for _ in range(n):
        code = r.u8()
        if code not in _FEATURE_NAME:
            raise DecodeError("unknown feature kind")
        kinds.append(_FEATURE_NAME[code])
    return bits, n, t, frac_bits, tuple(kinds)


def encode_encrypted_model(model: EncryptedModel, modulus_bits: int) -> bytes:
    width = element_width(modulus_bits)
    w = Writer()
    _write_dims(w, model, modulus_bits)
    w.u8(1 if model.is_gbdt else 0)
    if model.is_gbdt:
        _write_ciphertext(w, model.eta_ct, width)
        _write_ciphertext(w, model.bias_ct, width)
    w.u16(len(model.trees))
    for tree in model.trees:
        w.u8(tree.height)
        for test in tree.node_tests:
            w.u8(_KIND_CODE[test.kind])
            if test.kind == KIND_THRESHOLD:
                for ct in test.threshold_bits.bits:
                    _write_ciphertext(w, ct, width)
            else:
                w.u16(len(test.member_bits))
                for member in test.member_bits:
                    for ct in member.bits:
                        _write_ciphertext(w, ct, width)
        for ct in tree.labels:
            _write_ciphertext(w, ct, width)
        for row in tree.feature_rows:
            for ct in row:
                _write_ciphertext(w, ct, width)
    return _blob(BLOB_MODEL, w.getvalue())


def decode_encrypted_model(data: bytes) -> tuple[EncryptedModel, int]:
    """Returns the model plus the modulus_bits it was encoded under."""
    r = _open_blob(data, BLOB_MODEL)
    bits, n, t, frac_bits, kinds = _read_dims(r)
    width = element_width(bits)
    eta_ct = bias_ct = None
    if r.u8():
        eta_ct = _read_ciphertext(r, width)
        bias_ct = _read_ciphertext(r, width)
    n_trees = r.u16()
    if not 1 <= n_trees <= _MAX_TREES:
        raise DecodeError("implausible tree count")
    trees = []
    for _ in range(n_trees):
        height = r.u8()
        if height > _MAX_HEIGHT:
            raise DecodeError("implausible tree height")
        m = (1 << height) - 1
        k = 1 << height
        tests = []
        for _ in range(m):
            code = r.u8()
            if code not in _KIND_NAME:
                raise DecodeError("unknown node kind")
            if _KIND_NAME[code] == KIND_THRESHOLD:
                bits_ = tuple(_read_ciphertext(r, width) for _ in range(t))
                tests.append(
                    EncryptedNodeTest(
                        kind=KIND_THRESHOLD,
                        threshold_bits=EncryptedBits(bits=bits_),
                    )
                )
            else:
                size = r.u16()
                if not 1 <= size <= _MAX_SET:
                    raise DecodeError("implausible member set size")
                members = tuple(
                    EncryptedBits(
                        bits=tuple(_read_ciphertext(r, width) for _ in range(t))
                    )
                    for _ in range(size)
                )
                tests.append(EncryptedNodeTest(kind=KIND_MEMBER, member_bits=members))
        labels = tuple(_read_ciphertext(r, width) for _ in range(k))
        rows = tuple(
            tuple(_read_ciphertext(r, width) for _ in range(n)) for _ in range(m)
        )
        trees.append(
            EncryptedTree(
                height=height,
                node_tests=tuple(tests),
                labels=labels,
                feature_rows=rows,
            )
        )
    r.expect_end()
    model = EncryptedModel(
        trees=tuple(trees),
        n=n,
        t=t,
        frac_bits=frac_bits,
        feature_kinds=kinds,
        eta_ct=eta_ct,
        bias_ct=bias_ct,
    )
    return model, bits


# -- published feature map ----------------------------------------------------------


def encode_feature_map(fmap: FeatureMap, modulus_bits: int) -> bytes:
    width = element_width(modulus_bits)
    w = Writer()
    _write_dims(w, fmap, modulus_bits)
    w.u8(1 if fmap.gbdt else 0)
    w.u16(len(fmap.tree_rows))
    for height, rows in zip(fmap.heights, fmap.tree_rows):
        w.u8(height)
        for row in rows:
            for ct in row:
                _write_ciphertext(w, ct, width)
    return _blob(BLOB_FEATURE_MAP, w.getvalue())


def decode_feature_map(data: bytes) -> tuple[FeatureMap, int]:
    r = _open_blob(data, BLOB_FEATURE_MAP)
    bits, n, t, frac_bits, kinds = _read_dims(r)
    width = element_width(bits)
    gbdt = bool(r.u8())
    n_trees = r.u16()
    if not 1 <= n_trees <= _MAX_TREES:
        raise DecodeError("implausible tree count")
    heights = []
    tree_rows = []
    for _ in range(n_trees):
        height = r.u8()
        if height > _MAX_HEIGHT:
            raise DecodeError("implausible tree height")
        m = (1 << height) - 1
        rows = tuple(
            tuple(_read_ciphertext(r, width) for _ in range(n)) for _ in range(m)
        )
        heights.append(height)
        tree_rows.append(rows)
    r.expect_end()
    fmap = FeatureMap(
        n=n,
        t=t,
        frac_bits=frac_bits,
        feature_kinds=kinds,
        heights=tuple(heights),
        tree_rows=tuple(tree_rows),
        gbdt=gbdt,
    )
    return fmap, bits


# -- online messages -----------------------------------------------------------------


def model_id_of(model_blob: bytes) -> bytes:
    return hashlib.sha256(model_blob).digest()


def encode_model_upload(model_blob: bytes) -> bytes:
    w = Writer()
    w.raw(model_id_of(model_blob))
    w.field(model_blob)
    return w.getvalue()


def decode_model_upload(payload: bytes) -> tuple[bytes, bytes]:
    r = Reader(payload)
    model_id = r.take(MODEL_ID_BYTES)
    blob = r.field()
    r.expect_end()
    if model_id_of(blob) != model_id:
        raise DecodeError("model id does not match blob hash")
    return model_id, blob


_MODE_CODE = {mode: i for i, mode in enumerate(MODES)}
_MODE_NAME = {i: mode for i, mode in enumerate(MODES)}


def encode_query_message(
    model_id: bytes,
    query_id: bytes,
    mode: str,
    query: ClientQuery,
    modulus_bits: int,
) -> bytes:
    width = element_width(modulus_bits)
    w = Writer()
    w.raw(model_id)
    w.raw(query_id)
    w.u8(_MODE_CODE[mode])
    w.u32(modulus_bits)
    w.u16(len(query.selected_bits))
    for selected in query.selected_bits:
        w.u32(len(selected))
        if selected:
            w.u16(selected[0].width)
            for bits in selected:
                for ct in bits.bits:
                    _write_ciphertext(w, ct, width)
        else:
            w.u16(0)
    _write_ciphertext(w, query.mac_key_ct, width)
    w.raw(query.nonce)
    return w.getvalue()


def decode_query_message(payload: bytes) -> tuple[bytes, bytes, str, ClientQuery]:
    r = Reader(payload)
    model_id = r.take(MODEL_ID_BYTES)
    query_id = r.take(QUERY_ID_BYTES)
    mode_code = r.u8()
    if mode_code not in _MODE_NAME:
        raise DecodeError("unknown mode")
    bits = _read_modulus_bits(r)
    width = element_width(bits)
    n_trees = r.u16()
    if not 1 <= n_trees <= _MAX_TREES:
        raise DecodeError("implausible tree count")
    selected = []
    for _ in range(n_trees):
        m = r.u32()
        if m > (1 << _MAX_HEIGHT):
            raise DecodeError("implausible node count")
        t = r.u16()
        if m and not 1 <= t <= _MAX_T:
            raise DecodeError("implausible bit width")
        selected.append(
            tuple(
                EncryptedBits(
                    bits=tuple(_read_ciphertext(r, width) for _ in range(t))
                )
                for _ in range(m)
            )
        )
    mac_ct = _read_ciphertext(r, width)
    nonce = r.take(NONCE_BYTES)
    r.expect_end()
    query = ClientQuery(
        selected_bits=tuple(selected), mac_key_ct=mac_ct, nonce=nonce
    )
    return model_id, query_id, _MODE_NAME[mode_code], query


def encode_response_message(
    query_id: bytes, response: ServerResponse, modulus_bits: int
) -> bytes:
    sw = share_width(modulus_bits)
    w = Writer()
    w.raw(query_id)
    w.u32(modulus_bits)
    w.u8(response.sigma)
    w.u8(_MODE_CODE[response.mode])
    w.u16(len(response.tree_rows))
    for rows in response.tree_rows:
        w.u32(len(rows))
        w.u8(len(rows[0]) if rows else 0)
        for row in rows:
            for share in row:
                w.big(share, sw)
    if response.bias_share is not None:
        w.u8(1)
        w.big(response.bias_share, sw)
        w.big(response.bias_proof_share, sw)
    else:
        w.u8(0)
    return w.getvalue()


def decode_response_message(payload: bytes) -> tuple[bytes, ServerResponse]:
    r = Reader(payload)
    query_id = r.take(QUERY_ID_BYTES)
    bits = _read_modulus_bits(r)
    sw = share_width(bits)
    sigma = r.u8()
    if sigma not in (0, 1):
        raise DecodeError("bad server index")
    mode_code = r.u8()
    if mode_code not in _MODE_NAME:
        raise DecodeError("unknown mode")
    n_trees = r.u16()
    if not 1 <= n_trees <= _MAX_TREES:
        raise DecodeError("implausible tree count")
    tree_rows = []
    for _ in range(n_trees):
        k = r.u32()
        if k > (1 << _MAX_HEIGHT):
            raise DecodeError("implausible leaf count")
        row_width = r.u8()
        if row_width not in (2, 3):
            raise DecodeError("implausible row width")
        tree_rows.append(
            tuple(tuple(r.big(sw) for _ in range(row_width)) for _ in range(k))
        )
    bias_share = bias_proof_share = None
    if r.u8():
        bias_share = r.big(sw)
        bias_proof_share = r.big(sw)
    r.expect_end()
    return query_id, ServerResponse(
        sigma=sigma,
        mode=_MODE_NAME[mode_code],
        tree_rows=tuple(tree_rows),
        bias_share=bias_share,
        bias_proof_share=bias_proof_share,
    )


ERR_UNKNOWN_MODEL = 1
ERR_MALFORMED = 2
ERR_PROTOCOL = 3
ERR_INTERNAL = 4


def encode_error(query_id: bytes, code: int, detail: str) -> bytes:
    w = Writer()
    w.raw(query_id)
    w.u16(code)
    w.field(detail.encode())
    return w.getvalue()


def decode_error(payload: bytes) -> tuple[bytes, int, str]:
    r = Reader(payload)
    query_id = r.take(QUERY_ID_BYTES)
    code = r.u16()
    try:
        detail = r.field().decode()
    except UnicodeDecodeError:
        raise DecodeError("error detail is not UTF-8") from None
    r.expect_end()
    return query_id, code, detail

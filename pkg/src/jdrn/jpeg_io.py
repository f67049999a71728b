"""File ingestion: baseline JPEG entropy decoding and PNM pixel loading.

The JPEG reader stops where the network input begins: it undoes the
entropy coding (Huffman, run-length, DC prediction, restart markers) and
hands back the quantized zigzag-ordered DCT coefficients exactly as
stored, with no dequantization and no inverse transform. Only baseline
sequential 8-bit Huffman streams (SOF0) are supported.

PNM (P5/P6, maxval 255) is the pixel-side fallback for controlled
experiments; an optional flag converts RGB to full-range YCbCr.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    CorruptStream,
    SubsamplingUnsupported,
    TruncatedFile,
    UnsupportedFormat,
)
from .jpeg_ops import CoefficientTensor
from .jpeg_transform import QuantTable
from .tensor_core import DenseTensor

# Marker codes (the byte after 0xFF).
_SOI = 0xD8
_EOI = 0xD9
_SOS = 0xDA
_DQT = 0xDB
_DRI = 0xDD
_DHT = 0xC4
_SOF0 = 0xC0
_RST0 = 0xD0
# SOF codes we must recognize to reject: everything in 0xC0-0xCF that is
# not SOF0, DHT (0xC4), JPG (0xC8) or DAC (0xCC).
_SOF_REJECT = {0xC1, 0xC2, 0xC3, 0xC5, 0xC6, 0xC7, 0xC9, 0xCA, 0xCB, 0xCD, 0xCE, 0xCF}


@dataclass(frozen=True)
class HuffmanTable:
    """One DHT entry: canonical code built from 16 length counts."""

    table_class: int  # 0 = DC, 1 = AC
    table_id: int
    counts: tuple[int, ...]
    symbols: tuple[int, ...]

    def __post_init__(self):
        if len(self.counts) != 16:
            raise CorruptStream("huffman table needs 16 length counts")
        if sum(self.counts) != len(self.symbols) or len(self.symbols) > 256:
            raise CorruptStream("huffman symbol count disagrees with length counts")

    def decoder(self) -> dict[tuple[int, int], int]:
        """(code length, code value) -> symbol, in canonical order."""
        lookup: dict[tuple[int, int], int] = {}
        code = 0
        it = iter(self.symbols)
        for length, count in enumerate(self.counts, start=1):
            for _ in range(count):
                if code >= (1 << length):
                    raise CorruptStream("huffman code overflows its length")
                lookup[(length, code)] = next(it)
                code += 1
            code <<= 1
        return lookup


@dataclass(frozen=True)
class JpegComponent:
    """One color component: sampling factors, table, decoded coefficients.

    coefficients has shape (blocks_y, blocks_x, 64), zigzag order, DC
    prediction already resolved to absolute values.
    """

    component_id: int
    h_samp: int
    v_samp: int
    quant: QuantTable
    coefficients: np.ndarray
    height: int
    width: int


@dataclass(frozen=True)
class ParsedJpeg:
    height: int
    width: int
    components: tuple[JpegComponent, ...]
    restart_interval: int


class _BitReader:
    """MSB-first bit reader over entropy-coded data with 0xFF00 unstuffing."""

    def __init__(self, data: bytes, pos: int):
        self.data = data
        self.pos = pos
        self.acc = 0
        self.nbits = 0

    def read_bit(self) -> int:
        if self.nbits == 0:
            if self.pos >= len(self.data):
                raise TruncatedFile("entropy data ends mid-stream")
            byte = self.data[self.pos]
            if byte == 0xFF:
                if self.pos + 1 >= len(self.data):
                    raise TruncatedFile("stream ends inside a stuffed byte")
                nxt = self.data[self.pos + 1]
                if nxt != 0x00:
                    raise CorruptStream(f"entropy data ran into marker FF{nxt:02X}")
                self.pos += 2
            else:
                self.pos += 1
            self.acc = byte
            self.nbits = 8
        self.nbits -= 1
        return (self.acc >> self.nbits) & 1

    def read_bits(self, n: int) -> int:
        v = 0
        for _ in range(n):
            v = (v << 1) | self.read_bit()
        return v

    def byte_align(self) -> None:
        self.nbits = 0

    def expect_restart(self, index: int) -> None:
        self.byte_align()
        if self.pos + 1 >= len(self.data):
            raise TruncatedFile("stream ends where a restart marker is due")
        if self.data[self.pos] != 0xFF or self.data[self.pos + 1] != _RST0 + index:
            raise CorruptStream(
                f"expected restart marker RST{index}, found "
                f"{self.data[self.pos]:02X}{self.data[self.pos + 1]:02X}"
            )
        self.pos += 2


def _decode_symbol(reader: _BitReader, lookup: dict[tuple[int, int], int]) -> int:
    code = 0
    for length in range(1, 17):
        code = (code << 1) | reader.read_bit()
        sym = lookup.get((length, code))
        if sym is not None:
            return sym
    raise CorruptStream("bit pattern matches no huffman code")


def _receive_extend(reader: _BitReader, size: int) -> int:
    # Magnitude category decode: `size` raw bits, negative range folded low.
    if size == 0:
        return 0
    v = reader.read_bits(size)
    if v < (1 << (size - 1)):
        v -= (1 << size) - 1
    return v


def _decode_block(reader, out, dc_lookup, ac_lookup, pred: int) -> int:
    """Huffman-decode one 64-coefficient block into `out`; returns new DC
    predictor."""
    size = _decode_symbol(reader, dc_lookup)
    if size > 11:
        raise CorruptStream(f"DC magnitude category {size} exceeds baseline range")
    pred += _receive_extend(reader, size)
    out[0] = pred
    k = 1
    while k <= 63:
        rs = _decode_symbol(reader, ac_lookup)
        run, size = rs >> 4, rs & 0x0F
        if size == 0:
            if run == 15:  # ZRL: sixteen zeros
                k += 16
                continue
            break  # EOB
        if size > 10:
            raise CorruptStream(f"AC magnitude category {size} exceeds baseline range")
        k += run
        if k > 63:
            raise CorruptStream("AC run-length walks past the end of the block")
        out[k] = _receive_extend(reader, size)
        k += 1
    return pred


@dataclass
class _FrameComponent:
    component_id: int
    h_samp: int
    v_samp: int
    quant_id: int
    height: int = 0
    width: int = 0
    blocks_y: int = 0
    blocks_x: int = 0
    coefficients: np.ndarray | None = None


def _parse_sof0(segment: bytes):
    if len(segment) < 6:
        raise TruncatedFile("frame header too short")
    precision = segment[0]
    if precision != 8:
        raise UnsupportedFormat(f"{precision}-bit precision not supported (baseline is 8)")
    height = (segment[1] << 8) | segment[2]
    width = (segment[3] << 8) | segment[4]
    n_comp = segment[5]
    if height == 0 or width == 0 or n_comp == 0:
        raise CorruptStream("frame header declares empty image")
    if len(segment) < 6 + 3 * n_comp:
        raise TruncatedFile("frame header truncated")
    comps = []
    for i in range(n_comp):
        cid, samp, tq = segment[6 + 3 * i: 9 + 3 * i]
        h, v = samp >> 4, samp & 0x0F
        if not (1 <= h <= 4 and 1 <= v <= 4):
            raise CorruptStream(f"component {cid} has invalid sampling {h}x{v}")
        comps.append(_FrameComponent(cid, h, v, tq))
    h_max = max(c.h_samp for c in comps)
    v_max = max(c.v_samp for c in comps)
    for c in comps:
        c.width = math.ceil(width * c.h_samp / h_max)
        c.height = math.ceil(height * c.v_samp / v_max)
        c.blocks_y = math.ceil(c.height / 8)
        c.blocks_x = math.ceil(c.width / 8)
        # allocate on the MCU-aligned grid; trimmed after decode
        alloc_y = math.ceil(height / (8 * v_max)) * c.v_samp
        alloc_x = math.ceil(width / (8 * h_max)) * c.h_samp
        c.coefficients = np.zeros((max(alloc_y, c.blocks_y), max(alloc_x, c.blocks_x), 64),
                                  dtype=np.int32)
    return height, width, comps


def _decode_scan(data: bytes, pos: int, frame, scan: list[tuple[_FrameComponent, dict, dict]],
                 restart_interval: int) -> int:
    """Entropy-decode one scan; returns the stream position of the next
    marker. DC predictors reset at every restart marker."""
    height, width, comps = frame
    reader = _BitReader(data, pos)
    preds = {c.component_id: 0 for c, _, _ in scan}

    if len(scan) == 1:
        comp, dc_l, ac_l = scan[0]
        order = [(comp, dc_l, ac_l, by, bx)
                 for by in range(comp.blocks_y) for bx in range(comp.blocks_x)]
        mcus = [[unit] for unit in order]  # one block per MCU when non-interleaved
    else:
        h_max = max(c.h_samp for c in comps)
        v_max = max(c.v_samp for c in comps)
        mcus_y = math.ceil(height / (8 * v_max))
        mcus_x = math.ceil(width / (8 * h_max))
        mcus = []
        for my in range(mcus_y):
            for mx in range(mcus_x):
                units = []
                for comp, dc_l, ac_l in scan:
                    for v in range(comp.v_samp):
                        for h in range(comp.h_samp):
                            units.append((comp, dc_l, ac_l,
                                          my * comp.v_samp + v, mx * comp.h_samp + h))
                mcus.append(units)

    rst_index = 0
    for i, units in enumerate(mcus):
        if restart_interval and i and i % restart_interval == 0:
            reader.expect_restart(rst_index)
            rst_index = (rst_index + 1) & 7
            preds = {cid: 0 for cid in preds}
        for comp, dc_l, ac_l, by, bx in units:
            preds[comp.component_id] = _decode_block(
                reader, comp.coefficients[by, bx], dc_l, ac_l, preds[comp.component_id]
            )
    reader.byte_align()
    return reader.pos


def parse_jpeg(data: bytes) -> ParsedJpeg:
    """Entropy-decode a baseline JPEG down to quantized coefficients."""
    if len(data) < 2 or data[0] != 0xFF or data[1] != _SOI:
        raise CorruptStream("missing SOI marker")
    pos = 2
    quant_tables: dict[int, QuantTable] = {}
    huffman: dict[tuple[int, int], dict] = {}
    frame = None
    restart_interval = 0
    scan_decoded = False

    while True:
        if pos + 1 >= len(data):
            raise TruncatedFile("stream ends before EOI")
        if data[pos] != 0xFF:
            raise CorruptStream(f"expected a marker at byte {pos}, found {data[pos]:02X}")
        pos += 1
        while pos < len(data) and data[pos] == 0xFF:  # fill bytes
            pos += 1
        if pos >= len(data):
            raise TruncatedFile("stream ends inside a marker")
        code = data[pos]
        pos += 1

        if code == _EOI:
            break
        if code in _SOF_REJECT:
            kind = "progressive" if code == 0xC2 else "non-baseline"
            raise UnsupportedFormat(f"{kind} coding (SOF{code - 0xC0}) not supported")
        if code == _SOI or (_RST0 <= code <= _RST0 + 7) or code == 0x01:
            raise CorruptStream(f"unexpected standalone marker FF{code:02X}")

        if pos + 2 > len(data):
            raise TruncatedFile("segment length missing")
        length = (data[pos] << 8) | data[pos + 1]
        if length < 2 or pos + length > len(data):
            raise TruncatedFile("segment extends past end of stream")
        segment = data[pos + 2: pos + length]
        pos += length

        if code == _DQT:
            off = 0
            while off < len(segment):
                pq, tq = segment[off] >> 4, segment[off] & 0x0F
                if pq != 0:
                    raise UnsupportedFormat("16-bit quantization tables not supported")
                if off + 65 > len(segment):
                    raise TruncatedFile("quantization table truncated")
                quant_tables[tq] = QuantTable(tuple(segment[off + 1: off + 65]))
                off += 65
        elif code == _DHT:
            off = 0
            while off < len(segment):
                if off + 17 > len(segment):
                    raise TruncatedFile("huffman table truncated")
                cls, tid = segment[off] >> 4, segment[off] & 0x0F
                counts = tuple(segment[off + 1: off + 17])
                total = sum(counts)
                if off + 17 + total > len(segment):
                    raise TruncatedFile("huffman symbols truncated")
                symbols = tuple(segment[off + 17: off + 17 + total])
                huffman[(cls, tid)] = HuffmanTable(cls, tid, counts, symbols).decoder()
                off += 17 + total
        elif code == _SOF0:
            if frame is not None:
                raise CorruptStream("multiple frame headers")
            frame = _parse_sof0(segment)
        elif code == _DRI:
            if len(segment) < 2:
                raise TruncatedFile("restart interval segment truncated")
            restart_interval = (segment[0] << 8) | segment[1]
        elif code == _SOS:
            if frame is None:
                raise CorruptStream("scan before frame header")
            n = segment[0]
            if len(segment) < 1 + 2 * n + 3:
                raise TruncatedFile("scan header truncated")
            by_id = {c.component_id: c for c in frame[2]}
            scan = []
            for i in range(n):
                cid, tables = segment[1 + 2 * i], segment[2 + 2 * i]
                if cid not in by_id:
                    raise CorruptStream(f"scan references unknown component {cid}")
                dc_id, ac_id = tables >> 4, tables & 0x0F
                if (0, dc_id) not in huffman or (1, ac_id) not in huffman:
                    raise CorruptStream(f"scan references undefined huffman table for component {cid}")
                scan.append((by_id[cid], huffman[(0, dc_id)], huffman[(1, ac_id)]))
            pos = _decode_scan(data, pos, frame, scan, restart_interval)
            scan_decoded = True
        # APPn / COM / other length-prefixed segments: skipped

    if frame is None or not scan_decoded:
        raise CorruptStream("stream ended without a decoded scan")

    height, width, comps = frame
    components = []
    for c in comps:
        if c.quant_id not in quant_tables:
            raise CorruptStream(f"component {c.component_id} references missing quantization table")
        coeffs = np.ascontiguousarray(c.coefficients[:c.blocks_y, :c.blocks_x])
        if coeffs.min() < -2048 or coeffs.max() > 2047:
            raise CorruptStream("decoded coefficient outside the baseline range")
        components.append(JpegComponent(c.component_id, c.h_samp, c.v_samp,
                                        quant_tables[c.quant_id], coeffs, c.height, c.width))
    return ParsedJpeg(height, width, tuple(components), restart_interval)


# Full-range BT.601 (JFIF) conversion, chroma offset +128:
#   Y  =  0.299 R + 0.587 G + 0.114 B
#   Cb = -0.168736 R - 0.331264 G + 0.5 B + 128
#   Cr =  0.5 R - 0.418688 G - 0.081312 B + 128
_RGB_TO_YCBCR = np.array([
    [0.299, 0.587, 0.114],
    [-0.168736, -0.331264, 0.5],
    [0.5, -0.418688, -0.081312],
])


def load_pnm(data: bytes, yuv: bool = False) -> list[np.ndarray]:
    """Load binary P5 (one plane) or P6 (three planes, RGB order).

    Values come back as float64 in [0, 255]. With yuv=True a P6 image is
    converted with the matrix above; chroma planes get the +128 offset
    and are not clamped, so extreme saturations may exceed the range by
    a fraction.
    """
    pos = 0

    def token() -> bytes:
        nonlocal pos
        while pos < len(data):
            ch = data[pos:pos + 1]
            if ch == b"#":
                while pos < len(data) and data[pos] not in (0x0A, 0x0D):
                    pos += 1
            elif ch.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise TruncatedFile("header ends early")
        return data[start:pos]

    magic = token()
    if magic not in (b"P5", b"P6"):
        raise UnsupportedFormat(f"not a binary PGM/PPM file (magic {magic!r})")
    try:
        width, height, maxval = int(token()), int(token()), int(token())
    except ValueError:
        raise UnsupportedFormat("non-numeric header field") from None
    if maxval != 255:
        raise UnsupportedFormat(f"maxval {maxval} not supported (need 255)")
    if width < 1 or height < 1:
        raise UnsupportedFormat("degenerate image dimensions")
    pos += 1  # single whitespace after maxval

    channels = 1 if magic == b"P5" else 3
    need = width * height * channels
    raw = data[pos:pos + need]
    if len(raw) < need:
        raise TruncatedFile(f"pixel data short by {need - len(raw)} bytes")
    pixels = np.frombuffer(raw, dtype=np.uint8).astype(np.float64)
    if channels == 1:
        return [pixels.reshape(height, width)]
    rgb = pixels.reshape(height, width, 3)
    if yuv:
        ycc = rgb @ _RGB_TO_YCBCR.T
        ycc[:, :, 1:] += 128.0
        return [ycc[:, :, 0], ycc[:, :, 1], ycc[:, :, 2]]
    return [rgb[:, :, 0], rgb[:, :, 1], rgb[:, :, 2]]


def coefficients_for_network(parsed: ParsedJpeg) -> CoefficientTensor:
    """Stack parsed component planes into a (1, channels, by, bx, 64)
    activation tensor.

    Requires every component at full resolution (grayscale or 4:4:4).
    When components carry different quantization tables, their
    coefficients are rescaled exactly onto component 0's table
    (c * q_comp / q_ref preserves the dequantized values).
    """
    comps = parsed.components
    if any(c.h_samp != comps[0].h_samp or c.v_samp != comps[0].v_samp for c in comps):
        raise SubsamplingUnsupported("components have unequal sampling factors")
    if any(c.coefficients.shape != comps[0].coefficients.shape for c in comps):
        raise SubsamplingUnsupported("components have unequal block grids")
    ref = comps[0].quant
    ref_q = ref.as_vector()
    planes = []
    for c in comps:
        plane = c.coefficients.astype(np.float64)
        if c.quant != ref:
            plane *= c.quant.as_vector() / ref_q
        planes.append(plane)
    stacked = np.stack(planes)[None, ...]
    return CoefficientTensor(DenseTensor(stacked), ref)

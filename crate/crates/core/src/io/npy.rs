//! Tensor dumps in the npy layout.
//!
//! Written files are version 1.0: the magic `\x93NUMPY`, a little-endian
//! `u16` header length, and an ASCII dict literal padded with spaces and a
//! trailing newline so the payload starts on a 64-byte boundary. The payload
//! is row-major and little-endian. Reading also accepts version 2.0 and 3.0
//! headers (`u32` length).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::feature::{FeatureMap, LabelMask, SoftMask};

pub(crate) const MAGIC: &[u8; 6] = b"\x93NUMPY";
const ALIGN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    U8,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::U8 => 1,
        }
    }

    fn descr(self) -> &'static str {
        match self {
            DType::F32 => "<f4",
            DType::U8 => "|u1",
        }
    }

    fn parse(descr: &str) -> Result<Self> {
        match descr {
            "<f4" | "=f4" => Ok(DType::F32),
            "|u1" | "<u1" | "=u1" | ">u1" | "u1" => Ok(DType::U8),
            other => Err(Error::UnsupportedDtype(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    U8(Vec<u8>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::U8(_) => DType::U8,
        }
    }
}

/// How a 3-d feature dump orders its axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Layout {
    /// `H×W×C`
    #[default]
    ChannelLast,
    /// `C×H×W`
    ChannelFirst,
}

impl std::str::FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hwc" => Ok(Layout::ChannelLast),
            "chw" => Ok(Layout::ChannelFirst),
            other => Err(Error::InvalidValue(format!("unknown layout {other:?}"))),
        }
    }
}

impl Layout {
    pub fn as_str(self) -> &'static str {
        match self {
            Layout::ChannelLast => "hwc",
            Layout::ChannelFirst => "chw",
        }
    }
}

/// A shaped, typed, row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorDump {
    shape: Vec<usize>,
    data: TensorData,
}

fn element_count(shape: &[usize]) -> Result<usize> {
    shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::ShapeOverflow(shape.to_vec()))
}

impl TensorDump {
    pub fn new(shape: Vec<usize>, data: TensorData) -> Result<Self> {
        let n = element_count(&shape)?;
        if n != data.len() {
            return Err(Error::dims(
                format!("{n} elements for shape {shape:?}"),
                format!("{} elements", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    /// Shape without leading unit (batch) axes beyond `rank`.
    fn squeezed(&self, rank: usize) -> &[usize] {
        let mut s = self.shape.as_slice();
        while s.len() > rank && s[0] == 1 {
            s = &s[1..];
        }
        s
    }

    pub fn as_f32(&self) -> Vec<f32> {
        match &self.data {
            TensorData::F32(v) => v.clone(),
            TensorData::U8(v) => v.iter().map(|&x| f32::from(x)).collect(),
        }
    }

    /// Interprets a 2-d (`H×W`) or 3-d dump as a feature map.
    pub fn to_feature_map(&self, layout: Layout) -> Result<FeatureMap> {
        let values = self.as_f32();
        match (self.squeezed(3), layout) {
            ([h, w], _) => FeatureMap::new(*h, *w, 1, values),
            ([h, w, c], Layout::ChannelLast) => FeatureMap::new(*h, *w, *c, values),
            ([c, h, w], Layout::ChannelFirst) => FeatureMap::from_channel_first(*c, *h, *w, &values),
            (other, _) => Err(Error::dims("a 2-d or 3-d feature tensor", format!("{other:?}"))),
        }
    }

    /// Interprets an `H×W` dump as a label mask. Float masks are thresholded
    /// at 0.5; integer masks keep their labels.
    pub fn to_label_mask(&self) -> Result<LabelMask> {
        let [h, w] = *self.squeezed(2) else {
            return Err(Error::dims("an H×W mask", format!("{:?}", self.shape)));
        };
        match &self.data {
            TensorData::U8(v) => LabelMask::infer(h, w, v.clone()),
            TensorData::F32(v) => LabelMask::binary(h, w, v.iter().map(|&x| u8::from(x >= 0.5)).collect()),
        }
    }

    /// Interprets an `H×W` float dump as soft object weights.
    pub fn to_soft_mask(&self) -> Result<SoftMask> {
        let [h, w] = *self.squeezed(2) else {
            return Err(Error::dims("an H×W mask", format!("{:?}", self.shape)));
        };
        match &self.data {
            TensorData::F32(v) => SoftMask::new(h, w, v.iter().map(|&x| f64::from(x)).collect()),
            TensorData::U8(v) => SoftMask::new(h, w, v.iter().map(|&x| f64::from(x.min(1))).collect()),
        }
    }

    pub fn from_feature_map(f: &FeatureMap) -> Self {
        Self {
            shape: vec![f.height(), f.width(), f.channels()],
            data: TensorData::F32(f.values().to_vec()),
        }
    }

    pub fn from_label_mask(m: &LabelMask) -> Self {
        Self {
            shape: vec![m.height(), m.width()],
            data: TensorData::U8(m.labels().to_vec()),
        }
    }

    /// Float32 tensor from double values (gradients, heatmaps).
    pub fn from_f64(shape: Vec<usize>, values: &[f64]) -> Result<Self> {
        Self::new(shape, TensorData::F32(values.iter().map(|&v| v as f32).collect()))
    }

    pub fn encode(&self) -> Vec<u8> {
        let shape = match self.shape.as_slice() {
            [] => "()".to_string(),
            [d] => format!("({d},)"),
            dims => format!(
                "({})",
                dims.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
            ),
        };
        let mut header = format!(
            "{{'descr': '{}', 'fortran_order': False, 'shape': {}, }}",
            self.dtype().descr(),
            shape
        );
        // magic (6) + version (2) + length (2) + header + '\n'
        let unpadded = MAGIC.len() + 4 + header.len() + 1;
        let padding = (ALIGN - unpadded % ALIGN) % ALIGN;
        header.extend(std::iter::repeat_n(' ', padding));
        header.push('\n');

        let mut out = Vec::with_capacity(MAGIC.len() + 4 + header.len() + self.data.len() * self.dtype().size());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&[1, 0]);
        out.extend_from_slice(&(header.len() as u16).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        match &self.data {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::U8(v) => out.extend_from_slice(v),
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::MalformedHeader {
                offset: 0,
                reason: "missing \\x93NUMPY magic".into(),
            });
        }
        let version = bytes.get(6..8).ok_or_else(|| truncated_header(6))?;
        let (len_bytes, header_start) = match version[0] {
            1 => (2, 10),
            2 | 3 => (4, 12),
            v => {
                return Err(Error::MalformedHeader {
                    offset: 6,
                    reason: format!("unsupported format version {v}.{}", version[1]),
                })
            }
        };
        let raw_len = bytes.get(8..8 + len_bytes).ok_or_else(|| truncated_header(8))?;
        let header_len = if len_bytes == 2 {
            usize::from(u16::from_le_bytes([raw_len[0], raw_len[1]]))
        } else {
            u32::from_le_bytes([raw_len[0], raw_len[1], raw_len[2], raw_len[3]]) as usize
        };
        let header = bytes
            .get(header_start..header_start + header_len)
            .ok_or_else(|| truncated_header(header_start))?;
        let header = std::str::from_utf8(header).map_err(|e| Error::MalformedHeader {
            offset: header_start + e.valid_up_to(),
            reason: "header is not valid text".into(),
        })?;
        let dict = HeaderParser::new(header, header_start).parse()?;

        let n = element_count(&dict.shape)?;
        let payload = &bytes[header_start + header_len..];
        let expected = n
            .checked_mul(dict.dtype.size())
            .ok_or_else(|| Error::ShapeOverflow(dict.shape.clone()))?;
        if payload.len() < expected {
            return Err(Error::TruncatedPayload {
                expected,
                found: payload.len(),
            });
        }
        if payload.len() > expected {
            return Err(Error::MalformedHeader {
                offset: header_start + header_len + expected,
                reason: format!("{} trailing bytes after payload", payload.len() - expected),
            });
        }
        let data = match dict.dtype {
            DType::F32 => TensorData::F32(
                payload
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                    .collect(),
            ),
            DType::U8 => TensorData::U8(payload.to_vec()),
        };
        Ok(Self {
            shape: dict.shape,
            data,
        })
    }
}

fn truncated_header(offset: usize) -> Error {
    Error::MalformedHeader {
        offset,
        reason: "file ends inside the header".into(),
    }
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<TensorDump> {
    TensorDump::decode(&fs::read(path)?)
}

pub fn write_tensor(path: impl AsRef<Path>, t: &TensorDump) -> Result<()> {
    fs::write(path, t.encode())?;
    Ok(())
}

struct HeaderDict {
    dtype: DType,
    shape: Vec<usize>,
}

/// Parser for the Python dict literal in an npy header.
struct HeaderParser<'a> {
    src: &'a [u8],
    pos: usize,
    base: usize,
}

impl<'a> HeaderParser<'a> {
    fn new(src: &'a str, base: usize) -> Self {
        Self {
            src: src.as_bytes(),
            pos: 0,
            base,
        }
    }

    fn error(&self, reason: impl Into<String>) -> Error {
        Error::MalformedHeader {
            offset: self.base + self.pos,
            reason: reason.into(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expect(&mut self, byte: u8) -> Result<()> {
        if self.peek() == Some(byte) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(format!("expected '{}'", byte as char)))
        }
    }

    fn string(&mut self) -> Result<&'a str> {
        let quote = match self.peek() {
            Some(q @ (b'\'' | b'"')) => q,
            _ => return Err(self.error("expected a quoted string")),
        };
        self.pos += 1;
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos] != quote {
            self.pos += 1;
        }
        if self.pos == self.src.len() {
            return Err(self.error("unterminated string"));
        }
        let s = std::str::from_utf8(&self.src[start..self.pos]).expect("header validated as utf-8");
        self.pos += 1;
        Ok(s)
    }

    fn word(&mut self) -> &'a str {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_alphanumeric() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.src[start..self.pos]).expect("ascii")
    }

    fn shape(&mut self) -> Result<Vec<usize>> {
        self.expect(b'(')?;
        let mut dims = Vec::new();
        loop {
            if self.peek() == Some(b')') {
                self.pos += 1;
                return Ok(dims);
            }
            let at = self.pos;
            let digits = self.word();
            let dim = digits.parse::<usize>().map_err(|_| {
                self.pos = at;
                self.error(format!("invalid dimension {digits:?}"))
            })?;
            dims.push(dim);
            match self.peek() {
                Some(b',') => self.pos += 1,
                Some(b')') => {}
                _ => return Err(self.error("expected ',' or ')' in shape")),
            }
        }
    }

    fn parse(mut self) -> Result<HeaderDict> {
        self.expect(b'{')?;
        let mut descr = None;
        let mut fortran = None;
        let mut shape = None;
        loop {
            if self.peek() == Some(b'}') {
                self.pos += 1;
                break;
            }
            let key_at = self.pos;
            let key = self.string()?;
            self.expect(b':')?;
            match key {
                "descr" => {
                    let at = self.pos;
                    let d = self.string()?;
                    descr = Some(DType::parse(d).inspect_err(|_| self.pos = at)?);
                }
                "fortran_order" => {
                    fortran = Some(match self.word() {
                        "False" => false,
                        "True" => true,
                        other => return Err(self.error(format!("invalid fortran_order {other:?}"))),
                    });
                }
                "shape" => shape = Some(self.shape()?),
                other => {
                    self.pos = key_at;
                    return Err(self.error(format!("unexpected key {other:?}")));
                }
            }
            match self.peek() {
                Some(b',') => self.pos += 1,
                Some(b'}') => {}
                _ => return Err(self.error("expected ',' or '}'")),
            }
        }
        if self.src[self.pos..].iter().any(|b| !b.is_ascii_whitespace()) {
            return Err(self.error("unexpected text after header dict"));
        }
        match fortran {
            Some(false) => {}
            Some(true) => {
                return Err(self.error("fortran_order True is not supported"));
            }
            None => return Err(self.error("missing key 'fortran_order'")),
        }
        Ok(HeaderDict {
            dtype: descr.ok_or_else(|| self.error("missing key 'descr'"))?,
            shape: shape.ok_or_else(|| self.error("missing key 'shape'"))?,
        })
    }
}

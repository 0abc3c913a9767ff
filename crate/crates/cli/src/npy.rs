//! NPY v1.0 arrays, little-endian, C order.

use std::fmt::Write as _;

use crate::error::{HarnessError, Result};

const MAGIC: &[u8] = b"\x93NUMPY";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    U8,
    U32,
    I64,
    F32,
    F64,
}

impl Dtype {
    fn descr(self) -> &'static str {
        match self {
            Dtype::U8 => "|u1",
            Dtype::U32 => "<u4",
            Dtype::I64 => "<i8",
            Dtype::F32 => "<f4",
            Dtype::F64 => "<f8",
        }
    }

    fn from_descr(s: &str) -> Option<Self> {
        Some(match s {
            "|u1" | "<u1" | "|b1" => Dtype::U8,
            "<u4" => Dtype::U32,
            "<i8" => Dtype::I64,
            "<f4" => Dtype::F32,
            "<f8" => Dtype::F64,
            _ => return None,
        })
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::U8 => 1,
            Dtype::U32 => 4,
            Dtype::I64 | Dtype::F64 => 8,
            Dtype::F32 => 4,
        }
    }
}

/// A decoded array: dtype, shape and the raw little-endian payload.
#[derive(Debug, Clone, PartialEq)]
pub struct Npy {
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    data: Vec<u8>,
}

fn bad(msg: impl Into<String>) -> HarnessError {
    HarnessError::Format(format!("npy: {}", msg.into()))
}

impl Npy {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn from_f32(shape: &[usize], v: &[f32]) -> Self {
        Self::pack(Dtype::F32, shape, v.iter().flat_map(|x| x.to_le_bytes()).collect())
    }

    pub fn from_i64(shape: &[usize], v: &[i64]) -> Self {
        Self::pack(Dtype::I64, shape, v.iter().flat_map(|x| x.to_le_bytes()).collect())
    }

    pub fn from_u32(shape: &[usize], v: &[u32]) -> Self {
        Self::pack(Dtype::U32, shape, v.iter().flat_map(|x| x.to_le_bytes()).collect())
    }

    pub fn from_u8(shape: &[usize], v: &[u8]) -> Self {
        Self::pack(Dtype::U8, shape, v.to_vec())
    }

    fn pack(dtype: Dtype, shape: &[usize], data: Vec<u8>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>() * dtype.size(),
            data.len(),
            "payload does not match shape"
        );
        Self {
            dtype,
            shape: shape.to_vec(),
            data,
        }
    }

    fn words<const W: usize>(&self) -> impl Iterator<Item = [u8; W]> + '_ {
        self.data.chunks_exact(W).map(|c| c.try_into().unwrap())
    }

    /// Values as f32; f64 arrays are narrowed.
    pub fn to_f32(&self) -> Result<Vec<f32>> {
        match self.dtype {
            Dtype::F32 => Ok(self.words::<4>().map(f32::from_le_bytes).collect()),
            Dtype::F64 => Ok(self.words::<8>().map(|b| f64::from_le_bytes(b) as f32).collect()),
            d => Err(bad(format!("expected a float array, found {}", d.descr()))),
        }
    }

    /// Values of any integer dtype, widened to i64.
    pub fn to_i64(&self) -> Result<Vec<i64>> {
        match self.dtype {
            Dtype::I64 => Ok(self.words::<8>().map(i64::from_le_bytes).collect()),
            Dtype::U32 => Ok(self.words::<4>().map(|b| u32::from_le_bytes(b) as i64).collect()),
            Dtype::U8 => Ok(self.data.iter().map(|&b| b as i64).collect()),
            d => Err(bad(format!("expected an integer array, found {}", d.descr()))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let shape = match self.shape.len() {
            1 => format!("({},)", self.shape[0]),
            _ => {
                let dims: Vec<String> = self.shape.iter().map(usize::to_string).collect();
                format!("({})", dims.join(", "))
            }
        };
        let mut header = String::new();
        write!(
            header,
            "{{'descr': '{}', 'fortran_order': False, 'shape': {}, }}",
            self.dtype.descr(),
            shape
        )
        .unwrap();
        // Pad so that the payload starts on a 64-byte boundary.
        let unpadded = MAGIC.len() + 2 + 2 + header.len() + 1;
        let pad = (64 - unpadded % 64) % 64;
        header.extend(std::iter::repeat(' ').take(pad));
        header.push('\n');
        let mut out = Vec::with_capacity(MAGIC.len() + 4 + header.len() + self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&[1, 0]);
        out.extend_from_slice(&(header.len() as u16).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(&self.data);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 10 || &bytes[..6] != MAGIC {
            return Err(bad("missing magic string"));
        }
        let (header_len, start) = match bytes[6] {
            1 => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10),
            2 | 3 => {
                if bytes.len() < 12 {
                    return Err(bad("truncated header"));
                }
                (u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize, 12)
            }
            v => return Err(bad(format!("unsupported version {v}"))),
        };
        let end = start + header_len;
        let header = bytes
            .get(start..end)
            .and_then(|h| std::str::from_utf8(h).ok())
            .ok_or_else(|| bad("truncated or non-UTF-8 header"))?;
        let descr = dict_value(header, "descr")
            .map(|v| v.trim_matches(|c| c == '\'' || c == '"'))
            .ok_or_else(|| bad("header lacks descr"))?;
        let dtype = Dtype::from_descr(descr).ok_or_else(|| bad(format!("unsupported dtype {descr}")))?;
        match dict_value(header, "fortran_order") {
            Some("False") => {}
            Some(_) => return Err(bad("Fortran-ordered arrays are not supported")),
            None => return Err(bad("header lacks fortran_order")),
        }
        let shape = parse_shape(header)?;
        let want = shape.iter().product::<usize>() * dtype.size();
        let data = &bytes[end..];
        if data.len() != want {
            return Err(bad(format!(
                "payload has {} bytes, shape {:?} needs {want}",
                data.len(),
                shape
            )));
        }
        Ok(Self {
            dtype,
            shape,
            data: data.to_vec(),
        })
    }
}

/// The raw text after `'key':` up to the next top-level comma.
fn dict_value<'h>(header: &'h str, key: &str) -> Option<&'h str> {
    let at = header
        .find(&format!("'{key}'"))
        .or_else(|| header.find(&format!("\"{key}\"")))?;
    let rest = &header[at + key.len() + 2..];
    let rest = rest.trim_start().strip_prefix(':')?.trim_start();
    let end = rest.find([',', '}']).unwrap_or(rest.len());
    Some(rest[..end].trim())
}

fn parse_shape(header: &str) -> Result<Vec<usize>> {
    let at = header.find("'shape'").ok_or_else(|| bad("header lacks shape"))?;
    let rest = &header[at..];
    let open = rest.find('(').ok_or_else(|| bad("malformed shape"))?;
    let close = rest.find(')').ok_or_else(|| bad("malformed shape"))?;
    rest[open + 1..close]
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.trim_end_matches('L').parse().map_err(|_| bad(format!("bad dimension {s}"))))
        .collect()
}

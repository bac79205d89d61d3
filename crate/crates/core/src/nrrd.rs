//! NRRD container I/O for volumes, label maps and probability fields.
//!
//! Written files are attached-header `NRRD0004`, raw little-endian encoding, with
//! spacing carried by diagonal `space directions` in micrometres. Detached headers
//! (`data file:`) are accepted on read.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::volume::{BinaryShape, ClassProbabilities, Dims3, LabelMap, Meta, Spacing, Volume};

const MAGIC_PREFIX: &str = "NRRD000";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ElemType {
    U8,
    F32,
    F64,
}

impl ElemType {
    fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "uchar" | "unsigned char" | "uint8" | "uint8_t" => Ok(ElemType::U8),
            "float" => Ok(ElemType::F32),
            "double" => Ok(ElemType::F64),
            other => Err(Error::Format(format!("unsupported NRRD type '{other}'"))),
        }
    }

    fn size(self) -> usize {
        match self {
            ElemType::U8 => 1,
            ElemType::F32 => 4,
            ElemType::F64 => 8,
        }
    }

    fn name(self) -> &'static str {
        match self {
            ElemType::U8 => "uchar",
            ElemType::F32 => "float",
            ElemType::F64 => "double",
        }
    }
}

#[derive(Debug)]
struct Header {
    elem: ElemType,
    sizes: Vec<usize>,
    /// Per axis; `None` for a `none` (non-spatial) axis.
    directions: Vec<Option<[f64; 3]>>,
    meta: Meta,
    data_file: Option<PathBuf>,
}

struct Raw {
    header: Header,
    payload: Vec<u8>,
}

fn parse_vector(s: &str) -> Result<Option<[f64; 3]>> {
    let s = s.trim();
    if s == "none" {
        return Ok(None);
    }
    let inner = s
        .strip_prefix('(')
        .and_then(|x| x.strip_suffix(')'))
        .ok_or_else(|| Error::Format(format!("malformed space direction '{s}'")))?;
    let parts: Vec<f64> = inner
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Format(format!("malformed space direction '{s}': {e}")))?;
    if parts.len() != 3 {
        return Err(Error::Format(format!("space direction '{s}' must have 3 components")));
    }
    Ok(Some([parts[0], parts[1], parts[2]]))
}

fn split_directions(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut depth = 0;
    for ch in s.chars() {
        match ch {
            '(' => {
                depth += 1;
                cur.push(ch);
            }
            ')' => {
                depth -= 1;
                cur.push(ch);
                if depth == 0 {
                    out.push(std::mem::take(&mut cur));
                }
            }
            c if c.is_whitespace() && depth == 0 => {
                if !cur.trim().is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                cur.clear();
            }
            c => cur.push(c),
        }
    }
    if !cur.trim().is_empty() {
        out.push(cur);
    }
    out
}

fn read_raw(path: &Path) -> Result<Raw> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (header, offset) = parse_header(&bytes, path)?;
    let payload = match &header.data_file {
        Some(df) => {
            let p = if df.is_absolute() { df.clone() } else { path.parent().unwrap_or(Path::new(".")).join(df) };
            fs::read(&p).map_err(|e| Error::io(&p, e))?
        }
        None => bytes[offset..].to_vec(),
    };
    let n: usize = header.sizes.iter().product();
    let expected = n * header.elem.size();
    if payload.len() != expected {
        return Err(Error::Validation(format!(
            "{}: payload has {} bytes, sizes {:?} of {} require {}",
            path.display(),
            payload.len(),
            header.sizes,
            header.elem.name(),
            expected
        )));
    }
    Ok(Raw { header, payload })
}

fn parse_header(bytes: &[u8], path: &Path) -> Result<(Header, usize)> {
    let mut pos = 0;
    let mut lines = Vec::new();
    loop {
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Format(format!("{}: header not terminated by a blank line", path.display())))?;
        let line = std::str::from_utf8(&bytes[pos..pos + end])
            .map_err(|_| Error::Format("header is not valid UTF-8".into()))?
            .trim_end_matches('\r')
            .to_string();
        pos += end + 1;
        if line.is_empty() {
            break;
        }
        lines.push(line);
        if pos >= bytes.len() {
            // detached header files may end without the blank separator
            break;
        }
    }
    let magic = lines.first().ok_or_else(|| Error::Format("empty file".into()))?;
    if !magic.starts_with(MAGIC_PREFIX) {
        return Err(Error::Format(format!("{}: missing NRRD magic", path.display())));
    }

    let mut fields = BTreeMap::new();
    let mut meta = Meta::new();
    for line in &lines[1..] {
        if line.starts_with('#') {
            continue;
        }
        if let Some((k, v)) = line.split_once(":=") {
            meta.insert(k.to_string(), v.to_string());
        } else if let Some((k, v)) = line.split_once(": ") {
            fields.insert(k.trim().to_ascii_lowercase(), v.trim().to_string());
        } else {
            return Err(Error::Format(format!("malformed header line '{line}'")));
        }
    }
    let field = |k: &str| fields.get(k).ok_or_else(|| Error::Format(format!("missing required field '{k}'")));

    let elem = ElemType::parse(field("type")?)?;
    let dimension: usize =
        field("dimension")?.parse().map_err(|_| Error::Format("dimension is not an integer".into()))?;
    let sizes: Vec<usize> = field("sizes")?
        .split_whitespace()
        .map(|s| s.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Format("sizes must be integers".into()))?;
    if sizes.len() != dimension {
        return Err(Error::Format(format!("sizes lists {} axes but dimension is {dimension}", sizes.len())));
    }
    let encoding = field("encoding")?;
    if encoding != "raw" {
        return Err(Error::Format(format!("unsupported encoding '{encoding}' (only raw)")));
    }
    if elem.size() > 1 {
        let endian = field("endian")?;
        if endian != "little" {
            return Err(Error::Format(format!("unsupported endian '{endian}'")));
        }
    }
    let directions: Vec<Option<[f64; 3]>> = split_directions(field("space directions")?)
        .iter()
        .map(|s| parse_vector(s))
        .collect::<Result<_>>()?;
    if directions.len() != dimension {
        return Err(Error::Format(format!(
            "space directions lists {} axes but dimension is {dimension}",
            directions.len()
        )));
    }
    let data_file = fields.get("data file").or_else(|| fields.get("datafile")).map(PathBuf::from);
    Ok((Header { elem, sizes, directions, meta, data_file }, pos))
}

fn spatial_header(h: &Header, want_dim: usize, path: &Path) -> Result<(Dims3, Spacing)> {
    if h.sizes.len() != want_dim {
        return Err(Error::Format(format!(
            "{}: expected a {want_dim}-dimensional NRRD, header declares {}",
            path.display(),
            h.sizes.len()
        )));
    }
    let mut sp = [0.0f64; 3];
    for (axis, slot) in sp.iter_mut().enumerate() {
        let v = h.directions[axis].ok_or_else(|| {
            Error::Validation(format!("{}: spatial axis {axis} has no space direction", path.display()))
        })?;
        for (j, &c) in v.iter().enumerate() {
            if j != axis && c != 0.0 {
                return Err(Error::Validation(format!(
                    "{}: only axis-aligned space directions are supported",
                    path.display()
                )));
            }
        }
        *slot = v[axis];
    }
    let spacing = Spacing::new(sp[0], sp[1], sp[2]);
    spacing.validate()?;
    Ok((Dims3::new(h.sizes[0], h.sizes[1], h.sizes[2]), spacing))
}

fn fmt_dir(axis: usize, s: f64) -> String {
    let mut v = [0.0f64; 3];
    v[axis] = s;
    format!("({},{},{})", v[0], v[1], v[2])
}

fn write_file(path: &Path, elem: ElemType, sizes: &[usize], spacing: Spacing, meta: &Meta, payload: &[u8]) -> Result<()> {
    let mut head = String::new();
    head.push_str("NRRD0004\n");
    head.push_str("# Complete NRRD file format specification at:\n");
    head.push_str("# http://teem.sourceforge.net/nrrd/format.html\n");
    head.push_str(&format!("type: {}\n", elem.name()));
    head.push_str(&format!("dimension: {}\n", sizes.len()));
    head.push_str("space dimension: 3\n");
    head.push_str(&format!(
        "sizes: {}\n",
        sizes.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(" ")
    ));
    let mut dirs = vec![fmt_dir(0, spacing.w), fmt_dir(1, spacing.h), fmt_dir(2, spacing.d)];
    let mut kinds = vec!["domain"; 3];
    if sizes.len() == 4 {
        dirs.push("none".into());
        kinds.push("list");
    }
    head.push_str(&format!("space directions: {}\n", dirs.join(" ")));
    head.push_str(&format!("kinds: {}\n", kinds.join(" ")));
    head.push_str("space units: \"microns\" \"microns\" \"microns\"\n");
    if elem.size() > 1 {
        head.push_str("endian: little\n");
    }
    head.push_str("encoding: raw\n");
    for (k, v) in meta {
        if k.contains(":=") || k.contains('\n') || v.contains('\n') {
            return Err(Error::Argument(format!("metadata entry '{k}' cannot be stored in a NRRD header")));
        }
        head.push_str(&format!("{k}:={v}\n"));
    }
    head.push('\n');

    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(head.as_bytes()).map_err(|e| Error::io(path, e))?;
    f.write_all(payload).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn decode<T: Scalar>(elem: ElemType, payload: &[u8]) -> Result<Vec<T>> {
    match elem {
        ElemType::F32 => Ok(payload.chunks_exact(4).map(|c| T::from_f64_lossy(f32::read_le(c) as f64)).collect()),
        ElemType::F64 => Ok(payload.chunks_exact(8).map(|c| T::from_f64_lossy(f64::read_le(c))).collect()),
        ElemType::U8 => Ok(payload.iter().map(|&b| T::from_f64_lossy(b as f64)).collect()),
    }
}

fn encode<T: Scalar>(data: &[T]) -> Vec<u8> {
    let mut out = Vec::with_capacity(data.len() * T::BYTES);
    for &v in data {
        v.write_le(&mut out);
    }
    out
}

fn elem_for<T: Scalar>() -> ElemType {
    if T::BYTES == 4 {
        ElemType::F32
    } else {
        ElemType::F64
    }
}

/// Reads a 3-D intensity volume. Float payloads of either width are converted to `T`.
pub fn read_volume<T: Scalar>(path: impl AsRef<Path>) -> Result<Volume<T>> {
    let path = path.as_ref();
    let raw = read_raw(path)?;
    let (dims, spacing) = spatial_header(&raw.header, 3, path)?;
    let data = decode::<T>(raw.header.elem, &raw.payload)?;
    let mut v = Volume::new(dims, spacing, data)?;
    v.meta = raw.header.meta;
    Ok(v)
}

pub fn write_volume<T: Scalar>(v: &Volume<T>, path: impl AsRef<Path>) -> Result<()> {
    let d = v.dims();
    write_file(path.as_ref(), elem_for::<T>(), &[d.w, d.h, d.d], v.spacing(), &v.meta, &encode(v.data()))
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelMap> {
    let path = path.as_ref();
    let raw = read_raw(path)?;
    if raw.header.elem != ElemType::U8 {
        return Err(Error::Format(format!("{}: label maps must be uchar", path.display())));
    }
    let (dims, spacing) = spatial_header(&raw.header, 3, path)?;
    LabelMap::new(dims, spacing, raw.payload)
}

pub fn write_labels(l: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    let d = l.dims();
    write_file(path.as_ref(), ElemType::U8, &[d.w, d.h, d.d], l.spacing(), &Meta::new(), l.data())
}

pub fn read_shape(path: impl AsRef<Path>) -> Result<BinaryShape> {
    let l = read_labels(path)?;
    BinaryShape::new(l.dims(), l.spacing(), l.data().to_vec())
}

pub fn write_shape(s: &BinaryShape, path: impl AsRef<Path>) -> Result<()> {
    let d = s.dims();
    write_file(path.as_ref(), ElemType::U8, &[d.w, d.h, d.d], s.spacing(), &Meta::new(), s.data())
}

/// Probabilities are stored 4-D with sizes `W H D C` (channel slowest, matching memory).
pub fn write_probabilities<T: Scalar>(p: &ClassProbabilities<T>, path: impl AsRef<Path>) -> Result<()> {
    let d = p.dims();
    write_file(path.as_ref(), elem_for::<T>(), &[d.w, d.h, d.d, p.classes()], p.spacing(), &Meta::new(), &encode(p.data()))
}

pub fn read_probabilities<T: Scalar>(path: impl AsRef<Path>) -> Result<ClassProbabilities<T>> {
    let path = path.as_ref();
    let raw = read_raw(path)?;
    if raw.header.elem == ElemType::U8 {
        return Err(Error::Format(format!("{}: probabilities must be floating point", path.display())));
    }
    let (dims, spacing) = spatial_header(&raw.header, 4, path)?;
    let data = decode::<T>(raw.header.elem, &raw.payload)?;
    ClassProbabilities::new(raw.header.sizes[3], dims, spacing, data)
}

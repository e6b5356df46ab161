//! PLY persistence for splat scenes.
//!
//! Follows the common splat export layout: per-vertex `x y z`, `scale_0..2`
//! (log-scales), `rot_0..3` (`w x y z`) and `opacity` (a logit). An optional
//! `kind` uchar distinguishes flat (2) from volumetric (3) splats; without it a
//! missing `scale_2` marks the file as flat.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{Splat, SplatKind, SplatScene};
use crate::{Error, Result};

/// How stored values map to splat parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    /// Values are used verbatim.
    Raw,
    /// `opacity = sigmoid(stored)`, `scale = exp(stored)`.
    Standard,
}

const OPACITY_CLAMP: f64 = 1e-7;
const FLAT_LOG_SCALE: f32 = -30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Encoding {
    Ascii,
    LittleEndian,
    BigEndian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn decode(self, b: &[u8], enc: Encoding) -> f64 {
        macro_rules! rd {
            ($t:ty, $n:expr) => {{
                let arr: [u8; $n] = b[..$n].try_into().unwrap();
                if enc == Encoding::BigEndian {
                    <$t>::from_be_bytes(arr) as f64
                } else {
                    <$t>::from_le_bytes(arr) as f64
                }
            }};
        }
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => rd!(i16, 2),
            Scalar::U16 => rd!(u16, 2),
            Scalar::I32 => rd!(i32, 4),
            Scalar::U32 => rd!(u32, 4),
            Scalar::F32 => rd!(f32, 4),
            Scalar::F64 => rd!(f64, 8),
        }
    }
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    props: Vec<(String, Scalar)>,
    has_list: bool,
}

struct Header {
    encoding: Encoding,
    elements: Vec<Element>,
    body_offset: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let end_marker = b"end_header";
    let pos = bytes
        .windows(end_marker.len())
        .position(|w| w == end_marker)
        .ok_or_else(|| Error::Format("missing end_header".into()))?;
    let mut body_offset = pos + end_marker.len();
    if bytes.get(body_offset) == Some(&b'\r') {
        body_offset += 1;
    }
    if bytes.get(body_offset) == Some(&b'\n') {
        body_offset += 1;
    }
    let text = std::str::from_utf8(&bytes[..pos])
        .map_err(|_| Error::Format("header is not valid UTF-8".into()))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(Error::Format("missing 'ply' magic".into()));
    }
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    for line in lines {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            [] | ["comment", ..] | ["obj_info", ..] => {}
            ["format", fmt, _] => {
                encoding = Some(match *fmt {
                    "ascii" => Encoding::Ascii,
                    "binary_little_endian" => Encoding::LittleEndian,
                    "binary_big_endian" => Encoding::BigEndian,
                    other => return Err(Error::Format(format!("unknown format {other}"))),
                })
            }
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| Error::Format(format!("bad element count {count}")))?,
                props: Vec::new(),
                has_list: false,
            }),
            ["property", "list", ..] => {
                elements
                    .last_mut()
                    .ok_or_else(|| Error::Format("property before element".into()))?
                    .has_list = true;
            }
            ["property", ty, name] => {
                let scalar = Scalar::parse(ty)
                    .ok_or_else(|| Error::Format(format!("unknown property type {ty}")))?;
                elements
                    .last_mut()
                    .ok_or_else(|| Error::Format("property before element".into()))?
                    .props
                    .push((name.to_string(), scalar));
            }
            _ => return Err(Error::Format(format!("unrecognised header line '{line}'"))),
        }
    }
    Ok(Header {
        encoding: encoding.ok_or_else(|| Error::Format("missing format line".into()))?,
        elements,
        body_offset,
    })
}

/// Parses splats from an in-memory PLY file.
pub fn read_splats(bytes: &[u8], activation: Activation) -> Result<Vec<Splat>> {
    let header = parse_header(bytes)?;
    let vertex_idx = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| Error::Format("no vertex element".into()))?;
    let vertex = &header.elements[vertex_idx];
    if vertex.has_list {
        return Err(Error::Format("list properties on vertex are not supported".into()));
    }
    let col: HashMap<&str, usize> = vertex
        .props
        .iter()
        .enumerate()
        .map(|(i, (n, _))| (n.as_str(), i))
        .collect();
    let required = [
        "x", "y", "z", "scale_0", "scale_1", "rot_0", "rot_1", "rot_2", "rot_3", "opacity",
    ];
    for name in required {
        if !col.contains_key(name) {
            return Err(Error::Format(format!("missing required vertex field '{name}'")));
        }
    }
    let c = |name: &str| col[name];
    let scale2 = col.get("scale_2").copied();
    let kind_col = col.get("kind").copied();

    let rows = read_rows(bytes, &header, vertex_idx)?;
    let mut splats = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite value in vertex {i}")));
        }
        let kind = match (kind_col, scale2) {
            (Some(k), _) if row[k] == 2.0 => SplatKind::Flat,
            (Some(_), _) => SplatKind::Volumetric,
            (None, Some(_)) => SplatKind::Volumetric,
            (None, None) => SplatKind::Flat,
        };
        let raw_scales = [
            row[c("scale_0")],
            row[c("scale_1")],
            scale2.map(|k| row[k]).unwrap_or(0.0),
        ];
        let (scales, opacity) = match activation {
            Activation::Raw => (raw_scales, row[c("opacity")]),
            Activation::Standard => (
                raw_scales.map(f64::exp),
                1.0 / (1.0 + (-row[c("opacity")]).exp()),
            ),
        };
        let splat = Splat::new(
            Vector3::new(row[c("x")], row[c("y")], row[c("z")]),
            Vector3::from(scales),
            [row[c("rot_0")], row[c("rot_1")], row[c("rot_2")], row[c("rot_3")]],
            opacity,
            kind,
        )
        .map_err(|e| match e {
            Error::Data(msg) => Error::Data(format!("vertex {i}: {msg}")),
            other => other,
        })?;
        splats.push(splat);
    }
    Ok(splats)
}

fn read_rows(bytes: &[u8], header: &Header, vertex_idx: usize) -> Result<Vec<Vec<f64>>> {
    let vertex = &header.elements[vertex_idx];
    let body = &bytes[header.body_offset..];
    match header.encoding {
        Encoding::Ascii => {
            let text = std::str::from_utf8(body)
                .map_err(|_| Error::Format("ascii body is not valid UTF-8".into()))?;
            let mut lines = text.lines().filter(|l| !l.trim().is_empty());
            for e in &header.elements[..vertex_idx] {
                for _ in 0..e.count {
                    lines
                        .next()
                        .ok_or_else(|| Error::Format(format!("truncated element {}", e.name)))?;
                }
            }
            let mut rows = Vec::with_capacity(vertex.count);
            for i in 0..vertex.count {
                let line = lines
                    .next()
                    .ok_or_else(|| Error::Format(format!("truncated vertex data at {i}")))?;
                let vals: Vec<f64> = line
                    .split_whitespace()
                    .map(|t| {
                        t.parse::<f64>()
                            .map_err(|_| Error::Format(format!("bad number '{t}'")))
                    })
                    .collect::<Result<_>>()?;
                if vals.len() != vertex.props.len() {
                    return Err(Error::Format(format!("vertex {i} has {} values", vals.len())));
                }
                rows.push(vals);
            }
            Ok(rows)
        }
        enc => {
            let mut offset = 0usize;
            for e in &header.elements[..vertex_idx] {
                if e.has_list {
                    return Err(Error::Format(format!(
                        "list element '{}' before vertex data is not supported",
                        e.name
                    )));
                }
                offset += e.count * e.props.iter().map(|(_, s)| s.size()).sum::<usize>();
            }
            let stride: usize = vertex.props.iter().map(|(_, s)| s.size()).sum();
            let needed = offset + stride * vertex.count;
            if body.len() < needed {
                return Err(Error::Format(format!(
                    "truncated binary body: need {needed} bytes, have {}",
                    body.len()
                )));
            }
            let mut rows = Vec::with_capacity(vertex.count);
            for i in 0..vertex.count {
                let mut p = offset + i * stride;
                let mut row = Vec::with_capacity(vertex.props.len());
                for (_, s) in &vertex.props {
                    row.push(s.decode(&body[p..], enc));
                    p += s.size();
                }
                rows.push(row);
            }
            Ok(rows)
        }
    }
}

/// Loads a PLY splat file and builds the scene index.
pub fn load_scene(path: impl AsRef<Path>, activation: Activation) -> Result<SplatScene> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let splats = read_splats(&bytes, activation)?;
    if splats.is_empty() {
        return Err(Error::EmptyScene);
    }
    SplatScene::new(splats)
}

/// Encodes splats as binary little-endian PLY.
pub fn encode_splats(splats: &[Splat], activation: Activation) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 * splats.len() + 512);
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    header.push_str(&format!("element vertex {}\n", splats.len()));
    for name in [
        "x", "y", "z", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3",
        "opacity",
    ] {
        header.push_str(&format!("property float {name}\n"));
    }
    header.push_str("property uchar kind\nend_header\n");
    out.extend_from_slice(header.as_bytes());
    for s in splats {
        let q = s.rotation.quaternion();
        let (scales, opacity) = match activation {
            Activation::Raw => ([s.scales.x, s.scales.y, s.scales.z].map(|v| v as f32), s.opacity as f32),
            Activation::Standard => {
                let ls = [s.scales.x, s.scales.y, s.scales.z].map(|v| {
                    if v > 0.0 {
                        v.ln() as f32
                    } else {
                        FLAT_LOG_SCALE
                    }
                });
                let o = s.opacity.clamp(OPACITY_CLAMP, 1.0 - OPACITY_CLAMP);
                (ls, (o / (1.0 - o)).ln() as f32)
            }
        };
        let vals = [
            s.mean.x as f32,
            s.mean.y as f32,
            s.mean.z as f32,
            scales[0],
            scales[1],
            scales[2],
            q.w as f32,
            q.i as f32,
            q.j as f32,
            q.k as f32,
            opacity,
        ];
        for v in vals {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.push(match s.kind {
            SplatKind::Flat => 2,
            SplatKind::Volumetric => 3,
        });
    }
    out
}

pub fn write_scene(scene: &SplatScene, path: impl AsRef<Path>, activation: Activation) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_splats(scene.splats(), activation);
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

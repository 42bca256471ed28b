//! Binary little-endian PLY point clouds.
//!
//! Written layout: `float x, y, z; uchar red, green, blue` and, when counts are
//! present, `uint count`. The reader accepts any scalar property types in a
//! `binary_little_endian 1.0` vertex element as long as `x`, `y`, `z` exist.

use super::PointCloud;
use crate::raster::{from_u8, to_u8};

pub fn encode(cloud: &PointCloud) -> Vec<u8> {
    let n = cloud.len();
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    header.push_str(&format!("element vertex {n}\n"));
    header.push_str("property float x\nproperty float y\nproperty float z\n");
    header.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    if cloud.counts.is_some() {
        header.push_str("property uint count\n");
    }
    header.push_str("end_header\n");
    let stride = 15 + if cloud.counts.is_some() { 4 } else { 0 };
    let mut out = Vec::with_capacity(header.len() + n * stride);
    out.extend_from_slice(header.as_bytes());
    for i in 0..n {
        for c in cloud.positions[i] {
            out.extend_from_slice(&c.to_le_bytes());
        }
        for c in cloud.colors[i] {
            out.push(to_u8(c));
        }
        if let Some(counts) = &cloud.counts {
            out.extend_from_slice(&counts[i].to_le_bytes());
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
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
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn read(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

struct Property {
    name: String,
    kind: Scalar,
    offset: usize,
}

pub fn decode(bytes: &[u8]) -> Result<PointCloud, String> {
    const END: &[u8] = b"end_header\n";
    let end = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or("missing end_header")?;
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| "non-UTF-8 PLY header")?;
    let body = &bytes[end + END.len()..];

    let mut lines = header.lines();
    if lines.next() != Some("ply") {
        return Err("missing 'ply' magic".into());
    }
    let mut count: Option<usize> = None;
    let mut props: Vec<Property> = Vec::new();
    let mut stride = 0usize;
    let mut in_vertex = false;
    for line in lines {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", "binary_little_endian", "1.0"] => {}
            ["format", other, ..] => return Err(format!("unsupported PLY format '{other}'")),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", "vertex", n] => {
                count = Some(n.parse().map_err(|_| format!("bad vertex count '{n}'"))?);
                in_vertex = true;
            }
            ["element", name, ..] => {
                return Err(format!("unsupported PLY element '{name}'"));
            }
            ["property", "list", ..] => return Err("list properties are not supported".into()),
            ["property", ty, name] if in_vertex => {
                let kind = Scalar::parse(ty).ok_or(format!("unknown property type '{ty}'"))?;
                props.push(Property {
                    name: name.to_string(),
                    kind,
                    offset: stride,
                });
                stride += kind.size();
            }
            _ => return Err(format!("unrecognized PLY header line '{line}'")),
        }
    }
    let n = count.ok_or("missing vertex element")?;
    let find = |name: &str| props.iter().find(|p| p.name == name);
    let (px, py, pz) = match (find("x"), find("y"), find("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err("vertex element lacks x/y/z".into()),
    };
    let rgb = match (find("red"), find("green"), find("blue")) {
        (Some(r), Some(g), Some(b)) => Some([r, g, b]),
        _ => None,
    };
    let pcount = find("count");
    if body.len() != n * stride {
        return Err(format!(
            "PLY body has {} bytes, expected {} for {n} vertices",
            body.len(),
            n * stride
        ));
    }

    let mut cloud = PointCloud {
        positions: Vec::with_capacity(n),
        colors: Vec::with_capacity(n),
        counts: pcount.map(|_| Vec::with_capacity(n)),
    };
    for rec in body.chunks_exact(stride.max(1)).take(n) {
        let get = |p: &Property| p.kind.read(&rec[p.offset..]);
        let pos_of = |p: &Property| {
            if p.kind == Scalar::F32 {
                f32::from_le_bytes(rec[p.offset..p.offset + 4].try_into().unwrap())
            } else {
                get(p) as f32
            }
        };
        cloud.positions.push([pos_of(px), pos_of(py), pos_of(pz)]);
        cloud.colors.push(match rgb {
            Some(ch) => ch.map(|p| match p.kind {
                Scalar::U8 => from_u8(rec[p.offset]),
                Scalar::F32 | Scalar::F64 => get(p) as f32,
                _ => (get(p) / 255.0) as f32,
            }),
            None => [1.0; 3],
        });
        if let (Some(p), Some(counts)) = (pcount, cloud.counts.as_mut()) {
            counts.push(get(p) as u32);
        }
    }
    Ok(cloud)
}

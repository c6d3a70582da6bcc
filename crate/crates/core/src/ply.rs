//! Minimal PLY reader/writer for labeled point clouds.
//!
//! Reads `ascii`, `binary_little_endian` and `binary_big_endian` files with
//! arbitrary scalar vertex properties (other elements are skipped). The
//! recognised vertex properties are `x y z`, `nx ny nz`, the integer labels
//! `semantic` and `instance`, and a scalar `confidence`. Files are written
//! with `double` geometry, `int` labels, `float` confidence and `uchar`
//! colours.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Encoding {
    Ascii,
    #[default]
    BinaryLittleEndian,
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
    fn parse(s: &str) -> Option<Scalar> {
        Some(match s {
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

    fn decode(self, b: &[u8], little: bool) -> f64 {
        macro_rules! rd {
            ($t:ty, $n:expr) => {{
                let arr: [u8; $n] = b[..$n].try_into().unwrap();
                (if little { <$t>::from_le_bytes(arr) } else { <$t>::from_be_bytes(arr) }) as f64
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

#[derive(Debug, Clone)]
enum Property {
    Scalar(String, Scalar),
    List(Scalar, Scalar),
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Ascii,
    Binary { little: bool },
}

/// A point cloud read from disk plus optional per-point extras.
#[derive(Debug, Clone, Default)]
pub struct PlyCloud {
    pub cloud: PointCloud,
    pub confidence: Option<Vec<f64>>,
}

/// Optional per-point attributes written alongside a cloud.
#[derive(Debug, Clone, Copy, Default)]
pub struct PlyExtras<'a> {
    pub confidence: Option<&'a [f64]>,
    pub colors: Option<&'a [[u8; 3]]>,
}

pub fn read_ply(path: &Path) -> Result<PlyCloud> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_ply(&bytes).map_err(|m| Error::parse(path, m))
}

fn parse_header(bytes: &[u8]) -> Result<(Format, Vec<Element>, usize), String> {
    const END: &[u8] = b"end_header";
    let end = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or("missing end_header")?;
    let mut body_start = end + END.len();
    // header line terminator: \n or \r\n
    if bytes.get(body_start) == Some(&b'\r') {
        body_start += 1;
    }
    if bytes.get(body_start) == Some(&b'\n') {
        body_start += 1;
    }
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| "header is not utf-8")?;
    let mut lines = header.lines().map(str::trim);
    if lines.next() != Some("ply") {
        return Err("not a PLY file".into());
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    for line in lines {
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            [] | ["comment", ..] | ["obj_info", ..] => {}
            ["format", f, _] => {
                format = Some(match *f {
                    "ascii" => Format::Ascii,
                    "binary_little_endian" => Format::Binary { little: true },
                    "binary_big_endian" => Format::Binary { little: false },
                    other => return Err(format!("unknown format {other}")),
                })
            }
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| format!("bad element count {count}"))?,
                props: Vec::new(),
            }),
            ["property", "list", ct, it, _name] => {
                let el = elements.last_mut().ok_or("property before element")?;
                let ct = Scalar::parse(ct).ok_or_else(|| format!("bad type {ct}"))?;
                let it = Scalar::parse(it).ok_or_else(|| format!("bad type {it}"))?;
                el.props.push(Property::List(ct, it));
            }
            ["property", ty, name] => {
                let el = elements.last_mut().ok_or("property before element")?;
                let ty = Scalar::parse(ty).ok_or_else(|| format!("bad type {ty}"))?;
                el.props.push(Property::Scalar(name.to_string(), ty));
            }
            _ => return Err(format!("unrecognised header line '{line}'")),
        }
    }
    Ok((format.ok_or("missing format line")?, elements, body_start))
}

fn parse_ply(bytes: &[u8]) -> Result<PlyCloud, String> {
    let (format, elements, body_start) = parse_header(bytes)?;
    let body = &bytes[body_start..];
    let vertex_pos = elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or("no vertex element")?;

    // rows of scalar values for the vertex element, in property order
    let vertex = &elements[vertex_pos];
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(vertex.count);
    match format {
        Format::Ascii => {
            let text = std::str::from_utf8(body).map_err(|_| "body is not utf-8")?;
            let mut lines = text.lines().filter(|l| !l.trim().is_empty());
            for (ei, el) in elements.iter().enumerate() {
                for _ in 0..el.count {
                    let line = lines.next().ok_or("unexpected end of data")?;
                    if ei == vertex_pos {
                        let vals: Vec<f64> = line
                            .split_whitespace()
                            .map(|t| t.parse::<f64>().map_err(|_| format!("bad number '{t}'")))
                            .collect::<Result<_, _>>()?;
                        if vals.len() < el.props.len() {
                            return Err("short vertex row".into());
                        }
                        rows.push(vals);
                    }
                }
            }
        }
        Format::Binary { little } => {
            let mut at = 0usize;
            let take = |at: &mut usize, n: usize| -> Result<&[u8], String> {
                let s = body.get(*at..*at + n).ok_or("unexpected end of data")?;
                *at += n;
                Ok(s)
            };
            for (ei, el) in elements.iter().enumerate() {
                for _ in 0..el.count {
                    let mut row = Vec::new();
                    for prop in &el.props {
                        match prop {
                            Property::Scalar(_, ty) => {
                                let v = ty.decode(take(&mut at, ty.size())?, little);
                                row.push(v);
                            }
                            Property::List(ct, it) => {
                                let n = ct.decode(take(&mut at, ct.size())?, little) as usize;
                                take(&mut at, n * it.size())?;
                                row.push(f64::NAN);
                            }
                        }
                    }
                    if ei == vertex_pos {
                        rows.push(row);
                    }
                }
            }
        }
    }

    let col = |name: &str| {
        vertex
            .props
            .iter()
            .position(|p| matches!(p, Property::Scalar(n, _) if n == name))
    };
    let (Some(x), Some(y), Some(z)) = (col("x"), col("y"), col("z")) else {
        return Err("vertex element lacks x/y/z".into());
    };
    let points: Vec<Vec3> = rows.iter().map(|r| Vec3::new(r[x], r[y], r[z])).collect();
    let mut cloud = PointCloud::new(points).map_err(|e| e.to_string())?;
    if let (Some(nx), Some(ny), Some(nz)) = (col("nx"), col("ny"), col("nz")) {
        let normals: Vec<Vec3> = rows.iter().map(|r| Vec3::new(r[nx], r[ny], r[nz])).collect();
        if let Err(e) = cloud.set_normals(normals) {
            log::warn!("ignoring stored normals: {e}");
        }
    }
    if let (Some(s), Some(i)) = (col("semantic"), col("instance")) {
        let to_label = |v: f64| -> Result<u32, String> {
            if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
                Ok(v as u32)
            } else {
                Err(format!("invalid label {v}"))
            }
        };
        let sem = rows.iter().map(|r| to_label(r[s])).collect::<Result<Vec<_>, _>>()?;
        let inst = rows.iter().map(|r| to_label(r[i])).collect::<Result<Vec<_>, _>>()?;
        cloud.set_labels(sem, inst).map_err(|e| e.to_string())?;
    }
    let confidence = col("confidence").map(|c| rows.iter().map(|r| r[c]).collect());
    Ok(PlyCloud { cloud, confidence })
}

/// Serializes a cloud; output bytes depend only on the inputs.
pub fn encode_ply(cloud: &PointCloud, extras: PlyExtras<'_>, encoding: Encoding) -> Vec<u8> {
    let n = cloud.len();
    let mut out = Vec::new();
    let fmt = match encoding {
        Encoding::Ascii => "ascii",
        Encoding::BinaryLittleEndian => "binary_little_endian",
    };
    let mut header = format!("ply\nformat {fmt} 1.0\nelement vertex {n}\n");
    header += "property double x\nproperty double y\nproperty double z\n";
    if cloud.has_normals() {
        header += "property double nx\nproperty double ny\nproperty double nz\n";
    }
    if cloud.has_labels() {
        header += "property int semantic\nproperty int instance\n";
    }
    if extras.confidence.is_some() {
        header += "property float confidence\n";
    }
    if extras.colors.is_some() {
        header += "property uchar red\nproperty uchar green\nproperty uchar blue\n";
    }
    header += "end_header\n";
    out.extend_from_slice(header.as_bytes());

    let normals = cloud.normals();
    let sem = cloud.semantic();
    let inst = cloud.instance();
    for i in 0..n {
        let p = cloud.points()[i];
        match encoding {
            Encoding::Ascii => {
                let mut line = format!("{} {} {}", p.x, p.y, p.z);
                if let Some(ns) = normals {
                    line += &format!(" {} {} {}", ns[i].x, ns[i].y, ns[i].z);
                }
                if let (Some(s), Some(u)) = (sem, inst) {
                    line += &format!(" {} {}", s[i], u[i]);
                }
                if let Some(c) = extras.confidence {
                    line += &format!(" {}", c[i] as f32);
                }
                if let Some(c) = extras.colors {
                    line += &format!(" {} {} {}", c[i][0], c[i][1], c[i][2]);
                }
                line.push('\n');
                out.extend_from_slice(line.as_bytes());
            }
            Encoding::BinaryLittleEndian => {
                for v in [p.x, p.y, p.z] {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                if let Some(ns) = normals {
                    for v in [ns[i].x, ns[i].y, ns[i].z] {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
                if let (Some(s), Some(u)) = (sem, inst) {
                    out.extend_from_slice(&(s[i] as i32).to_le_bytes());
                    out.extend_from_slice(&(u[i] as i32).to_le_bytes());
                }
                if let Some(c) = extras.confidence {
                    out.extend_from_slice(&(c[i] as f32).to_le_bytes());
                }
                if let Some(c) = extras.colors {
                    out.extend_from_slice(&c[i]);
                }
            }
        }
    }
    out
}

pub fn write_ply(
    path: &Path,
    cloud: &PointCloud,
    extras: PlyExtras<'_>,
    encoding: Encoding,
) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let bytes = encode_ply(cloud, extras, encoding);
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> PointCloud {
        let pts = vec![Vec3::new(0.5, -1.25, 3.0), Vec3::new(1e-3, 2.0, -0.75)];
        let mut c = PointCloud::with_normals(pts, vec![Vec3::z(), Vec3::x()]).unwrap();
        c.set_labels(vec![3, 0], vec![7, 0]).unwrap();
        c
    }

    #[test]
    fn ascii_and_binary_agree() {
        let c = sample();
        let conf = [0.5, 1.0];
        for enc in [Encoding::Ascii, Encoding::BinaryLittleEndian] {
            let bytes = encode_ply(&c, PlyExtras { confidence: Some(&conf), colors: None }, enc);
            let back = parse_ply(&bytes).unwrap();
            assert_eq!(back.cloud, c);
            assert_eq!(back.confidence.unwrap(), vec![0.5, 1.0]);
        }
    }

    #[test]
    fn reads_foreign_layout() {
        // float32 big-endian with an extra face element and unrelated props
        let mut bytes = b"ply\nformat binary_big_endian 1.0\ncomment test\nelement vertex 2\n\
property float x\nproperty float y\nproperty float z\nproperty uchar red\n\
element face 1\nproperty list uchar int vertex_indices\nend_header\n"
            .to_vec();
        for (x, y, z, r) in [(1.0f32, 2.0f32, 3.0f32, 9u8), (4.0, 5.0, 6.0, 1)] {
            bytes.extend_from_slice(&x.to_be_bytes());
            bytes.extend_from_slice(&y.to_be_bytes());
            bytes.extend_from_slice(&z.to_be_bytes());
            bytes.push(r);
        }
        bytes.push(3);
        for i in 0..3i32 {
            bytes.extend_from_slice(&i.to_be_bytes());
        }
        let back = parse_ply(&bytes).unwrap();
        assert_eq!(back.cloud.points()[1], Vec3::new(4.0, 5.0, 6.0));
        assert!(!back.cloud.has_labels());
    }

    #[test]
    fn corrupt_inputs_fail() {
        assert!(parse_ply(b"not a ply").is_err());
        assert!(parse_ply(b"ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nend_header\n1\n").is_err());
        let c = sample();
        let bytes = encode_ply(&c, PlyExtras::default(), Encoding::BinaryLittleEndian);
        assert!(parse_ply(&bytes[..bytes.len() - 3]).is_err());
    }

    proptest! {
        #[test]
        fn binary_round_trip(coords in prop::collection::vec((-100.0..100.0f64, -100.0..100.0f64, -100.0..100.0f64), 0..40)) {
            let pts: Vec<Vec3> = coords.iter().map(|&(x, y, z)| Vec3::new(x, y, z)).collect();
            let c = PointCloud::new(pts).unwrap();
            let bytes = encode_ply(&c, PlyExtras::default(), Encoding::BinaryLittleEndian);
            prop_assert_eq!(parse_ply(&bytes).unwrap().cloud, c);
        }
    }
}

//! PLY reader (ASCII and binary little-endian).

use nalgebra::{Point3, Vector3};

use crate::mesh::{MeshError, SurfaceMesh};

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

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().expect("8 bytes")),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { name: String, count: Scalar, item: Scalar },
}

impl Property {
    fn name(&self) -> &str {
        match self {
            Property::Scalar { name, .. } | Property::List { name, .. } => name,
        }
    }
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Encoding {
    Ascii,
    BinaryLe,
}

fn perr(msg: impl Into<String>) -> MeshError {
    MeshError::Parse(format!("ply: {}", msg.into()))
}

/// Pulls values either from whitespace-separated text or a LE byte stream.
enum Cursor<'a> {
    Ascii(std::str::SplitAsciiWhitespace<'a>),
    Binary { data: &'a [u8], pos: usize },
}

impl Cursor<'_> {
    fn next(&mut self, ty: Scalar) -> Result<f64, MeshError> {
        match self {
            Cursor::Ascii(tokens) => {
                let v = tokens
                    .next()
                    .ok_or_else(|| perr("unexpected end of data"))?
                    .parse::<f64>()
                    .map_err(|e| perr(e.to_string()))?;
                // keep the precision of the declared type
                Ok(if ty == Scalar::F32 { v as f32 as f64 } else { v })
            }
            Cursor::Binary { data, pos } => {
                let n = ty.size();
                if *pos + n > data.len() {
                    return Err(perr("truncated binary body"));
                }
                let v = ty.read_le(&data[*pos..*pos + n]);
                *pos += n;
                Ok(v)
            }
        }
    }
}

pub(crate) fn parse_ply(bytes: &[u8]) -> Result<SurfaceMesh, MeshError> {
    let header_end = find_header_end(bytes).ok_or_else(|| perr("missing end_header"))?;
    let header = std::str::from_utf8(&bytes[..header_end.0]).map_err(|_| perr("header is not utf-8"))?;
    let body = &bytes[header_end.1..];

    let mut lines = header.lines().map(str::trim);
    if lines.next() != Some("ply") {
        return Err(perr("missing magic"));
    }
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    for line in lines {
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["format", "ascii", _] => encoding = Some(Encoding::Ascii),
            ["format", "binary_little_endian", _] => encoding = Some(Encoding::BinaryLe),
            ["format", other, _] => return Err(perr(format!("unsupported format {other}"))),
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| perr(format!("bad element count {count}")))?,
                properties: Vec::new(),
            }),
            ["property", "list", count, item, name] => {
                let el = elements.last_mut().ok_or_else(|| perr("property before element"))?;
                el.properties.push(Property::List {
                    name: name.to_string(),
                    count: Scalar::parse(count).ok_or_else(|| perr(format!("bad type {count}")))?,
                    item: Scalar::parse(item).ok_or_else(|| perr(format!("bad type {item}")))?,
                });
            }
            ["property", ty, name] => {
                let el = elements.last_mut().ok_or_else(|| perr("property before element"))?;
                el.properties.push(Property::Scalar {
                    name: name.to_string(),
                    ty: Scalar::parse(ty).ok_or_else(|| perr(format!("bad type {ty}")))?,
                });
            }
            ["comment", ..] | ["obj_info", ..] | [] | ["end_header"] => {}
            _ => return Err(perr(format!("unrecognised header line {line:?}"))),
        }
    }
    let encoding = encoding.ok_or_else(|| perr("missing format line"))?;

    let text;
    let mut cursor = match encoding {
        Encoding::Ascii => {
            text = std::str::from_utf8(body).map_err(|_| perr("ascii body is not utf-8"))?;
            Cursor::Ascii(text.split_ascii_whitespace())
        }
        Encoding::BinaryLe => Cursor::Binary { data: body, pos: 0 },
    };

    let mut vertices = Vec::new();
    let mut normals = Vec::new();
    let mut has_normals = false;
    let mut triangles = Vec::new();

    for el in &elements {
        let prop_index = |n: &str| el.properties.iter().position(|p| p.name() == n);
        let is_vertex = el.name == "vertex";
        let (xi, yi, zi) = (prop_index("x"), prop_index("y"), prop_index("z"));
        let (nxi, nyi, nzi) = (prop_index("nx"), prop_index("ny"), prop_index("nz"));
        if is_vertex {
            if xi.is_none() || yi.is_none() || zi.is_none() {
                return Err(perr("vertex element lacks x/y/z"));
            }
            has_normals = nxi.is_some() && nyi.is_some() && nzi.is_some();
        }
        let face_list = if el.name == "face" {
            Some(
                prop_index("vertex_indices")
                    .or_else(|| prop_index("vertex_index"))
                    .ok_or_else(|| perr("face element lacks vertex_indices"))?,
            )
        } else {
            None
        };

        let mut scalars = vec![0.0; el.properties.len()];
        let mut list: Vec<u32> = Vec::new();
        for _ in 0..el.count {
            list.clear();
            for (pi, prop) in el.properties.iter().enumerate() {
                match prop {
                    Property::Scalar { ty, .. } => scalars[pi] = cursor.next(*ty)?,
                    Property::List { count, item, .. } => {
                        let n = cursor.next(*count)?;
                        if !(n >= 0.0) {
                            return Err(perr("negative list length"));
                        }
                        for _ in 0..n as usize {
                            let v = cursor.next(*item)?;
                            if Some(pi) == face_list {
                                if v < 0.0 || v.fract() != 0.0 {
                                    return Err(perr(format!("invalid vertex index {v}")));
                                }
                                list.push(v as u32);
                            }
                        }
                    }
                }
            }
            if is_vertex {
                let (x, y, z) = (scalars[xi.unwrap()], scalars[yi.unwrap()], scalars[zi.unwrap()]);
                vertices.push(Point3::new(x, y, z));
                if has_normals {
                    normals.push(Vector3::new(
                        scalars[nxi.unwrap()],
                        scalars[nyi.unwrap()],
                        scalars[nzi.unwrap()],
                    ));
                }
            } else if face_list.is_some() {
                if list.len() < 3 {
                    return Err(perr("face with fewer than three vertices"));
                }
                for k in 1..list.len() - 1 {
                    triangles.push([list[0], list[k], list[k + 1]]);
                }
            }
        }
    }

    if vertices.is_empty() || triangles.is_empty() {
        return Err(MeshError::Empty);
    }
    SurfaceMesh::new(vertices, triangles, has_normals.then_some(normals))
}

/// Byte offsets of the header text end and of the body start.
fn find_header_end(bytes: &[u8]) -> Option<(usize, usize)> {
    let needle = b"end_header";
    let start = bytes.windows(needle.len()).position(|w| w == needle)?;
    let mut body = start + needle.len();
    if bytes.get(body) == Some(&b'\r') {
        body += 1;
    }
    if bytes.get(body) == Some(&b'\n') {
        body += 1;
    }
    Some((start, body))
}

#[cfg(test)]
mod tests {
    use super::*;

    const TETRA_ASCII: &str = "ply
format ascii 1.0
comment tetrahedron
element vertex 4
property float x
property float y
property float z
property float nx
property float ny
property float nz
element face 4
property list uchar int vertex_indices
end_header
0 0 0 -0.57735 -0.57735 -0.57735
1 0 0 1 0 0
0 1 0 0 1 0
0 0 1 0.1 0.2 0.9
3 0 2 1
3 0 1 3
3 0 3 2
3 1 2 3
";

    #[test]
    fn ascii_tetrahedron_keeps_normals() {
        let mesh = parse_ply(TETRA_ASCII.as_bytes()).unwrap();
        assert_eq!(mesh.vertices().len(), 4);
        assert_eq!(mesh.triangles().len(), 4);
        // float32 values widened to f64 without renormalisation
        assert_eq!(mesh.normals()[3], Vector3::new(0.1f32 as f64, 0.2f32 as f64, 0.9f32 as f64));
        assert_eq!(mesh.normals()[0].x, -0.57735f32 as f64);
    }

    #[test]
    fn index_equal_to_vertex_count_is_rejected() {
        let bad = TETRA_ASCII.replace("3 1 2 3\n", "3 1 2 4\n");
        assert!(matches!(parse_ply(bad.as_bytes()), Err(MeshError::Parse(_))));
    }

    #[test]
    fn binary_little_endian_float64() {
        let mut bytes = b"ply\nformat binary_little_endian 1.0\nelement vertex 3\n\
property double x\nproperty double y\nproperty double z\nproperty uchar red\n\
element face 1\nproperty list uchar uint vertex_indices\nend_header\n"
            .to_vec();
        for (p, red) in [([0.0f64, 0.0, 0.0], 1u8), ([2.0, 0.0, 0.0], 2), ([0.0, 2.0, 0.5], 3)] {
            for c in p {
                bytes.extend_from_slice(&c.to_le_bytes());
            }
            bytes.push(red);
        }
        bytes.push(3);
        for i in [0u32, 1, 2] {
            bytes.extend_from_slice(&i.to_le_bytes());
        }
        let mesh = parse_ply(&bytes).unwrap();
        assert_eq!(mesh.vertices()[2], Point3::new(0.0, 2.0, 0.5));
        assert_eq!(mesh.triangles(), &[[0, 1, 2]]);

        let truncated = &bytes[..bytes.len() - 2];
        assert!(parse_ply(truncated).is_err());
    }
}

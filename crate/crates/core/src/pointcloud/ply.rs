//! PLY reading (ASCII, binary little- and big-endian) and binary
//! little-endian writing of labeled vertex clouds.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::{LabeledPointCloud, UNLABELED};
use crate::error::{GpsmError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Ascii,
    BinaryLe,
    BinaryBe,
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
    fn parse(name: &str) -> Option<Scalar> {
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
}

#[derive(Debug, Clone)]
enum PropKind {
    Scalar(Scalar),
    List { count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Property {
    name: String,
    kind: PropKind,
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
    /// Byte offset of the declaring header line.
    offset: u64,
}

struct Header {
    format: Format,
    elements: Vec<Element>,
    body_start: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let mut pos = 0usize;
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    let mut first = true;
    loop {
        let line_start = pos;
        let Some(len) = bytes[pos..].iter().position(|&b| b == b'\n') else {
            return Err(GpsmError::parse(
                line_start as u64,
                "header ends without end_header",
            ));
        };
        pos += len + 1;
        let line = std::str::from_utf8(&bytes[line_start..line_start + len])
            .map_err(|_| GpsmError::parse(line_start as u64, "header line is not valid UTF-8"))?
            .trim_end_matches('\r');
        let err = |msg: String| GpsmError::parse(line_start as u64, msg);
        let mut tok = line.split_whitespace();
        let keyword = tok.next().unwrap_or("");
        if first {
            if line.trim() != "ply" {
                return Err(err("missing 'ply' magic".into()));
            }
            first = false;
            continue;
        }
        match keyword {
            "format" => {
                format = Some(match tok.next() {
                    Some("ascii") => Format::Ascii,
                    Some("binary_little_endian") => Format::BinaryLe,
                    Some("binary_big_endian") => Format::BinaryBe,
                    other => return Err(err(format!("unsupported format {other:?}"))),
                });
            }
            "comment" | "obj_info" | "" => {}
            "element" => {
                let (Some(name), Some(count)) = (tok.next(), tok.next()) else {
                    return Err(err("element line needs a name and a count".into()));
                };
                let count = count
                    .parse()
                    .map_err(|_| err(format!("bad element count {count:?}")))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    props: Vec::new(),
                    offset: line_start as u64,
                });
            }
            "property" => {
                let Some(element) = elements.last_mut() else {
                    return Err(err("property before any element".into()));
                };
                let words: Vec<&str> = tok.collect();
                let scalar = |s: &str| {
                    Scalar::parse(s).ok_or_else(|| err(format!("unknown property type {s:?}")))
                };
                let prop = match words.as_slice() {
                    ["list", c, i, name] => Property {
                        name: name.to_string(),
                        kind: PropKind::List {
                            count: scalar(c)?,
                            item: scalar(i)?,
                        },
                    },
                    [t, name] => Property {
                        name: name.to_string(),
                        kind: PropKind::Scalar(scalar(t)?),
                    },
                    _ => return Err(err(format!("malformed property line {line:?}"))),
                };
                element.props.push(prop);
            }
            "end_header" => break,
            other => return Err(err(format!("unknown header keyword {other:?}"))),
        }
    }
    let format = format.ok_or_else(|| GpsmError::parse(0, "header has no format line"))?;
    Ok(Header {
        format,
        elements,
        body_start: pos,
    })
}

/// Sequential value source over the body of a PLY file.
trait Values {
    fn next(&mut self, t: Scalar) -> Result<f64>;
}

struct BinaryValues<'a> {
    bytes: &'a [u8],
    pos: usize,
    big_endian: bool,
}

impl Values for BinaryValues<'_> {
    fn next(&mut self, t: Scalar) -> Result<f64> {
        let n = t.size();
        if self.pos + n > self.bytes.len() {
            return Err(GpsmError::parse(self.pos as u64, "truncated binary body"));
        }
        let mut buf = [0u8; 8];
        buf[..n].copy_from_slice(&self.bytes[self.pos..self.pos + n]);
        if self.big_endian {
            buf[..n].reverse();
        }
        self.pos += n;
        Ok(match t {
            Scalar::I8 => buf[0] as i8 as f64,
            Scalar::U8 => buf[0] as f64,
            Scalar::I16 => i16::from_le_bytes([buf[0], buf[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([buf[0], buf[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(buf[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(buf[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(buf[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(buf),
        })
    }
}

struct AsciiValues<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Values for AsciiValues<'_> {
    fn next(&mut self, t: Scalar) -> Result<f64> {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(GpsmError::parse(start as u64, "truncated ASCII body"));
        }
        let token = std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| GpsmError::parse(start as u64, "non-UTF-8 token"))?;
        let v: f64 = token
            .parse()
            .map_err(|_| GpsmError::parse(start as u64, format!("bad number {token:?}")))?;
        let integral = !matches!(t, Scalar::F32 | Scalar::F64);
        if integral && v.fract() != 0.0 {
            return Err(GpsmError::parse(
                start as u64,
                format!("expected an integer, got {token:?}"),
            ));
        }
        // Round float tokens through f32 so ASCII and binary agree.
        Ok(if t == Scalar::F32 { v as f32 as f64 } else { v })
    }
}

/// Parse a complete PLY file held in memory.
pub fn read_ply(bytes: &[u8]) -> Result<LabeledPointCloud> {
    let header = parse_header(bytes)?;
    let offset = header.body_start;
    match header.format {
        Format::Ascii => {
            let mut src = AsciiValues { bytes, pos: offset };
            read_body(&header, &mut src)
        }
        Format::BinaryLe | Format::BinaryBe => {
            let mut src = BinaryValues {
                bytes,
                pos: offset,
                big_endian: header.format == Format::BinaryBe,
            };
            read_body(&header, &mut src)
        }
    }
}

fn read_body(header: &Header, src: &mut dyn Values) -> Result<LabeledPointCloud> {
    let mut result = None;
    for element in &header.elements {
        if element.name != "vertex" {
            for _ in 0..element.count {
                for p in &element.props {
                    skip_property(p, src)?;
                }
            }
            continue;
        }
        let index = |name: &str| element.props.iter().position(|p| p.name == name);
        let (Some(ix), Some(iy), Some(iz)) = (index("x"), index("y"), index("z")) else {
            return Err(GpsmError::parse(
                element.offset,
                "vertex element lacks x, y or z",
            ));
        };
        for &i in &[ix, iy, iz] {
            if matches!(element.props[i].kind, PropKind::List { .. }) {
                return Err(GpsmError::parse(
                    element.offset,
                    "vertex coordinates must be scalar properties",
                ));
            }
        }
        let rgb = match (index("red"), index("green"), index("blue")) {
            (Some(r), Some(g), Some(b)) => Some([r, g, b]),
            _ => None,
        };
        let ilabel = index("label");

        let mut points = Vec::with_capacity(element.count);
        let mut labels = Vec::with_capacity(element.count);
        let mut colors = rgb.map(|_| Vec::with_capacity(element.count));
        let mut row = vec![0.0; element.props.len()];
        for _ in 0..element.count {
            for (k, p) in element.props.iter().enumerate() {
                row[k] = match p.kind {
                    PropKind::Scalar(t) => src.next(t)?,
                    _ => {
                        skip_property(p, src)?;
                        0.0
                    }
                };
            }
            points.push([row[ix] as f32, row[iy] as f32, row[iz] as f32]);
            if let (Some(c), Some([r, g, b])) = (colors.as_mut(), rgb) {
                c.push([row[r] as u8, row[g] as u8, row[b] as u8]);
            }
            labels.push(match ilabel.map(|i| row[i]) {
                Some(v) if v >= 0.0 && v < UNLABELED as f64 => Some(v as u16),
                _ => None,
            });
        }
        let mut cloud = LabeledPointCloud::with_labels(points, labels)?;
        if let Some(c) = colors {
            cloud = cloud.with_colors(c)?;
        }
        result = Some(cloud);
    }
    result.ok_or_else(|| GpsmError::parse(0, "file has no vertex element"))
}

fn skip_property(p: &Property, src: &mut dyn Values) -> Result<()> {
    match p.kind {
        PropKind::Scalar(t) => {
            src.next(t)?;
        }
        PropKind::List { count, item } => {
            let n = src.next(count)?;
            if n < 0.0 {
                return Err(GpsmError::parse(0, "negative list length"));
            }
            for _ in 0..n as usize {
                src.next(item)?;
            }
        }
    }
    Ok(())
}

pub fn load_ply(path: impl AsRef<Path>) -> Result<LabeledPointCloud> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    read_ply(&bytes)
}

/// Serialize as binary little-endian PLY. Colors and labels are written only
/// when the cloud carries them.
pub fn write_ply(cloud: &LabeledPointCloud, out: &mut impl Write) -> Result<()> {
    let with_labels = cloud.has_labels();
    let colors = cloud.colors();
    writeln!(out, "ply")?;
    writeln!(out, "format binary_little_endian 1.0")?;
    writeln!(out, "element vertex {}", cloud.len())?;
    for axis in ["x", "y", "z"] {
        writeln!(out, "property float {axis}")?;
    }
    if colors.is_some() {
        for c in ["red", "green", "blue"] {
            writeln!(out, "property uchar {c}")?;
        }
    }
    if with_labels {
        writeln!(out, "property ushort label")?;
    }
    writeln!(out, "end_header")?;
    for (i, p) in cloud.points().iter().enumerate() {
        for v in p {
            out.write_all(&v.to_le_bytes())?;
        }
        if let Some(c) = colors {
            out.write_all(&c[i])?;
        }
        if with_labels {
            let l = cloud.labels()[i].unwrap_or(UNLABELED);
            out.write_all(&l.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn save_ply(cloud: &LabeledPointCloud, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_ply(cloud, &mut w)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roundtrip(c: &LabeledPointCloud) -> LabeledPointCloud {
        let mut buf = Vec::new();
        write_ply(c, &mut buf).unwrap();
        read_ply(&buf).unwrap()
    }

    #[test]
    fn empty_cloud_roundtrips() {
        let c = LabeledPointCloud::default();
        assert_eq!(roundtrip(&c), c);
    }

    #[test]
    fn labels_and_colors_roundtrip() {
        let c = LabeledPointCloud::with_labels(
            vec![[0.1, -2.5, 1e-7], [f32::MAX, 0.0, -0.0], [3.0, 4.0, 5.0]],
            vec![Some(1), Some(2), None],
        )
        .unwrap()
        .with_colors(vec![[1, 2, 3], [255, 0, 7], [9, 9, 9]])
        .unwrap();
        let r = roundtrip(&c);
        assert_eq!(r.labels(), c.labels());
        assert_eq!(r.colors(), c.colors());
        for (a, b) in r.points().iter().zip(c.points()) {
            for k in 0..3 {
                assert_eq!(a[k].to_bits(), b[k].to_bits());
            }
        }
    }

    #[test]
    fn ascii_without_labels() {
        let text = "ply\nformat ascii 1.0\ncomment hi\nelement vertex 2\nproperty double x\n\
                    property double y\nproperty double z\nproperty list uchar int idx\n\
                    element face 1\nproperty list uchar int vertex_indices\nend_header\n\
                    1 2 3 2 7 8\n4.5 5 6 0\n3 0 1 1\n";
        let c = read_ply(text.as_bytes()).unwrap();
        assert_eq!(c.points(), &[[1.0, 2.0, 3.0], [4.5, 5.0, 6.0]]);
        assert_eq!(c.labeled_count(), 0);
    }

    #[test]
    fn big_endian_body() {
        let mut bytes = b"ply\nformat binary_big_endian 1.0\nelement vertex 1\nproperty float x\n\
property float y\nproperty float z\nproperty int label\nend_header\n"
            .to_vec();
        for v in [1.5f32, -2.0, 0.25] {
            bytes.extend_from_slice(&v.to_be_bytes());
        }
        bytes.extend_from_slice(&7i32.to_be_bytes());
        let c = read_ply(&bytes).unwrap();
        assert_eq!(c.points(), &[[1.5, -2.0, 0.25]]);
        assert_eq!(c.labels(), &[Some(7)]);
    }

    #[test]
    fn errors_carry_offsets() {
        let missing_z = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nend_header\n1 2\n";
        assert!(matches!(
            read_ply(missing_z.as_bytes()),
            Err(GpsmError::Parse { offset: 21, .. })
        ));

        let bad_type = "ply\nformat ascii 1.0\nelement vertex 1\nproperty quux x\nend_header\n";
        match read_ply(bad_type.as_bytes()) {
            Err(GpsmError::Parse { offset, .. }) => assert_eq!(offset, 38),
            other => panic!("{other:?}"),
        }

        let c = LabeledPointCloud::new(vec![[1.0, 2.0, 3.0]; 4]).unwrap();
        let mut buf = Vec::new();
        write_ply(&c, &mut buf).unwrap();
        let cut = buf.len() - 3;
        match read_ply(&buf[..cut]) {
            Err(GpsmError::Parse { offset, .. }) => assert_eq!(offset as usize, cut - 1),
            other => panic!("{other:?}"),
        }
        assert!(read_ply(b"plx\n").is_err());
    }
}

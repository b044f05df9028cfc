//! Binary little-endian PLY export of the surfel map.

use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::semantic::surfel_class;
use crate::surfel_map::SurfelMap;

const PROPERTIES: &[(&str, &str)] = &[
    ("float", "x"),
    ("float", "y"),
    ("float", "z"),
    ("float", "nx"),
    ("float", "ny"),
    ("float", "nz"),
    ("uchar", "red"),
    ("uchar", "green"),
    ("uchar", "blue"),
    ("float", "radius"),
    ("float", "confidence"),
    ("ushort", "class"),
    ("uint", "instance"),
];
const VERTEX_BYTES: usize = 6 * 4 + 3 + 2 * 4 + 2 + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Palette {
    /// Fused surface colour.
    Rgb,
    /// One colour per argmax class.
    Class,
}

impl Palette {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "rgb" => Some(Palette::Rgb),
            "class" => Some(Palette::Class),
            _ => None,
        }
    }
}

const TABLE: [[u8; 3]; 12] = [
    [174, 199, 232],
    [152, 223, 138],
    [31, 119, 180],
    [188, 189, 34],
    [140, 86, 75],
    [23, 190, 207],
    [148, 103, 189],
    [44, 160, 44],
    [214, 39, 40],
    [197, 176, 213],
    [196, 156, 148],
    [82, 84, 163],
];
const PINK: [u8; 3] = [247, 182, 210];
const ORANGE: [u8; 3] = [255, 127, 14];

/// Colour for `class`. Classes named furniture are pink and objects orange.
pub fn class_color(class: usize, name: &str) -> [u8; 3] {
    match name.to_ascii_lowercase().as_str() {
        "furniture" => PINK,
        "object" | "objects" => ORANGE,
        _ => TABLE[class % TABLE.len()],
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlyVertex {
    pub position: Vector3<f32>,
    pub normal: Vector3<f32>,
    pub color: [u8; 3],
    pub radius: f32,
    pub confidence: f32,
    pub class: u16,
    /// 0 when the surfel belongs to no instance.
    pub instance: u32,
}

/// Vertices in surfel id order.
pub fn vertices(map: &SurfelMap, palette: Palette) -> Vec<PlyVertex> {
    let names = map.class_names();
    map.iter()
        .map(|s| {
            let class = surfel_class(s).0;
            let color = match palette {
                Palette::Rgb => s.color,
                Palette::Class => class_color(class, &names[class]),
            };
            PlyVertex {
                position: s.position.cast(),
                normal: s.normal.cast(),
                color,
                radius: s.radius as f32,
                confidence: s.confidence as f32,
                class: class as u16,
                instance: s.instance.map_or(0, |i| i.0),
            }
        })
        .collect()
}

pub fn encode(vertices: &[PlyVertex]) -> Vec<u8> {
    let mut out = Vec::with_capacity(256 + vertices.len() * VERTEX_BYTES);
    out.extend_from_slice(b"ply\nformat binary_little_endian 1.0\n");
    out.extend_from_slice(format!("element vertex {}\n", vertices.len()).as_bytes());
    for (ty, name) in PROPERTIES {
        out.extend_from_slice(format!("property {ty} {name}\n").as_bytes());
    }
    out.extend_from_slice(b"end_header\n");
    for v in vertices {
        for x in v.position.iter().chain(v.normal.iter()) {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out.extend_from_slice(&v.color);
        out.extend_from_slice(&v.radius.to_le_bytes());
        out.extend_from_slice(&v.confidence.to_le_bytes());
        out.extend_from_slice(&v.class.to_le_bytes());
        out.extend_from_slice(&v.instance.to_le_bytes());
    }
    out
}

/// Writes the map and returns the number of bytes written.
pub fn export_ply(map: &SurfelMap, palette: Palette, path: &Path) -> Result<usize> {
    if map.is_empty() {
        return Err(Error::EmptyMap);
    }
    let bytes = encode(&vertices(map, palette));
    let mut w = crate::io::create_file(path)?;
    w.write_all(&bytes).and_then(|_| w.flush()).map_err(|e| Error::write(path, e))?;
    Ok(bytes.len())
}

/// Reads back a file in the exact layout written by [`export_ply`].
pub fn decode(bytes: &[u8]) -> Result<Vec<PlyVertex>> {
    let bad = |m: String| Error::parse("ply", m);
    let end = b"end_header\n";
    let split = bytes
        .windows(end.len())
        .position(|w| w == end)
        .ok_or_else(|| bad("missing end_header".into()))?;
    let header = std::str::from_utf8(&bytes[..split]).map_err(|_| bad("header is not utf-8".into()))?;
    let mut lines = header.lines();
    if lines.next() != Some("ply") || lines.next() != Some("format binary_little_endian 1.0") {
        return Err(bad("unsupported format line".into()));
    }
    let count: usize = lines
        .next()
        .and_then(|l| l.strip_prefix("element vertex "))
        .and_then(|n| n.trim().parse().ok())
        .ok_or_else(|| bad("missing vertex count".into()))?;
    for (ty, name) in PROPERTIES {
        if lines.next() != Some(format!("property {ty} {name}").as_str()) {
            return Err(bad(format!("expected property {name}")));
        }
    }
    let body = &bytes[split + end.len()..];
    if body.len() != count * VERTEX_BYTES {
        return Err(bad(format!("expected {} body bytes, found {}", count * VERTEX_BYTES, body.len())));
    }
    let f = |c: &[u8], at: usize| f32::from_le_bytes(c[at..at + 4].try_into().unwrap());
    Ok(body
        .chunks_exact(VERTEX_BYTES)
        .map(|c| PlyVertex {
            position: Vector3::new(f(c, 0), f(c, 4), f(c, 8)),
            normal: Vector3::new(f(c, 12), f(c, 16), f(c, 20)),
            color: [c[24], c[25], c[26]],
            radius: f(c, 27),
            confidence: f(c, 31),
            class: u16::from_le_bytes([c[35], c[36]]),
            instance: u32::from_le_bytes(c[37..41].try_into().unwrap()),
        })
        .collect())
}

pub fn read_ply(path: &Path) -> Result<Vec<PlyVertex>> {
    let bytes = std::fs::read(path).map_err(|_| Error::MissingFile(path.to_path_buf()))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surfel_map::{MapConfig, Surfel};

    fn one_surfel() -> SurfelMap {
        let mut map = SurfelMap::new(3, MapConfig::default());
        map.insert(Surfel::new(
            Vector3::new(0.1, 0.2, 1.0),
            Vector3::new(0.0, 0.0, -1.0),
            0.01,
            [10, 20, 30],
            2.0,
            3,
            0,
        ));
        map
    }

    #[test]
    fn header_and_size() {
        let bytes = encode(&vertices(&one_surfel(), Palette::Rgb));
        let text = String::from_utf8_lossy(&bytes);
        assert!(text.contains("element vertex 1\n"));
        let header_len = text.find("end_header\n").unwrap() + 11;
        assert_eq!(bytes.len() - header_len, VERTEX_BYTES);
        assert_eq!(decode(&bytes).unwrap()[0].color, [10, 20, 30]);
    }

    #[test]
    fn uniform_surfels_use_class_zero_color() {
        let v = vertices(&one_surfel(), Palette::Class);
        assert_eq!(v[0].class, 0);
        assert_eq!(v[0].color, class_color(0, "class0"));
    }

    #[test]
    fn named_palette_entries() {
        assert_eq!(class_color(3, "furniture"), PINK);
        assert_eq!(class_color(7, "objects"), ORANGE);
    }

    #[test]
    fn empty_map_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let map = SurfelMap::new(2, MapConfig::default());
        assert!(matches!(export_ply(&map, Palette::Rgb, &dir.path().join("m.ply")), Err(Error::EmptyMap)));
    }
}

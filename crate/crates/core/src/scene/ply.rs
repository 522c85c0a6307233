use std::fmt::Write as _;
use std::path::Path;

use super::{PointCloud, SceneError};
use crate::motion::Vec3;

/// ASCII PLY text for a cloud. Coordinates and normals are written as
/// shortest-form `f32`, colours as `round(c * 255)`.
pub fn ply_string(cloud: &PointCloud) -> String {
    let mut s = String::with_capacity(64 * cloud.len() + 256);
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "element vertex {}", cloud.len());
    for p in ["x", "y", "z"] {
        let _ = writeln!(s, "property float {p}");
    }
    for p in ["red", "green", "blue"] {
        let _ = writeln!(s, "property uchar {p}");
    }
    for p in ["nx", "ny", "nz"] {
        let _ = writeln!(s, "property float {p}");
    }
    s.push_str("end_header\n");
    for i in 0..cloud.len() {
        let p = cloud.points()[i];
        let c = cloud.colors()[i];
        let n = cloud.normals()[i];
        let byte = |v: f64| (v * 255.0).round().clamp(0.0, 255.0) as u8;
        let _ = writeln!(
            s,
            "{} {} {} {} {} {} {} {} {}",
            p[0] as f32,
            p[1] as f32,
            p[2] as f32,
            byte(c[0]),
            byte(c[1]),
            byte(c[2]),
            n[0] as f32,
            n[1] as f32,
            n[2] as f32
        );
    }
    s
}

pub fn write_ply(cloud: &PointCloud, path: &Path) -> Result<(), SceneError> {
    std::fs::write(path, ply_string(cloud)).map_err(|e| SceneError::Io(format!("{}: {e}", path.display())))
}

pub fn read_ply(path: &Path) -> Result<PointCloud, SceneError> {
    let text = std::fs::read_to_string(path).map_err(|e| SceneError::Io(format!("{}: {e}", path.display())))?;
    parse_ply(&text)
}

#[derive(Clone, Copy, PartialEq)]
enum Kind {
    Float,
    Uchar,
}

/// Parses ASCII PLY with vertex properties `x y z` and `red green blue`
/// (any order, extra properties ignored) and optional `nx ny nz`. Missing
/// normals are estimated.
pub fn parse_ply(text: &str) -> Result<PointCloud, SceneError> {
    let err = |line: usize, msg: &str| SceneError::Format {
        line,
        msg: msg.to_string(),
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(err(1, "missing 'ply' magic")),
    }
    let mut count = None;
    let mut props: Vec<(String, Kind)> = Vec::new();
    let mut in_vertex = false;
    let mut header_done = false;
    for (ln, line) in lines.by_ref() {
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            [] => {}
            ["comment", ..] | ["obj_info", ..] => {}
            ["format", "ascii", "1.0"] => {}
            ["format", ..] => return Err(err(ln, "only 'format ascii 1.0' is supported")),
            ["element", "vertex", n] => {
                count = Some(n.parse::<usize>().map_err(|_| err(ln, "bad vertex count"))?);
                in_vertex = true;
            }
            ["element", ..] => in_vertex = false,
            ["property", "list", ..] if in_vertex => return Err(err(ln, "list properties on vertices")),
            ["property", ty, name] if in_vertex => {
                let kind = match *ty {
                    "float" | "float32" | "double" | "float64" => Kind::Float,
                    "uchar" | "uint8" => Kind::Uchar,
                    _ => return Err(err(ln, &format!("unsupported property type {ty}"))),
                };
                props.push((name.to_string(), kind));
            }
            ["property", ..] => {}
            ["end_header"] => {
                header_done = true;
                break;
            }
            _ => return Err(err(ln, &format!("unexpected header line {line:?}"))),
        }
    }
    if !header_done {
        return Err(err(0, "missing end_header"));
    }
    let count = count.ok_or_else(|| err(0, "no vertex element"))?;
    let col = |name: &str, kind: Kind| -> Result<Option<usize>, SceneError> {
        match props.iter().position(|(n, _)| n == name) {
            None => Ok(None),
            Some(i) if props[i].1 == kind => Ok(Some(i)),
            Some(_) => Err(err(0, &format!("property {name} has the wrong type"))),
        }
    };
    let need = |name: &str, kind: Kind| -> Result<usize, SceneError> {
        col(name, kind)?.ok_or_else(|| err(0, &format!("missing vertex property {name}")))
    };
    let xyz = [need("x", Kind::Float)?, need("y", Kind::Float)?, need("z", Kind::Float)?];
    let rgb = [
        need("red", Kind::Uchar)?,
        need("green", Kind::Uchar)?,
        need("blue", Kind::Uchar)?,
    ];
    let nrm = [col("nx", Kind::Float)?, col("ny", Kind::Float)?, col("nz", Kind::Float)?];
    let has_normals = match nrm {
        [Some(_), Some(_), Some(_)] => true,
        [None, None, None] => false,
        _ => return Err(err(0, "normals must have all of nx, ny, nz")),
    };

    let mut points = Vec::with_capacity(count);
    let mut colors = Vec::with_capacity(count);
    let mut normals = Vec::with_capacity(count);
    let mut seen = 0;
    for (ln, line) in lines {
        if line.is_empty() {
            continue;
        }
        if seen == count {
            return Err(err(ln, "more vertex rows than declared"));
        }
        let vals: Vec<&str> = line.split_whitespace().collect();
        if vals.len() != props.len() {
            return Err(err(ln, &format!("expected {} values, found {}", props.len(), vals.len())));
        }
        let f = |i: usize| -> Result<f64, SceneError> {
            let v = vals[i].parse::<f32>().map_err(|_| err(ln, "bad float"))? as f64;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(err(ln, "non-finite value"))
            }
        };
        let u = |i: usize| -> Result<f64, SceneError> {
            Ok(f64::from(vals[i].parse::<u8>().map_err(|_| err(ln, "bad uchar"))?) / 255.0)
        };
        points.push([f(xyz[0])?, f(xyz[1])?, f(xyz[2])?]);
        colors.push([u(rgb[0])?, u(rgb[1])?, u(rgb[2])?]);
        if has_normals {
            let n: Vec3 = [f(nrm[0].unwrap())?, f(nrm[1].unwrap())?, f(nrm[2].unwrap())?];
            normals.push(n);
        }
        seen += 1;
    }
    if seen != count {
        return Err(err(0, &format!("declared {count} vertices, found {seen}")));
    }
    if has_normals {
        PointCloud::new(points, colors, normals)
    } else {
        PointCloud::with_estimated_normals(points, colors)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn write_read_write_is_byte_identical() {
        let c = PointCloud::new(
            vec![[0.1, -2.5, 1.0 / 3.0], [4.0, 5.0, 6.0]],
            vec![[0.2, 0.5, 1.0], [0.0, 0.7, 0.33]],
            vec![[0.0, 0.0, 1.0], [0.6, 0.8, 0.0]],
        )
        .unwrap();
        let a = ply_string(&c);
        let b = ply_string(&parse_ply(&a).unwrap());
        assert_eq!(a, b);
        assert!(a.contains("0.1 -2.5 0.33333334 51 128 255 0 0 1"));
    }

    #[test]
    fn missing_normals_are_estimated() {
        let mut s = String::from(
            "ply\nformat ascii 1.0\nelement vertex 25\nproperty float x\nproperty float y\nproperty float z\n\
             property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        );
        for i in 0..25 {
            s.push_str(&format!("{} {} 0 10 20 30\n", i % 5, i / 5));
        }
        let c = parse_ply(&s).unwrap();
        assert!(c.normals().iter().all(|n| (n[2] - 1.0).abs() < 1e-9));
    }

    #[test]
    fn malformed_files_report_lines() {
        assert!(matches!(parse_ply("nope"), Err(SceneError::Format { line: 1, .. })));
        let s = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nend_header\n1\n";
        assert!(parse_ply(s).is_err());
        let s = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\n\
                 property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n1 2 3 4 5 6\n";
        assert!(parse_ply(s).is_err());
    }
}

//! ASCII XYZ / PLY point-cloud files and JSON motion files.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, RigidMotion};

/// One `x y z` triple per line; blank lines and `#` comments are skipped.
pub fn parse_xyz(text: &str) -> Result<PointCloud> {
    let mut points = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        points.push(parse_triple(line, lineno + 1)?);
    }
    PointCloud::new(points)
}

fn parse_triple(line: &str, lineno: usize) -> Result<Vector3<f64>> {
    let mut fields = line.split_whitespace().map(|f| {
        f.parse::<f64>().map_err(|e| Error::Parse {
            line: lineno,
            message: format!("`{f}`: {e}"),
        })
    });
    let mut next = || {
        fields.next().unwrap_or_else(|| {
            Err(Error::Parse {
                line: lineno,
                message: "expected three coordinates".into(),
            })
        })
    };
    Ok(Vector3::new(next()?, next()?, next()?))
}

pub fn format_xyz(cloud: &PointCloud) -> String {
    let mut out = String::with_capacity(cloud.len() * 48);
    for p in cloud.points() {
        out.push_str(&format!("{} {} {}\n", p.x, p.y, p.z));
    }
    out
}

/// Vertex-only ASCII PLY. Extra vertex properties are ignored; other
/// elements must come after the vertices.
pub fn parse_ply(text: &str) -> Result<PointCloud> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                message: "missing `ply` magic".into(),
            })
        }
    }
    let mut vertex_count = None;
    let mut in_vertex = false;
    let mut props: Vec<String> = Vec::new();
    for (lineno, line) in lines.by_ref() {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["format", fmt, ..] if *fmt != "ascii" => {
                return Err(Error::Parse {
                    line: lineno + 1,
                    message: format!("unsupported PLY format `{fmt}`"),
                })
            }
            ["element", "vertex", n] => {
                vertex_count = Some(n.parse::<usize>().map_err(|e| Error::Parse {
                    line: lineno + 1,
                    message: e.to_string(),
                })?);
                in_vertex = true;
            }
            ["element", ..] => in_vertex = false,
            ["property", .., name] if in_vertex => props.push((*name).to_string()),
            ["end_header"] => break,
            _ => {}
        }
    }
    let n = vertex_count.ok_or(Error::Parse {
        line: 0,
        message: "no vertex element".into(),
    })?;
    let column = |axis: &str| {
        props.iter().position(|p| p == axis).ok_or_else(|| Error::Parse {
            line: 0,
            message: format!("vertex property `{axis}` missing"),
        })
    };
    let (cx, cy, cz) = (column("x")?, column("y")?, column("z")?);
    let mut points = Vec::with_capacity(n);
    for (lineno, line) in lines {
        if points.len() == n {
            break;
        }
        if line.trim().is_empty() {
            continue;
        }
        let values: Vec<f64> = line
            .split_whitespace()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                line: lineno + 1,
                message: e.to_string(),
            })?;
        let get = |c: usize| {
            values.get(c).copied().ok_or(Error::Parse {
                line: lineno + 1,
                message: "short vertex line".into(),
            })
        };
        points.push(Vector3::new(get(cx)?, get(cy)?, get(cz)?));
    }
    if points.len() != n {
        return Err(Error::Parse {
            line: 0,
            message: format!("expected {n} vertices, found {}", points.len()),
        });
    }
    PointCloud::new(points)
}

pub fn format_ply(cloud: &PointCloud) -> String {
    let mut out = format!(
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nend_header\n",
        cloud.len()
    );
    out.push_str(&format_xyz(cloud));
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CloudFormat {
    Xyz,
    Ply,
}

impl CloudFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("xyz") | Some("txt") => Ok(Self::Xyz),
            Some("ply") => Ok(Self::Ply),
            _ => Err(Error::InvalidInput(format!(
                "cannot infer cloud format from `{}` (expected .xyz or .ply)",
                path.display()
            ))),
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            Self::Xyz => "xyz",
            Self::Ply => "ply",
        }
    }
}

pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    let text = fs::read_to_string(path)?;
    match CloudFormat::from_path(path)? {
        CloudFormat::Xyz => parse_xyz(&text),
        CloudFormat::Ply => parse_ply(&text),
    }
}

pub fn write_cloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    let text = match CloudFormat::from_path(path)? {
        CloudFormat::Xyz => format_xyz(cloud),
        CloudFormat::Ply => format_ply(cloud),
    };
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

pub fn read_motion(path: &Path) -> Result<RigidMotion> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

pub fn write_motion(path: &Path, motion: &RigidMotion) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(motion)?)?;
    Ok(())
}

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};

/// Reads an ASCII PLY or `x,y,z` CSV file. No normalization is applied.
pub fn load_cloud(path: &Path) -> Result<PointCloud> {
    let text = fs::read(path).map_err(|e| Error::io(path, e))?;
    let label = path.display().to_string();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("ply") => parse_ply(&text, &label),
        Some("csv") => parse_csv(utf8(&text, &label)?, &label),
        _ if text.starts_with(b"ply") => parse_ply(&text, &label),
        _ => Err(Error::UnsupportedFormat(format!(
            "{label}: expected a .ply or .csv file"
        ))),
    }
}

fn utf8<'a>(bytes: &'a [u8], label: &str) -> Result<&'a str> {
    std::str::from_utf8(bytes).map_err(|e| Error::Parse {
        path: label.to_string(),
        line: 0,
        msg: format!("not valid UTF-8: {e}"),
    })
}

fn parse_err(label: &str, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: label.to_string(),
        line,
        msg: msg.into(),
    }
}

struct Element {
    name: String,
    count: usize,
    properties: Vec<String>,
    has_list: bool,
}

/// Parses the vertex positions of an ASCII PLY document.
pub fn parse_ply(bytes: &[u8], label: &str) -> Result<PointCloud> {
    let header_end =
        find_header_end(bytes).ok_or_else(|| parse_err(label, 1, "missing end_header"))?;
    let header = utf8(&bytes[..header_end], label)?;
    let mut lines = header.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(parse_err(label, 1, "first line must be `ply`")),
    }
    let mut elements: Vec<Element> = Vec::new();
    let mut saw_format = false;
    for (no, line) in lines {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.first().copied() {
            None | Some("comment") | Some("obj_info") => {}
            Some("format") => {
                match tokens.get(1).copied() {
                    Some("ascii") => {}
                    Some(f) if f.starts_with("binary") => {
                        return Err(Error::UnsupportedFormat(format!(
                            "{label}: {f} PLY (only ASCII is supported)"
                        )))
                    }
                    _ => return Err(parse_err(label, no, "malformed format line")),
                }
                saw_format = true;
            }
            Some("element") => {
                if tokens.len() != 3 {
                    return Err(parse_err(
                        label,
                        no,
                        "element line needs a name and a count",
                    ));
                }
                let count = tokens[2]
                    .parse()
                    .map_err(|_| parse_err(label, no, "element count is not an integer"))?;
                elements.push(Element {
                    name: tokens[1].to_string(),
                    count,
                    properties: Vec::new(),
                    has_list: false,
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(label, no, "property before any element"))?;
                if tokens.get(1) == Some(&"list") {
                    if tokens.len() != 5 {
                        return Err(parse_err(label, no, "malformed list property"));
                    }
                    el.has_list = true;
                    el.properties.push(tokens[4].to_string());
                } else {
                    if tokens.len() != 3 {
                        return Err(parse_err(label, no, "malformed property line"));
                    }
                    el.properties.push(tokens[2].to_string());
                }
            }
            Some("end_header") => break,
            Some(other) => {
                return Err(parse_err(
                    label,
                    no,
                    format!("unknown header keyword `{other}`"),
                ))
            }
        }
    }
    if !saw_format {
        return Err(parse_err(label, 2, "missing format line"));
    }
    let vertex_idx = elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| parse_err(label, 1, "no vertex element"))?;
    let vertex = &elements[vertex_idx];
    if vertex.has_list {
        return Err(parse_err(
            label,
            1,
            "list properties on vertices are not supported",
        ));
    }
    let index_of = |name: &str| {
        vertex
            .properties
            .iter()
            .position(|p| p == name)
            .ok_or_else(|| parse_err(label, 1, format!("vertex element lacks property `{name}`")))
    };
    let (ix, iy, iz) = (index_of("x")?, index_of("y")?, index_of("z")?);

    let header_lines = header.lines().count();
    let body = utf8(&bytes[header_end..], label)?;
    let mut body_lines = body
        .lines()
        .enumerate()
        .map(|(i, l)| (header_lines + i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty());
    let skip: usize = elements[..vertex_idx].iter().map(|e| e.count).sum();
    for _ in 0..skip {
        if body_lines.next().is_none() {
            return Err(parse_err(
                label,
                header_lines + 1,
                "file ends before vertex data",
            ));
        }
    }
    let mut points = Vec::with_capacity(vertex.count);
    for k in 0..vertex.count {
        let (no, line) = body_lines.next().ok_or_else(|| {
            parse_err(
                label,
                header_lines + skip + k + 1,
                format!("expected {} vertices, found {k}", vertex.count),
            )
        })?;
        let values = parse_row(line, vertex.properties.len(), label, no)?;
        points.push([values[ix], values[iy], values[iz]]);
    }
    Ok(PointCloud::new(points))
}

fn find_header_end(bytes: &[u8]) -> Option<usize> {
    let marker = b"end_header";
    let pos = bytes.windows(marker.len()).position(|w| w == marker)?;
    let rest = &bytes[pos + marker.len()..];
    let nl = rest
        .iter()
        .position(|&b| b == b'\n')
        .map_or(rest.len(), |p| p + 1);
    Some(pos + marker.len() + nl)
}

fn parse_row(line: &str, arity: usize, label: &str, no: usize) -> Result<Vec<f64>> {
    let values = line
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| parse_err(label, no, format!("`{t}` is not a number")))
        })
        .collect::<Result<Vec<f64>>>()?;
    if values.len() != arity {
        return Err(parse_err(
            label,
            no,
            format!("expected {arity} values, found {}", values.len()),
        ));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(parse_err(label, no, "non-finite coordinate"));
    }
    Ok(values)
}

/// Parses a CSV document whose header is `x,y,z`.
pub fn parse_csv(text: &str, label: &str) -> Result<PointCloud> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, h)) if h.replace(' ', "") == "x,y,z" => {}
        _ => return Err(parse_err(label, 1, "header must be `x,y,z`")),
    }
    let mut points = Vec::new();
    for (no, line) in lines.filter(|(_, l)| !l.is_empty()) {
        if line.split(',').count() != 3 {
            return Err(parse_err(label, no, "expected 3 comma-separated values"));
        }
        let v = parse_row(line, 3, label, no)?;
        points.push([v[0], v[1], v[2]]);
    }
    Ok(PointCloud::new(points))
}

/// ASCII PLY with double coordinates and an optional per-vertex `quality`
/// scalar. Values use the shortest representation that round-trips.
pub fn ply_string(cloud: &PointCloud, quality: Option<&[f64]>) -> Result<String> {
    if let Some(q) = quality {
        if q.len() != cloud.len() {
            return Err(Error::Dimension {
                op: "write_ply quality",
                left: (cloud.len(), 1),
                right: (q.len(), 1),
            });
        }
    }
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "element vertex {}", cloud.len());
    s.push_str("property double x\nproperty double y\nproperty double z\n");
    if quality.is_some() {
        s.push_str("property double quality\n");
    }
    s.push_str("end_header\n");
    for (i, p) in cloud.points().iter().enumerate() {
        let _ = write!(s, "{} {} {}", p[0], p[1], p[2]);
        if let Some(q) = quality {
            let _ = write!(s, " {}", q[i]);
        }
        s.push('\n');
    }
    Ok(s)
}

pub fn write_ply(path: &Path, cloud: &PointCloud, quality: Option<&[f64]>) -> Result<()> {
    let s = ply_string(cloud, quality)?;
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn write_csv(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut s = String::from("x,y,z\n");
    for p in cloud.points() {
        let _ = writeln!(s, "{},{},{}", p[0], p[1], p[2]);
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

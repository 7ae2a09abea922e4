use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{PointCloud, TetMesh, Vec3};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    Xyz,
    PlyAscii,
    /// Vertex block of a TetGen `.node` file.
    Node,
}

impl CloudFormat {
    /// Guesses the format from a file extension; defaults to xyz.
    pub fn from_path(path: &Path) -> Self {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref()
        {
            Some("ply") => CloudFormat::PlyAscii,
            Some("node") => CloudFormat::Node,
            _ => CloudFormat::Xyz,
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_point_cloud(path: impl AsRef<Path>, format: CloudFormat) -> Result<PointCloud> {
    let path = path.as_ref();
    let text = read(path)?;
    match format {
        CloudFormat::Xyz => parse_xyz(&text),
        CloudFormat::PlyAscii => parse_ply(&text),
        CloudFormat::Node => PointCloud::new(parse_node(&text)?),
    }
}

/// Strips a trailing `#` comment and surrounding whitespace.
fn content(line: &str) -> &str {
    match line.find('#') {
        Some(i) => line[..i].trim(),
        None => line.trim(),
    }
}

fn parse_f64(tok: &str, line: usize) -> Result<f64> {
    tok.parse::<f64>()
        .map_err(|_| Error::parse(line, format!("expected a number, found '{tok}'")))
}

fn parse_usize(tok: &str, line: usize) -> Result<usize> {
    tok.parse::<usize>()
        .map_err(|_| Error::parse(line, format!("expected an index, found '{tok}'")))
}

fn parse_vec3(toks: &[&str], line: usize) -> Result<Vec3> {
    if toks.len() < 3 {
        return Err(Error::parse(line, "expected three coordinates"));
    }
    Ok([
        parse_f64(toks[0], line)?,
        parse_f64(toks[1], line)?,
        parse_f64(toks[2], line)?,
    ])
}

/// Whitespace-separated `x y z` per line; `#` starts a comment.
pub fn parse_xyz(text: &str) -> Result<PointCloud> {
    let mut points = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = content(raw);
        if line.is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 3 {
            return Err(Error::parse(
                i + 1,
                format!("expected 3 values, found {}", toks.len()),
            ));
        }
        points.push(parse_vec3(&toks, i + 1)?);
    }
    PointCloud::new(points)
}

pub fn write_xyz(cloud: &PointCloud) -> String {
    let mut out = String::with_capacity(cloud.len() * 48);
    for p in cloud.positions() {
        let _ = writeln!(out, "{} {} {}", p[0], p[1], p[2]);
    }
    out
}

pub fn save_xyz(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &write_xyz(cloud))
}

/// ASCII PLY 1.0 with a `vertex` element carrying `x`, `y`, `z` and
/// optionally `red`, `green`, `blue`. Other elements are skipped.
pub fn parse_ply(text: &str) -> Result<PointCloud> {
    struct Element {
        name: String,
        count: usize,
        props: Vec<(String, String)>,
    }

    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(Error::parse(1, "missing 'ply' magic")),
    }
    let mut elements: Vec<Element> = Vec::new();
    let mut header_done = false;
    for (i, raw) in lines.by_ref() {
        let toks: Vec<&str> = raw.split_whitespace().collect();
        match toks.as_slice() {
            ["format", fmt, ..] => {
                if *fmt != "ascii" {
                    return Err(Error::parse(i + 1, format!("unsupported format '{fmt}'")));
                }
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: parse_usize(count, i + 1)?,
                props: Vec::new(),
            }),
            ["property", "list", ..] => match elements.last_mut() {
                Some(e) => e.props.push(("list".into(), toks[toks.len() - 1].into())),
                None => return Err(Error::parse(i + 1, "property before element")),
            },
            ["property", ty, name] => match elements.last_mut() {
                Some(e) => e.props.push((ty.to_string(), name.to_string())),
                None => return Err(Error::parse(i + 1, "property before element")),
            },
            ["end_header"] => {
                header_done = true;
                break;
            }
            _ => return Err(Error::parse(i + 1, format!("unexpected header line '{raw}'"))),
        }
    }
    if !header_done {
        return Err(Error::parse(text.lines().count(), "missing end_header"));
    }

    let mut points = Vec::new();
    let mut colors = Vec::new();
    for element in &elements {
        let is_vertex = element.name == "vertex";
        let col = |name: &str| element.props.iter().position(|(_, n)| n == name);
        let (xi, yi, zi) = (col("x"), col("y"), col("z"));
        let rgb = (col("red"), col("green"), col("blue"));
        if is_vertex && (xi.is_none() || yi.is_none() || zi.is_none()) {
            return Err(Error::parse(1, "vertex element lacks x/y/z"));
        }
        for _ in 0..element.count {
            let (i, raw) = loop {
                match lines.next() {
                    Some((_, l)) if l.trim().is_empty() => continue,
                    Some(x) => break x,
                    None => return Err(Error::parse(text.lines().count(), "unexpected end of body")),
                }
            };
            if !is_vertex {
                continue;
            }
            let toks: Vec<&str> = raw.split_whitespace().collect();
            if toks.len() < element.props.len() {
                return Err(Error::parse(i + 1, "too few values for vertex"));
            }
            let get = |k: usize| parse_f64(toks[k], i + 1);
            points.push([get(xi.unwrap())?, get(yi.unwrap())?, get(zi.unwrap())?]);
            if let (Some(r), Some(g), Some(b)) = rgb {
                let scale = |k: usize| -> Result<f64> {
                    let v = get(k)?;
                    Ok(if element.props[k].0.contains("char") { v / 255.0 } else { v })
                };
                colors.push([scale(r)?, scale(g)?, scale(b)?]);
            }
        }
    }
    let colors = (!colors.is_empty()).then_some(colors);
    PointCloud::with_colors(points, colors)
}

pub fn save_ply(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(out, "element vertex {}", cloud.len());
    out.push_str("property double x\nproperty double y\nproperty double z\n");
    if cloud.colors().is_some() {
        out.push_str("property double red\nproperty double green\nproperty double blue\n");
    }
    out.push_str("end_header\n");
    for (i, p) in cloud.positions().iter().enumerate() {
        let _ = write!(out, "{} {} {}", p[0], p[1], p[2]);
        if let Some(c) = cloud.colors() {
            let _ = write!(out, " {} {} {}", c[i][0], c[i][1], c[i][2]);
        }
        out.push('\n');
    }
    write(path.as_ref(), &out)
}

/// Iterator over `(line_number, tokens)` for non-empty, comment-free lines.
fn records(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, raw)| {
        let line = content(raw);
        (!line.is_empty()).then(|| (i + 1, line.split_whitespace().collect()))
    })
}

/// Returns the vertices and the index base declared by the first node.
fn parse_node_with_base(text: &str) -> Result<(Vec<Vec3>, usize)> {
    let mut recs = records(text);
    let (hline, header) = recs.next().ok_or_else(|| Error::parse(1, "empty .node file"))?;
    if header.len() < 2 {
        return Err(Error::parse(hline, "node header needs 'n dim [attrs bnd]'"));
    }
    let n = parse_usize(header[0], hline)?;
    let dim = parse_usize(header[1], hline)?;
    if dim != 3 {
        return Err(Error::parse(hline, format!("dimension must be 3, found {dim}")));
    }
    let attrs = header.get(2).map(|t| parse_usize(t, hline)).transpose()?.unwrap_or(0);
    let bnd = header.get(3).map(|t| parse_usize(t, hline)).transpose()?.unwrap_or(0);
    let mut verts = Vec::with_capacity(n);
    let mut base = 0;
    for k in 0..n {
        let (line, toks) = recs
            .next()
            .ok_or_else(|| Error::parse(hline, format!("header declares {n} nodes, found {k}")))?;
        if toks.len() != 4 + attrs + bnd {
            return Err(Error::parse(line, format!("expected {} fields", 4 + attrs + bnd)));
        }
        let id = parse_usize(toks[0], line)?;
        if k == 0 {
            if id > 1 {
                return Err(Error::parse(line, "first node index must be 0 or 1"));
            }
            base = id;
        }
        if id != base + k {
            return Err(Error::parse(line, format!("node index {id} out of sequence")));
        }
        verts.push(parse_vec3(&toks[1..4], line)?);
    }
    if let Some((line, _)) = recs.next() {
        return Err(Error::parse(line, "trailing data after declared nodes"));
    }
    Ok((verts, base))
}

fn parse_node(text: &str) -> Result<Vec<Vec3>> {
    parse_node_with_base(text).map(|(v, _)| v)
}

/// Parses TetGen `.node` / `.ele` text; indices are converted to 0-based
/// using the base declared by the first node.
pub fn parse_node_ele(node: &str, ele: &str) -> Result<TetMesh> {
    let (verts, base) = parse_node_with_base(node)?;
    let mut recs = records(ele);
    let (hline, header) = recs.next().ok_or_else(|| Error::parse(1, "empty .ele file"))?;
    if header.len() < 2 {
        return Err(Error::parse(hline, "ele header needs 'T nodes [attrs]'"));
    }
    let count = parse_usize(header[0], hline)?;
    let per = parse_usize(header[1], hline)?;
    if per != 4 {
        return Err(Error::parse(hline, format!("nodes per tet must be 4, found {per}")));
    }
    let attrs = header.get(2).map(|t| parse_usize(t, hline)).transpose()?.unwrap_or(0);
    let mut tets = Vec::with_capacity(count);
    for k in 0..count {
        let (line, toks) = recs
            .next()
            .ok_or_else(|| Error::parse(hline, format!("header declares {count} tets, found {k}")))?;
        if toks.len() != 5 + attrs {
            return Err(Error::parse(line, format!("expected {} fields", 5 + attrs)));
        }
        let mut tet = [0usize; 4];
        for (slot, tok) in tet.iter_mut().zip(&toks[1..5]) {
            let idx = parse_usize(tok, line)?;
            if idx < base {
                return Err(Error::IndexOutOfRange {
                    index: idx,
                    len: verts.len(),
                });
            }
            *slot = idx - base;
        }
        tets.push(tet);
    }
    if let Some((line, _)) = recs.next() {
        return Err(Error::parse(line, "trailing data after declared tets"));
    }
    TetMesh::new(verts, tets)
}

pub fn load_tet_mesh(node_path: impl AsRef<Path>, ele_path: impl AsRef<Path>) -> Result<TetMesh> {
    parse_node_ele(&read(node_path.as_ref())?, &read(ele_path.as_ref())?)
}

/// `.node` text with 0-based indices.
pub fn write_node(vertices: &[Vec3]) -> String {
    let mut out = String::with_capacity(vertices.len() * 64);
    let _ = writeln!(out, "{} 3 0 0", vertices.len());
    for (i, p) in vertices.iter().enumerate() {
        let _ = writeln!(out, "{i} {} {} {}", p[0], p[1], p[2]);
    }
    out
}

/// `.ele` text with 0-based indices.
pub fn write_ele(tets: &[[usize; 4]]) -> String {
    let mut out = String::with_capacity(tets.len() * 32);
    let _ = writeln!(out, "{} 4 0", tets.len());
    for (i, t) in tets.iter().enumerate() {
        let _ = writeln!(out, "{i} {} {} {} {}", t[0], t[1], t[2], t[3]);
    }
    out
}

pub fn save_tet_mesh(
    mesh: &TetMesh,
    node_path: impl AsRef<Path>,
    ele_path: impl AsRef<Path>,
) -> Result<()> {
    write(node_path.as_ref(), &write_node(mesh.vertices()))?;
    write(ele_path.as_ref(), &write_ele(mesh.tets()))
}

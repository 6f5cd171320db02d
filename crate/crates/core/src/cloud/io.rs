use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::Vector3;

use super::{Normals, Point3C, PointCloud};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    /// ASCII PLY with float xyz, uchar rgb and optional float normals.
    PlyAscii,
    /// `x,y,z,r,g,b` per line with 8-bit color channels.
    XyzRgbCsv,
}

impl CloudFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "ply" => Some(Self::PlyAscii),
            "csv" | "xyzrgb" => Some(Self::XyzRgbCsv),
            _ => None,
        }
    }
}

impl FromStr for CloudFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ply" | "ply-ascii" => Ok(Self::PlyAscii),
            "csv" | "xyzrgb-csv" => Ok(Self::XyzRgbCsv),
            other => Err(Error::InvalidArgument(format!("unknown cloud format '{other}'"))),
        }
    }
}

pub fn load_cloud(path: impl AsRef<Path>, format: CloudFormat) -> Result<PointCloud> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cloud = match format {
        CloudFormat::PlyAscii => parse_ply(path, &text)?,
        CloudFormat::XyzRgbCsv => parse_csv(path, &text)?,
    };
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    Ok(cloud)
}

/// Writes the cloud atomically: a temporary file in the target directory is renamed
/// over `path` only after every row has been written.
pub fn save_cloud(cloud: &PointCloud, path: impl AsRef<Path>, format: CloudFormat) -> Result<()> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    atomic_write(path.as_ref(), |w| match format {
        CloudFormat::PlyAscii => write_ply(cloud, w),
        CloudFormat::XyzRgbCsv => write_csv(cloud, w),
    })
}

/// Runs `body` against a buffered temporary file and renames it to `path` on success.
pub fn atomic_write<F>(path: &Path, body: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> std::io::Result<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        body(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn to_u8(c: f64) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn write_ply(cloud: &PointCloud, w: &mut dyn Write) -> std::io::Result<()> {
    writeln!(w, "ply")?;
    writeln!(w, "format ascii 1.0")?;
    writeln!(w, "element vertex {}", cloud.len())?;
    for axis in ["x", "y", "z"] {
        writeln!(w, "property float {axis}")?;
    }
    for channel in ["red", "green", "blue"] {
        writeln!(w, "property uchar {channel}")?;
    }
    if cloud.normals.is_some() {
        for axis in ["nx", "ny", "nz"] {
            writeln!(w, "property float {axis}")?;
        }
    }
    writeln!(w, "end_header")?;
    for (i, p) in cloud.points.iter().enumerate() {
        let [r, g, b] = p.color.map(to_u8);
        write!(
            w,
            "{} {} {} {} {} {}",
            p.position.x, p.position.y, p.position.z, r, g, b
        )?;
        if let Some(n) = &cloud.normals {
            let v = n.vectors[i];
            write!(w, " {} {} {}", v.x, v.y, v.z)?;
        }
        writeln!(w)?;
    }
    Ok(())
}

fn write_csv(cloud: &PointCloud, w: &mut dyn Write) -> std::io::Result<()> {
    for p in &cloud.points {
        let [r, g, b] = p.color.map(to_u8);
        writeln!(
            w,
            "{},{},{},{},{},{}",
            p.position.x, p.position.y, p.position.z, r, g, b
        )?;
    }
    Ok(())
}

fn parse_field(path: &Path, line: usize, token: &str) -> Result<f64> {
    let v: f64 = token
        .parse()
        .map_err(|_| Error::parse(path, line, format!("non-numeric field '{token}'")))?;
    if !v.is_finite() {
        return Err(Error::parse(path, line, format!("non-finite field '{token}'")));
    }
    Ok(v)
}

#[derive(Default)]
struct PlyColumns {
    xyz: [Option<usize>; 3],
    rgb: [Option<usize>; 3],
    normal: [Option<usize>; 3],
    rgb_is_float: bool,
    count: usize,
}

fn parse_ply(path: &Path, text: &str) -> Result<PointCloud> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, "ply")) => {}
        Some((n, _)) => return Err(Error::parse(path, n, "missing 'ply' magic")),
        None => return Err(Error::parse(path, 1, "empty file")),
    }

    let mut vertex_count: Option<usize> = None;
    let mut in_vertex = false;
    let mut cols = PlyColumns::default();
    let mut header_done = false;
    for (n, line) in lines.by_ref() {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            [] | ["comment", ..] | ["obj_info", ..] => {}
            ["format", "ascii", _] => {}
            ["format", other, ..] => {
                return Err(Error::parse(path, n, format!("unsupported format '{other}'")))
            }
            ["element", name, count] => {
                in_vertex = *name == "vertex";
                if in_vertex {
                    if vertex_count.is_some() {
                        return Err(Error::parse(path, n, "duplicate vertex element"));
                    }
                    vertex_count = Some(
                        count
                            .parse()
                            .map_err(|_| Error::parse(path, n, "invalid vertex count"))?,
                    );
                } else if count.parse::<usize>().map_err(|_| Error::parse(path, n, "invalid element count"))? > 0 {
                    return Err(Error::parse(path, n, format!("unsupported element '{name}'")));
                }
            }
            ["property", "list", ..] if in_vertex => {
                return Err(Error::parse(path, n, "list properties are not supported on vertices"))
            }
            ["property", ty, name] if in_vertex => {
                let col = cols.count;
                cols.count += 1;
                let is_float = matches!(*ty, "float" | "float32" | "double" | "float64");
                match *name {
                    "x" => cols.xyz[0] = Some(col),
                    "y" => cols.xyz[1] = Some(col),
                    "z" => cols.xyz[2] = Some(col),
                    "red" | "r" => {
                        cols.rgb[0] = Some(col);
                        cols.rgb_is_float = is_float;
                    }
                    "green" | "g" => cols.rgb[1] = Some(col),
                    "blue" | "b" => cols.rgb[2] = Some(col),
                    "nx" => cols.normal[0] = Some(col),
                    "ny" => cols.normal[1] = Some(col),
                    "nz" => cols.normal[2] = Some(col),
                    _ => {}
                }
            }
            ["property", ..] => {}
            ["end_header"] => {
                header_done = true;
                break;
            }
            _ => return Err(Error::parse(path, n, format!("malformed header line '{line}'"))),
        }
    }
    if !header_done {
        return Err(Error::parse(path, 1, "missing end_header"));
    }
    let count = vertex_count.ok_or_else(|| Error::parse(path, 1, "missing 'element vertex'"))?;
    let [Some(cx), Some(cy), Some(cz)] = cols.xyz else {
        return Err(Error::parse(path, 1, "vertex element lacks x/y/z properties"));
    };
    if count == 0 {
        return Err(Error::EmptyCloud);
    }
    let has_normals = cols.normal.iter().all(Option::is_some);
    let color_scale = if cols.rgb_is_float { 1.0 } else { 1.0 / 255.0 };

    let mut points = Vec::with_capacity(count);
    let mut normals = Vec::new();
    let mut valid = Vec::new();
    for (n, line) in lines {
        if points.len() == count {
            if !line.is_empty() {
                return Err(Error::parse(path, n, "more vertex rows than declared"));
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != cols.count {
            return Err(Error::parse(
                path,
                n,
                format!("expected {} fields, found {}", cols.count, tokens.len()),
            ));
        }
        let fields = tokens
            .iter()
            .map(|t| parse_field(path, n, t))
            .collect::<Result<Vec<f64>>>()?;
        let mut color = [0.0; 3];
        for (c, col) in color.iter_mut().zip(cols.rgb) {
            if let Some(col) = col {
                *c = fields[col] * color_scale;
                if !(0.0..=1.0).contains(c) {
                    return Err(Error::parse(path, n, "color channel out of range"));
                }
            }
        }
        points.push(Point3C {
            position: Vector3::new(fields[cx], fields[cy], fields[cz]),
            color,
        });
        if has_normals {
            let v = Vector3::new(
                fields[cols.normal[0].unwrap()],
                fields[cols.normal[1].unwrap()],
                fields[cols.normal[2].unwrap()],
            );
            let norm = v.norm();
            if norm > 0.0 {
                normals.push(v / norm);
                valid.push(true);
            } else {
                normals.push(Vector3::zeros());
                valid.push(false);
            }
        }
    }
    if points.len() != count {
        return Err(Error::parse(
            path,
            text.lines().count(),
            format!("expected {count} vertices, found {}", points.len()),
        ));
    }
    Ok(PointCloud {
        points,
        normals: has_normals.then_some(Normals {
            vectors: normals,
            valid,
        }),
    })
}

fn parse_csv(path: &Path, text: &str) -> Result<PointCloud> {
    let mut points = Vec::new();
    let mut width: Option<usize> = None;
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields = line
            .split(',')
            .map(|t| parse_field(path, n, t.trim()))
            .collect::<Result<Vec<f64>>>()?;
        if fields.len() != 3 && fields.len() != 6 {
            return Err(Error::parse(
                path,
                n,
                format!("expected 3 or 6 columns, found {}", fields.len()),
            ));
        }
        match width {
            None => width = Some(fields.len()),
            Some(w) if w != fields.len() => {
                return Err(Error::parse(
                    path,
                    n,
                    format!("inconsistent column count: {} then {}", w, fields.len()),
                ))
            }
            _ => {}
        }
        let mut color = [0.0; 3];
        if fields.len() == 6 {
            for (c, v) in color.iter_mut().zip(&fields[3..]) {
                if !(0.0..=255.0).contains(v) {
                    return Err(Error::parse(path, n, "color channel outside 0-255"));
                }
                *c = v / 255.0;
            }
        }
        points.push(Point3C {
            position: Vector3::new(fields[0], fields[1], fields[2]),
            color,
        });
    }
    Ok(PointCloud::new(points))
}

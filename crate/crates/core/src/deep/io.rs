use std::collections::BTreeMap;
use std::path::Path;

use super::network::{Dense, NetConfig, NetworkParams};
use crate::cloud::atomic_write;
use crate::{Error, Result};

fn write_matrix(w: &mut dyn std::io::Write, name: &str, rows: usize, cols: usize, values: &[f64]) -> std::io::Result<()> {
    writeln!(w, "LAYER {name} {rows} {cols}")?;
    for row in values.chunks(cols.max(1)) {
        let text: Vec<String> = row.iter().map(f64::to_string).collect();
        writeln!(w, "{}", text.join(" "))?;
    }
    Ok(())
}

/// `NETV1`, then `LAYER <name> <rows> <cols>` blocks of row-major values: a
/// `meta.n_points 1 1` block, then `<layer>.w` and `<layer>.b` (as `1 × rows`) per layer.
pub fn save_network(params: &NetworkParams, path: &Path) -> Result<()> {
    atomic_write(path, |w| {
        writeln!(w, "NETV1")?;
        write_matrix(w, "meta.n_points", 1, 1, &[params.config.n_points as f64])?;
        for l in params.layers() {
            write_matrix(w, &format!("{}.w", l.name), l.rows, l.cols, &l.w)?;
            write_matrix(w, &format!("{}.b", l.name), 1, l.rows, &l.b)?;
        }
        Ok(())
    })
}

type Matrix = (usize, usize, Vec<f64>);

fn parse(path: &Path) -> Result<BTreeMap<String, Matrix>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == "NETV1" => {}
        _ => return Err(Error::parse(path, 1, "expected NETV1 header")),
    }
    let mut out = BTreeMap::new();
    while let Some((i, line)) = lines.next() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        let (name, rows, cols) = match f.as_slice() {
            ["LAYER", n, r, c] => (
                n.to_string(),
                r.parse::<usize>().map_err(|_| Error::parse(path, i + 1, "invalid row count"))?,
                c.parse::<usize>().map_err(|_| Error::parse(path, i + 1, "invalid column count"))?,
            ),
            _ => return Err(Error::parse(path, i + 1, "expected 'LAYER <name> <rows> <cols>'")),
        };
        let mut values = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (j, row) = lines.next().ok_or_else(|| Error::parse(path, i + 1, format!("layer {name} is truncated")))?;
            let parsed: Vec<f64> = row
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| Error::parse(path, j + 1, "non-numeric value")))
                .collect::<Result<_>>()?;
            if parsed.len() != cols {
                return Err(Error::parse(path, j + 1, format!("expected {cols} values, found {}", parsed.len())));
            }
            values.extend(parsed);
        }
        out.insert(name, (rows, cols, values));
    }
    Ok(out)
}

fn take_dense(map: &mut BTreeMap<String, Matrix>, name: &str, path: &Path) -> Option<Result<Dense>> {
    let (rows, cols, w) = map.remove(&format!("{name}.w"))?;
    Some(match map.remove(&format!("{name}.b")) {
        Some((1, r, b)) if r == rows => Ok(Dense { name: name.to_string(), rows, cols, w, b }),
        _ => Err(Error::parse(path, 0, format!("layer {name} has a missing or mis-shaped bias"))),
    })
}

fn take_group(map: &mut BTreeMap<String, Matrix>, prefix: &str, path: &Path) -> Result<Vec<Dense>> {
    let mut out = Vec::new();
    while let Some(d) = take_dense(map, &format!("{prefix}.{}", out.len()), path) {
        out.push(d?);
    }
    Ok(out)
}

pub fn load_network(path: &Path) -> Result<NetworkParams> {
    let mut map = parse(path)?;
    let n_points = match map.remove("meta.n_points") {
        Some((1, 1, v)) if v[0] >= 1.0 => v[0] as usize,
        _ => return Err(Error::parse(path, 0, "missing meta.n_points")),
    };
    let tnet_point = take_group(&mut map, "tnet.point", path)?;
    let tnet_dense = take_group(&mut map, "tnet.dense", path)?;
    let local = take_group(&mut map, "local", path)?;
    let global = take_group(&mut map, "global", path)?;
    let head = take_group(&mut map, "head", path)?;
    let missing = |n: &str| Error::parse(path, 0, format!("missing layer {n}"));
    let agg = take_dense(&mut map, "agg", path).ok_or_else(|| missing("agg"))??;
    let aux = take_dense(&mut map, "aux", path).ok_or_else(|| missing("aux"))??;
    if let Some(extra) = map.keys().next() {
        return Err(Error::parse(path, 0, format!("unexpected layer {extra}")));
    }
    let widths = |g: &[Dense]| g.iter().map(|d| d.rows).collect::<Vec<_>>();
    let config = NetConfig {
        n_points,
        tnet_point: widths(&tnet_point),
        tnet_dense: widths(&tnet_dense[..tnet_dense.len().saturating_sub(1)]),
        local: widths(&local),
        global: widths(&global),
        head: widths(&head[..head.len().saturating_sub(1)]),
        agg_dim: agg.rows,
        classes: aux.rows,
    };
    let params = NetworkParams { config, tnet_point, tnet_dense, local, global, head, agg, aux };
    params.validate()?;
    Ok(params)
}

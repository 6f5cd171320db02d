use std::io::Write;
use std::path::Path;

use super::{Codebook, GmmModel};
use crate::cloud::atomic_write;
use crate::{Error, Result};

fn write_row(w: &mut dyn Write, row: &[f64]) -> std::io::Result<()> {
    let text: Vec<String> = row.iter().map(|v| v.to_string()).collect();
    writeln!(w, "{}", text.join(" "))
}

/// `GMMV1 K D`, then the weights, K mean rows and K variance rows.
pub fn save_gmm(gmm: &GmmModel, path: &Path) -> Result<()> {
    atomic_write(path, |w| {
        writeln!(w, "GMMV1 {} {}", gmm.k(), gmm.dim)?;
        write_row(w, &gmm.weights)?;
        for block in [&gmm.means, &gmm.variances] {
            for row in block.chunks(gmm.dim) {
                write_row(w, row)?;
            }
        }
        Ok(())
    })
}

/// `KMV1 K D`, then K centroid rows.
pub fn save_codebook(codebook: &Codebook, path: &Path) -> Result<()> {
    atomic_write(path, |w| {
        writeln!(w, "KMV1 {} {}", codebook.k(), codebook.dim)?;
        for row in codebook.centroids.chunks(codebook.dim) {
            write_row(w, row)?;
        }
        Ok(())
    })
}

struct Reader<'a> {
    path: &'a Path,
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Reader<'a> {
    fn header(&mut self, magic: &str) -> Result<(usize, usize)> {
        let (i, line) = self.lines.next().ok_or_else(|| Error::parse(self.path, 1, "empty model file"))?;
        let f: Vec<&str> = line.split_whitespace().collect();
        match f.as_slice() {
            [m, k, d] if *m == magic => {
                let k = k.parse().map_err(|_| Error::parse(self.path, i + 1, "invalid K"))?;
                let d = d.parse().map_err(|_| Error::parse(self.path, i + 1, "invalid D"))?;
                Ok((k, d))
            }
            _ => Err(Error::parse(self.path, i + 1, format!("expected '{magic} K D' header"))),
        }
    }

    fn row(&mut self, len: usize) -> Result<Vec<f64>> {
        let (i, line) = self
            .lines
            .next()
            .ok_or_else(|| Error::parse(self.path, 0, "unexpected end of model file"))?;
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::parse(self.path, i + 1, "non-numeric value"))?;
        if row.len() != len {
            return Err(Error::parse(self.path, i + 1, format!("expected {len} values, found {}", row.len())));
        }
        Ok(row)
    }

    fn rows(&mut self, count: usize, len: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(count * len);
        for _ in 0..count {
            out.extend(self.row(len)?);
        }
        Ok(out)
    }
}

pub fn load_gmm(path: &Path) -> Result<GmmModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader { path, lines: text.lines().enumerate() };
    let (k, dim) = r.header("GMMV1")?;
    let weights = r.row(k)?;
    let means = r.rows(k, dim)?;
    let variances = r.rows(k, dim)?;
    let gmm = GmmModel { dim, weights, means, variances };
    gmm.validate()?;
    Ok(gmm)
}

pub fn load_codebook(path: &Path) -> Result<Codebook> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader { path, lines: text.lines().enumerate() };
    let (k, dim) = r.header("KMV1")?;
    if k == 0 || dim == 0 {
        return Err(Error::parse(path, 1, "K and D must be >= 1"));
    }
    Ok(Codebook { dim, centroids: r.rows(k, dim)? })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let g = GmmModel {
            dim: 2,
            weights: vec![0.1, 0.9],
            means: vec![1.0 / 3.0, -2e-9, 5.5, 1e12],
            variances: vec![0.25, 1e-4, 3.0, 7.0 / 9.0],
        };
        let p = dir.path().join("g.gmm");
        save_gmm(&g, &p).unwrap();
        assert_eq!(load_gmm(&p).unwrap(), g);
        let cb = Codebook { dim: 3, centroids: vec![0.1, 0.2, 0.3, std::f64::consts::PI, 0.0, -1.0] };
        let p = dir.path().join("c.km");
        save_codebook(&cb, &p).unwrap();
        assert_eq!(load_codebook(&p).unwrap(), cb);
        assert!(load_gmm(&p).is_err());
    }
}

use std::fmt::Write as _;
use std::path::Path;

use crate::cloud::atomic_write;
use crate::Result;

/// Rows of the comparison table, in display order: (method, encoding).
pub const TABLE_ROWS: [(&str, &str); 10] = [
    ("SHOT", "FV"),
    ("SHOT", "BoVW"),
    ("RoPS", "FV"),
    ("RoPS", "BoVW"),
    ("FPFH", "FV"),
    ("FPFH", "BoVW"),
    ("PointNet", "Global"),
    ("PointNet", "Aggregation"),
    ("Fine tuned PointNet", "Global"),
    ("Fine tuned PointNet", "Aggregation"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub method: String,
    pub encoding: String,
    /// Percentage of correctly classified test plants; `None` when the row failed.
    pub accuracy: Option<f64>,
    /// Mean per-model feature, quantization and classification time; `None` when
    /// timing is disabled or the row failed.
    pub seconds: Option<f64>,
    /// `confusion[truth][predicted]` with index 0 = control, 1 = drought.
    pub confusion: [[usize; 2]; 2],
    pub error: Option<String>,
}

impl EvalRow {
    pub fn label(&self) -> String {
        format!("{} ({})", self.method, self.encoding)
    }

    pub fn failed(method: &str, encoding: &str, error: impl ToString) -> Self {
        Self {
            method: method.into(),
            encoding: encoding.into(),
            accuracy: None,
            seconds: None,
            confusion: [[0; 2]; 2],
            error: Some(error.to_string()),
        }
    }
}

/// `100 · correct / total`.
pub fn accuracy_percent(correct: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * correct as f64 / total as f64
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    /// Rows sorted into table order; rows not in the table keep their relative order at the end.
    pub fn new(mut rows: Vec<EvalRow>) -> Self {
        rows.sort_by_key(|r| {
            TABLE_ROWS
                .iter()
                .position(|(m, e)| *m == r.method && *e == r.encoding)
                .unwrap_or(TABLE_ROWS.len())
        });
        Self { rows }
    }

    pub fn row(&self, method: &str, encoding: &str) -> Option<&EvalRow> {
        self.rows.iter().find(|r| r.method == method && r.encoding == encoding)
    }

    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.label().len()).max().unwrap_or(0).max("Descriptor".len());
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  {:>12}  {:>10}  Confusion [cc cd | dc dd]", "Descriptor", "Accuracy (%)", "Time (s)");
        for r in &self.rows {
            let acc = r.accuracy.map_or_else(|| "failed".to_string(), |a| format!("{a:.1}"));
            let secs = r.seconds.map_or_else(|| "NA".to_string(), |s| format!("{s:.3}"));
            let c = r.confusion;
            let _ = write!(out, "{:<width$}  {acc:>12}  {secs:>10}  [{} {} | {} {}]", r.label(), c[0][0], c[0][1], c[1][0], c[1][1]);
            if let Some(e) = &r.error {
                let _ = write!(out, "  error: {e}");
            }
            out.push('\n');
        }
        out
    }

    /// `method,encoding,accuracy,seconds`; seconds are written as `NA` unless
    /// `with_seconds`, which keeps reruns byte-identical.
    pub fn to_csv(&self, with_seconds: bool) -> String {
        let mut out = String::from("method,encoding,accuracy,seconds\n");
        for r in &self.rows {
            let acc = r.accuracy.map_or_else(|| "failed".to_string(), |a| format!("{a:.1}"));
            let secs = r.seconds.filter(|_| with_seconds).map_or_else(|| "NA".to_string(), |s| format!("{s:.4}"));
            let _ = writeln!(out, "{},{},{acc},{secs}", r.method, r.encoding);
        }
        out
    }

    pub fn write(&self, text_path: &Path, csv_path: &Path, csv_seconds: bool) -> Result<()> {
        atomic_write(text_path, |w| w.write_all(self.to_text().as_bytes()))?;
        atomic_write(csv_path, |w| w.write_all(self.to_csv(csv_seconds).as_bytes()))
    }
}

//! Deterministic report serialization.
//!
//! Reports flatten into named tables. JSON output sorts every object's keys
//! and CSV keeps the declared column order; floats are always written with
//! six decimals and non-finite values become `null` / empty.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Str(String),
    Int(i64),
    Float(f64),
    Bool(bool),
    Null,
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Str(s.to_string())
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Str(s)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<u32> for Cell {
    fn from(v: u32) -> Self {
        Cell::Int(i64::from(v))
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Bool(v)
    }
}

impl<T: Into<Cell>> From<Option<T>> for Cell {
    fn from(v: Option<T>) -> Self {
        v.map_or(Cell::Null, Into::into)
    }
}

impl Cell {
    fn csv_text(&self) -> String {
        match self {
            Cell::Str(s) => s.clone(),
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) if v.is_finite() => format!("{v:.6}"),
            Cell::Float(_) | Cell::Null => String::new(),
            Cell::Bool(b) => b.to_string(),
        }
    }

    fn json_text(&self) -> String {
        match self {
            Cell::Str(s) => serde_json::to_string(s).expect("strings always serialize"),
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) if v.is_finite() => format!("{v:.6}"),
            Cell::Float(_) | Cell::Null => "null".into(),
            Cell::Bool(b) => b.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(columns: &[&'static str]) -> Self {
        Self {
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }
}

/// Anything that can be written as one or more named tables.
pub trait Report {
    fn kind(&self) -> &'static str;
    fn sections(&self) -> Vec<(&'static str, Table)>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl ReportFormat {
    /// `.json` means JSON; anything else is CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("json") => ReportFormat::Json,
            _ => ReportFormat::Csv,
        }
    }
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(Error::InvalidValue(format!("unknown report format {other:?}"))),
        }
    }
}

pub fn render_report(report: &dyn Report, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => Ok(render_json(report)),
        ReportFormat::Csv => render_csv(report),
    }
}

pub fn save_report(report: &dyn Report, path: impl AsRef<Path>, format: ReportFormat) -> Result<()> {
    fs::write(path, render_report(report, format)?)?;
    Ok(())
}

fn render_json(report: &dyn Report) -> String {
    let mut sections = report.sections();
    sections.sort_by_key(|(name, _)| *name);
    let mut out = String::from("{\n");
    out.push_str(&format!("  \"kind\": {},\n", Cell::from(report.kind()).json_text()));
    out.push_str("  \"sections\": {");
    for (si, (name, table)) in sections.iter().enumerate() {
        out.push_str(if si == 0 { "\n" } else { ",\n" });
        out.push_str(&format!("    {}: [", Cell::from(*name).json_text()));
        let mut order: Vec<usize> = (0..table.columns.len()).collect();
        order.sort_by_key(|&i| table.columns[i]);
        for (ri, row) in table.rows.iter().enumerate() {
            out.push_str(if ri == 0 { "\n" } else { ",\n" });
            let fields: Vec<String> = order
                .iter()
                .map(|&i| format!("{}: {}", Cell::from(table.columns[i]).json_text(), row[i].json_text()))
                .collect();
            out.push_str(&format!("      {{{}}}", fields.join(", ")));
        }
        out.push_str(if table.rows.is_empty() { "]" } else { "\n    ]" });
    }
    out.push_str(if sections.is_empty() { "}\n}\n" } else { "\n  }\n}\n" });
    out
}

fn render_csv(report: &dyn Report) -> Result<String> {
    let sections = report.sections();
    let labelled = sections.len() > 1;
    let mut out = String::new();
    for (si, (name, table)) in sections.iter().enumerate() {
        if labelled {
            if si > 0 {
                out.push('\n');
            }
            out.push_str(&format!("# {name}\n"));
        }
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(&table.columns).map_err(csv_error)?;
        for row in &table.rows {
            w.write_record(row.iter().map(Cell::csv_text)).map_err(csv_error)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::IoFailure(e.to_string()))?;
        out.push_str(&String::from_utf8(bytes).expect("csv of utf-8 cells is utf-8"));
    }
    Ok(out)
}

fn csv_error(e: csv::Error) -> Error {
    Error::IoFailure(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Demo;

    impl Report for Demo {
        fn kind(&self) -> &'static str {
            "demo"
        }

        fn sections(&self) -> Vec<(&'static str, Table)> {
            let mut rows = Table::new(&["name", "score", "count"]);
            rows.push(vec!["a,b".into(), 0.5.into(), 3usize.into()]);
            rows.push(vec!["c".into(), f64::NAN.into(), Cell::Null]);
            let mut summary = Table::new(&["mean"]);
            summary.push(vec![(2.0 / 3.0).into()]);
            vec![("rows", rows), ("summary", summary)]
        }
    }

    #[test]
    fn json_sorts_keys_and_fixes_floats() {
        let text = render_report(&Demo, ReportFormat::Json).unwrap();
        assert!(text.contains(r#"{"count": 3, "name": "a,b", "score": 0.500000}"#), "{text}");
        assert!(text.contains(r#""score": null"#));
        assert!(text.contains(r#"{"mean": 0.666667}"#));
        let parsed: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(parsed["kind"], "demo");
    }

    #[test]
    fn csv_quotes_and_labels_sections() {
        let text = render_report(&Demo, ReportFormat::Csv).unwrap();
        assert_eq!(
            text,
            "# rows\nname,score,count\n\"a,b\",0.500000,3\nc,,\n\n# summary\nmean\n0.666667\n"
        );
    }

    #[test]
    fn saving_twice_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        for format in [ReportFormat::Json, ReportFormat::Csv] {
            let a = dir.path().join("a");
            let b = dir.path().join("b");
            save_report(&Demo, &a, format).unwrap();
            save_report(&Demo, &b, format).unwrap();
            assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
        }
    }

    #[test]
    fn format_from_extension() {
        assert_eq!(ReportFormat::from_path(Path::new("r.JSON")), ReportFormat::Json);
        assert_eq!(ReportFormat::from_path(Path::new("r.csv")), ReportFormat::Csv);
        assert_eq!(ReportFormat::from_path(Path::new("r")), ReportFormat::Csv);
    }
}

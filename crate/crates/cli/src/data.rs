//! CSV ingestion.

use std::collections::BTreeSet;
use std::path::Path;

use fhe_tree::quantizer::Labels;
use fhe_tree::tree_ir::Task;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub x: Vec<Vec<f64>>,
    pub labels: Labels,
    /// Original label strings, indexed by class (classification only).
    pub class_names: Vec<String>,
}

impl Dataset {
    pub fn n_rows(&self) -> usize {
        self.x.len()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }
}

/// Header plus rows of raw cells.
pub fn read_table(path: &Path) -> CliResult<(Vec<String>, Vec<Vec<String>>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        rows.push(rec?.iter().map(str::to_owned).collect());
    }
    Ok((header, rows))
}

fn parse_cell(cell: &str, row: usize, col: &str) -> CliResult<f64> {
    cell.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| CliError::Data(format!("row {row}, column '{col}': '{cell}' is not a number")))
}

/// Parse every column except `label` as a feature.
pub fn parse_features(header: &[String], rows: &[Vec<String>], label: Option<&str>) -> CliResult<(Vec<String>, Vec<Vec<f64>>)> {
    let keep: Vec<usize> = (0..header.len())
        .filter(|&j| Some(header[j].as_str()) != label)
        .collect();
    let names = keep.iter().map(|&j| header[j].clone()).collect();
    let x = rows
        .iter()
        .enumerate()
        .map(|(i, r)| keep.iter().map(|&j| parse_cell(&r[j], i + 1, &header[j])).collect())
        .collect::<CliResult<_>>()?;
    Ok((names, x))
}

/// Load a labelled dataset.
///
/// Class labels that are all non-negative integers keep their value as the
/// class index; any other labels are numbered in sorted order.
pub fn load_dataset(path: &Path, label: &str, task: Task) -> CliResult<Dataset> {
    let (header, rows) = read_table(path)?;
    let li = header
        .iter()
        .position(|h| h == label)
        .ok_or_else(|| CliError::Usage(format!("label column '{label}' not found in {}", path.display())))?;
    let (feature_names, x) = parse_features(&header, &rows, Some(label))?;
    let raw: Vec<&str> = rows.iter().map(|r| r[li].as_str()).collect();
    let (labels, class_names) = match task {
        Task::Regression => {
            let t = raw
                .iter()
                .enumerate()
                .map(|(i, c)| parse_cell(c, i + 1, label))
                .collect::<CliResult<_>>()?;
            (Labels::Targets(t), Vec::new())
        }
        Task::Classification => {
            let ints: Option<Vec<usize>> = raw.iter().map(|c| c.parse::<usize>().ok()).collect();
            match ints {
                Some(c) => {
                    let n = c.iter().max().map_or(0, |m| m + 1);
                    (Labels::Classes(c), (0..n).map(|k| k.to_string()).collect())
                }
                None => {
                    let names: Vec<String> = raw
                        .iter()
                        .map(|s| s.to_string())
                        .collect::<BTreeSet<_>>()
                        .into_iter()
                        .collect();
                    let c = raw
                        .iter()
                        .map(|s| names.iter().position(|n| n == s).unwrap())
                        .collect();
                    (Labels::Classes(c), names)
                }
            }
        }
    };
    Ok(Dataset {
        feature_names,
        x,
        labels,
        class_names,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(s: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(s.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_integer_and_string_labels() {
        let f = write("a,y,b\n1.5,1,2\n0,0,3\n");
        let d = load_dataset(f.path(), "y", Task::Classification).unwrap();
        assert_eq!(d.feature_names, ["a", "b"]);
        assert_eq!(d.x, vec![vec![1.5, 2.0], vec![0.0, 3.0]]);
        assert_eq!(d.labels, Labels::Classes(vec![1, 0]));

        let f = write("a,y\n1,spam\n2,ham\n3,spam\n");
        let d = load_dataset(f.path(), "y", Task::Classification).unwrap();
        assert_eq!(d.labels, Labels::Classes(vec![1, 0, 1]));
        assert_eq!(d.class_names, ["ham", "spam"]);
    }

    #[test]
    fn bad_cell_names_row_and_column() {
        let f = write("a,y\n1,0\nx,1\n");
        let e = load_dataset(f.path(), "y", Task::Classification).unwrap_err();
        assert!(matches!(&e, CliError::Data(m) if m.contains("row 2") && m.contains("'a'")), "{e}");
    }

    #[test]
    fn missing_label_is_usage_error() {
        let f = write("a,y\n1,0\n");
        assert_eq!(load_dataset(f.path(), "z", Task::Classification).unwrap_err().exit_code(), 2);
    }
}

use std::collections::HashMap;
use std::path::Path;

use super::FlowTable;
use crate::error::{Error, Result};

pub const DEFAULT_LABEL_COLUMN: &str = "Label";

fn parse_cell(raw: &[u8]) -> f64 {
    std::str::from_utf8(raw)
        .ok()
        .and_then(|s| s.trim().parse::<f64>().ok())
        .unwrap_or(f64::NAN)
}

/// Reads a comma-separated flow table with a header row, or every `*.csv`
/// file in a directory (in name order, headers must agree).
///
/// Header names are trimmed; a repeated name gets a `.1`, `.2`, ... suffix
/// on its later occurrences. Feature cells that do not parse as numbers are
/// stored as NaN (missing); `Infinity`/`-Infinity` parse to ±∞ and are left
/// for [`sanitize_and_engineer`](super::sanitize_and_engineer).
pub fn load_flow_csv(path: impl AsRef<Path>, label_column: &str) -> Result<FlowTable> {
    let path = path.as_ref();
    if path.is_dir() {
        return load_dir(path, label_column);
    }
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(std::io::BufReader::new(file));
    let csv_err = |line: u64, message: String| Error::Csv {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut header: Vec<String> = reader
        .byte_headers()
        .map_err(|e| csv_err(1, e.to_string()))?
        .iter()
        .map(|h| String::from_utf8_lossy(h).trim().to_string())
        .collect();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for h in header.iter_mut() {
        let n = seen.entry(h.clone()).or_insert(0);
        if *n > 0 {
            *h = format!("{h}.{n}");
        }
        *n += 1;
    }
    let label_idx = header
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| csv_err(1, format!("header lacks label column {label_column:?}")))?;
    let columns: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != label_idx)
        .map(|(_, h)| h.clone())
        .collect();

    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut record = csv::ByteRecord::new();
    loop {
        match reader.read_byte_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                let message = match e.kind() {
                    csv::ErrorKind::UnequalLengths { expected_len, len, .. } => {
                        format!("row has {len} fields, header has {expected_len}")
                    }
                    _ => e.to_string(),
                };
                return Err(csv_err(line, message));
            }
        }
        for (i, cell) in record.iter().enumerate() {
            if i == label_idx {
                labels.push(String::from_utf8_lossy(cell).into_owned());
            } else {
                values.push(parse_cell(cell));
            }
        }
    }
    if labels.is_empty() {
        return Err(csv_err(1, "no data rows".into()));
    }
    FlowTable::new(columns, values, labels)
}

fn load_dir(dir: &Path, label_column: &str) -> Result<FlowTable> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("csv")))
        .collect();
    files.sort();
    let Some(first) = files.first() else {
        return Err(Error::Data(format!("{}: no .csv files", dir.display())));
    };
    let (columns, mut values, mut labels) = load_flow_csv(first, label_column)?.into_parts();
    for f in &files[1..] {
        let (c, v, l) = load_flow_csv(f, label_column)?.into_parts();
        if c != columns {
            return Err(Error::Data(format!("{}: header differs from {}", f.display(), first.display())));
        }
        values.extend(v);
        labels.extend(l);
    }
    Ok(FlowTable::from_parts(columns, values, labels, false))
}

/// Writes features followed by the (normalized) label column.
pub fn write_flow_csv(table: &FlowTable, path: impl AsRef<Path>, label_column: &str) -> Result<()> {
    let path = path.as_ref();
    let io = |e: csv::Error| Error::Csv {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    let mut header: Vec<&str> = table.columns().iter().map(String::as_str).collect();
    header.push(label_column);
    w.write_record(&header).map_err(io)?;
    let mut rec = Vec::with_capacity(header.len());
    for i in 0..table.n_rows() {
        rec.clear();
        rec.extend(table.row(i).iter().map(|v| v.to_string()));
        rec.push(table.labels()[i].clone());
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

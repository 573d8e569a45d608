//! RFMiD-style label CSV: `ID, Disease_Risk, <disease-code columns...>`.

use std::collections::HashSet;
use std::io::Read;
use std::path::Path;

use log::warn;
use serde::Serialize;

use crate::error::DataError;

pub const ID_COLUMN: &str = "ID";
pub const RISK_COLUMN: &str = "Disease_Risk";

/// The 45 per-disease columns of the RFMiD label files, in file order.
pub const RFMID_DISEASE_CODES: [&str; 45] = [
    "DR", "ARMD", "MH", "DN", "MYA", "BRVO", "TSLN", "ERM", "LS", "MS", "CSR", "ODC", "CRVO", "TV", "AH", "ODP", "ODE",
    "ST", "AION", "PT", "RT", "RS", "CRS", "EDN", "RPEC", "MHL", "RP", "CWS", "CB", "ODPM", "PRH", "MNF", "HR", "CRAO",
    "TD", "CME", "PTCR", "CF", "VH", "MCA", "VS", "BRAO", "PLQ", "HPED", "CL",
];

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct LabelRow {
    pub id: String,
    pub disease_risk: u8,
    /// One 0/1 flag per entry of [`LabelSet::disease_codes`].
    pub flags: Vec<u8>,
    /// 1-based line in the source file.
    pub line: u64,
}

#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct LabelSet {
    pub disease_codes: Vec<String>,
    pub rows: Vec<LabelRow>,
}

impl LabelSet {
    pub fn ids(&self) -> Vec<String> {
        self.rows.iter().map(|r| r.id.clone()).collect()
    }
}

pub fn load_labels(path: &Path) -> Result<LabelSet, DataError> {
    let file = std::fs::File::open(path).map_err(|source| DataError::Io { path: path.to_path_buf(), source })?;
    read_labels(file)
}

/// Parses a label CSV. `ID` and `Disease_Risk` are required; every other
/// column is read as a per-disease flag.
pub fn read_labels(reader: impl Read) -> Result<LabelSet, DataError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let id_col = headers
        .iter()
        .position(|h| h.trim_start_matches('\u{feff}') == ID_COLUMN)
        .ok_or(DataError::MissingColumn(ID_COLUMN))?;
    let risk_col = headers.iter().position(|h| h == RISK_COLUMN).ok_or(DataError::MissingColumn(RISK_COLUMN))?;
    let flag_cols: Vec<usize> = (0..headers.len()).filter(|&i| i != id_col && i != risk_col).collect();
    let disease_codes = flag_cols.iter().map(|&i| headers[i].to_string()).collect();

    let mut seen = HashSet::new();
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != headers.len() {
            return Err(DataError::RowLength { line, expected: headers.len(), actual: record.len() });
        }
        let binary = |col: usize| -> Result<u8, DataError> {
            match &record[col] {
                "0" => Ok(0),
                "1" => Ok(1),
                other => Err(DataError::NonBinary { line, column: headers[col].to_string(), value: other.to_string() }),
            }
        };
        let id = record[id_col].to_string();
        let disease_risk = binary(risk_col)?;
        let flags = flag_cols.iter().map(|&c| binary(c)).collect::<Result<Vec<_>, _>>()?;
        if !seen.insert(id.clone()) {
            return Err(DataError::DuplicateId { line, id });
        }
        rows.push(LabelRow { id, disease_risk, flags, line });
    }
    Ok(LabelSet { disease_codes, rows })
}

/// A row whose disease flags disagree with its `Disease_Risk` cell.
#[derive(Clone, PartialEq, Eq, Debug, Serialize)]
pub struct LabelWarning {
    pub id: String,
    pub line: u64,
    pub message: String,
}

/// Binary target of a row: diseased if `Disease_Risk` is set or any
/// disease flag is set. The second case is reported as a warning.
pub fn binary_label(row: &LabelRow) -> (u8, Option<LabelWarning>) {
    let any_flag = row.flags.contains(&1);
    if any_flag && row.disease_risk == 0 {
        let warning = LabelWarning {
            id: row.id.clone(),
            line: row.line,
            message: "disease flag set but Disease_Risk is 0; treating as diseased".into(),
        };
        warn!("label {} (line {}): {}", warning.id, warning.line, warning.message);
        return (1, Some(warning));
    }
    (row.disease_risk, None)
}

//! Observed partisan gaps used to score predicted directions.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which side scored higher on the axis in survey data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpectedSign {
    LiberalPositive,
    ConservativePositive,
}

impl ExpectedSign {
    pub fn as_str(self) -> &'static str {
        match self {
            ExpectedSign::LiberalPositive => "liberal_positive",
            ExpectedSign::ConservativePositive => "conservative_positive",
        }
    }
}

impl fmt::Display for ExpectedSign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExpectedSign {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "liberal_positive" => Ok(ExpectedSign::LiberalPositive),
            "conservative_positive" => Ok(ExpectedSign::ConservativePositive),
            other => Err(format!(
                "expected_sign must be liberal_positive or conservative_positive, got {other:?}"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthEntry {
    pub issue_id: String,
    pub expected_sign: ExpectedSign,
    pub source: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroundTruth {
    entries: BTreeMap<String, GroundTruthEntry>,
}

impl GroundTruth {
    pub fn from_entries(entries: impl IntoIterator<Item = GroundTruthEntry>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for e in entries {
            if map.contains_key(&e.issue_id) {
                return Err(Error::Config(format!(
                    "duplicate ground truth for {:?}",
                    e.issue_id
                )));
            }
            map.insert(e.issue_id.clone(), e);
        }
        Ok(GroundTruth { entries: map })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_reader(file, path)
    }

    /// Parses CSV with header `issue_id,expected_sign,source`. `origin` is
    /// only used in error messages.
    pub fn from_reader<R: Read>(reader: R, origin: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let parse_err = |line: usize, message: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            message,
        };

        let headers = rdr.headers()?.clone();
        if headers.is_empty() {
            return Ok(GroundTruth::default());
        }
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| parse_err(1, format!("missing column {name:?}")))
        };
        let (c_issue, c_sign, c_source) = (col("issue_id")?, col("expected_sign")?, col("source")?);

        let mut first_line: HashMap<String, usize> = HashMap::new();
        let mut entries = BTreeMap::new();
        for record in rdr.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line() as usize);
            let field = |i: usize| record.get(i).unwrap_or("").to_string();
            let issue_id = field(c_issue);
            if issue_id.is_empty() {
                return Err(parse_err(line, "empty issue_id".into()));
            }
            let expected_sign = field(c_sign)
                .parse::<ExpectedSign>()
                .map_err(|m| parse_err(line, m))?;
            if let Some(prev) = first_line.get(&issue_id) {
                return Err(parse_err(
                    line,
                    format!("issue_id {issue_id:?} duplicated on lines {prev} and {line}"),
                ));
            }
            first_line.insert(issue_id.clone(), line);
            entries.insert(
                issue_id.clone(),
                GroundTruthEntry {
                    issue_id,
                    expected_sign,
                    source: field(c_source),
                },
            );
        }
        Ok(GroundTruth { entries })
    }

    pub fn get(&self, issue_id: &str) -> Option<&GroundTruthEntry> {
        self.entries.get(issue_id)
    }

    pub fn entries(&self) -> impl Iterator<Item = &GroundTruthEntry> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries whose issue is not in `known`, as warning strings.
    pub fn unknown_issue_warnings<'a>(
        &self,
        known: impl IntoIterator<Item = &'a str>,
    ) -> Vec<String> {
        let known: std::collections::HashSet<&str> = known.into_iter().collect();
        self.entries
            .keys()
            .filter(|id| !known.contains(id.as_str()))
            .map(|id| format!("ground truth names unknown issue {id:?}"))
            .collect()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["issue_id", "expected_sign", "source"])?;
        for e in self.entries.values() {
            w.write_record([e.issue_id.as_str(), e.expected_sign.as_str(), &e.source])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv writer emits utf-8"))
    }
}

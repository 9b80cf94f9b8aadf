use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use netmae_autograd::Tensor;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Cn,
    Mci,
    Ad,
    Unlabeled,
}

impl Label {
    pub const CLASSES: [Label; 3] = [Label::Cn, Label::Mci, Label::Ad];

    /// Class index for the three diagnostic labels.
    pub fn class_index(self) -> Option<usize> {
        match self {
            Label::Cn => Some(0),
            Label::Mci => Some(1),
            Label::Ad => Some(2),
            Label::Unlabeled => None,
        }
    }

    pub fn from_class_index(i: usize) -> Option<Label> {
        Label::CLASSES.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Cn => "CN",
            Label::Mci => "MCI",
            Label::Ad => "AD",
            Label::Unlabeled => "UNLABELED",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "CN" => Ok(Label::Cn),
            "MCI" => Ok(Label::Mci),
            "AD" => Ok(Label::Ad),
            "UNLABELED" => Ok(Label::Unlabeled),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}

/// One recording: a `T_total × C` matrix (time × parcels) plus metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct ParcelTimeSeries {
    pub subject_id: String,
    pub session_index: u32,
    pub label: Label,
    pub age_years: Option<f64>,
    pub values: Tensor,
}

impl ParcelTimeSeries {
    pub fn new(
        subject_id: impl Into<String>,
        session_index: u32,
        label: Label,
        age_years: Option<f64>,
        values: Tensor,
    ) -> Result<Self> {
        let (_, _) = values.dims2("recording").map_err(|e| Error::Dimension(e.to_string()))?;
        if let Some(idx) = values.first_non_finite() {
            let c = values.cols();
            return Err(Error::Invalid(format!(
                "non-finite value at row {}, column {}",
                idx / c,
                idx % c
            )));
        }
        Ok(Self {
            subject_id: subject_id.into(),
            session_index,
            label,
            age_years,
            values,
        })
    }

    pub fn timepoints(&self) -> usize {
        self.values.rows()
    }

    pub fn parcels(&self) -> usize {
        self.values.cols()
    }

    /// `subject/session`, unique within a cohort.
    pub fn key(&self) -> String {
        format!("{}/{}", self.subject_id, self.session_index)
    }
}

fn header_line(r: &ParcelTimeSeries) -> String {
    let age = r.age_years.map_or_else(|| "NA".to_string(), |a| format!("{a}"));
    format!(
        "# subject={} session={} label={} age={}",
        r.subject_id, r.session_index, r.label, age
    )
}

pub fn save_recording(r: &ParcelTimeSeries, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let c = r.parcels();
    let mut write = || -> std::io::Result<()> {
        writeln!(w, "{}", header_line(r))?;
        let mut line = String::with_capacity(c * 24);
        for row in r.values.data().chunks_exact(c) {
            line.clear();
            for (j, v) in row.iter().enumerate() {
                if j > 0 {
                    line.push(',');
                }
                // `{}` on f64 prints the shortest string that round-trips.
                line.push_str(&format!("{v}"));
            }
            writeln!(w, "{line}")?;
        }
        w.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

fn parse_header(path: &Path, line: &str) -> Result<(String, u32, Label, Option<f64>)> {
    let bad = |column: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        column,
        message,
    };
    let body = line
        .strip_prefix('#')
        .ok_or_else(|| bad(1, "header must start with '#'".into()))?;
    let (mut subject, mut session, mut label, mut age) = (None, None, None, None);
    for field in body.split_whitespace() {
        let col = line.find(field).map_or(1, |p| p + 1);
        let (k, v) = field
            .split_once('=')
            .ok_or_else(|| bad(col, format!("expected key=value, got {field:?}")))?;
        match k {
            "subject" => subject = Some(v.to_string()),
            "session" => session = Some(v.parse::<u32>().map_err(|_| bad(col, format!("bad session {v:?}")))?),
            "label" => label = Some(v.parse::<Label>().map_err(|e| bad(col, e))?),
            "age" => {
                age = Some(if v == "NA" {
                    None
                } else {
                    Some(v.parse::<f64>().map_err(|_| bad(col, format!("bad age {v:?}")))?)
                })
            }
            other => return Err(bad(col, format!("unknown header key {other:?}"))),
        }
    }
    match (subject, session, label, age) {
        (Some(s), Some(n), Some(l), Some(a)) => Ok((s, n, l, a)),
        _ => Err(bad(1, "header needs subject, session, label and age".into())),
    }
}

/// Reads a recording CSV and checks it has `expected_parcels` columns.
pub fn load_recording(path: &Path, expected_parcels: usize) -> Result<ParcelTimeSeries> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = match lines.next() {
        Some(l) => l.map_err(|e| Error::io(path, e))?,
        None => {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                column: 1,
                message: "empty file".into(),
            })
        }
    };
    let (subject, session, label, age) = parse_header(path, header.trim_end())?;

    let mut data = Vec::new();
    let mut rows = 0;
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line_no = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let mut count = 0;
        for (j, cell) in line.split(',').enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                column: j + 1,
                message: format!("not a number: {cell:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: line_no,
                    column: j + 1,
                    message: format!("non-finite value {cell:?} (row {rows}, parcel {j})"),
                });
            }
            data.push(v);
            count += 1;
        }
        if count != expected_parcels {
            return Err(Error::Dimension(format!(
                "{}: line {line_no} has {count} columns, atlas has {expected_parcels} parcels",
                path.display()
            )));
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 2,
            column: 1,
            message: "no data rows".into(),
        });
    }
    let values = Tensor::new(&[rows, expected_parcels], data)?;
    ParcelTimeSeries::new(subject, session, label, age, values)
}

/// Recording paths listed one per line; relative entries resolve against the
/// manifest's directory. Blank lines and `#` comments are ignored.
pub fn read_manifest(path: &Path) -> Result<Vec<PathBuf>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            let p = PathBuf::from(l);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        })
        .collect())
}

pub fn write_manifest(path: &Path, entries: &[PathBuf]) -> Result<()> {
    let mut text = String::new();
    for e in entries {
        text.push_str(&e.to_string_lossy());
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_manifest(path: &Path, expected_parcels: usize) -> Result<Vec<ParcelTimeSeries>> {
    read_manifest(path)?
        .iter()
        .map(|p| load_recording(p, expected_parcels))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(rows: usize, cols: usize) -> ParcelTimeSeries {
        let data = (0..rows * cols).map(|i| (i as f64 * 0.37).sin()).collect();
        ParcelTimeSeries::new(
            "sub-01",
            2,
            Label::Mci,
            Some(71.5),
            Tensor::new(&[rows, cols], data).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn csv_round_trip_full_size() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let r = sample(64, 1024);
        save_recording(&r, &path).unwrap();
        let back = load_recording(&path, 1024).unwrap();
        assert_eq!(back.timepoints(), 64);
        assert_eq!(back, r);
    }

    #[test]
    fn nan_cell_is_reported_with_coordinates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        fs::write(&path, "# subject=a session=0 label=CN age=NA\n1,2,3\n4,NaN,6\n").unwrap();
        let err = load_recording(&path, 3).unwrap_err();
        match err {
            Error::Parse { line, column, .. } => assert_eq!((line, column), (3, 2)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn wrong_column_count_is_a_dimension_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        save_recording(&sample(64, 1000), &path).unwrap();
        assert!(matches!(load_recording(&path, 1024), Err(Error::Dimension(_))));
    }

    #[test]
    fn malformed_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        fs::write(&path, "subject=a\n1,2\n").unwrap();
        assert!(matches!(load_recording(&path, 2), Err(Error::Parse { line: 1, .. })));
        fs::write(&path, "# subject=a session=x label=CN age=NA\n1,2\n").unwrap();
        assert!(load_recording(&path, 2).is_err());
        fs::write(&path, "# subject=a session=1 label=XX age=NA\n1,2\n").unwrap();
        assert!(load_recording(&path, 2).is_err());
    }

    #[test]
    fn manifest_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("manifest.txt");
        fs::write(&m, "# comment\na.csv\n\n/abs/b.csv\n").unwrap();
        let entries = read_manifest(&m).unwrap();
        assert_eq!(entries, vec![dir.path().join("a.csv"), PathBuf::from("/abs/b.csv")]);
    }
}

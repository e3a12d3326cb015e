//! Dataset CSV loading/writing and accelerometer feature extraction.
//!
//! Trial files hold one sample per line as comma-separated integer readings
//! terminated by `;`. Three columns (default 0, 1, 2) are taken as the
//! acceleration axes and multiplied by a calibration scale.

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TriaxialSeries {
    samples: Vec<[f64; 3]>,
    trial: String,
    activity: String,
}

impl TriaxialSeries {
    pub fn new(samples: Vec<[f64; 3]>, trial: impl Into<String>, activity: impl Into<String>) -> Result<Self> {
        let trial = trial.into();
        if samples.len() < 2 {
            return Err(Error::DegenerateSeries {
                trial,
                reason: format!("{} samples; need at least 2", samples.len()),
            });
        }
        if let Some(t) = samples.iter().position(|s| s.iter().any(|v| !v.is_finite())) {
            return Err(Error::DegenerateSeries { trial, reason: format!("non-finite sample at t = {t}") });
        }
        Ok(Self { samples, trial, activity: activity.into() })
    }

    pub fn samples(&self) -> &[[f64; 3]] {
        &self.samples
    }

    pub fn trial(&self) -> &str {
        &self.trial
    }

    pub fn activity(&self) -> &str {
        &self.activity
    }
}

/// `(ln max SMV, ln min SMV, ln max |SMV_t - SMV_{t-1}|)` with
/// `SMV_t = |(x_t, y_t, z_t)|`.
pub fn smv_features(series: &TriaxialSeries) -> Result<[f64; 3]> {
    let smv: Vec<f64> = series.samples.iter().map(|s| s.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let max = smv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = smv.iter().cloned().fold(f64::INFINITY, f64::min);
    let jump = smv.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max);
    let degenerate = |reason: &str| Error::DegenerateSeries { trial: series.trial.clone(), reason: reason.into() };
    if jump == 0.0 {
        return Err(degenerate("constant signal magnitude (zero maximum change)"));
    }
    if min == 0.0 {
        return Err(degenerate("zero signal magnitude"));
    }
    Ok([max.ln(), min.ln(), jump.ln()])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialFormat {
    /// Zero-based columns holding the x, y, z readings.
    pub columns: [usize; 3],
    /// Multiplier from raw readings to acceleration units.
    pub scale: f64,
}

impl Default for TrialFormat {
    fn default() -> Self {
        Self { columns: [0, 1, 2], scale: 1.0 }
    }
}

pub fn parse_trial(text: &str, format: &TrialFormat, trial: &str, activity: &str) -> Result<TriaxialSeries> {
    if !(format.scale > 0.0 && format.scale.is_finite()) {
        return Err(Error::InvalidParameter(format!("calibration scale {} must be positive", format.scale)));
    }
    let mut samples = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim().trim_end_matches(';').trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let mut s = [0.0; 3];
        for (axis, &c) in format.columns.iter().enumerate() {
            let raw = fields.get(c).ok_or_else(|| Error::Parse {
                row: line_no + 1,
                column: c.to_string(),
                reason: format!("line has {} fields", fields.len()),
            })?;
            let v: i64 = raw.parse().map_err(|e: std::num::ParseIntError| Error::Parse {
                row: line_no + 1,
                column: c.to_string(),
                reason: format!("{raw:?}: {e}"),
            })?;
            s[axis] = v as f64 * format.scale;
        }
        samples.push(s);
    }
    TriaxialSeries::new(samples, trial, activity)
}

/// Trial id is the file stem; the activity code is the stem up to the first `_`.
pub fn read_trial(path: &Path, format: &TrialFormat) -> Result<TriaxialSeries> {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
    let activity = stem.split('_').next().unwrap_or_default().to_string();
    let text = std::fs::read_to_string(path)?;
    parse_trial(&text, format, &stem, &activity)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub id: String,
    pub activity: String,
    pub f1: f64,
    pub f2: f64,
    pub f3: f64,
}

/// Features for each trial file, in input order.
pub fn extract_features(paths: &[impl AsRef<Path> + Sync], format: &TrialFormat) -> Result<Vec<FeatureRow>> {
    paths
        .par_iter()
        .map(|p| {
            let series = read_trial(p.as_ref(), format)?;
            let [f1, f2, f3] = smv_features(&series)?;
            Ok(FeatureRow { id: series.trial, activity: series.activity, f1, f2, f3 })
        })
        .collect()
}

/// Columns `id, activity, f1, f2, f3`.
pub fn write_features<W: Write>(rows: &[FeatureRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn features_dataset(rows: &[FeatureRow]) -> Result<Dataset> {
    Dataset::new(
        rows.iter().map(|r| vec![r.f1, r.f2, r.f3]).collect(),
        Some(rows.iter().map(|r| r.id.clone()).collect()),
        Some(rows.iter().map(|r| r.activity.clone()).collect()),
    )
}

/// Which columns to read. `None` fields are detected from the header: values
/// from `y`, `y1..yp` or `f1..fp`; ids from `id`; groups from `group` or
/// `activity`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemaOptions {
    pub value_columns: Option<Vec<String>>,
    pub id_column: Option<String>,
    pub group_column: Option<String>,
}

fn numbered(header: &[String], prefix: &str) -> Vec<String> {
    (1..).map(|i| format!("{prefix}{i}")).take_while(|c| header.contains(c)).collect()
}

fn resolve(header: &[String], opts: &SchemaOptions) -> Result<(Vec<usize>, Option<usize>, Option<usize>)> {
    let find = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("column {name:?} not in header {header:?}")))
    };
    let values = match &opts.value_columns {
        Some(cols) if !cols.is_empty() => cols.clone(),
        Some(_) => return Err(Error::Schema("value_columns is empty".into())),
        None if header.iter().any(|h| h == "y") => vec!["y".to_string()],
        None => {
            let y = numbered(header, "y");
            if y.is_empty() {
                numbered(header, "f")
            } else {
                y
            }
        }
    };
    if values.is_empty() {
        return Err(Error::Schema(format!("no value columns (y, y1.., f1..) in header {header:?}")));
    }
    let values = values.iter().map(|v| find(v)).collect::<Result<Vec<_>>>()?;
    let id = match &opts.id_column {
        Some(c) => Some(find(c)?),
        None => header.iter().position(|h| h == "id"),
    };
    let group = match &opts.group_column {
        Some(c) => Some(find(c)?),
        None => header.iter().position(|h| h == "group").or_else(|| header.iter().position(|h| h == "activity")),
    };
    Ok((values, id, group))
}

pub fn read_dataset<R: Read>(input: R, opts: &SchemaOptions) -> Result<Dataset> {
    let mut r = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let (values, id, group) = resolve(&header, opts)?;
    let mut rows = Vec::new();
    let mut ids = Vec::new();
    let mut groups = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() != header.len() {
            return Err(Error::Schema(format!("line {line} has {} fields, header has {}", rec.len(), header.len())));
        }
        let row = values
            .iter()
            .map(|&c| {
                let cell = rec[c].trim();
                let err = |reason: String| Error::Parse { row: line, column: header[c].clone(), reason };
                if cell.is_empty() {
                    return Err(err("missing value".into()));
                }
                let v: f64 = cell.parse().map_err(|e| err(format!("{cell:?}: {e}")))?;
                if !v.is_finite() {
                    return Err(err(format!("non-finite value {cell:?}")));
                }
                Ok(v)
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
        if let Some(c) = id {
            ids.push(rec[c].trim().to_string());
        }
        if let Some(c) = group {
            groups.push(rec[c].trim().to_string());
        }
    }
    Dataset::new(rows, id.map(|_| ids), group.map(|_| groups))
}

pub fn load_dataset(path: &Path, opts: &SchemaOptions) -> Result<Dataset> {
    read_dataset(BufReader::new(File::open(path)?), opts)
}

/// Columns `id`, `group` when present, then `y` or `y1..yp`. Values use the
/// shortest representation that reads back exactly.
pub fn write_dataset<W: Write>(data: &Dataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["id".to_string()];
    if data.groups().is_some() {
        header.push("group".into());
    }
    if data.p() == 1 {
        header.push("y".into());
    } else {
        header.extend((1..=data.p()).map(|d| format!("y{d}")));
    }
    w.write_record(&header)?;
    for (i, row) in data.rows().enumerate() {
        let mut rec = vec![data.ids()[i].clone()];
        if let Some(g) = data.groups() {
            rec.push(g[i].clone());
        }
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn series(s: &[[f64; 3]]) -> TriaxialSeries {
        TriaxialSeries::new(s.to_vec(), "t1", "D01").unwrap()
    }

    #[test]
    fn hand_arithmetic_features() {
        let f = smv_features(&series(&[[1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 4.0]])).unwrap();
        assert_eq!(f, [4f64.ln(), 0.0, 2f64.ln()]);
        assert!((f[0] - 1.3863).abs() < 1e-4 && (f[2] - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn constant_magnitude_is_degenerate() {
        let err = smv_features(&series(&[[3.0, 4.0, 0.0], [0.0, 0.0, 5.0]])).unwrap_err();
        assert!(matches!(&err, Error::DegenerateSeries { trial, .. } if trial == "t1"));
        let err = smv_features(&series(&[[0.0, 0.0, 0.0], [0.0, 0.0, 5.0]])).unwrap_err();
        assert!(matches!(err, Error::DegenerateSeries { .. }));
        assert!(TriaxialSeries::new(vec![[1.0, 0.0, 0.0]], "short", "D01").is_err());
    }

    proptest! {
        #[test]
        fn scaling_shifts_features_by_log_c(
            raw in proptest::collection::vec(proptest::array::uniform3(-50.0..50.0f64), 3..30),
            c in 0.01..100.0f64,
        ) {
            let s = TriaxialSeries::new(raw.clone(), "t", "a").unwrap();
            let scaled = TriaxialSeries::new(raw.iter().map(|v| v.map(|x| x * c)).collect(), "t", "a").unwrap();
            if let (Ok(a), Ok(b)) = (smv_features(&s), smv_features(&scaled)) {
                for d in 0..3 {
                    prop_assert!((b[d] - a[d] - c.ln()).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn parses_trial_text() {
        let text = "  17, -179, -99, -18, -504;\n  15, -177, -100, -20, -501;\n\n 20,-170,-90,0,0;\n";
        let s = parse_trial(text, &TrialFormat::default(), "D07_SA09_R01", "D07").unwrap();
        assert_eq!(s.samples().len(), 3);
        assert_eq!(s.samples()[0], [17.0, -179.0, -99.0]);
        let scaled = parse_trial(text, &TrialFormat { columns: [3, 4, 0], scale: 0.5 }, "x", "D07").unwrap();
        assert_eq!(scaled.samples()[1], [-10.0, -250.5, 7.5]);
        let bad = parse_trial("1,2,x;\n1,2,3;", &TrialFormat::default(), "x", "D07").unwrap_err();
        assert!(matches!(bad, Error::Parse { row: 1, .. }));
        assert!(parse_trial("1,2;\n3,4;", &TrialFormat::default(), "x", "D07").is_err());
    }

    #[test]
    fn extracts_from_files_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let mut paths = Vec::new();
        for (name, body) in
            [("F02_SA09_R01.txt", "1,0,0;\n0,2,0;\n0,0,4;\n"), ("D07_SA09_R03.txt", "3,4,0;\n0,0,10;\n")]
        {
            let p = dir.path().join(name);
            std::fs::write(&p, body).unwrap();
            paths.push(p);
        }
        let rows = extract_features(&paths, &TrialFormat::default()).unwrap();
        assert_eq!(rows[0].id, "F02_SA09_R01");
        assert_eq!(rows[0].activity, "F02");
        assert_eq!(rows[1].activity, "D07");
        assert_eq!((rows[1].f1, rows[1].f2, rows[1].f3), (10f64.ln(), 5f64.ln(), 5f64.ln()));
        let mut buf = Vec::new();
        write_features(&rows, &mut buf).unwrap();
        let d = read_dataset(&buf[..], &SchemaOptions::default()).unwrap();
        assert_eq!((d.n(), d.p()), (2, 3));
        assert_eq!(d.groups().unwrap(), &["F02".to_string(), "D07".to_string()]);
        assert_eq!(d, features_dataset(&rows).unwrap());
    }

    #[test]
    fn loads_multivariate_and_reports_bad_cells() {
        let ok = "id,group,y1,y2,y3\na,g1,1,2,3\nb,g2,4,5,6\n";
        let d = read_dataset(ok.as_bytes(), &SchemaOptions::default()).unwrap();
        assert_eq!((d.n(), d.p()), (2, 3));
        assert_eq!(d.ids(), &["a".to_string(), "b".to_string()]);
        let nan = "y1,y2\n1,2\n3,NaN\n";
        match read_dataset(nan.as_bytes(), &SchemaOptions::default()).unwrap_err() {
            Error::Parse { row, column, .. } => assert_eq!((row, column.as_str()), (3, "y2")),
            e => panic!("unexpected {e}"),
        }
        let missing = "y\n1\n\"\"\n";
        assert!(matches!(
            read_dataset(missing.as_bytes(), &SchemaOptions::default()),
            Err(Error::Parse { row: 3, .. })
        ));
        let ragged = "y1,y2\n1,2\n3\n";
        assert!(matches!(read_dataset(ragged.as_bytes(), &SchemaOptions::default()), Err(Error::Schema(_))));
        let none = "a,b\n1,2\n";
        assert!(matches!(read_dataset(none.as_bytes(), &SchemaOptions::default()), Err(Error::Schema(_))));
        let custom =
            SchemaOptions { value_columns: Some(vec!["b".into()]), id_column: Some("a".into()), group_column: None };
        let d = read_dataset(none.as_bytes(), &custom).unwrap();
        assert_eq!((d.row(0)[0], d.ids()[0].as_str()), (2.0, "1"));
    }

    #[test]
    fn bundled_galaxies_file_loads() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/galaxies.csv");
        let d = load_dataset(&path, &SchemaOptions::default()).unwrap();
        assert_eq!((d.n(), d.p()), (82, 1));
    }

    proptest! {
        #[test]
        fn write_read_round_trip(
            rows in proptest::collection::vec(proptest::collection::vec(-1e6..1e6f64, 2), 1..20),
            grouped in any::<bool>(),
        ) {
            let groups = grouped.then(|| (0..rows.len()).map(|i| format!("g{}", i % 3)).collect());
            let d = Dataset::new(rows, None, groups).unwrap();
            let mut buf = Vec::new();
            write_dataset(&d, &mut buf).unwrap();
            let back = read_dataset(&buf[..], &SchemaOptions::default()).unwrap();
            prop_assert_eq!(back, d);
        }
    }
}

//! Confidence dumps: CSV rows of `split tag, true label, p_0, …, p_{k−1}`.
//!
//! Tags are `train` (alias `member`), `reference` and `test` (alias
//! `nonmember`). An optional header row starting with `split` is skipped.
//! Examples are identified by their row order in the file.

use std::fs::File;
use std::path::Path;

use super::ConfidenceSet;
use crate::error::{Error, Result};
use crate::numeric::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitTag {
    Train,
    Reference,
    Test,
}

impl SplitTag {
    pub fn parse(s: &str) -> Option<SplitTag> {
        match s {
            "train" | "member" => Some(SplitTag::Train),
            "reference" => Some(SplitTag::Reference),
            "test" | "nonmember" => Some(SplitTag::Test),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Reference => "reference",
            SplitTag::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceDump {
    pub train: ConfidenceSet,
    pub reference: ConfidenceSet,
    pub test: ConfidenceSet,
}

pub fn write_confidence_csv(path: &Path, sets: &[(SplitTag, &ConfidenceSet)]) -> Result<()> {
    let io = |e: csv::Error| Error::io(path, e.into());
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    let k = sets.first().map_or(0, |(_, s)| s.class_count());
    let mut header = vec!["split".to_string(), "label".to_string()];
    header.extend((0..k).map(|j| format!("p{j}")));
    w.write_record(&header).map_err(io)?;
    for (tag, set) in sets {
        for (row, y) in set.confidences.row_iter().zip(&set.labels) {
            let mut rec = vec![tag.name().to_string(), y.to_string()];
            rec.extend(row.iter().map(|p| format!("{p:?}")));
            w.write_record(&rec).map_err(io)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_confidence_csv(path: &Path) -> Result<ConfidenceDump> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut rows: [(Vec<f64>, Vec<usize>, Vec<usize>); 3] = Default::default();
    let mut k: Option<usize> = None;
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = record.position().map_or(i as u64 + 1, |p| p.line());
        if i == 0 && record.get(0) == Some("split") {
            continue;
        }
        if record.len() < 3 {
            return Err(err(line, "expected tag, label and probabilities".into()));
        }
        let width = record.len() - 2;
        if *k.get_or_insert(width) != width {
            return Err(err(line, format!("expected {} probabilities, found {width}", k.unwrap())));
        }
        let tag = SplitTag::parse(&record[0])
            .ok_or_else(|| err(line, format!("unknown split tag {:?}", &record[0])))?;
        let label: usize = record[1]
            .parse()
            .map_err(|_| err(line, format!("bad label {:?}", &record[1])))?;
        if label >= width {
            return Err(err(line, format!("label {label} with {width} classes")));
        }
        let slot = &mut rows[tag as usize];
        for f in record.iter().skip(2) {
            let p: f64 = f.parse().map_err(|_| err(line, format!("bad probability {f:?}")))?;
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Validation(format!(
                    "{}:{line}: probability {p} outside [0, 1]",
                    path.display()
                )));
            }
            slot.0.push(p);
        }
        slot.1.push(label);
        slot.2.push(i);
    }
    let k = k.unwrap_or(0);
    let [train, reference, test] = rows.map(|(data, labels, ids)| {
        Matrix::from_vec(labels.len(), k, data).and_then(|m| ConfidenceSet::new(m, labels, ids))
    });
    Ok(ConfidenceDump {
        train: train?,
        reference: reference?,
        test: test?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn round_trip() {
        let a = ConfidenceSet::new(
            Matrix::from_rows(&[[0.1, 0.9], [0.55, 0.45]]).unwrap(),
            vec![1, 0],
            vec![0, 1],
        )
        .unwrap();
        let b = ConfidenceSet::new(Matrix::from_rows(&[[0.3, 0.7]]).unwrap(), vec![0], vec![2]).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_confidence_csv(f.path(), &[(SplitTag::Train, &a), (SplitTag::Test, &b)]).unwrap();
        let d = read_confidence_csv(f.path()).unwrap();
        assert_eq!(d.train.confidences, a.confidences);
        assert_eq!(d.train.labels, a.labels);
        assert_eq!(d.test.labels, vec![0]);
        assert!(d.reference.is_empty());
    }

    #[test]
    fn aliases_and_errors() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "member,0,0.8,0.2\nnonmember,1,0.5,0.5").unwrap();
        let d = read_confidence_csv(f.path()).unwrap();
        assert_eq!((d.train.len(), d.test.len()), (1, 1));

        let mut g = tempfile::NamedTempFile::new().unwrap();
        writeln!(g, "train,0,0.8,0.2\nwhat,1,0.5,0.5").unwrap();
        assert!(matches!(read_confidence_csv(g.path()), Err(Error::Parse { line: 2, .. })));
    }
}

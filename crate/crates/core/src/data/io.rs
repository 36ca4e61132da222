//! Dataset persistence as flat CSV.
//!
//! One row per sample with the header
//! `id,domain,split,label,truth,f0,...,f{d-1}`. Empty `label` means the
//! sample is unlabeled; `truth` carries the withheld label when one exists.
//! Floats are written in shortest round-tripping form, so save followed by
//! load reproduces the dataset exactly, hidden truth included.

use std::path::Path;

use super::{DataError, Dataset, Domain, Sample, Split};

fn io_error(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn from_csv_error(path: &Path, e: csv::Error) -> DataError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    let msg = e.to_string();
    match e.into_kind() {
        csv::ErrorKind::Io(source) => io_error(path, source),
        _ => DataError::Parse {
            path: path.display().to_string(),
            line,
            msg,
        },
    }
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| from_csv_error(path, e))?;

    let mut header: Vec<String> = ["id", "domain", "split", "label", "truth"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..ds.dim()).map(|j| format!("f{j}")));
    w.write_record(&header).map_err(|e| from_csv_error(path, e))?;

    for (s, truth) in ds.samples().iter().zip(ds.truths()) {
        let mut record = vec![
            s.id.to_string(),
            match s.domain {
                Domain::Source => "source".into(),
                Domain::Target => "target".into(),
            },
            match s.split {
                Split::Train => "train".into(),
                Split::Val => "val".into(),
                Split::Test => "test".into(),
            },
            s.label.map(|l| l.to_string()).unwrap_or_default(),
            truth.map(|t| t.to_string()).unwrap_or_default(),
        ];
        record.extend(s.features.iter().map(|v| v.to_string()));
        w.write_record(&record).map_err(|e| from_csv_error(path, e))?;
    }
    w.flush().map_err(|e| io_error(path, e))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    let parse_error = |line: u64, msg: String| DataError::Parse {
        path: path.display().to_string(),
        line,
        msg,
    };

    let mut reader = csv::Reader::from_path(path).map_err(|e| from_csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| from_csv_error(path, e))?.clone();

    const FIXED: [&str; 5] = ["id", "domain", "split", "label", "truth"];
    if headers.len() < FIXED.len() + 1 {
        return Err(parse_error(
            1,
            format!(
                "expected header id,domain,split,label,truth,f0,... with at least one feature, got {} columns",
                headers.len()
            ),
        ));
    }
    for (i, want) in FIXED.iter().enumerate() {
        if &headers[i] != *want {
            return Err(parse_error(
                1,
                format!("expected column {} to be named {want:?}, found {:?}", i + 1, &headers[i]),
            ));
        }
    }
    let dim = headers.len() - FIXED.len();
    for j in 0..dim {
        let want = format!("f{j}");
        if headers[FIXED.len() + j] != want {
            return Err(parse_error(
                1,
                format!(
                    "expected feature column {want:?}, found {:?}",
                    &headers[FIXED.len() + j]
                ),
            ));
        }
    }

    let mut samples = Vec::new();
    let mut truths = Vec::new();
    let mut seen_ids = std::collections::BTreeSet::new();
    let mut max_class: Option<usize> = None;

    for record in reader.records() {
        let record = record.map_err(|e| from_csv_error(path, e))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);

        let id: usize = record[0]
            .parse()
            .map_err(|_| parse_error(line, format!("invalid id {:?}", &record[0])))?;
        if !seen_ids.insert(id) {
            return Err(parse_error(line, format!("duplicate sample id {id}")));
        }
        let domain = match &record[1] {
            "source" => Domain::Source,
            "target" => Domain::Target,
            other => {
                return Err(parse_error(
                    line,
                    format!("invalid domain {other:?}, expected \"source\" or \"target\""),
                ))
            }
        };
        let split = match &record[2] {
            "train" => Split::Train,
            "val" => Split::Val,
            "test" => Split::Test,
            other => {
                return Err(parse_error(
                    line,
                    format!("invalid split {other:?}, expected \"train\", \"val\" or \"test\""),
                ))
            }
        };
        let parse_class = |field: &str, name: &str| -> Result<Option<usize>, DataError> {
            if field.is_empty() {
                Ok(None)
            } else {
                field
                    .parse::<usize>()
                    .map(Some)
                    .map_err(|_| parse_error(line, format!("invalid {name} {field:?}")))
            }
        };
        let label = parse_class(&record[3], "label")?;
        let truth = parse_class(&record[4], "truth")?;
        if domain == Domain::Source && label.is_none() {
            return Err(parse_error(line, "source sample has no label".into()));
        }
        for c in [label, truth].into_iter().flatten() {
            max_class = Some(max_class.map_or(c, |m: usize| m.max(c)));
        }

        let mut features = Vec::with_capacity(dim);
        for j in 0..dim {
            let field = &record[FIXED.len() + j];
            let v: f64 = field
                .parse()
                .map_err(|_| parse_error(line, format!("invalid feature f{j} value {field:?}")))?;
            if !v.is_finite() {
                return Err(parse_error(
                    line,
                    format!("feature f{j} must be finite, got {field:?}"),
                ));
            }
            features.push(v);
        }

        samples.push(Sample {
            id,
            features,
            label,
            domain,
            split,
        });
        truths.push(truth);
    }

    let num_classes = max_class
        .ok_or_else(|| parse_error(0, "no labeled samples in file".into()))?
        + 1;
    if num_classes < 2 {
        return Err(parse_error(
            0,
            "labels only ever name class 0; at least two classes are required".into(),
        ));
    }
    Dataset::from_parts(samples, truths, num_classes, dim)
}

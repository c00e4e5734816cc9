//! Wide CSV layout: one row per subject with columns `id`, `s`, any number of
//! `x_*` covariates and one or more `y_*` outcomes. An empty outcome cell is
//! a missing value; covariate cells must be filled. The `x_`/`y_` prefixes
//! are stripped to give covariate and outcome names.

use std::io::{Read, Write};
use std::path::Path;

use splineperm::{Dataset, Subject};

use crate::error::{CliError, CliResult};

enum Column {
    Id,
    S,
    X,
    Y,
}

pub fn read_csv(path: &Path) -> CliResult<Dataset> {
    let file = std::fs::File::open(path)
        .map_err(|e| CliError::data(format!("cannot open {}: {e}", path.display())))?;
    parse_csv(file)
}

pub fn parse_csv<R: Read>(reader: R) -> CliResult<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(csv_error)?.clone();
    let mut columns = Vec::with_capacity(headers.len());
    let (mut covariates, mut outcomes) = (Vec::new(), Vec::new());
    for (j, h) in headers.iter().enumerate() {
        if headers.iter().take(j).any(|prev| prev == h) {
            return Err(CliError::data(format!("duplicate column {h:?}")));
        }
        columns.push(match h {
            "id" => Column::Id,
            "s" => Column::S,
            _ if h.starts_with("x_") && h.len() > 2 => {
                covariates.push(h[2..].to_string());
                Column::X
            }
            _ if h.starts_with("y_") && h.len() > 2 => {
                outcomes.push(h[2..].to_string());
                Column::Y
            }
            _ => {
                return Err(CliError::data(format!(
                    "unexpected column {h:?}: expected id, s, x_* or y_*"
                )))
            }
        });
    }
    for required in ["id", "s"] {
        if !headers.iter().any(|h| h == required) {
            return Err(CliError::data(format!("missing required column {required:?}")));
        }
    }
    if outcomes.is_empty() {
        return Err(CliError::data("no outcome columns (y_*)"));
    }

    let mut subjects = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record.map_err(csv_error)?;
        let line = row + 2;
        let number = |j: usize, cell: &str| -> CliResult<f64> {
            cell.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| CliError::data(format!("line {line}, column {:?}: invalid number {cell:?}", &headers[j])))
        };
        let (mut id, mut s) = (String::new(), 0.0);
        let (mut x, mut y) = (Vec::with_capacity(covariates.len()), Vec::with_capacity(outcomes.len()));
        for (j, cell) in record.iter().enumerate() {
            match columns[j] {
                Column::Id => id = cell.to_string(),
                Column::S => s = number(j, cell)?,
                Column::X => x.push(number(j, cell)?),
                Column::Y if cell.is_empty() => y.push(None),
                Column::Y => y.push(Some(number(j, cell)?)),
            }
        }
        subjects.push(Subject::new(id, s, x, y));
    }
    let dataset = Dataset::new(subjects, covariates, outcomes);
    if let Some(v) = dataset.validate().first() {
        return Err(CliError::data(format!("invalid dataset: {v}")));
    }
    Ok(dataset)
}

/// Writes the dataset in the wide layout. Values use the shortest
/// representation that parses back to the same `f64`.
pub fn write_csv<W: Write>(dataset: &Dataset, writer: W) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["id".to_string(), "s".to_string()];
    header.extend(dataset.covariate_names().iter().map(|n| format!("x_{n}")));
    header.extend(dataset.outcome_names().iter().map(|n| format!("y_{n}")));
    w.write_record(&header).map_err(csv_error)?;
    for subj in dataset.subjects() {
        let mut rec = vec![subj.id.clone(), subj.s.to_string()];
        rec.extend(subj.x.iter().map(f64::to_string));
        rec.extend(subj.y.iter().map(|v| v.map_or(String::new(), |v| v.to_string())));
        w.write_record(&rec).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv_file(dataset: &Dataset, path: &Path) -> CliResult<()> {
    let file = std::fs::File::create(path)
        .map_err(|e| CliError::data(format!("cannot create {}: {e}", path.display())))?;
    write_csv(dataset, std::io::BufWriter::new(file))
}

fn csv_error(e: csv::Error) -> CliError {
    CliError::data(format!("CSV error: {e}"))
}

/// Column means of the adjustment covariates.
pub fn covariate_means(dataset: &Dataset) -> Vec<f64> {
    let n = dataset.n() as f64;
    (0..dataset.p())
        .map(|j| dataset.subjects().iter().map(|s| s.x[j]).sum::<f64>() / n)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_outcomes_and_names() {
        let text = "id,s,x_age,y_a,y_b\n1,0.5,30,1.0,\n2,-0.5,40,,2.5\n3,1.5,50,0.1,0.2\n";
        let ds = parse_csv(text.as_bytes()).unwrap();
        assert_eq!(ds.covariate_names(), ["age"]);
        assert_eq!(ds.outcome_names(), ["a", "b"]);
        assert_eq!(ds.subjects()[0].y, vec![Some(1.0), None]);
        assert_eq!(ds.subjects()[1].y, vec![None, Some(2.5)]);
        assert_eq!(ds.n_missing(), 2);
    }

    #[test]
    fn malformed_files_are_rejected() {
        for text in [
            "id,s\n1,0\n",
            "id,y_a\n1,0\n",
            "id,s,y_a,y_a\n1,0,1,2\n",
            "id,s,z,y_a\n1,0,1,2\n",
            "id,s,x_a,y_a\n1,0,,2\n",
            "id,s,y_a\n1,abc,2\n",
            "id,s,y_a\n1,0,inf\n",
        ] {
            let err = parse_csv(text.as_bytes()).unwrap_err();
            assert_eq!(err.code, 2, "{text}");
        }
    }
}

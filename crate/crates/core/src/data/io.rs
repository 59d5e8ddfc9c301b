use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::data::{ChoiceExample, Dataset};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Reads a grouped CSV with header `group_id,chosen,f1,...,fd`.
///
/// Rows are grouped by key in first-appearance order; groups need not be
/// contiguous. Each group must have exactly one row with `chosen = 1`.
pub fn parse_grouped_csv<S: Scalar>(path: impl AsRef<Path>) -> Result<Dataset<S>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_grouped_csv_from(file, path.display().to_string())
}

pub(crate) fn parse_grouped_csv_from<S: Scalar>(reader: impl Read, provenance: String) -> Result<Dataset<S>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(Error::EmptyDataset(provenance));
    }
    if header.len() < 3 || &header[0] != "group_id" || &header[1] != "chosen" {
        return Err(Error::Parse(format!("{provenance}: header must be `group_id,chosen,f1,...`")));
    }
    let d = header.len() - 2;

    let mut index: HashMap<String, usize> = HashMap::new();
    let mut groups: Vec<(String, Vec<Vec<S>>, Vec<usize>)> = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        let row = line + 2;
        if record.len() != d + 2 {
            return Err(Error::Dimension(format!(
                "{provenance}:{row}: {} feature columns, header declares {d}",
                record.len().saturating_sub(2)
            )));
        }
        let key = record[0].to_string();
        let chosen = match &record[1] {
            "1" => true,
            "0" => false,
            other => return Err(Error::Parse(format!("{provenance}:{row}: chosen must be 0 or 1, got `{other}`"))),
        };
        let features = record
            .iter()
            .skip(2)
            .map(|v| {
                v.parse::<f64>()
                    .map(S::of)
                    .map_err(|_| Error::Parse(format!("{provenance}:{row}: `{v}` is not a number")))
            })
            .collect::<Result<Vec<S>>>()?;
        let g = *index.entry(key.clone()).or_insert_with(|| {
            groups.push((key, Vec::new(), Vec::new()));
            groups.len() - 1
        });
        let (_, items, chosen_rows) = &mut groups[g];
        if chosen {
            chosen_rows.push(items.len());
        }
        items.push(features);
    }

    let mut examples = Vec::with_capacity(groups.len());
    for (key, items, chosen_rows) in groups {
        match chosen_rows.as_slice() {
            [c] => examples.push(ChoiceExample { items, chosen: *c }),
            [] => return Err(Error::MalformedGroup { group: key, reason: "no row has chosen=1".into() }),
            many => {
                return Err(Error::MalformedGroup { group: key, reason: format!("{} rows have chosen=1", many.len()) })
            }
        }
    }
    Dataset::new(examples, provenance)
}

pub fn write_grouped_csv<S: Scalar>(ds: &Dataset<S>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let mut header = vec!["group_id".to_string(), "chosen".to_string()];
    header.extend((1..=ds.d()).map(|i| format!("f{i}")));
    w.write_record(&header)?;
    for (g, ex) in ds.examples().iter().enumerate() {
        for (i, item) in ex.items.iter().enumerate() {
            let mut row = vec![g.to_string(), u8::from(i == ex.chosen).to_string()];
            row.extend(item.iter().map(|v| format!("{:e}", v.to_f64_lossy())));
            w.write_record(&row)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads one `{"items": [[...], ...], "chosen": k}` object per line.
pub fn read_jsonl<S: Scalar>(path: impl AsRef<Path>) -> Result<Dataset<S>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut examples = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: ChoiceExample<f64> = serde_json::from_str(&line)?;
        let items = ex.items.into_iter().map(|x| x.into_iter().map(S::of).collect()).collect();
        examples.push(ChoiceExample::new(items, ex.chosen)?);
    }
    Dataset::new(examples, path.display().to_string())
}

pub fn write_jsonl<S: Scalar>(ds: &Dataset<S>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for ex in ds.cast::<f64>().examples() {
        serde_json::to_writer(&mut w, ex)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Dispatches on extension: `.jsonl` / `.json` as JSON lines, anything else
/// as grouped CSV.
pub fn read_dataset<S: Scalar>(path: impl AsRef<Path>) -> Result<Dataset<S>> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("jsonl") | Some("json") => read_jsonl(path),
        _ => parse_grouped_csv(path),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Dataset<f64>> {
        parse_grouped_csv_from(text.as_bytes(), "mem".into())
    }

    #[test]
    fn two_groups_of_three() {
        let ds = parse("group_id,chosen,f1,f2\na,0,1,2\na,1,3,4\na,0,5,6\nb,1,0,0\nb,0,1,1\nb,0,2,2\n").unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.d(), 2);
        assert!(ds.examples().iter().all(|e| e.len() == 3));
        assert_eq!(ds.examples()[0].chosen, 1);
        assert_eq!(ds.examples()[0].items[2], vec![5.0, 6.0]);
    }

    #[test]
    fn non_contiguous_groups_keep_file_order() {
        let ds = parse("group_id,chosen,f1\nq,0,1\np,1,7\nq,1,2\n").unwrap();
        assert_eq!(ds.examples()[0].items, vec![vec![1.0], vec![2.0]]);
        assert_eq!(ds.examples()[0].chosen, 1);
        assert_eq!(ds.examples()[1].items, vec![vec![7.0]]);
    }

    #[test]
    fn two_chosen_is_malformed() {
        let err = parse("group_id,chosen,f1\ng7,1,1\ng7,1,2\n").unwrap_err();
        match err {
            Error::MalformedGroup { group, .. } => assert_eq!(group, "g7"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse("group_id,chosen,f1\ng,0,1\n"), Err(Error::MalformedGroup { .. })));
    }

    #[test]
    fn ragged_and_empty() {
        assert!(matches!(parse("group_id,chosen,f1,f2\ng,1,1\n"), Err(Error::Dimension(_))));
        assert!(matches!(parse(""), Err(Error::EmptyDataset(_))));
        assert!(matches!(parse("group_id,chosen,f1\n"), Err(Error::EmptyDataset(_))));
    }

    #[test]
    fn csv_and_jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = parse("group_id,chosen,f1,f2\na,0,0.1,-2.5\na,1,3,4e-3\nb,1,1,1\n").unwrap();
        let csv_path = dir.path().join("d.csv");
        write_grouped_csv(&ds, &csv_path).unwrap();
        let back: Dataset<f64> = read_dataset(&csv_path).unwrap();
        assert_eq!(back.examples(), ds.examples());
        let jl = dir.path().join("d.jsonl");
        write_jsonl(&ds, &jl).unwrap();
        let back: Dataset<f64> = read_dataset(&jl).unwrap();
        assert_eq!(back.examples(), ds.examples());
    }
}

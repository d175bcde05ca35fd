//! Readers and writers for the on-disk formats.
//!
//! Predictions CSV: header `id,classifier,a_1,...,a_C`, one row per
//! (instance, classifier). Labels CSV: header `id,b_1,...,b_C`; a belief
//! with a single unit entry is an exact label. Row numbers in errors are
//! physical line numbers, with the header on line 1.
//!
//! Every parser takes a reader plus a source name so it can be driven from
//! memory (tests, fuzzing) as well as from files.

use std::collections::HashMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::composition::{Composition, Dataset, LabeledInstance};
use crate::error::{Error, Result};

/// How to treat rows whose entries do not sum to one.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReadOptions {
    /// Rescale any row with a positive sum. Without it, only rows within the
    /// renormalization tolerance are rescaled and the rest are rejected.
    pub normalize: bool,
}

/// Parsed predictions file, instances and classifiers in order of first
/// appearance.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTable {
    pub source: PathBuf,
    pub classes: usize,
    pub classifiers: Vec<String>,
    pub ids: Vec<String>,
    /// `rows[r][k]`: prediction of classifier `k` for instance `ids[r]`.
    pub rows: Vec<Vec<Composition>>,
    /// Rows that were rescaled onto the simplex.
    pub renormalized: usize,
}

/// Parsed labels file.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefTable {
    pub source: PathBuf,
    pub classes: usize,
    pub ids: Vec<String>,
    pub beliefs: Vec<Composition>,
    pub renormalized: usize,
}

fn input_error(source: &Path, row: usize, column: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Input {
        file: source.to_path_buf(),
        row,
        column: column.into(),
        message: message.into(),
    }
}

fn csv_reader<R: Read>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader)
}

fn csv_error(source: &Path, e: csv::Error) -> Error {
    let row = e.position().map_or(0, |p| p.line() as usize);
    input_error(source, row, "", e.to_string())
}

/// Checks `fixed` leading columns followed by `prefix_1..prefix_C`; returns C.
fn check_header(source: &Path, header: &csv::StringRecord, fixed: &[&str], prefix: &str) -> Result<usize> {
    for (i, name) in fixed.iter().enumerate() {
        if header.get(i) != Some(*name) {
            return Err(input_error(
                source,
                1,
                header.get(i).unwrap_or(""),
                format!("expected column {} to be '{name}'", i + 1),
            ));
        }
    }
    let classes = header.len().saturating_sub(fixed.len());
    if classes < 2 {
        return Err(input_error(source, 1, "", format!("need at least two '{prefix}_*' columns")));
    }
    for j in 0..classes {
        let want = format!("{prefix}_{}", j + 1);
        let got = header.get(fixed.len() + j).unwrap_or("");
        if got != want {
            return Err(input_error(source, 1, got, format!("expected column '{want}'")));
        }
    }
    Ok(classes)
}

/// Parses the probability columns of one record into a composition.
fn parse_composition(
    source: &Path,
    row: usize,
    record: &csv::StringRecord,
    header: &csv::StringRecord,
    offset: usize,
    options: ReadOptions,
) -> Result<(Composition, bool)> {
    let classes = header.len() - offset;
    if record.len() != header.len() {
        return Err(input_error(
            source,
            row,
            "",
            format!("expected {} fields, found {}", header.len(), record.len()),
        ));
    }
    let mut values = Vec::with_capacity(classes);
    for j in offset..header.len() {
        let column = &header[j];
        let v: f64 = record[j]
            .parse()
            .map_err(|_| input_error(source, row, column, format!("'{}' is not a number", &record[j])))?;
        if !v.is_finite() {
            return Err(input_error(source, row, column, format!("{v} is not finite")));
        }
        if v < 0.0 {
            return Err(input_error(source, row, column, format!("negative probability {v}")));
        }
        values.push(v);
    }
    let span = format!("{}..{}", &header[offset], &header[header.len() - 1]);
    if options.normalize {
        let sum: f64 = values.iter().sum();
        let exact = (sum - 1.0).abs() <= crate::composition::SIMPLEX_TOL;
        let comp = if exact { Composition::new(values) } else { Composition::normalize(values) };
        comp.map(|c| (c, !exact)).map_err(|e| input_error(source, row, span, e.to_string()))
    } else {
        Composition::new_lenient(values).map_err(|e| {
            input_error(source, row, span, format!("{e}; pass --normalize to rescale scores"))
        })
    }
}

fn warn_renormalized(source: &Path, count: usize) {
    if count > 0 {
        log::warn!("{}: rescaled {count} row(s) onto the simplex", source.display());
    }
}

/// Reads a predictions CSV. Every instance must carry exactly one row per
/// classifier.
pub fn parse_predictions<R: Read>(reader: R, source: &Path, options: ReadOptions) -> Result<PredictionTable> {
    let mut rdr = csv_reader(reader);
    let header = rdr.headers().map_err(|e| csv_error(source, e))?.clone();
    let classes = check_header(source, &header, &["id", "classifier"], "a")?;
    let mut classifiers: Vec<String> = Vec::new();
    let mut ids: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut first_row: Vec<usize> = Vec::new();
    let mut cells: Vec<Vec<Option<Composition>>> = Vec::new();
    let mut renormalized = 0;
    let mut record = csv::StringRecord::new();
    while rdr.read_record(&mut record).map_err(|e| csv_error(source, e))? {
        let row = record.position().map_or(0, |p| p.line() as usize);
        let id = record.get(0).unwrap_or("");
        let name = record.get(1).unwrap_or("");
        if id.is_empty() {
            return Err(input_error(source, row, "id", "empty id"));
        }
        if name.is_empty() {
            return Err(input_error(source, row, "classifier", "empty classifier name"));
        }
        let (a, rescaled) = parse_composition(source, row, &record, &header, 2, options)?;
        renormalized += rescaled as usize;
        let k = match classifiers.iter().position(|c| c == name) {
            Some(k) => k,
            None => {
                classifiers.push(name.to_string());
                cells.iter_mut().for_each(|c| c.push(None));
                classifiers.len() - 1
            }
        };
        let r = *index.entry(id.to_string()).or_insert_with(|| {
            ids.push(id.to_string());
            first_row.push(row);
            cells.push(vec![None; classifiers.len()]);
            ids.len() - 1
        });
        if cells[r][k].replace(a).is_some() {
            return Err(input_error(
                source,
                row,
                "classifier",
                format!("duplicate prediction for id '{id}' and classifier '{name}'"),
            ));
        }
    }
    if ids.is_empty() {
        return Err(input_error(source, 2, "", "no data rows"));
    }
    let rows = cells
        .into_iter()
        .enumerate()
        .map(|(r, preds)| {
            preds
                .into_iter()
                .enumerate()
                .map(|(k, a)| {
                    a.ok_or_else(|| {
                        input_error(
                            source,
                            first_row[r],
                            "classifier",
                            format!("id '{}' has no prediction from classifier '{}'", ids[r], classifiers[k]),
                        )
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    warn_renormalized(source, renormalized);
    Ok(PredictionTable {
        source: source.to_path_buf(),
        classes,
        classifiers,
        ids,
        rows,
        renormalized,
    })
}

/// Reads a labels CSV.
pub fn parse_labels<R: Read>(reader: R, source: &Path, options: ReadOptions) -> Result<BeliefTable> {
    let mut rdr = csv_reader(reader);
    let header = rdr.headers().map_err(|e| csv_error(source, e))?.clone();
    let classes = check_header(source, &header, &["id"], "b")?;
    let mut ids = Vec::new();
    let mut beliefs = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut renormalized = 0;
    let mut record = csv::StringRecord::new();
    while rdr.read_record(&mut record).map_err(|e| csv_error(source, e))? {
        let row = record.position().map_or(0, |p| p.line() as usize);
        let id = record.get(0).unwrap_or("");
        if id.is_empty() {
            return Err(input_error(source, row, "id", "empty id"));
        }
        if let Some(prev) = seen.insert(id.to_string(), row) {
            return Err(input_error(source, row, "id", format!("duplicate id '{id}' (first on row {prev})")));
        }
        let (b, rescaled) = parse_composition(source, row, &record, &header, 1, options)?;
        renormalized += rescaled as usize;
        ids.push(id.to_string());
        beliefs.push(b);
    }
    warn_renormalized(source, renormalized);
    Ok(BeliefTable {
        source: source.to_path_buf(),
        classes,
        ids,
        beliefs,
        renormalized,
    })
}

pub fn read_predictions(path: &Path, options: ReadOptions) -> Result<PredictionTable> {
    parse_predictions(open(path)?, path, options)
}

pub fn read_labels(path: &Path, options: ReadOptions) -> Result<BeliefTable> {
    parse_labels(open(path)?, path, options)
}

fn open(path: &Path) -> Result<fs::File> {
    fs::File::open(path).map_err(|e| input_error(path, 0, "", format!("cannot open: {e}")))
}

/// Positions of `names` among a table's classifiers.
fn classifier_positions(table: &PredictionTable, names: &[String]) -> Result<Vec<usize>> {
    names
        .iter()
        .map(|n| {
            table.classifiers.iter().position(|c| c == n).ok_or_else(|| {
                input_error(&table.source, 1, "classifier", format!("classifier '{n}' not present"))
            })
        })
        .collect()
}

/// Builds a dataset from an unlabeled predictions table and, optionally, a
/// labeled predictions table with its labels. `classifiers` selects and
/// orders classifiers by name; by default all classifiers of the unlabeled
/// file are used, and the labeled file must carry the same set.
pub fn assemble_dataset(
    unlabeled: &PredictionTable,
    labeled: Option<(&PredictionTable, &BeliefTable)>,
    classifiers: Option<&[String]>,
) -> Result<(Dataset, Vec<String>)> {
    let names: Vec<String> = match classifiers {
        Some(names) if names.is_empty() => {
            return Err(Error::InvalidConfig("classifier list must not be empty".into()))
        }
        Some(names) => names.to_vec(),
        None => unlabeled.classifiers.clone(),
    };
    let pick = |table: &PredictionTable| -> Result<Vec<Vec<Composition>>> {
        let pos = classifier_positions(table, &names)?;
        Ok(table.rows.iter().map(|row| pos.iter().map(|&k| row[k].clone()).collect()).collect())
    };
    let unl = pick(unlabeled)?;
    let mut inst = Vec::new();
    if let Some((preds, labels)) = labeled {
        for (table, c) in [(&preds.source, preds.classes), (&labels.source, labels.classes)] {
            if c != unlabeled.classes {
                return Err(input_error(
                    table,
                    1,
                    "",
                    format!("has {c} classes but {} has {}", unlabeled.source.display(), unlabeled.classes),
                ));
            }
        }
        if classifiers.is_none() {
            let mut a = unlabeled.classifiers.clone();
            let mut b = preds.classifiers.clone();
            a.sort();
            b.sort();
            if a != b {
                return Err(input_error(
                    &preds.source,
                    1,
                    "classifier",
                    format!("classifiers {:?} differ from the unlabeled file's {:?}", preds.classifiers, unlabeled.classifiers),
                ));
            }
        }
        inst = join_labeled(preds, labels, &names)?;
    }
    Ok((Dataset::new(unl, inst)?, names))
}

/// Pairs labeled predictions with their beliefs by id, keeping the order of
/// the predictions file. Every id must appear in both files.
pub fn join_labeled(preds: &PredictionTable, labels: &BeliefTable, names: &[String]) -> Result<Vec<LabeledInstance>> {
    if preds.classes != labels.classes {
        return Err(input_error(
            &labels.source,
            1,
            "",
            format!("has {} classes but {} has {}", labels.classes, preds.source.display(), preds.classes),
        ));
    }
    let pos = classifier_positions(preds, names)?;
    let belief_of: HashMap<&str, &Composition> = labels.ids.iter().map(String::as_str).zip(&labels.beliefs).collect();
    let pred_ids: HashMap<&str, ()> = preds.ids.iter().map(|id| (id.as_str(), ())).collect();
    if let Some(missing) = labels.ids.iter().find(|id| !pred_ids.contains_key(id.as_str())) {
        return Err(input_error(&labels.source, 0, "id", format!("id '{missing}' has no labeled predictions")));
    }
    preds
        .ids
        .iter()
        .zip(&preds.rows)
        .map(|(id, row)| {
            let belief = belief_of
                .get(id.as_str())
                .ok_or_else(|| input_error(&labels.source, 0, "id", format!("no label for labeled id '{id}'")))?;
            Ok(LabeledInstance {
                predictions: pos.iter().map(|&k| row[k].clone()).collect(),
                belief: (*belief).clone(),
            })
        })
        .collect()
}

/// Writes `bytes` to a temporary sibling and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidConfig(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

/// Pretty JSON with a trailing newline; floats use shortest round-trip form.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn from_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Parse(format!("JSON: {e}")))
}

pub fn from_toml<T: DeserializeOwned>(text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::Parse(format!("TOML: {e}")))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| input_error(path, 0, "", format!("cannot read: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn preds(text: &str) -> Result<PredictionTable> {
        parse_predictions(text.as_bytes(), Path::new("p.csv"), ReadOptions::default())
    }

    fn input_at(e: Error) -> (usize, String) {
        match e {
            Error::Input { row, column, .. } => (row, column),
            other => panic!("expected input error, got {other}"),
        }
    }

    #[test]
    fn reads_multi_classifier_predictions() {
        let t = preds("id,classifier,a_1,a_2\nx,nb,0.2,0.8\nx,tariff,1,0\ny,tariff,0.5,0.5\ny,nb,0,1\n").unwrap();
        assert_eq!(t.classes, 2);
        assert_eq!(t.classifiers, ["nb", "tariff"]);
        assert_eq!(t.ids, ["x", "y"]);
        assert_eq!(t.rows[1][0].as_slice(), &[0.0, 1.0]);
        assert_eq!(t.rows[1][1].as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn negative_entry_names_row_and_column() {
        let e = preds("id,classifier,a_1,a_2,a_3\nx,nb,0.2,0.8,0\ny,nb,0.5,-0.1,0.6\n").unwrap_err();
        assert!(e.to_string().starts_with("p.csv:3:a_2:"), "{e}");
        assert_eq!(input_at(e), (3, "a_2".into()));
    }

    #[test]
    fn header_must_match_exactly() {
        let e = preds("id,clf,a_1,a_2\n").unwrap_err();
        assert_eq!(input_at(e), (1, "clf".into()));
        let e = preds("id,classifier,a_1,a_3\n").unwrap_err();
        assert_eq!(input_at(e), (1, "a_3".into()));
        assert!(preds("id,classifier,a_1\n").is_err());
    }

    #[test]
    fn near_simplex_rows_are_rescaled_others_rejected() {
        let t = preds("id,classifier,a_1,a_2\nx,nb,0.5,0.5000005\n").unwrap();
        assert_eq!(t.renormalized, 1);
        assert!((t.rows[0][0].as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let e = preds("id,classifier,a_1,a_2\nx,nb,2,3\n").unwrap_err();
        assert_eq!(input_at(e), (2, "a_1..a_2".into()));
        let opts = ReadOptions { normalize: true };
        let t = parse_predictions("id,classifier,a_1,a_2\nx,nb,2,3\n".as_bytes(), Path::new("p"), opts).unwrap();
        assert_eq!(t.rows[0][0].as_slice(), &[0.4, 0.6]);
        assert!(parse_predictions("id,classifier,a_1,a_2\nx,nb,0,0\n".as_bytes(), Path::new("p"), opts).is_err());
    }

    #[test]
    fn structural_errors() {
        assert!(preds("id,classifier,a_1,a_2\nx,nb,0.5\n").is_err());
        assert!(preds("id,classifier,a_1,a_2\nx,nb,abc,0.5\n").is_err());
        assert!(preds("id,classifier,a_1,a_2\nx,nb,NaN,0.5\n").is_err());
        assert!(preds("id,classifier,a_1,a_2\n").is_err());
        let e = preds("id,classifier,a_1,a_2\nx,nb,0.5,0.5\nx,nb,0.5,0.5\n").unwrap_err();
        assert_eq!(input_at(e), (3, "classifier".into()));
        let e = preds("id,classifier,a_1,a_2\nx,nb,0.5,0.5\ny,tariff,0.5,0.5\n").unwrap_err();
        assert_eq!(input_at(e), (2, "classifier".into()));
    }

    #[test]
    fn labels_and_assembly() {
        let unl = preds("id,classifier,a_1,a_2\nu1,nb,0.3,0.7\nu2,nb,1,0\n").unwrap();
        let lab = preds("id,classifier,a_1,a_2\nl1,nb,0.9,0.1\nl2,nb,0.2,0.8\n").unwrap();
        let beliefs =
            parse_labels("id,b_1,b_2\nl2,0,1\nl1,0.6,0.4\n".as_bytes(), Path::new("b.csv"), ReadOptions::default())
                .unwrap();
        let (data, names) = assemble_dataset(&unl, Some((&lab, &beliefs)), None).unwrap();
        assert_eq!(names, ["nb"]);
        assert_eq!(data.n_unlabeled(), 2);
        assert_eq!(data.labeled()[0].belief.as_slice(), &[0.6, 0.4]);
        assert_eq!(data.labeled()[1].belief.degenerate_class(), Some(1));

        let missing = parse_labels("id,b_1,b_2\nl1,1,0\n".as_bytes(), Path::new("b.csv"), ReadOptions::default()).unwrap();
        assert!(assemble_dataset(&unl, Some((&lab, &missing)), None).is_err());
        let dup = parse_labels("id,b_1,b_2\nl1,1,0\nl1,0,1\n".as_bytes(), Path::new("b.csv"), ReadOptions::default());
        assert_eq!(input_at(dup.unwrap_err()), (3, "id".into()));
        assert!(assemble_dataset(&unl, None, Some(&["svm".to_string()])).is_err());
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.json");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}

//! Comma-separated dataset files plus a small key-value manifest.
//!
//! Manifest keys: `channels=`, `length=`, `classes=`, one `files=` entry
//! per data file (paths relative to the manifest), and optionally one
//! `subjects=` line directly after a `files=` line tagging that file's
//! rows with a subject id.
//!
//! Data rows are `label,v...` with values channel-major:
//! `label,v[c0,t0],v[c0,t1],...,v[c1,t0],...`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{DataError, LabeledWindowSet};
use crate::digest::fnv64;
use crate::tda::SignalWindow;

/// Loads the dataset described by a manifest file. Ordering is
/// deterministic: files in manifest order, rows in file order.
pub fn load_csv_dataset(manifest: &Path) -> Result<LabeledWindowSet, DataError> {
    let manifest_name = manifest.display().to_string();
    let text = fs::read_to_string(manifest)?;
    let base = manifest.parent().unwrap_or(Path::new("."));

    let mut channels = None;
    let mut length = None;
    let mut classes = None;
    let mut files: Vec<(PathBuf, Option<u32>)> = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| DataError::Malformed {
            file: manifest_name.clone(),
            line: lineno + 1,
            detail: format!("expected key=value, got '{line}'"),
        })?;
        let value = value.trim();
        let parse_count = |v: &str| -> Result<usize, DataError> {
            v.parse().map_err(|_| DataError::Malformed {
                file: manifest_name.clone(),
                line: lineno + 1,
                detail: format!("'{v}' is not a count"),
            })
        };
        match key.trim() {
            "channels" => channels = Some(parse_count(value)?),
            "length" => length = Some(parse_count(value)?),
            "classes" => classes = Some(parse_count(value)?),
            "files" => files.push((base.join(value), None)),
            "subjects" => {
                let id = value.parse().map_err(|_| DataError::Malformed {
                    file: manifest_name.clone(),
                    line: lineno + 1,
                    detail: format!("'{value}' is not a subject id"),
                })?;
                match files.last_mut() {
                    Some(entry) => entry.1 = Some(id),
                    None => {
                        return Err(DataError::Malformed {
                            file: manifest_name.clone(),
                            line: lineno + 1,
                            detail: "subjects= must follow a files= entry".into(),
                        })
                    }
                }
            }
            other => {
                return Err(DataError::Malformed {
                    file: manifest_name.clone(),
                    line: lineno + 1,
                    detail: format!("unknown key '{other}'"),
                })
            }
        }
    }

    let channels = channels.ok_or(DataError::MissingKey(manifest_name.clone(), "channels"))?;
    let length = length.ok_or(DataError::MissingKey(manifest_name.clone(), "length"))?;
    let classes = classes.ok_or(DataError::MissingKey(manifest_name.clone(), "classes"))?;

    let mut windows = Vec::new();
    let mut subjects: Vec<u32> = Vec::new();
    let any_subject = files.iter().any(|(_, s)| s.is_some());

    for (path, subject) in &files {
        let file_name = path.display().to_string();
        let content = fs::read_to_string(path)?;
        for (lineno, raw) in content.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split(',');
            let label: usize = fields
                .next()
                .and_then(|f| f.trim().parse().ok())
                .ok_or_else(|| DataError::Malformed {
                    file: file_name.clone(),
                    line: lineno + 1,
                    detail: "row must start with an integer label".into(),
                })?;
            let mut values = Vec::with_capacity(channels * length);
            for f in fields {
                let v: f64 = f.trim().parse().map_err(|_| DataError::Malformed {
                    file: file_name.clone(),
                    line: lineno + 1,
                    detail: format!("'{f}' is not a number"),
                })?;
                values.push(v);
            }
            if values.len() != channels * length {
                return Err(DataError::Malformed {
                    file: file_name.clone(),
                    line: lineno + 1,
                    detail: format!(
                        "expected {} value(s) for {channels} channel(s) x {length} step(s), got {}",
                        channels * length,
                        values.len()
                    ),
                });
            }
            let window = SignalWindow::new(channels, length, values, Some(label)).map_err(|e| {
                DataError::Malformed {
                    file: file_name.clone(),
                    line: lineno + 1,
                    detail: e.to_string(),
                }
            })?;
            windows.push(window);
            if any_subject {
                subjects.push(subject.unwrap_or(u32::MAX));
            }
        }
    }

    LabeledWindowSet::new(
        windows,
        classes,
        any_subject.then_some(subjects),
        fnv64(text.as_bytes()),
    )
}

/// Writes a dataset as CSV plus manifest under `dir`, returning the
/// manifest path. Values are printed with full round-trip precision. Sets
/// with subject annotations are split into one file per subject.
pub fn write_csv_dataset(set: &LabeledWindowSet, dir: &Path, stem: &str) -> Result<PathBuf, DataError> {
    fs::create_dir_all(dir)?;

    let groups: Vec<(Option<u32>, Vec<usize>)> = match set.subjects() {
        Some(subjects) => {
            let mut ids: Vec<u32> = subjects.to_vec();
            ids.sort_unstable();
            ids.dedup();
            ids.into_iter()
                .map(|id| {
                    (
                        Some(id),
                        (0..set.len()).filter(|&i| subjects[i] == id).collect(),
                    )
                })
                .collect()
        }
        None => vec![(None, (0..set.len()).collect())],
    };

    let mut manifest = String::new();
    let _ = writeln!(manifest, "channels={}", set.channels());
    let _ = writeln!(manifest, "length={}", set.window_length());
    let _ = writeln!(manifest, "classes={}", set.class_count());

    for (gi, (subject, indices)) in groups.iter().enumerate() {
        let file_name = format!("{stem}-{gi:03}.csv");
        let mut body = String::new();
        for &i in indices {
            let w = &set.windows()[i];
            let _ = write!(body, "{}", w.label.expect("validated"));
            for v in w.values() {
                let _ = write!(body, ",{v}");
            }
            body.push('\n');
        }
        fs::write(dir.join(&file_name), body)?;
        let _ = writeln!(manifest, "files={file_name}");
        if let Some(id) = subject {
            let _ = writeln!(manifest, "subjects={id}");
        }
    }

    let manifest_path = dir.join(format!("{stem}.manifest"));
    fs::write(&manifest_path, manifest)?;
    Ok(manifest_path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("topokd-csv-{}-{name}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn loads_single_row() {
        let dir = tmp("single");
        fs::write(dir.join("d.csv"), "0,0.1,0.2,0.3\n").unwrap();
        fs::write(
            dir.join("m.manifest"),
            "channels=1\nlength=3\nclasses=1\nfiles=d.csv\n",
        )
        .unwrap();
        let set = load_csv_dataset(&dir.join("m.manifest")).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.windows()[0].label, Some(0));
        assert_eq!(set.windows()[0].values(), &[0.1, 0.2, 0.3]);
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn ragged_row_names_the_line() {
        let dir = tmp("ragged");
        fs::write(dir.join("d.csv"), "0,0.1,0.2,0.3\n1,0.1,0.2\n").unwrap();
        fs::write(
            dir.join("m.manifest"),
            "channels=1\nlength=3\nclasses=2\nfiles=d.csv\n",
        )
        .unwrap();
        match load_csv_dataset(&dir.join("m.manifest")) {
            Err(DataError::Malformed { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected malformed-row error, got {other:?}"),
        }
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn label_out_of_range_is_rejected() {
        let dir = tmp("label");
        fs::write(dir.join("d.csv"), "5,0.1,0.2,0.3\n").unwrap();
        fs::write(
            dir.join("m.manifest"),
            "channels=1\nlength=3\nclasses=2\nfiles=d.csv\n",
        )
        .unwrap();
        assert!(matches!(
            load_csv_dataset(&dir.join("m.manifest")),
            Err(DataError::LabelOutOfRange { .. })
        ));
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn write_load_round_trip_is_exact() {
        let windows = vec![
            SignalWindow::new(2, 3, vec![0.1, -2.5, 3.0, 0.25, 1.0 / 3.0, -0.0625], Some(0))
                .unwrap(),
            SignalWindow::new(2, 3, vec![1.5e-8, 2.0, -7.125, 0.3, 0.6, 0.9], Some(1)).unwrap(),
        ];
        let set = LabeledWindowSet::new(windows, 2, None, 0).unwrap();
        let dir = tmp("roundtrip");
        let manifest = write_csv_dataset(&set, &dir, "data").unwrap();
        let loaded = load_csv_dataset(&manifest).unwrap();
        assert_eq!(loaded.len(), set.len());
        for (a, b) in loaded.windows().iter().zip(set.windows()) {
            assert_eq!(a.label, b.label);
            assert_eq!(a.values(), b.values());
        }
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn subjects_round_trip_per_file() {
        let mk = |label, _s| SignalWindow::new(1, 2, vec![0.5, 1.5], Some(label)).unwrap();
        let set = LabeledWindowSet::new(
            vec![mk(0, 1), mk(1, 1), mk(0, 2)],
            2,
            Some(vec![1, 1, 2]),
            0,
        )
        .unwrap();
        let dir = tmp("subjects");
        let manifest = write_csv_dataset(&set, &dir, "subj").unwrap();
        let loaded = load_csv_dataset(&manifest).unwrap();
        assert_eq!(loaded.subjects(), Some(&[1, 1, 2][..]));
        fs::remove_dir_all(&dir).ok();
    }
}

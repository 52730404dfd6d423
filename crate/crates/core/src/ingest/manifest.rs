use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Dataset, FoldAssignment, LabeledImage};
use crate::error::{Error, Result};

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

#[derive(Debug, Deserialize, Serialize)]
struct ManifestRow {
    id: String,
    path: String,
    label: String,
}

/// Loads a directory laid out as `root/<class>/<file>` or a CSV manifest
/// with columns `id,path,label`.
///
/// Relative manifest paths resolve against the manifest's directory. Every
/// referenced file must exist.
pub fn load_manifest(root: &Path) -> Result<Dataset> {
    let items = if root.is_file() { read_csv_manifest(root)? } else { scan_class_dirs(root)? };
    if items.is_empty() {
        return Err(Error::Data(format!("no images found under {}", root.display())));
    }
    for it in &items {
        if !it.path.is_file() {
            return Err(Error::Data(format!("missing image file {}", it.path.display())));
        }
    }
    Dataset::new(items)
}

fn read_csv_manifest(path: &Path) -> Result<Vec<LabeledImage>> {
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let mut items = Vec::new();
    for row in rdr.deserialize() {
        let row: ManifestRow = row?;
        let p = PathBuf::from(&row.path);
        let p = if p.is_absolute() { p } else { base.join(p) };
        items.push(LabeledImage { id: row.id, path: p, label: row.label.parse()? });
    }
    Ok(items)
}

fn scan_class_dirs(root: &Path) -> Result<Vec<LabeledImage>> {
    let entries = std::fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut class_dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    class_dirs.sort();
    let mut items = Vec::new();
    for dir in class_dirs {
        let class = dir.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let label = class.parse()?;
        let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
            })
            .collect();
        files.sort();
        for f in files {
            let stem = f.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            items.push(LabeledImage { id: format!("{class}/{stem}"), path: f.clone(), label });
        }
    }
    Ok(items)
}

pub fn write_manifest(d: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for it in d.items() {
        w.serialize(ManifestRow { id: it.id.clone(), path: it.path.display().to_string(), label: it.label.to_string() })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignmentRow {
    pub id: String,
    /// `trainval` or `test`.
    pub subset: String,
    /// Fold index for train+val members; empty for test members.
    pub fold: Option<usize>,
}

/// Persists split membership as `id,subset,fold`.
pub fn write_assignments(folds: &FoldAssignment, test: &Dataset, path: &Path) -> Result<()> {
    let mut rows: Vec<AssignmentRow> = folds
        .fold_of
        .iter()
        .map(|(id, &f)| AssignmentRow { id: id.clone(), subset: "trainval".into(), fold: Some(f) })
        .chain(test.ids().map(|id| AssignmentRow { id: id.into(), subset: "test".into(), fold: None }))
        .collect();
    rows.sort_by(|a, b| a.id.cmp(&b.id));
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads an assignment file back into `(folds, test ids)`.
pub fn read_assignments(path: &Path) -> Result<(FoldAssignment, Vec<String>)> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut fold_of = std::collections::BTreeMap::new();
    let mut test = Vec::new();
    for row in rdr.deserialize() {
        let row: AssignmentRow = row?;
        match (row.subset.as_str(), row.fold) {
            ("trainval", Some(f)) => {
                fold_of.insert(row.id, f);
            }
            ("test", _) => test.push(row.id),
            _ => return Err(Error::Data(format!("malformed assignment row for {}", row.id))),
        }
    }
    let k = fold_of.values().copied().max().map_or(0, |m| m + 1);
    Ok((FoldAssignment { k, fold_of }, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::UltrasoundImage;
    use crate::ingest::Label;

    #[test]
    fn directory_layout_counts() {
        let dir = tempfile::tempdir().unwrap();
        let img = UltrasoundImage::filled(4, 4, [9, 9, 9]);
        for i in 0..6 {
            img.save_png(&dir.path().join("normal").join(format!("{i}.png"))).unwrap();
        }
        for i in 0..2 {
            img.save_png(&dir.path().join("vm").join(format!("{i}.png"))).unwrap();
        }
        let d = load_manifest(dir.path()).unwrap();
        assert_eq!(d.class_counts(), [6, 2]);
        assert_eq!(d.items()[0].id, "normal/0");
    }

    #[test]
    fn empty_directory_errors() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_manifest(dir.path()).unwrap_err();
        assert!(err.to_string().contains("no images found"));
    }

    #[test]
    fn csv_manifest_errors() {
        let dir = tempfile::tempdir().unwrap();
        let img = UltrasoundImage::filled(2, 2, [1, 1, 1]);
        img.save_png(&dir.path().join("a.png")).unwrap();
        let m = dir.path().join("m.csv");
        std::fs::write(&m, "id,path,label\na,a.png,normal\na,a.png,vm\n").unwrap();
        assert!(load_manifest(&m).unwrap_err().to_string().contains("duplicate image ids: a"));
        std::fs::write(&m, "id,path,label\na,a.png,normal\nb,b.png,vm\n").unwrap();
        assert!(load_manifest(&m).unwrap_err().to_string().contains("b.png"));
        std::fs::write(&m, "id,path,label\na,a.png,cyst\n").unwrap();
        assert!(load_manifest(&m).unwrap_err().to_string().contains("unknown label"));
        std::fs::write(&m, "id,path,label\na,a.png,VM\n").unwrap();
        assert_eq!(load_manifest(&m).unwrap().items()[0].label, Label::Vm);
    }

    #[test]
    fn unknown_class_directory_errors() {
        let dir = tempfile::tempdir().unwrap();
        UltrasoundImage::filled(2, 2, [1, 1, 1]).save_png(&dir.path().join("other").join("x.png")).unwrap();
        assert!(load_manifest(dir.path()).is_err());
    }
}

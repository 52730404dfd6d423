//! Labeled image collections, stratified splitting and the synthetic phantom set.

mod manifest;
mod phantom;
mod split;

use std::collections::BTreeSet;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use manifest::{load_manifest, read_assignments, write_assignments, write_manifest, AssignmentRow};
pub use phantom::{synthesize_phantom_dataset, write_phantom_set, read_phantom_renders, Ellipse, PhantomRender, PhantomSet, PhantomSpec};
pub use split::{make_stratified_folds, stratified_holdout_split, stratified_counts, FoldAssignment, SplitSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal = 0,
    Vm = 1,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Normal, Label::Vm];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Label> {
        match i {
            0 => Some(Label::Normal),
            1 => Some(Label::Vm),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Vm => "vm",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "normal" | "0" => Ok(Label::Normal),
            "vm" | "ventriculomegaly" | "1" => Ok(Label::Vm),
            other => Err(Error::Data(format!("unknown label {other:?} (expected normal or vm)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledImage {
    pub id: String,
    pub path: PathBuf,
    pub label: Label,
}

/// Ordered, id-unique collection of labeled images.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Dataset {
    items: Vec<LabeledImage>,
}

impl Dataset {
    /// Validates id uniqueness and sorts lexicographically by id.
    pub fn new(mut items: Vec<LabeledImage>) -> Result<Self> {
        items.sort_by(|a, b| a.id.cmp(&b.id));
        let dups: BTreeSet<&str> = items.windows(2).filter(|w| w[0].id == w[1].id).map(|w| w[0].id.as_str()).collect();
        if !dups.is_empty() {
            return Err(Error::Data(format!("duplicate image ids: {}", dups.into_iter().collect::<Vec<_>>().join(", "))));
        }
        Ok(Self { items })
    }

    pub fn items(&self) -> &[LabeledImage] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Counts indexed by [`Label::index`].
    pub fn class_counts(&self) -> [usize; 2] {
        let mut c = [0; 2];
        for it in &self.items {
            c[it.label.index()] += 1;
        }
        c
    }

    pub fn get(&self, id: &str) -> Option<&LabeledImage> {
        self.items.binary_search_by(|it| it.id.as_str().cmp(id)).ok().map(|i| &self.items[i])
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.items.iter().map(|it| it.id.as_str())
    }

    /// Sub-collection with the given ids, in dataset order.
    pub fn subset<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> Result<Dataset> {
        let mut items = Vec::new();
        for id in ids {
            let it = self.get(id).ok_or_else(|| Error::Data(format!("id {id} not in dataset")))?;
            items.push(it.clone());
        }
        Dataset::new(items)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(id: &str, label: Label) -> LabeledImage {
        LabeledImage { id: id.into(), path: PathBuf::from(format!("{id}.png")), label }
    }

    #[test]
    fn dataset_sorted_and_counted() {
        let d = Dataset::new(vec![item("b", Label::Vm), item("a", Label::Normal), item("c", Label::Normal)]).unwrap();
        assert_eq!(d.ids().collect::<Vec<_>>(), vec!["a", "b", "c"]);
        assert_eq!(d.class_counts(), [2, 1]);
    }

    #[test]
    fn duplicate_ids_are_listed() {
        let err = Dataset::new(vec![item("x", Label::Vm), item("x", Label::Normal)]).unwrap_err();
        assert!(err.to_string().contains("x"));
    }

    #[test]
    fn label_parsing() {
        assert_eq!("VM".parse::<Label>().unwrap(), Label::Vm);
        assert_eq!("normal".parse::<Label>().unwrap(), Label::Normal);
        assert!("abnormal".parse::<Label>().is_err());
    }
}

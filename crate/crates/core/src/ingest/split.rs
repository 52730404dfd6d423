//! Stratified hold-out and k-fold assignment.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use super::{Dataset, Label};
use crate::error::{Error, Result};
use crate::nn::params::{derive_seed, seeded_rng};

/// Fractions of the full collection assigned to training, validation and test.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
}

impl SplitSpec {
    /// Table-1 proportions of the reference study (560/140/123 of 823).
    pub fn reference(seed: u64) -> Self {
        Self { train_frac: 0.6804, val_frac: 0.1701, test_frac: 0.1495, seed }
    }

    pub fn validate(&self) -> Result<()> {
        let fr = [self.train_frac, self.val_frac, self.test_frac];
        if fr.iter().any(|&f| !(f > 0.0) || !f.is_finite()) {
            return Err(Error::Config(format!("split fractions must be positive, got {fr:?}")));
        }
        if (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions must sum to 1, got {}", fr.iter().sum::<f64>())));
        }
        Ok(())
    }

    /// Number of folds implied by the validation share of the train+val pool.
    pub fn implied_folds(&self) -> usize {
        ((self.train_frac + self.val_frac) / self.val_frac).round().max(2.0) as usize
    }
}

/// Per-class counts for a two-way partition: the share `frac` rounded to nearest.
///
/// With two parts, largest-remainder allocation and round-half-up coincide.
pub fn stratified_counts(class_count: usize, frac: f64) -> usize {
    ((class_count as f64) * frac + 0.5).floor() as usize
}

fn shuffled_ids_by_class(d: &Dataset, seed: u64, stream: u64) -> [Vec<&str>; 2] {
    let mut by_class: [Vec<&str>; 2] = [Vec::new(), Vec::new()];
    for it in d.items() {
        by_class[it.label.index()].push(it.id.as_str());
    }
    for (c, ids) in by_class.iter_mut().enumerate() {
        let mut rng = seeded_rng(derive_seed(seed, &[stream, c as u64]));
        ids.shuffle(&mut rng);
    }
    by_class
}

/// Splits off a stratified test set; returns `(trainval, test)`.
pub fn stratified_holdout_split(d: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let counts = d.class_counts();
    let by_class = shuffled_ids_by_class(d, spec.seed, 0);
    let mut test_ids = Vec::new();
    let mut trainval_ids = Vec::new();
    for label in Label::ALL {
        let c = label.index();
        let n_test = stratified_counts(counts[c], spec.test_frac);
        if n_test == 0 || n_test >= counts[c] {
            return Err(Error::Data(format!(
                "class {label} has {} images; too few to appear in both train+val and test",
                counts[c]
            )));
        }
        test_ids.extend_from_slice(&by_class[c][..n_test]);
        trainval_ids.extend_from_slice(&by_class[c][n_test..]);
    }
    Ok((d.subset(trainval_ids)?, d.subset(test_ids)?))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    pub k: usize,
    pub fold_of: BTreeMap<String, usize>,
}

impl FoldAssignment {
    pub fn validation_ids(&self, fold: usize) -> Vec<&str> {
        self.fold_of.iter().filter(|(_, &f)| f == fold).map(|(id, _)| id.as_str()).collect()
    }

    pub fn training_ids(&self, fold: usize) -> Vec<&str> {
        self.fold_of.iter().filter(|(_, &f)| f != fold).map(|(id, _)| id.as_str()).collect()
    }

    /// `(train, val)` datasets for one fold.
    pub fn split(&self, pool: &Dataset, fold: usize) -> Result<(Dataset, Dataset)> {
        if fold >= self.k {
            return Err(Error::Config(format!("fold {fold} out of range for k={}", self.k)));
        }
        Ok((pool.subset(self.training_ids(fold))?, pool.subset(self.validation_ids(fold))?))
    }
}

/// Deals each class's shuffled members round-robin over the folds.
///
/// The fold counter carries over from one class to the next, so the folds
/// that receive a surplus member of one class are not the ones that receive
/// the next class's surplus.
pub fn make_stratified_folds(trainval: &Dataset, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::Config(format!("k must be at least 2, got {k}")));
    }
    let counts = trainval.class_counts();
    for label in Label::ALL {
        if counts[label.index()] < k {
            return Err(Error::Data(format!(
                "class {label} has {} images, fewer than k={k} folds",
                counts[label.index()]
            )));
        }
    }
    let by_class = shuffled_ids_by_class(trainval, seed, 1);
    let mut fold_of = BTreeMap::new();
    let mut next = 0usize;
    for ids in &by_class {
        for id in ids {
            fold_of.insert((*id).to_string(), next % k);
            next += 1;
        }
    }
    Ok(FoldAssignment { k, fold_of })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::LabeledImage;
    use proptest::prelude::*;

    pub(crate) fn synthetic(n_normal: usize, n_vm: usize) -> Dataset {
        let mut items = Vec::new();
        for i in 0..n_normal {
            items.push(LabeledImage { id: format!("normal/{i:04}"), path: format!("normal/{i:04}.png").into(), label: Label::Normal });
        }
        for i in 0..n_vm {
            items.push(LabeledImage { id: format!("vm/{i:04}"), path: format!("vm/{i:04}.png").into(), label: Label::Vm });
        }
        Dataset::new(items).unwrap()
    }

    #[test]
    fn reference_holdout_counts() {
        let d = synthetic(680, 143);
        let (tv, test) = stratified_holdout_split(&d, &SplitSpec::reference(1)).unwrap();
        assert_eq!(test.class_counts(), [102, 21]);
        assert_eq!(tv.len(), 700);
    }

    #[test]
    fn balanced_exact_holdout() {
        let d = synthetic(10, 10);
        let spec = SplitSpec { train_frac: 0.6, val_frac: 0.2, test_frac: 0.2, seed: 3 };
        let (_, test) = stratified_holdout_split(&d, &spec).unwrap();
        assert_eq!(test.class_counts(), [2, 2]);
    }

    #[test]
    fn holdout_deterministic() {
        let d = synthetic(40, 12);
        let spec = SplitSpec { train_frac: 0.7, val_frac: 0.15, test_frac: 0.15, seed: 9 };
        let a = stratified_holdout_split(&d, &spec).unwrap();
        let b = stratified_holdout_split(&d, &spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tiny_class_rejected() {
        let d = synthetic(20, 2);
        let spec = SplitSpec { train_frac: 0.7, val_frac: 0.15, test_frac: 0.15, seed: 0 };
        assert!(stratified_holdout_split(&d, &spec).is_err());
    }

    #[test]
    fn reference_folds() {
        let d = synthetic(680, 143);
        let (tv, _) = stratified_holdout_split(&d, &SplitSpec::reference(1)).unwrap();
        let folds = make_stratified_folds(&tv, 5, 1).unwrap();
        for f in 0..5 {
            let (train, val) = folds.split(&tv, f).unwrap();
            let vc = val.class_counts();
            assert!((115..=116).contains(&vc[0]), "{vc:?}");
            assert!((24..=25).contains(&vc[1]), "{vc:?}");
            assert_eq!(train.len() + val.len(), 700);
        }
        let (train0, val0) = folds.split(&tv, 0).unwrap();
        assert_eq!(train0.class_counts(), [462, 98]);
        assert_eq!(val0.class_counts(), [116, 24]);
    }

    #[test]
    fn exact_halving() {
        let d = synthetic(4, 2);
        let folds = make_stratified_folds(&d, 2, 5).unwrap();
        for f in 0..2 {
            let (_, val) = folds.split(&d, f).unwrap();
            assert_eq!(val.class_counts(), [2, 1]);
        }
    }

    #[test]
    fn too_few_for_k() {
        let d = synthetic(10, 3);
        assert!(make_stratified_folds(&d, 5, 0).is_err());
        assert!(make_stratified_folds(&d, 1, 0).is_err());
    }

    proptest! {
        #[test]
        fn folds_partition_and_stratify(n0 in 5usize..200, n1 in 5usize..80, k in 2usize..6, seed in any::<u64>()) {
            let d = synthetic(n0, n1);
            let folds = make_stratified_folds(&d, k, seed).unwrap();
            prop_assert_eq!(folds.fold_of.len(), d.len());
            let global = n1 as f64 / (n0 + n1) as f64;
            let mut sizes = vec![[0usize; 2]; k];
            for it in d.items() {
                sizes[folds.fold_of[&it.id]][it.label.index()] += 1;
            }
            for c in 0..2 {
                let lo = sizes.iter().map(|s| s[c]).min().unwrap();
                let hi = sizes.iter().map(|s| s[c]).max().unwrap();
                prop_assert!(hi - lo <= 1);
            }
            for s in &sizes {
                let m = (s[0] + s[1]) as f64;
                prop_assert!((s[1] as f64 / m - global).abs() <= 1.0 / m + 1e-12);
            }
        }

        #[test]
        fn holdout_is_partition(n0 in 8usize..150, n1 in 8usize..60, seed in any::<u64>()) {
            let d = synthetic(n0, n1);
            let spec = SplitSpec { train_frac: 0.6, val_frac: 0.2, test_frac: 0.2, seed };
            let (tv, test) = stratified_holdout_split(&d, &spec).unwrap();
            prop_assert_eq!(tv.len() + test.len(), d.len());
            for id in test.ids() {
                prop_assert!(tv.get(id).is_none());
            }
            let global = n1 as f64 / (n0 + n1) as f64;
            let tc = test.class_counts();
            let m = test.len() as f64;
            prop_assert!((tc[1] as f64 / m - global).abs() <= 1.0 / m + 1e-12);
        }
    }
}

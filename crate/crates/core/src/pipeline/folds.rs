use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One volume and the patient it belongs to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientVolume {
    pub id: String,
    pub patient: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSets {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub ratios: [f64; 3],
    /// Patient to volume ids.
    pub patients: BTreeMap<String, Vec<String>>,
    pub folds: Vec<FoldSets>,
}

/// Splits patients into `k` near-equal chunks; fold `f` tests on chunk `f`,
/// validates on chunk `f + 1 (mod k)` and trains on the rest. Chunk sizes follow
/// a Bresenham pattern so any two neighbouring chunks hold within one patient of
/// `2P/k` patients.
pub fn make_folds(volumes: &[PatientVolume], k: usize, ratios: [f64; 3], seed: u64) -> Result<FoldPlan> {
    if k < 3 {
        return Err(Error::Plan(format!("need k >= 3 folds for disjoint train/val/test, got {k}")));
    }
    let kf = k as f64;
    let expected = [1.0 - 2.0 / kf, 1.0 / kf, 1.0 / kf];
    if ratios.iter().zip(expected).any(|(r, e)| (r - e).abs() > 1e-9) {
        return Err(Error::Plan(format!("ratios {ratios:?} cannot be realized by {k}-fold rotation (expected {expected:?})")));
    }
    let mut patients: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for v in volumes {
        if !seen.insert(v.id.clone()) {
            return Err(Error::Plan(format!("duplicate volume id {}", v.id)));
        }
        patients.entry(v.patient.clone()).or_default().push(v.id.clone());
    }
    let p = patients.len();
    if p < k {
        return Err(Error::Plan(format!("{p} patients cannot fill {k} folds")));
    }
    let mut order: Vec<&String> = patients.keys().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let bounds: Vec<usize> = (0..=k).map(|i| i * p / k).collect();
    let chunk = |i: usize| -> Vec<String> {
        order[bounds[i]..bounds[i + 1]].iter().flat_map(|pid| patients[*pid].iter().cloned()).collect()
    };
    let folds = (0..k)
        .map(|f| {
            let v = (f + 1) % k;
            FoldSets { train: (0..k).filter(|&i| i != f && i != v).flat_map(chunk).collect(), val: chunk(v), test: chunk(f) }
        })
        .collect();
    let plan = FoldPlan { k, seed, ratios, patients: patients.clone(), folds };
    plan.check_integrity();
    Ok(plan)
}

impl FoldPlan {
    fn patient_of(&self) -> BTreeMap<&str, &str> {
        self.patients.iter().flat_map(|(p, ids)| ids.iter().map(move |id| (id.as_str(), p.as_str()))).collect()
    }

    /// Panics on patient leakage or on a fold that does not cover the dataset exactly once.
    pub fn check_integrity(&self) {
        let owner = self.patient_of();
        for (f, fold) in self.folds.iter().enumerate() {
            let mut sets: Vec<BTreeSet<&str>> = Vec::new();
            for ids in [&fold.train, &fold.val, &fold.test] {
                sets.push(ids.iter().map(|id| owner[id.as_str()]).collect());
            }
            assert!(sets[0].is_disjoint(&sets[1]) && sets[0].is_disjoint(&sets[2]) && sets[1].is_disjoint(&sets[2]), "fold {f} leaks patients");
            let total = fold.train.len() + fold.val.len() + fold.test.len();
            assert_eq!(total, owner.len(), "fold {f} does not cover every volume once");
        }
        let mut tested = BTreeSet::new();
        for fold in &self.folds {
            for id in &fold.test {
                assert!(tested.insert(id.as_str()), "volume {id} is tested in two folds");
            }
        }
        assert_eq!(tested.len(), owner.len(), "some volume is never tested");
    }

    /// Patients in (train, val, test) of fold `f`.
    pub fn patient_counts(&self, f: usize) -> [usize; 3] {
        let owner = self.patient_of();
        let fold = &self.folds[f];
        [&fold.train, &fold.val, &fold.test].map(|ids| ids.iter().map(|id| owner[id.as_str()]).collect::<BTreeSet<_>>().len())
    }

    pub fn fold(&self, f: usize) -> Result<&FoldSets> {
        self.folds.get(f).ok_or_else(|| Error::Argument(format!("fold {f} out of range 0..{}", self.k)))
    }
}

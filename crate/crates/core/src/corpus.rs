//! In-memory corpus records and split bookkeeping.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::Label;

/// One meme: an image reference, its caption (possibly empty) and an optional label.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemeRecord {
    pub id: String,
    pub image_ref: String,
    pub caption: String,
    pub label: Option<Label>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = ();

    fn from_str(s: &str) -> core::result::Result<Self, ()> {
        match s.trim() {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            _ => Err(()),
        }
    }
}

/// Train / validation / test partitions, pairwise disjoint by id.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCorpus {
    train: Vec<MemeRecord>,
    valid: Vec<MemeRecord>,
    test: Vec<MemeRecord>,
}

impl SplitCorpus {
    /// Validates id uniqueness across all splits and that train/valid are fully labeled.
    pub fn new(train: Vec<MemeRecord>, valid: Vec<MemeRecord>, test: Vec<MemeRecord>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for r in train.iter().chain(&valid).chain(&test) {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::DuplicateId(r.id.clone()));
            }
        }
        if let Some(r) = train.iter().chain(&valid).find(|r| r.label.is_none()) {
            return Err(Error::UnlabeledRecord(r.id.clone()));
        }
        Ok(Self { train, valid, test })
    }

    pub fn split(&self, split: Split) -> &[MemeRecord] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn train(&self) -> &[MemeRecord] {
        &self.train
    }

    pub fn valid(&self) -> &[MemeRecord] {
        &self.valid
    }

    pub fn test(&self) -> &[MemeRecord] {
        &self.test
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.valid.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Record counts for one split.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub troll: usize,
    pub not_troll: usize,
    pub unlabeled: usize,
}

impl ClassCounts {
    pub fn total(&self) -> usize {
        self.troll + self.not_troll + self.unlabeled
    }

    fn count(records: &[MemeRecord]) -> Self {
        let mut c = ClassCounts::default();
        for r in records {
            match r.label {
                Some(Label::Troll) => c.troll += 1,
                Some(Label::NotTroll) => c.not_troll += 1,
                None => c.unlabeled += 1,
            }
        }
        c
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassDistribution {
    pub train: ClassCounts,
    pub valid: ClassCounts,
    pub test: ClassCounts,
}

impl ClassDistribution {
    pub fn get(&self, split: Split) -> ClassCounts {
        match split {
            Split::Train => self.train,
            Split::Valid => self.valid,
            Split::Test => self.test,
        }
    }

    /// Column totals over all splits.
    pub fn total(&self) -> ClassCounts {
        let mut t = ClassCounts::default();
        for c in [self.train, self.valid, self.test] {
            t.troll += c.troll;
            t.not_troll += c.not_troll;
            t.unlabeled += c.unlabeled;
        }
        t
    }
}

pub fn class_distribution(corpus: &SplitCorpus) -> ClassDistribution {
    ClassDistribution {
        train: ClassCounts::count(corpus.train()),
        valid: ClassCounts::count(corpus.valid()),
        test: ClassCounts::count(corpus.test()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    pub(crate) fn rec(id: &str, caption: &str, label: Option<Label>) -> MemeRecord {
        MemeRecord {
            id: id.to_string(),
            image_ref: alloc::format!("{id}.png"),
            caption: caption.to_string(),
            label,
        }
    }

    #[test]
    fn rejects_ids_shared_across_splits() {
        let err = SplitCorpus::new(
            vec![rec("m1", "", Some(Label::Troll))],
            vec![],
            vec![rec("m1", "", None)],
        )
        .unwrap_err();
        assert_eq!(err, Error::DuplicateId("m1".into()));
    }

    #[test]
    fn rejects_unlabeled_training_records() {
        let err = SplitCorpus::new(vec![rec("a", "", None)], vec![], vec![]).unwrap_err();
        assert_eq!(err, Error::UnlabeledRecord("a".into()));
    }

    #[test]
    fn distribution_totals_match_split_sizes() {
        let corpus = SplitCorpus::new(
            vec![rec("a", "", Some(Label::Troll)), rec("b", "", Some(Label::NotTroll))],
            vec![],
            vec![rec("c", "", Some(Label::Troll))],
        )
        .unwrap();
        let d = class_distribution(&corpus);
        assert_eq!(d.train.total(), 2);
        assert_eq!((d.test.troll, d.test.not_troll), (1, 0));
        assert_eq!(d.total().troll, 2);
    }

    #[test]
    fn empty_corpus_has_zero_counts() {
        let d = class_distribution(&SplitCorpus::default());
        assert_eq!(d, ClassDistribution::default());
    }

    #[test]
    fn troll_only_training_split() {
        let train = (0..5)
            .map(|i| rec(&alloc::format!("t{i}"), "", Some(Label::Troll)))
            .collect();
        let corpus = SplitCorpus::new(train, vec![], vec![]).unwrap();
        let d = class_distribution(&corpus);
        assert_eq!((d.train.troll, d.train.not_troll), (5, 0));
    }
}

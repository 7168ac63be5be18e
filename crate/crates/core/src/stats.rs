//! Per-class caption word statistics.

use alloc::collections::BTreeSet;
use alloc::string::String;

use serde::{Deserialize, Serialize};

use crate::corpus::MemeRecord;
use crate::error::{Error, Result};
use crate::label::Label;
use crate::text::tokenize_caption;

/// Word statistics for the captions of one class.
///
/// Empty captions count as length-0 captions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassCaptionStats {
    pub total_words: u64,
    pub unique_words: u64,
    pub max_caption_len: u64,
    pub avg_words_per_caption: f64,
    #[serde(skip)]
    pub captions: u64,
}

impl ClassCaptionStats {
    /// Mean words per caption as the exact fraction `(total_words, captions)`.
    pub fn mean_fraction(&self) -> (u64, u64) {
        (self.total_words, self.captions)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaptionStats {
    pub troll: ClassCaptionStats,
    #[serde(rename = "not-troll")]
    pub not_troll: ClassCaptionStats,
}

impl CaptionStats {
    pub fn get(&self, label: Label) -> &ClassCaptionStats {
        match label {
            Label::Troll => &self.troll,
            Label::NotTroll => &self.not_troll,
        }
    }
}

#[derive(Default)]
struct Accumulator {
    captions: u64,
    total: u64,
    max: u64,
    unique: BTreeSet<String>,
}

impl Accumulator {
    fn finish(self, label: Label) -> Result<ClassCaptionStats> {
        if self.captions == 0 {
            return Err(Error::EmptyClass(label));
        }
        Ok(ClassCaptionStats {
            total_words: self.total,
            unique_words: self.unique.len() as u64,
            max_caption_len: self.max,
            avg_words_per_caption: self.total as f64 / self.captions as f64,
            captions: self.captions,
        })
    }
}

/// Computes per-class word counts over labeled records.
pub fn compute_caption_stats(records: &[MemeRecord]) -> Result<CaptionStats> {
    let mut troll = Accumulator::default();
    let mut not_troll = Accumulator::default();
    for r in records {
        let acc = match r.label {
            Some(Label::Troll) => &mut troll,
            Some(Label::NotTroll) => &mut not_troll,
            None => return Err(Error::UnlabeledRecord(r.id.clone())),
        };
        let tokens = tokenize_caption(&r.caption);
        acc.captions += 1;
        acc.total += tokens.len() as u64;
        acc.max = acc.max.max(tokens.len() as u64);
        acc.unique.extend(tokens);
    }
    Ok(CaptionStats {
        troll: troll.finish(Label::Troll)?,
        not_troll: not_troll.finish(Label::NotTroll)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec::Vec;
    use proptest::prelude::*;

    fn rec(i: usize, caption: &str, label: Label) -> MemeRecord {
        MemeRecord {
            id: alloc::format!("r{i}"),
            image_ref: String::new(),
            caption: caption.to_string(),
            label: Some(label),
        }
    }

    #[test]
    fn hand_counted_fixture() {
        let records = [
            rec(0, "hello world", Label::Troll),
            rec(1, "hello there my friend", Label::Troll),
            rec(2, "", Label::Troll),
            rec(3, "x", Label::NotTroll),
        ];
        let s = compute_caption_stats(&records).unwrap();
        assert_eq!(s.troll.total_words, 6);
        assert_eq!(s.troll.unique_words, 5);
        assert_eq!(s.troll.max_caption_len, 4);
        assert_eq!(s.troll.avg_words_per_caption, 2.0);
        assert_eq!(s.troll.captions, 3);
    }

    #[test]
    fn missing_class_is_an_error() {
        let records = [rec(0, "a", Label::Troll)];
        assert_eq!(
            compute_caption_stats(&records).unwrap_err(),
            Error::EmptyClass(Label::NotTroll)
        );
    }

    #[test]
    fn unlabeled_record_is_an_error() {
        let mut r = rec(0, "a", Label::Troll);
        r.label = None;
        assert!(matches!(
            compute_caption_stats(&[r]),
            Err(Error::UnlabeledRecord(_))
        ));
    }

    #[test]
    fn published_table_averages_follow_from_totals_and_counts() {
        // training-set word totals over training-set class sizes
        let troll = 12781.0 / 1026.0;
        let not_troll = 4402.0 / 814.0;
        let truncate2 = |v: f64| libm::floor(v * 100.0) / 100.0;
        assert!((truncate2(troll) - 12.45).abs() < 1e-9);
        assert!((truncate2(not_troll) - 5.40).abs() < 1e-9);
        assert!((troll - 12.46).abs() < 0.005);
        assert!((not_troll - 5.41).abs() < 0.005);
    }

    proptest! {
        #[test]
        fn averages_reconstruct_totals(
            caps in proptest::collection::vec(("[a-c ]{0,12}", any::<bool>()), 2..30)
        ) {
            let mut records: Vec<MemeRecord> = caps
                .iter()
                .enumerate()
                .map(|(i, (c, t))| rec(i, c, if *t { Label::Troll } else { Label::NotTroll }))
                .collect();
            records.push(rec(1000, "z", Label::Troll));
            records.push(rec(1001, "z", Label::NotTroll));
            let s = compute_caption_stats(&records).unwrap();
            for class in [&s.troll, &s.not_troll] {
                let (num, den) = class.mean_fraction();
                prop_assert_eq!(num, class.total_words);
                let back = class.avg_words_per_caption * den as f64;
                prop_assert!((back - class.total_words as f64).abs() <= 1e-9 * (1.0 + back));
                prop_assert!(class.unique_words <= class.total_words);
                prop_assert!(class.max_caption_len <= class.total_words);
            }
        }
    }
}

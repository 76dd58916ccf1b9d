//! Pairwise precision and recall of a dedup map against ground truth.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{GroundTruth, SynthError};

/// Precision, recall and F1 for one notion of the true pair set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub true_pairs: usize,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub flagged_pairs: usize,
    pub correct_pairs: usize,
    /// 1.0 when nothing was flagged; see `precision_undefined`.
    pub precision: f64,
    pub precision_undefined: bool,
    /// True pairs among devices that reached the dedup key stage.
    pub restricted: PairScore,
    /// True pairs among all devices in the truth file.
    pub unrestricted: PairScore,
}

fn same_user_pairs<'a>(devices: impl IntoIterator<Item = &'a str>, truth: &GroundTruth) -> usize {
    let mut per_user: BTreeMap<&str, usize> = BTreeMap::new();
    for d in devices {
        if let Some(u) = truth.device_user.get(d) {
            *per_user.entry(u.as_str()).or_default() += 1;
        }
    }
    per_user.values().map(|&c| c * (c - 1) / 2).sum()
}

fn pair_score(precision: f64, correct: usize, true_pairs: usize) -> PairScore {
    let recall = if true_pairs == 0 {
        1.0
    } else {
        correct as f64 / true_pairs as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    PairScore {
        true_pairs,
        recall,
        f1,
    }
}

/// Score `(source_id, canonical_id)` rows. Devices mapped to the same
/// canonical id form flagged pairs. `keyed` lists the devices that had a
/// dedup key.
pub fn score<'a>(
    dedup_map: &[(String, String)],
    truth: &GroundTruth,
    keyed: impl IntoIterator<Item = &'a str>,
) -> Result<ScoreReport, SynthError> {
    let mut groups: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for (src, canon) in dedup_map {
        for id in [src, canon] {
            if !truth.device_user.contains_key(id) {
                return Err(SynthError::UnknownDevice(id.clone()));
            }
        }
        let g = groups.entry(canon.as_str()).or_default();
        g.insert(src.as_str());
        g.insert(canon.as_str());
    }
    let mut flagged = 0usize;
    let mut correct = 0usize;
    for members in groups.values() {
        let m: Vec<&str> = members.iter().copied().collect();
        for (i, a) in m.iter().enumerate() {
            for b in &m[i + 1..] {
                flagged += 1;
                if truth.device_user[*a] == truth.device_user[*b] {
                    correct += 1;
                }
            }
        }
    }
    let precision_undefined = flagged == 0;
    let precision = if precision_undefined {
        1.0
    } else {
        correct as f64 / flagged as f64
    };
    let restricted = same_user_pairs(keyed, truth);
    let unrestricted = same_user_pairs(truth.device_user.keys().map(String::as_str), truth);
    Ok(ScoreReport {
        flagged_pairs: flagged,
        correct_pairs: correct,
        precision,
        precision_undefined,
        restricted: pair_score(precision, correct, restricted),
        unrestricted: pair_score(precision, correct, unrestricted),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn truth() -> GroundTruth {
        let mut t = GroundTruth::default();
        for (d, u) in [
            ("a", "u1"),
            ("b", "u1"),
            ("c", "u2"),
            ("d", "u2"),
            ("e", "u3"),
        ] {
            t.device_user.insert(d.into(), u.into());
        }
        t
    }

    fn map(rows: &[(&str, &str)]) -> Vec<(String, String)> {
        rows.iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect()
    }

    #[test]
    fn perfect_map() {
        let m = map(&[("a", "a"), ("b", "a"), ("c", "c"), ("d", "c")]);
        let r = score(&m, &truth(), ["a", "b", "c", "d", "e"]).unwrap();
        assert_eq!(
            (r.precision, r.restricted.recall, r.restricted.f1),
            (1.0, 1.0, 1.0)
        );
        assert_eq!(r.unrestricted.recall, 1.0);
    }

    #[test]
    fn empty_map_flags_precision() {
        let r = score(&[], &truth(), ["a", "b"]).unwrap();
        assert!(r.precision_undefined);
        assert_eq!(r.precision, 1.0);
        assert_eq!(r.restricted.recall, 0.0);
        assert_eq!(r.unrestricted.true_pairs, 2);
    }

    #[test]
    fn restricted_vs_unrestricted() {
        let m = map(&[("a", "a"), ("b", "a")]);
        let r = score(&m, &truth(), ["a", "b", "c"]).unwrap();
        assert_eq!(r.restricted.true_pairs, 1);
        assert_eq!(r.restricted.recall, 1.0);
        assert_eq!(r.unrestricted.recall, 0.5);
    }

    #[test]
    fn false_pair_lowers_precision() {
        let m = map(&[("a", "a"), ("b", "a"), ("e", "a")]);
        let r = score(&m, &truth(), ["a", "b", "e"]).unwrap();
        assert_eq!(r.flagged_pairs, 3);
        assert_eq!(r.correct_pairs, 1);
    }

    #[test]
    fn unknown_device_is_error() {
        let m = map(&[("zz", "a")]);
        assert!(
            matches!(score(&m, &truth(), []), Err(SynthError::UnknownDevice(id)) if id == "zz")
        );
    }
}

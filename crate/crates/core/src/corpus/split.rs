use serde::{Deserialize, Serialize};

use crate::error::{GssError, Result};

/// Year boundaries of a temporal split, carried as corpus metadata.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitYears {
    pub valid_from: i32,
    pub test_from: i32,
}

/// Disjoint train/valid/test node sets covering every node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TemporalSplit {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
    pub years: Option<SplitYears>,
}

impl TemporalSplit {
    pub fn new(
        node_count: usize,
        train: Vec<usize>,
        valid: Vec<usize>,
        test: Vec<usize>,
        years: Option<SplitYears>,
    ) -> Result<Self> {
        let mut seen = vec![false; node_count];
        for (name, ids) in [("train", &train), ("valid", &valid), ("test", &test)] {
            for &id in ids.iter() {
                if id >= node_count {
                    return Err(GssError::NodeOutOfRange { node: id, count: node_count });
                }
                if std::mem::replace(&mut seen[id], true) {
                    return Err(GssError::InvalidParameter(format!(
                        "split sets overlap at node {id} ({name})"
                    )));
                }
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(GssError::InvalidParameter(format!(
                "split does not cover node {missing}"
            )));
        }
        Ok(TemporalSplit { train, valid, test, years })
    }

    /// Buckets nodes by publication year: `< valid_from` trains,
    /// `< test_from` validates, the rest test.
    pub fn from_years(years: &[i32], bounds: SplitYears) -> Result<Self> {
        if bounds.test_from < bounds.valid_from {
            return Err(GssError::InvalidParameter(
                "test boundary year precedes validation boundary".into(),
            ));
        }
        let (mut train, mut valid, mut test) = (Vec::new(), Vec::new(), Vec::new());
        for (i, &y) in years.iter().enumerate() {
            if y < bounds.valid_from {
                train.push(i);
            } else if y < bounds.test_from {
                valid.push(i);
            } else {
                test.push(i);
            }
        }
        TemporalSplit::new(years.len(), train, valid, test, Some(bounds))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn buckets_by_year() {
        let s = TemporalSplit::from_years(
            &[2018, 2020, 2022, 2019, 2021],
            SplitYears { valid_from: 2020, test_from: 2022 },
        )
        .unwrap();
        assert_eq!(s.train, vec![0, 3]);
        assert_eq!(s.valid, vec![1, 4]);
        assert_eq!(s.test, vec![2]);
    }

    #[test]
    fn rejects_overlap_and_gaps() {
        assert!(TemporalSplit::new(3, vec![0, 1], vec![1], vec![2], None).is_err());
        assert!(TemporalSplit::new(3, vec![0], vec![], vec![2], None).is_err());
    }
}

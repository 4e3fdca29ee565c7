use std::collections::HashMap;

use crate::dataset::TestRecord;

/// Decides whether a cache hit answered the query correctly.
pub trait Judge: Send + Sync {
    fn judge(&self, test: &TestRecord, matched_question: &str, matched_entry_id: &str) -> bool;
}

/// Ground-truth judge for synthetic data: a hit is positive iff the matched
/// entry was populated from the query's source seed.
#[derive(Debug, Clone, Default)]
pub struct OfflineJudge {
    seed_of_entry: HashMap<String, String>,
}

impl OfflineJudge {
    pub fn new(seed_of_entry: HashMap<String, String>) -> Self {
        Self { seed_of_entry }
    }

    pub fn seed_of(&self, entry_id: &str) -> Option<&str> {
        self.seed_of_entry.get(entry_id).map(String::as_str)
    }
}

impl Judge for OfflineJudge {
    fn judge(&self, test: &TestRecord, _matched_question: &str, matched_entry_id: &str) -> bool {
        match (&test.source_id, self.seed_of(matched_entry_id)) {
            (Some(src), Some(seed)) => src == seed,
            _ => false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test(source: Option<&str>) -> TestRecord {
        TestRecord {
            id: "t".into(),
            category: "c".into(),
            query: "q".into(),
            source_id: source.map(Into::into),
        }
    }

    #[test]
    fn verdicts() {
        let j = OfflineJudge::new(HashMap::from([("1".into(), "s1".into()), ("2".into(), "s2".into())]));
        assert!(j.judge(&test(Some("s1")), "q", "1"));
        assert!(!j.judge(&test(Some("s1")), "q", "2"));
        assert!(!j.judge(&test(None), "q", "1"));
        // entries created by misses map to no seed
        assert!(!j.judge(&test(Some("s1")), "q", "99"));
    }
}

//! Frequency-based predicate grouping, proportional query grouping, the
//! group lookup functions, and the 0/forbidden grouping cost.

use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::FORBIDDEN;

/// Predicate class identifier.
pub type PredicateId = usize;

/// Absorbs representation error in `n_q * f` before flooring, so that e.g.
/// `100 * 0.29` floors to 29.
const FLOOR_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GroupingError {
    #[error("frequency table is empty or has zero total count")]
    ZeroTotal,
    #[error("predicate {0} appears more than once in the frequency table")]
    DuplicatePredicate(PredicateId),
    #[error("number of groups must be at least 1")]
    ZeroGroups,
    #[error("only {populated} of {requested} predicate groups can be populated; lower n_g")]
    EmptyGroup { requested: usize, populated: usize },
    #[error("n_q = {n_q} must be at least the number of groups ({n_g})")]
    TooFewQueries { n_q: usize, n_g: usize },
    #[error("group frequencies must be finite and nonnegative with a positive sum")]
    InvalidGroupFrequencies,
    #[error("unknown id {0}")]
    UnknownId(usize),
    #[error("inconsistent grouping: {0}")]
    Inconsistent(String),
}

/// Per-predicate sample counts, in insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyTable {
    entries: Vec<(PredicateId, u64)>,
    total: u64,
}

impl FrequencyTable {
    pub fn new(entries: Vec<(PredicateId, u64)>) -> Result<Self, GroupingError> {
        let mut seen = std::collections::BTreeSet::new();
        for &(id, _) in &entries {
            if !seen.insert(id) {
                return Err(GroupingError::DuplicatePredicate(id));
            }
        }
        let total: u64 = entries.iter().map(|&(_, c)| c).sum();
        if total == 0 {
            return Err(GroupingError::ZeroTotal);
        }
        Ok(Self { entries, total })
    }

    pub fn entries(&self) -> &[(PredicateId, u64)] {
        &self.entries
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn proportion(&self, count: u64) -> f64 {
        count as f64 / self.total as f64
    }

    /// `(id, proportion)` in insertion order.
    pub fn proportions(&self) -> Vec<(PredicateId, f64)> {
        self.entries
            .iter()
            .map(|&(id, c)| (id, self.proportion(c)))
            .collect()
    }
}

/// Disjoint predicate groups ordered from most to least frequent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GroupingRepr", into = "GroupingRepr")]
pub struct PredicateGrouping {
    pub groups: Vec<Vec<PredicateId>>,
    /// Sum of member proportions per group.
    pub group_freq: Vec<f64>,
    lookup: BTreeMap<PredicateId, usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GroupingRepr {
    groups: Vec<Vec<PredicateId>>,
    group_freq: Vec<f64>,
}

impl TryFrom<GroupingRepr> for PredicateGrouping {
    type Error = GroupingError;

    fn try_from(r: GroupingRepr) -> Result<Self, Self::Error> {
        Self::from_parts(r.groups, r.group_freq)
    }
}

impl From<PredicateGrouping> for GroupingRepr {
    fn from(pg: PredicateGrouping) -> Self {
        Self {
            groups: pg.groups,
            group_freq: pg.group_freq,
        }
    }
}

impl PredicateGrouping {
    /// Rebuilds a grouping from explicit memberships, e.g. when loaded from disk.
    pub fn from_parts(
        groups: Vec<Vec<PredicateId>>,
        group_freq: Vec<f64>,
    ) -> Result<Self, GroupingError> {
        if groups.is_empty() {
            return Err(GroupingError::ZeroGroups);
        }
        if groups.len() != group_freq.len() {
            return Err(GroupingError::Inconsistent(format!(
                "{} groups but {} frequencies",
                groups.len(),
                group_freq.len()
            )));
        }
        let mut lookup = BTreeMap::new();
        for (g, members) in groups.iter().enumerate() {
            if members.is_empty() {
                return Err(GroupingError::Inconsistent(format!("group {g} is empty")));
            }
            for &p in members {
                if lookup.insert(p, g).is_some() {
                    return Err(GroupingError::DuplicatePredicate(p));
                }
            }
        }
        Ok(Self {
            groups,
            group_freq,
            lookup,
        })
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    /// Group index containing `predicate`.
    pub fn group_of(&self, predicate: PredicateId) -> Result<usize, GroupingError> {
        self.lookup
            .get(&predicate)
            .copied()
            .ok_or(GroupingError::UnknownId(predicate))
    }
}

/// Splits predicates into `n_g` frequency-contiguous groups.
///
/// Predicates are visited by descending proportion (ties: ascending id). The
/// current group `i` (1-based) accepts a predicate while its running sum is
/// at most `0.5^i`; otherwise the next group is opened with that predicate.
/// The last group takes everything that remains.
pub fn group_predicates(
    freq: &FrequencyTable,
    n_g: usize,
) -> Result<PredicateGrouping, GroupingError> {
    if n_g == 0 {
        return Err(GroupingError::ZeroGroups);
    }
    let mut sorted = freq.proportions();
    sorted.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

    let mut groups: Vec<Vec<PredicateId>> = vec![Vec::new()];
    let mut sums = vec![0.0f64];
    for (id, p) in sorted {
        let i = groups.len();
        if i < n_g && sums[i - 1] > 0.5f64.powi(i as i32) {
            groups.push(Vec::new());
            sums.push(0.0);
        }
        groups.last_mut().expect("nonempty").push(id);
        *sums.last_mut().expect("nonempty") += p;
    }

    if groups.len() < n_g || groups.iter().any(Vec::is_empty) {
        return Err(GroupingError::EmptyGroup {
            requested: n_g,
            populated: groups.iter().filter(|g| !g.is_empty()).count(),
        });
    }
    PredicateGrouping::from_parts(groups, sums)
}

/// Contiguous query index ranges, one per group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "QueryGroupingRepr")]
pub struct QueryGrouping {
    pub counts: Vec<usize>,
    /// Start index of each group's range.
    pub offsets: Vec<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct QueryGroupingRepr {
    counts: Vec<usize>,
    offsets: Vec<usize>,
}

impl TryFrom<QueryGroupingRepr> for QueryGrouping {
    type Error = GroupingError;

    fn try_from(r: QueryGroupingRepr) -> Result<Self, Self::Error> {
        let qg = Self::from_counts(r.counts)?;
        if qg.offsets != r.offsets {
            return Err(GroupingError::Inconsistent(
                "offsets do not match cumulative counts".into(),
            ));
        }
        Ok(qg)
    }
}

impl QueryGrouping {
    pub fn from_counts(counts: Vec<usize>) -> Result<Self, GroupingError> {
        if counts.is_empty() {
            return Err(GroupingError::ZeroGroups);
        }
        let offsets = counts
            .iter()
            .scan(0usize, |acc, &c| {
                let start = *acc;
                *acc += c;
                Some(start)
            })
            .collect();
        Ok(Self { counts, offsets })
    }

    /// Proportional split: `floor(n_q * f_k)` for every group but the last,
    /// which absorbs the remainder.
    pub fn from_group_frequencies(freqs: &[f64], n_q: usize) -> Result<Self, GroupingError> {
        let n_g = freqs.len();
        if n_g == 0 {
            return Err(GroupingError::ZeroGroups);
        }
        if n_q < n_g {
            return Err(GroupingError::TooFewQueries { n_q, n_g });
        }
        if freqs.iter().any(|f| !f.is_finite() || *f < 0.0) || freqs.iter().sum::<f64>() <= 0.0 {
            return Err(GroupingError::InvalidGroupFrequencies);
        }
        let mut counts: Vec<usize> = freqs[..n_g - 1]
            .iter()
            .map(|f| (n_q as f64 * f + FLOOR_SLACK).floor() as usize)
            .collect();
        let assigned: usize = counts.iter().sum();
        if assigned > n_q {
            return Err(GroupingError::InvalidGroupFrequencies);
        }
        counts.push(n_q - assigned);
        Self::from_counts(counts)
    }

    pub fn n_groups(&self) -> usize {
        self.counts.len()
    }

    pub fn n_queries(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn range(&self, group: usize) -> Range<usize> {
        self.offsets[group]..self.offsets[group] + self.counts[group]
    }

    /// Group index owning `query` (0-based).
    pub fn group_of(&self, query: usize) -> Result<usize, GroupingError> {
        if query >= self.n_queries() {
            return Err(GroupingError::UnknownId(query));
        }
        // Last group whose start is <= query; empty groups share a start with
        // their successor and are skipped.
        let pos = self.offsets.partition_point(|&start| start <= query);
        Ok(pos - 1)
    }
}

/// Query groups sized in proportion to `pg`'s group frequencies.
pub fn group_queries(pg: &PredicateGrouping, n_q: usize) -> Result<QueryGrouping, GroupingError> {
    QueryGrouping::from_group_frequencies(&pg.group_freq, n_q)
}

/// 0 when the groups agree or the GT slot is empty, [`FORBIDDEN`] otherwise.
pub fn grouping_cost(gt_group: Option<usize>, query_group: usize) -> f64 {
    match gt_group {
        None => 0.0,
        Some(g) if g == query_group => 0.0,
        Some(_) => FORBIDDEN,
    }
}

/// Predicate grouping paired with the matching query grouping.
#[derive(Debug, Clone, Copy)]
pub struct Groupings<'a> {
    pub predicates: &'a PredicateGrouping,
    pub queries: &'a QueryGrouping,
}

impl<'a> Groupings<'a> {
    pub fn new(
        predicates: &'a PredicateGrouping,
        queries: &'a QueryGrouping,
    ) -> Result<Self, GroupingError> {
        if predicates.n_groups() != queries.n_groups() {
            return Err(GroupingError::Inconsistent(format!(
                "{} predicate groups vs {} query groups",
                predicates.n_groups(),
                queries.n_groups()
            )));
        }
        Ok(Self {
            predicates,
            queries,
        })
    }
}

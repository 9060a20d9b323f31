//! Cost matrices, DTW, Drop-DTW and decoding of alignment paths into
//! per-step segments.
//!
//! Rows of a [`CostMatrix`] are *slots* (the ordered targets: decoder slots
//! or selected steps), columns are *items* (the droppable sequence: frames or
//! steps). Every alignment is many-to-one: each item is either dropped or
//! matched to exactly one slot, matched slots are nondecreasing in item
//! order, and a slot that is not dropped receives at least one item.

mod brute;
mod dp;

use serde::{Deserialize, Serialize};

use crate::dataset::Segment;
use crate::error::{Error, Result};
use crate::features::{cosine, FeatureMatrix};

pub use brute::brute_force_align;
pub use dp::{drop_dtw, dtw};

#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    n_slots: usize,
    n_items: usize,
    cost: Vec<f64>,
}

impl CostMatrix {
    pub fn new(n_slots: usize, n_items: usize, cost: Vec<f64>) -> Result<Self> {
        if n_slots == 0 || n_items == 0 {
            return Err(Error::invalid(format!(
                "cost matrix must be non-empty, got {n_slots}x{n_items}"
            )));
        }
        if cost.len() != n_slots * n_items {
            return Err(Error::invalid(format!(
                "cost matrix {n_slots}x{n_items} needs {} entries, got {}",
                n_slots * n_items,
                cost.len()
            )));
        }
        if cost.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("cost matrix has a non-finite entry"));
        }
        Ok(CostMatrix {
            n_slots,
            n_items,
            cost,
        })
    }

    pub fn from_fn(
        n_slots: usize,
        n_items: usize,
        f: impl Fn(usize, usize) -> f64,
    ) -> Result<Self> {
        let cost = (0..n_slots)
            .flat_map(|i| (0..n_items).map(move |j| (i, j)))
            .map(|(i, j)| f(i, j))
            .collect();
        CostMatrix::new(n_slots, n_items, cost)
    }

    /// `cost[i][j] = -cos(slots_i, items_j)`.
    pub fn negative_cosine(slots: &FeatureMatrix, items: &FeatureMatrix) -> Result<Self> {
        let mut cost = Vec::with_capacity(slots.rows() * items.rows());
        for i in 0..slots.rows() {
            for j in 0..items.rows() {
                cost.push(-cosine(slots.row(i), items.row(j))?);
            }
        }
        CostMatrix::new(slots.rows(), items.rows(), cost)
    }

    pub fn n_slots(&self) -> usize {
        self.n_slots
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn entries(&self) -> &[f64] {
        &self.cost
    }

    pub fn get(&self, slot: usize, item: usize) -> f64 {
        self.cost[slot * self.n_items + item]
    }

    pub fn scaled(&self, lambda: f64) -> Result<Self> {
        CostMatrix::new(
            self.n_slots,
            self.n_items,
            self.cost.iter().map(|c| c * lambda).collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentPath {
    /// `(slot, item)` pairs in increasing item order.
    pub matches: Vec<(usize, usize)>,
    pub dropped_items: Vec<usize>,
    pub dropped_slots: Vec<usize>,
    pub total_cost: f64,
}

impl AlignmentPath {
    /// Checks monotonicity and that matches and drops partition both index
    /// sets. `two_sided = false` additionally requires every slot matched.
    pub fn validate(&self, n_slots: usize, n_items: usize, two_sided: bool) -> Result<()> {
        let fail = |msg: String| Err(Error::invalid(format!("alignment path: {msg}")));
        for w in self.matches.windows(2) {
            let ((i, j), (i2, j2)) = (w[0], w[1]);
            if i2 < i || j2 <= j {
                return fail(format!("({i},{j}) followed by ({i2},{j2}) is not monotone"));
            }
        }
        let mut item_seen = vec![0usize; n_items];
        let mut slot_matched = vec![false; n_slots];
        for &(i, j) in &self.matches {
            if i >= n_slots || j >= n_items {
                return fail(format!("match ({i},{j}) out of range"));
            }
            item_seen[j] += 1;
            slot_matched[i] = true;
        }
        for &j in &self.dropped_items {
            if j >= n_items {
                return fail(format!("dropped item {j} out of range"));
            }
            item_seen[j] += 1;
        }
        if let Some(j) = item_seen.iter().position(|&c| c != 1) {
            return fail(format!("item {j} is covered {} times", item_seen[j]));
        }
        if !two_sided && !self.dropped_slots.is_empty() {
            return fail("one-sided alignment dropped a slot".into());
        }
        let mut slot_seen: Vec<bool> = slot_matched.clone();
        for &i in &self.dropped_slots {
            if i >= n_slots || slot_seen[i] {
                return fail(format!("dropped slot {i} is out of range or also matched"));
            }
            slot_seen[i] = true;
        }
        if let Some(i) = slot_seen.iter().position(|s| !s) {
            return fail(format!("slot {i} is neither matched nor dropped"));
        }
        Ok(())
    }
}

/// Total cost of a configuration, summed in a fixed order: items by index
/// (match cost or item drop cost), then dropped slots by index. The DP and
/// the brute-force oracle both report costs through this function so equal
/// configurations give bitwise-equal totals.
pub(crate) fn canonical_cost(
    cost: &CostMatrix,
    assignment: &[Option<usize>],
    dropped_slots: usize,
    drop_item: f64,
    drop_slot: f64,
) -> f64 {
    let mut total = 0.0;
    for (j, a) in assignment.iter().enumerate() {
        total += match a {
            Some(i) => cost.get(*i, j),
            None => drop_item,
        };
    }
    for _ in 0..dropped_slots {
        total += drop_slot;
    }
    total
}

pub(crate) fn path_from_assignment(
    cost: &CostMatrix,
    assignment: &[Option<usize>],
    drop_item: f64,
    drop_slot: Option<f64>,
) -> AlignmentPath {
    let mut matched = vec![false; cost.n_slots()];
    let mut matches = Vec::new();
    let mut dropped_items = Vec::new();
    for (j, a) in assignment.iter().enumerate() {
        match a {
            Some(i) => {
                matched[*i] = true;
                matches.push((*i, j));
            }
            None => dropped_items.push(j),
        }
    }
    let dropped_slots: Vec<usize> = (0..cost.n_slots()).filter(|&i| !matched[i]).collect();
    let total_cost = canonical_cost(
        cost,
        assignment,
        dropped_slots.len(),
        drop_item,
        drop_slot.unwrap_or(0.0),
    );
    AlignmentPath {
        matches,
        dropped_items,
        dropped_slots,
        total_cost,
    }
}

/// Nearest-rank percentile of all entries: the value at 1-based rank
/// `ceil(pct / 100 * n)` of the sorted entries.
pub fn percentile_drop_cost(cost: &CostMatrix, pct: f64) -> Result<f64> {
    if !(pct > 0.0 && pct <= 100.0) {
        return Err(Error::invalid(format!(
            "percentile {pct} is not in (0, 100]"
        )));
    }
    let mut sorted = cost.entries().to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    // The epsilon keeps e.g. 80% of 5 entries at rank 4 despite 0.8 * 5
    // rounding just above 4.
    let rank = ((pct / 100.0 * n as f64) - 1e-9).ceil().max(1.0) as usize;
    Ok(sorted[rank.min(n) - 1])
}

/// One segment per step: `[first matched item, last matched item + 1)`.
/// `slot_to_step[slot]` gives the 1-based step of each slot. Slots without
/// matches produce no segment.
pub fn decode_segments(
    path: &AlignmentPath,
    slot_to_step: &[usize],
    num_frames: usize,
) -> Result<Vec<(usize, Segment)>> {
    let mut spans: std::collections::BTreeMap<usize, (usize, usize)> = Default::default();
    for &(slot, item) in &path.matches {
        let step = *slot_to_step
            .get(slot)
            .ok_or_else(|| Error::invalid(format!("matched slot {slot} has no step assignment")))?;
        if item >= num_frames {
            return Err(Error::invalid(format!(
                "matched frame {item} is beyond {num_frames} frames"
            )));
        }
        let span = spans.entry(step).or_insert((item, item));
        span.0 = span.0.min(item);
        span.1 = span.1.max(item);
    }
    Ok(spans
        .into_iter()
        .map(|(step, (lo, hi))| {
            (
                step,
                Segment {
                    start: lo,
                    end: hi + 1,
                },
            )
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentile_examples() {
        let c = CostMatrix::new(1, 5, vec![3.0, 1.0, 5.0, 2.0, 4.0]).unwrap();
        // Oracle: sort, take 1-based rank ceil(0.8 * 5) = 4.
        assert_eq!(percentile_drop_cost(&c, 80.0).unwrap(), 4.0);
        assert_eq!(percentile_drop_cost(&c, 100.0).unwrap(), 5.0);
        assert_eq!(percentile_drop_cost(&c, 1.0).unwrap(), 1.0);
        let k = CostMatrix::new(2, 2, vec![0.7; 4]).unwrap();
        assert_eq!(percentile_drop_cost(&k, 80.0).unwrap(), 0.7);
        assert!(percentile_drop_cost(&c, 0.0).is_err());
        assert!(percentile_drop_cost(&c, 100.5).is_err());
    }

    #[test]
    fn percentile_matches_rank_oracle() {
        let entries: Vec<f64> = (0..37).map(|i| ((i * 17) % 37) as f64 * 0.5).collect();
        let c = CostMatrix::new(1, 37, entries.clone()).unwrap();
        let mut sorted = entries;
        sorted.sort_by(f64::total_cmp);
        for pct in [5.0, 20.0, 50.0, 80.0, 99.0] {
            let mut rank = 1;
            while (rank as f64) < pct / 100.0 * 37.0 {
                rank += 1;
            }
            assert_eq!(percentile_drop_cost(&c, pct).unwrap(), sorted[rank - 1]);
        }
    }

    #[test]
    fn cost_matrix_checks() {
        assert!(CostMatrix::new(0, 3, vec![]).is_err());
        assert!(CostMatrix::new(1, 2, vec![0.0, f64::INFINITY]).is_err());
        let slots = FeatureMatrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let items = FeatureMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap();
        let c = CostMatrix::negative_cosine(&slots, &items).unwrap();
        assert_eq!(c.entries(), &[-1.0, 0.0]);
    }

    #[test]
    fn decode_examples() {
        let path = AlignmentPath {
            matches: vec![(0, 2), (0, 3), (1, 7)],
            dropped_items: vec![],
            dropped_slots: vec![],
            total_cost: 0.0,
        };
        let segs = decode_segments(&path, &[1, 2], 10).unwrap();
        assert_eq!(
            segs,
            vec![
                (1, Segment { start: 2, end: 4 }),
                (2, Segment { start: 7, end: 8 })
            ]
        );
        assert!(decode_segments(&path, &[1], 10).is_err());

        let empty = AlignmentPath {
            matches: vec![],
            dropped_items: vec![0, 1],
            dropped_slots: vec![0],
            total_cost: 0.0,
        };
        assert!(decode_segments(&empty, &[1], 2).unwrap().is_empty());

        let full = AlignmentPath {
            matches: (0..6).map(|j| (0, j)).collect(),
            dropped_items: vec![],
            dropped_slots: vec![],
            total_cost: 0.0,
        };
        assert_eq!(
            decode_segments(&full, &[1], 6).unwrap(),
            vec![(1, Segment { start: 0, end: 6 })]
        );
    }

    #[test]
    fn validate_rejects_broken_paths() {
        let ok = AlignmentPath {
            matches: vec![(0, 0), (1, 2)],
            dropped_items: vec![1],
            dropped_slots: vec![],
            total_cost: 0.0,
        };
        ok.validate(2, 3, false).unwrap();
        let mut bad = ok.clone();
        bad.matches = vec![(1, 0), (0, 2)];
        assert!(bad.validate(2, 3, false).is_err());
        let mut bad = ok.clone();
        bad.dropped_items.clear();
        assert!(bad.validate(2, 3, false).is_err());
        let mut bad = ok;
        bad.matches = vec![(0, 0), (0, 2)];
        assert!(bad.validate(2, 3, false).is_err());
        bad.dropped_slots = vec![1];
        bad.validate(2, 3, true).unwrap();
    }
}

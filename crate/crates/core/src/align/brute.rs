use super::{canonical_cost, path_from_assignment, AlignmentPath, CostMatrix};
use crate::error::{Error, Result};

pub const MAX_SLOTS: usize = 4;
pub const MAX_ITEMS: usize = 7;

struct Search<'a> {
    cost: &'a CostMatrix,
    drop_item: f64,
    drop_slot: Option<f64>,
    assignment: Vec<Option<usize>>,
    best: Option<(f64, usize, Vec<Option<usize>>)>,
}

impl Search<'_> {
    fn visit(&mut self, item: usize, min_slot: usize) {
        if item == self.cost.n_items() {
            self.score();
            return;
        }
        for slot in min_slot..self.cost.n_slots() {
            self.assignment[item] = Some(slot);
            self.visit(item + 1, slot);
        }
        self.assignment[item] = None;
        self.visit(item + 1, min_slot);
    }

    fn score(&mut self) {
        let n = self.cost.n_slots();
        let mut used = vec![false; n];
        for i in self.assignment.iter().flatten() {
            used[*i] = true;
        }
        let unused = used.iter().filter(|u| !**u).count();
        if unused > 0 && self.drop_slot.is_none() {
            return;
        }
        let total = canonical_cost(
            self.cost,
            &self.assignment,
            unused,
            self.drop_item,
            self.drop_slot.unwrap_or(0.0),
        );
        let matched = self.assignment.iter().flatten().count();
        // Lower cost wins; among exact ties, more matches, then the
        // lexicographically earliest assignment (enumeration order).
        let better = match &self.best {
            None => true,
            Some((c, m, _)) => total < *c || (total == *c && matched > *m),
        };
        if better {
            self.best = Some((total, matched, self.assignment.clone()));
        }
    }
}

/// Exhaustive search over every monotone match/drop configuration. Only for
/// testing: limited to 4 slots and 7 items.
pub fn brute_force_align(
    cost: &CostMatrix,
    drop_item_cost: f64,
    drop_slot_cost: Option<f64>,
) -> Result<AlignmentPath> {
    if cost.n_slots() > MAX_SLOTS || cost.n_items() > MAX_ITEMS {
        return Err(Error::invalid(format!(
            "brute-force alignment is limited to {MAX_SLOTS}x{MAX_ITEMS}, got {}x{}",
            cost.n_slots(),
            cost.n_items()
        )));
    }
    let mut search = Search {
        cost,
        drop_item: drop_item_cost,
        drop_slot: drop_slot_cost,
        assignment: vec![None; cost.n_items()],
        best: None,
    };
    search.visit(0, 0);
    let (_, _, assignment) = search
        .best
        .ok_or_else(|| Error::Infeasible("no configuration matches every slot".into()))?;
    Ok(path_from_assignment(
        cost,
        &assignment,
        drop_item_cost,
        drop_slot_cost,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn size_bound() {
        let c = CostMatrix::new(5, 2, vec![0.0; 10]).unwrap();
        assert!(brute_force_align(&c, 1.0, Some(1.0)).is_err());
    }

    #[test]
    fn optimum_is_no_worse_than_any_configuration() {
        // Hand-listed configurations of a 2x2 instance.
        let c = CostMatrix::new(2, 2, vec![0.3, -0.2, -0.5, 0.1]).unwrap();
        let (di, ds) = (0.05, 0.4);
        let best = brute_force_align(&c, di, Some(ds)).unwrap().total_cost;
        let configs: [(f64, &str); 8] = [
            (0.3 + -0.2 + ds, "0,0"),
            (0.3 + 0.1, "0,1"),
            (-0.5 + 0.1 + ds, "1,1"),
            (0.3 + di + ds, "0,-"),
            (-0.5 + di + ds, "1,-"),
            (di + -0.2 + ds, "-,0"),
            (di + 0.1 + ds, "-,1"),
            (di + di + ds + ds, "-,-"),
        ];
        for (cost, name) in configs {
            assert!(best <= cost + 1e-15, "{name}: {best} > {cost}");
        }
        assert_eq!(best, -0.5 + di + ds);
    }

    #[test]
    fn forbidden_drops_reduce_to_dtw() {
        let c = CostMatrix::from_fn(3, 6, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0).unwrap();
        let b = brute_force_align(&c, 1e6, None).unwrap();
        let d = crate::align::dtw(&c).unwrap();
        assert_eq!(b.total_cost, d.total_cost);
        assert!(b.dropped_items.is_empty());
    }
}

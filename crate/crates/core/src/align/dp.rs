use super::{path_from_assignment, AlignmentPath, CostMatrix};
use crate::error::{Error, Result};

#[derive(Clone, Copy, PartialEq)]
enum FMove {
    /// Item matched as the first item of its slot.
    Start,
    /// Item matched to the slot that is already open.
    Continue,
    /// Item dropped while the slot is open.
    Drop,
}

#[derive(Clone, Copy, PartialEq)]
enum GMove {
    DropSlot,
    DropItem,
}

/// Dynamic program over `(slots processed, items processed)`.
///
/// * `f[i][j]`: slot `i - 1` has at least one match among the first `j`
///   items;
/// * `g[i][j]`: slot `i - 1` was dropped (or `i == 0`), any items after it
///   dropped;
/// * the best of the two is `t[i][j]`.
///
/// Candidates are tried in order and replaced only on strict improvement,
/// so ties prefer starting a match over continuing one over dropping, and
/// `f` over `g`.
struct Tables {
    cols: usize,
    f: Vec<f64>,
    g: Vec<f64>,
    fm: Vec<FMove>,
    gm: Vec<GMove>,
}

impl Tables {
    fn at(&self, i: usize, j: usize) -> usize {
        i * self.cols + j
    }

    fn t(&self, i: usize, j: usize) -> f64 {
        let k = self.at(i, j);
        self.f[k].min(self.g[k])
    }

    fn t_is_f(&self, i: usize, j: usize) -> bool {
        let k = self.at(i, j);
        self.f[k] <= self.g[k]
    }
}

fn solve(
    cost: &CostMatrix,
    drop_item: Option<f64>,
    drop_slot: Option<f64>,
) -> Result<AlignmentPath> {
    let (n, m) = (cost.n_slots(), cost.n_items());
    let cols = m + 1;
    let inf = f64::INFINITY;
    let mut tb = Tables {
        cols,
        f: vec![inf; (n + 1) * cols],
        g: vec![inf; (n + 1) * cols],
        fm: vec![FMove::Start; (n + 1) * cols],
        gm: vec![GMove::DropItem; (n + 1) * cols],
    };
    let di = drop_item.unwrap_or(inf);
    let ds = drop_slot.unwrap_or(inf);

    tb.g[0] = 0.0;
    for j in 1..=m {
        tb.g[j] = tb.g[j - 1] + di;
    }
    for i in 1..=n {
        for j in 0..=m {
            let k = tb.at(i, j);
            if j > 0 {
                let c = cost.get(i - 1, j - 1);
                let prev = tb.at(i, j - 1);
                let mut best = tb.t(i - 1, j - 1) + c;
                let mut mv = FMove::Start;
                let cont = tb.f[prev] + c;
                if cont < best {
                    best = cont;
                    mv = FMove::Continue;
                }
                let drop = tb.f[prev] + di;
                if drop < best {
                    best = drop;
                    mv = FMove::Drop;
                }
                tb.f[k] = best;
                tb.fm[k] = mv;
            }
            let mut best = tb.t(i - 1, j) + ds;
            let mut mv = GMove::DropSlot;
            if j > 0 {
                let drop = tb.g[tb.at(i, j - 1)] + di;
                if drop < best {
                    best = drop;
                    mv = GMove::DropItem;
                }
            }
            tb.g[k] = best;
            tb.gm[k] = mv;
        }
    }

    if !tb.t(n, m).is_finite() {
        return Err(Error::Infeasible(format!(
            "no alignment of {n} slots to {m} items: every slot must be matched \
             and there are fewer items than slots"
        )));
    }

    let mut assignment: Vec<Option<usize>> = vec![None; m];
    let (mut i, mut j) = (n, m);
    let mut in_f = tb.t_is_f(i, j);
    while i > 0 || j > 0 {
        let k = tb.at(i, j);
        if in_f {
            match tb.fm[k] {
                FMove::Start => {
                    assignment[j - 1] = Some(i - 1);
                    i -= 1;
                    j -= 1;
                    in_f = tb.t_is_f(i, j);
                }
                FMove::Continue => {
                    assignment[j - 1] = Some(i - 1);
                    j -= 1;
                }
                FMove::Drop => j -= 1,
            }
        } else if i == 0 {
            j -= 1;
        } else {
            match tb.gm[k] {
                GMove::DropSlot => {
                    i -= 1;
                    in_f = tb.t_is_f(i, j);
                }
                GMove::DropItem => j -= 1,
            }
        }
    }
    Ok(path_from_assignment(cost, &assignment, di, drop_slot))
}

/// Drop-DTW. Items may be dropped at `drop_item_cost`; slots may be dropped
/// at `drop_slot_cost` when given, otherwise every slot must be matched
/// (which needs at least as many items as slots).
pub fn drop_dtw(
    cost: &CostMatrix,
    drop_item_cost: f64,
    drop_slot_cost: Option<f64>,
) -> Result<AlignmentPath> {
    if !drop_item_cost.is_finite() || drop_slot_cost.is_some_and(|d| !d.is_finite()) {
        return Err(Error::invalid("drop costs must be finite"));
    }
    solve(cost, Some(drop_item_cost), drop_slot_cost)
}

/// Monotone alignment without drops: every item matched, every slot used.
/// Moves are diagonal (next slot) and right (same slot), i.e. Drop-DTW with
/// drops removed, so it needs `n_slots <= n_items`.
pub fn dtw(cost: &CostMatrix) -> Result<AlignmentPath> {
    solve(cost, None, None)
}

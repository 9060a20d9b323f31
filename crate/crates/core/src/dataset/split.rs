//! Worker-grouped k-fold splits.
//!
//! Every validation and test set holds exactly one correct-intent and one
//! mistake-intent video per task. Workers are kept whole on either side of
//! the train / evaluation boundary, so a fold's evaluation videos are the
//! union of some workers' videos, with exactly two correct and two mistake
//! videos per task. Test sets of different folds are pairwise disjoint.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{AnnotatedVideo, FoldSpec, Intent, TaskDomain};
use crate::error::{Error, Result};

const MAX_GROUPS: usize = 4096;
const GROUP_NODE_BUDGET: usize = 1_000_000;
const FOLD_NODE_BUDGET: usize = 2_000_000;

struct Group {
    /// `videos[task][intent]` lists corpus indices, shuffled by the seed.
    videos: Vec<[Vec<usize>; 2]>,
    members: Vec<usize>,
}

fn intent_slot(intent: Intent) -> usize {
    match intent {
        Intent::CorrectRun => 0,
        Intent::MistakeRun => 1,
    }
}

pub fn make_group_kfold(videos: &[AnnotatedVideo], k: usize, seed: u64) -> Result<Vec<FoldSpec>> {
    if k < 2 {
        return Err(Error::invalid(format!("k must be at least 2, got {k}")));
    }
    let mut tasks: Vec<TaskDomain> = videos.iter().map(|v| v.task).collect();
    tasks.sort();
    tasks.dedup();
    if tasks.is_empty() {
        return Err(Error::invalid("cannot split an empty corpus"));
    }
    let task_slot = |t: TaskDomain| tasks.binary_search(&t).unwrap();

    for &task in &tasks {
        for intent in [Intent::CorrectRun, Intent::MistakeRun] {
            let n = videos
                .iter()
                .filter(|v| v.task == task && v.intent == intent)
                .count();
            if n < k {
                let what = match intent {
                    Intent::CorrectRun => "correct",
                    Intent::MistakeRun => "mistake",
                };
                return Err(Error::Infeasible(format!(
                    "task {task} has only {n} {what}-intent videos; k={k} needs at least {k}"
                )));
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut by_worker: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, v) in videos.iter().enumerate() {
        by_worker.entry(v.worker_id.as_str()).or_default().push(i);
    }
    let workers: Vec<Vec<usize>> = by_worker.into_values().collect();
    let counts: Vec<Vec<[usize; 2]>> = workers
        .iter()
        .map(|members| {
            let mut c = vec![[0usize; 2]; tasks.len()];
            for &i in members {
                c[task_slot(videos[i].task)][intent_slot(videos[i].intent)] += 1;
            }
            c
        })
        .collect();

    // Worker subsets covering exactly two correct and two mistake videos per task.
    let mut subsets: Vec<Vec<usize>> = Vec::new();
    let mut nodes = 0usize;
    let mut current = Vec::new();
    let mut acc = vec![[0usize; 2]; tasks.len()];
    enumerate_groups(0, &counts, &mut acc, &mut current, &mut subsets, &mut nodes);
    if subsets.is_empty() {
        return Err(Error::Infeasible(
            "no set of whole workers covers exactly two correct and two mistake videos per task"
                .into(),
        ));
    }

    let groups: Vec<Group> = subsets
        .iter()
        .map(|ws| {
            let mut per_task = vec![[Vec::new(), Vec::new()]; tasks.len()];
            let mut members = Vec::new();
            for &w in ws {
                for &i in &workers[w] {
                    per_task[task_slot(videos[i].task)][intent_slot(videos[i].intent)].push(i);
                    members.push(i);
                }
            }
            for lists in per_task.iter_mut() {
                for list in lists.iter_mut() {
                    list.sort_by(|&a, &b| videos[a].video_id.cmp(&videos[b].video_id));
                    list.shuffle(&mut rng);
                }
            }
            members.sort_unstable();
            Group {
                videos: per_task,
                members,
            }
        })
        .collect();

    let mut order: Vec<usize> = (0..groups.len()).collect();
    order.shuffle(&mut rng);

    let mut search = FoldSearch {
        groups: &groups,
        order: &order,
        k,
        used: vec![false; videos.len()],
        unused: tasks
            .iter()
            .map(|&t| {
                let mut c = [0usize; 2];
                for v in videos.iter().filter(|v| v.task == t) {
                    c[intent_slot(v.intent)] += 1;
                }
                c
            })
            .collect(),
        chosen: Vec::new(),
        nodes: 0,
    };
    if !search.run(0) {
        return Err(Error::Infeasible(format!(
            "no assignment of {k} folds with disjoint test sets satisfies the per-task \
             one-correct/one-mistake rule under worker grouping"
        )));
    }

    let id = |i: usize| videos[i].video_id.clone();
    let folds = search
        .chosen
        .iter()
        .enumerate()
        .map(|(fold_id, (g, test))| {
            let group = &groups[*g];
            let mut test_ids: Vec<String> = test.iter().map(|&i| id(i)).collect();
            let mut val_ids: Vec<String> = group
                .members
                .iter()
                .filter(|i| !test.contains(i))
                .map(|&i| id(i))
                .collect();
            let mut train_ids: Vec<String> = (0..videos.len())
                .filter(|i| group.members.binary_search(i).is_err())
                .map(id)
                .collect();
            test_ids.sort();
            val_ids.sort();
            train_ids.sort();
            FoldSpec {
                fold_id,
                train: train_ids,
                val: val_ids,
                test: test_ids,
            }
        })
        .collect();
    Ok(folds)
}

fn enumerate_groups(
    worker: usize,
    counts: &[Vec<[usize; 2]>],
    acc: &mut Vec<[usize; 2]>,
    current: &mut Vec<usize>,
    out: &mut Vec<Vec<usize>>,
    nodes: &mut usize,
) {
    *nodes += 1;
    if out.len() >= MAX_GROUPS || *nodes > GROUP_NODE_BUDGET {
        return;
    }
    if acc.iter().all(|c| *c == [2, 2]) {
        out.push(current.clone());
        return;
    }
    if worker == counts.len() {
        return;
    }
    let fits = acc
        .iter()
        .zip(&counts[worker])
        .all(|(a, c)| a[0] + c[0] <= 2 && a[1] + c[1] <= 2);
    let contributes = counts[worker].iter().any(|c| c[0] + c[1] > 0);
    if fits && contributes {
        for (a, c) in acc.iter_mut().zip(&counts[worker]) {
            a[0] += c[0];
            a[1] += c[1];
        }
        current.push(worker);
        enumerate_groups(worker + 1, counts, acc, current, out, nodes);
        current.pop();
        for (a, c) in acc.iter_mut().zip(&counts[worker]) {
            a[0] -= c[0];
            a[1] -= c[1];
        }
    }
    enumerate_groups(worker + 1, counts, acc, current, out, nodes);
}

struct FoldSearch<'a> {
    groups: &'a [Group],
    order: &'a [usize],
    k: usize,
    used: Vec<bool>,
    /// Videos not yet in any test set, per task and intent.
    unused: Vec<[usize; 2]>,
    chosen: Vec<(usize, Vec<usize>)>,
    nodes: usize,
}

impl FoldSearch<'_> {
    fn run(&mut self, start: usize) -> bool {
        if self.chosen.len() == self.k {
            return true;
        }
        let remaining = self.k - self.chosen.len();
        if self
            .unused
            .iter()
            .any(|c| c[0] < remaining || c[1] < remaining)
        {
            return false;
        }
        for pos in start..self.order.len() {
            self.nodes += 1;
            if self.nodes > FOLD_NODE_BUDGET {
                return false;
            }
            let g = self.order[pos];
            let Some(test) = self.pick_test(g) else {
                continue;
            };
            for &i in &test {
                self.used[i] = true;
            }
            self.adjust(g, &test, false);
            self.chosen.push((g, test));
            // The same group may serve again with its other half as the test set.
            if self.run(pos) {
                return true;
            }
            let (_, test) = self.chosen.pop().unwrap();
            self.adjust(g, &test, true);
            for &i in &test {
                self.used[i] = false;
            }
        }
        false
    }

    fn pick_test(&self, g: usize) -> Option<Vec<usize>> {
        let mut test = Vec::new();
        for lists in &self.groups[g].videos {
            for list in lists {
                test.push(*list.iter().find(|&&i| !self.used[i])?);
            }
        }
        Some(test)
    }

    fn adjust(&mut self, g: usize, test: &[usize], restore: bool) {
        for (task, lists) in self.groups[g].videos.iter().enumerate() {
            for (slot, list) in lists.iter().enumerate() {
                let n = test.iter().filter(|i| list.contains(i)).count();
                if restore {
                    self.unused[task][slot] += n;
                } else {
                    self.unused[task][slot] -= n;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    /// 5 tasks x 10 videos; pairs (correct, mistake) 0..2 go to workers 0..2,
    /// pairs 3 and 4 to worker 3.
    pub(crate) fn five_by_ten() -> Vec<AnnotatedVideo> {
        let mut videos = Vec::new();
        for task in TaskDomain::ALL {
            for i in 0..10 {
                let pair = i / 2;
                videos.push(AnnotatedVideo {
                    video_id: format!("{}_{i:02}", task.as_str()),
                    worker_id: format!("worker{}", pair.min(3)),
                    task,
                    intent: if i % 2 == 0 {
                        Intent::CorrectRun
                    } else {
                        Intent::MistakeRun
                    },
                    num_frames: 10,
                    segments: vec![],
                });
            }
        }
        videos
    }

    fn check_fold(videos: &[AnnotatedVideo], fold: &FoldSpec) {
        let by_id = |id: &String| videos.iter().find(|v| &v.video_id == id).unwrap();
        let all: HashSet<&String> = fold
            .train
            .iter()
            .chain(&fold.val)
            .chain(&fold.test)
            .collect();
        assert_eq!(all.len(), videos.len(), "lists overlap or miss videos");
        for set in [&fold.val, &fold.test] {
            for task in TaskDomain::ALL {
                for intent in [Intent::CorrectRun, Intent::MistakeRun] {
                    let n = set
                        .iter()
                        .map(by_id)
                        .filter(|v| v.task == task && v.intent == intent)
                        .count();
                    assert_eq!(n, 1, "fold {} {task} {intent:?}", fold.fold_id);
                }
            }
        }
        let train_workers: HashSet<&str> = fold
            .train
            .iter()
            .map(|id| by_id(id).worker_id.as_str())
            .collect();
        for id in fold.val.iter().chain(&fold.test) {
            assert!(!train_workers.contains(by_id(id).worker_id.as_str()));
        }
    }

    #[test]
    fn five_by_ten_corpus_gives_30_10_10() {
        let videos = five_by_ten();
        let folds = make_group_kfold(&videos, 5, 7).unwrap();
        assert_eq!(folds.len(), 5);
        let mut tested = HashSet::new();
        for fold in &folds {
            assert_eq!(
                (fold.train.len(), fold.val.len(), fold.test.len()),
                (30, 10, 10)
            );
            check_fold(&videos, fold);
            for id in &fold.test {
                assert!(tested.insert(id.clone()), "{id} tested twice");
            }
        }
        assert_eq!(tested.len(), 50);
    }

    #[test]
    fn deterministic_given_seed() {
        let videos = five_by_ten();
        assert_eq!(
            make_group_kfold(&videos, 5, 11).unwrap(),
            make_group_kfold(&videos, 5, 11).unwrap()
        );
    }

    #[test]
    fn too_few_mistake_videos_is_infeasible() {
        let mut videos = five_by_ten();
        // Drop two mistake videos of one task: 3 left.
        videos.retain(|v| v.video_id != "cardboard_01" && v.video_id != "cardboard_03");
        let err = make_group_kfold(&videos, 5, 0).unwrap_err();
        assert!(matches!(err, Error::Infeasible(_)), "{err}");
        assert!(err.to_string().contains("only 3 mistake"), "{err}");
    }

    #[test]
    fn single_worker_is_infeasible() {
        let mut videos = five_by_ten();
        for v in &mut videos {
            v.worker_id = "solo".into();
        }
        assert!(matches!(
            make_group_kfold(&videos, 5, 0),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn k_below_two_rejected() {
        assert!(make_group_kfold(&five_by_ten(), 1, 0).is_err());
    }
}

//! Density ordering of summaries.
//!
//! A thread's densest window is the shortest contiguous run of posts holding
//! more than half of that thread's posts. Summaries are sorted by where that
//! window ends. Among equally short windows the earliest one counts; threads
//! whose windows end at the same post keep their first-occurrence order.

use crate::corpus::CorpusInstance;

/// End position (0-based, inclusive) of the densest window over `positions`,
/// which must be sorted ascending and non-empty.
pub fn densest_window_end(positions: &[usize]) -> usize {
    let k = positions.len() / 2 + 1;
    let mut best: Option<(usize, usize)> = None;
    for i in 0..=positions.len() - k {
        let span = positions[i + k - 1] - positions[i];
        if best.is_none_or(|(s, _)| span < s) {
            best = Some((span, positions[i + k - 1]));
        }
    }
    best.expect("positions is non-empty").1
}

/// Reorders `summaries` (and `meta.summary_threads`) by densest-window end.
/// Posts and thread labels are unchanged.
pub fn density_order(instance: &CorpusInstance) -> CorpusInstance {
    let threads = instance.thread_positions();
    let summary_threads = instance
        .meta
        .summary_threads
        .clone()
        .unwrap_or_else(|| threads.iter().map(|(t, _)| *t).collect());
    let mut keyed: Vec<(usize, usize, usize)> = summary_threads
        .iter()
        .enumerate()
        .map(|(rank, t)| {
            let end = threads
                .iter()
                .find(|(label, _)| label == t)
                .map(|(_, pos)| densest_window_end(pos))
                .unwrap_or(usize::MAX);
            (end, rank, *t)
        })
        .collect();
    keyed.sort();
    let mut out = instance.clone();
    out.summaries = keyed.iter().map(|&(_, rank, _)| instance.summaries[rank].clone()).collect();
    out.meta.summary_threads = Some(keyed.iter().map(|&(_, _, t)| t).collect());
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::InstanceMeta;
    use proptest::prelude::*;

    fn instance(thread_ids: Vec<usize>) -> CorpusInstance {
        let mut seen = Vec::new();
        for &t in &thread_ids {
            if !seen.contains(&t) {
                seen.push(t);
            }
        }
        CorpusInstance {
            posts: thread_ids.iter().map(|t| format!("p{t}")).collect(),
            summaries: seen.iter().map(|t| format!("T{t}")).collect(),
            meta: InstanceMeta {
                summary_threads: Some(seen),
                ..Default::default()
            },
            thread_ids,
        }
    }

    /// Scans every contiguous window of the post sequence.
    fn brute_force_end(thread_ids: &[usize], t: usize) -> usize {
        let total = thread_ids.iter().filter(|&&x| x == t).count();
        let mut best: Option<(usize, usize)> = None;
        for s in 0..thread_ids.len() {
            for e in s..thread_ids.len() {
                let inside = thread_ids[s..=e].iter().filter(|&&x| x == t).count();
                if 2 * inside > total && best.is_none_or(|(len, _)| e - s < len) {
                    best = Some((e - s, e));
                }
            }
        }
        best.unwrap().1
    }

    #[test]
    fn worked_example_puts_second_thread_first() {
        // t1 at positions 1,4,5,6 and t2 at 2,3 (1-based)
        let inst = instance(vec![1, 2, 2, 1, 1, 1]);
        let out = density_order(&inst);
        assert_eq!(out.summaries, ["T2", "T1"]);
        assert_eq!(out.posts, inst.posts);
    }

    #[test]
    fn single_thread_is_unchanged() {
        let inst = instance(vec![0, 0, 0]);
        assert_eq!(density_order(&inst), inst);
    }

    #[test]
    fn alternating_threads_keep_first_occurrence_order() {
        let inst = instance(vec![0, 1, 0, 1, 0, 1, 0, 1]);
        assert_eq!(density_order(&inst).summaries, ["T0", "T1"]);
    }

    proptest! {
        #[test]
        fn matches_brute_force(ids in proptest::collection::vec(0usize..4, 1..14)) {
            let inst = instance(ids.clone());
            let out = density_order(&inst);
            let order = out.meta.summary_threads.unwrap();
            let ends: Vec<usize> = order.iter().map(|&t| brute_force_end(&ids, t)).collect();
            prop_assert!(ends.windows(2).all(|w| w[0] <= w[1]));
            for (t, pos) in inst.thread_positions() {
                prop_assert_eq!(densest_window_end(&pos), brute_force_end(&ids, t));
            }
            let first: Vec<usize> = inst.meta.summary_threads.unwrap();
            for w in order.windows(2) {
                if brute_force_end(&ids, w[0]) == brute_force_end(&ids, w[1]) {
                    let a = first.iter().position(|&x| x == w[0]).unwrap();
                    let b = first.iter().position(|&x| x == w[1]).unwrap();
                    prop_assert!(a < b);
                }
            }
        }
    }
}

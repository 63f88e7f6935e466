//! Token-level diff via longest-common-subsequence alignment.

use crate::model::WordKind;

/// One aligned edit, with indices into the old and new token lists.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Edit {
    Removed { old: usize },
    Added { new: usize },
    Changed { old: usize, new: usize },
}

/// Word-level delta between two token lists. Only lives inside the
/// abstraction stage; never serialized.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordDelta {
    pub kind: WordKind,
    pub token: String,
}

/// Matched index pairs of one longest common subsequence, ascending.
fn lcs_pairs<T: PartialEq>(old: &[T], new: &[T]) -> Vec<(usize, usize)> {
    let prefix = old.iter().zip(new).take_while(|(a, b)| a == b).count();
    let suffix = old[prefix..].iter().rev().zip(new[prefix..].iter().rev()).take_while(|(a, b)| a == b).count();
    let a = &old[prefix..old.len() - suffix];
    let b = &new[prefix..new.len() - suffix];

    let mut pairs: Vec<(usize, usize)> = (0..prefix).map(|i| (i, i)).collect();
    if !a.is_empty() && !b.is_empty() {
        let (n, m) = (a.len(), b.len());
        let w = m + 1;
        // table[i * w + j] = LCS length of a[i..] and b[j..]
        let mut table = vec![0u32; (n + 1) * w];
        for i in (0..n).rev() {
            for j in (0..m).rev() {
                table[i * w + j] = if a[i] == b[j] {
                    table[(i + 1) * w + j + 1] + 1
                } else {
                    table[(i + 1) * w + j].max(table[i * w + j + 1])
                };
            }
        }
        let (mut i, mut j) = (0, 0);
        while i < n && j < m {
            if a[i] == b[j] {
                pairs.push((prefix + i, prefix + j));
                i += 1;
                j += 1;
            } else if table[(i + 1) * w + j] >= table[i * w + j + 1] {
                i += 1;
            } else {
                j += 1;
            }
        }
    }
    let (old_tail, new_tail) = (old.len() - suffix, new.len() - suffix);
    pairs.extend((0..suffix).map(|k| (old_tail + k, new_tail + k)));
    pairs
}

/// Aligns `old` against `new`. Within each gap between matched tokens the
/// removed tokens come first, then the added ones; a gap holding exactly
/// one removed and one added token yields a single `Changed`.
pub(crate) fn align<T: PartialEq>(old: &[T], new: &[T]) -> Vec<Edit> {
    let pairs = lcs_pairs(old, new);
    let mut edits = Vec::new();
    let (mut oi, mut ni) = (0, 0);
    let bounds = pairs.iter().copied().chain(std::iter::once((old.len(), new.len())));
    for (om, nm) in bounds {
        let removed = om - oi;
        let added = nm - ni;
        if removed == 1 && added == 1 {
            edits.push(Edit::Changed { old: oi, new: ni });
        } else {
            edits.extend((oi..om).map(|old| Edit::Removed { old }));
            edits.extend((ni..nm).map(|new| Edit::Added { new }));
        }
        oi = om + 1;
        ni = nm + 1;
    }
    edits
}

/// Word deltas turning `old` into `new`.
pub fn diff_tokens<S: AsRef<str> + PartialEq>(old: &[S], new: &[S]) -> Vec<WordDelta> {
    align(old, new)
        .into_iter()
        .map(|e| match e {
            Edit::Removed { old: i } => WordDelta { kind: WordKind::Removed, token: old[i].as_ref().to_string() },
            Edit::Added { new: j } => WordDelta { kind: WordKind::Added, token: new[j].as_ref().to_string() },
            Edit::Changed { new: j, .. } => WordDelta { kind: WordKind::Changed, token: new[j].as_ref().to_string() },
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn d(kind: WordKind, t: &str) -> WordDelta {
        WordDelta { kind, token: t.to_string() }
    }

    /// Longest common subsequence length by enumerating every subset of `old`.
    fn brute_force_lcs(old: &[&str], new: &[&str]) -> usize {
        let n = old.len();
        let mut best = 0;
        for mask in 0u32..(1 << n) {
            let sub: Vec<&str> = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| old[i]).collect();
            let mut it = new.iter();
            if sub.iter().all(|s| it.any(|t| t == s)) {
                best = best.max(sub.len());
            }
        }
        best
    }

    #[test]
    fn examples() {
        assert_eq!(diff_tokens(&["hi", "there"], &["hi", "friends"]), vec![d(WordKind::Changed, "friends")]);
        assert_eq!(diff_tokens::<&str>(&[], &["hi"]), vec![d(WordKind::Added, "hi")]);
        assert_eq!(diff_tokens(&["a", "b", "c"], &["a", "c"]), vec![d(WordKind::Removed, "b")]);
        // oracle cross-check on the two derived examples
        assert_eq!(brute_force_lcs(&["hi", "there"], &["hi", "friends"]), 1);
        assert_eq!(brute_force_lcs(&["a", "b", "c"], &["a", "c"]), 2);
    }

    #[test]
    fn multi_token_gap_does_not_merge() {
        let out = diff_tokens(&["a", "x", "y"], &["a", "z"]);
        assert_eq!(out, vec![d(WordKind::Removed, "x"), d(WordKind::Removed, "y"), d(WordKind::Added, "z")]);
    }

    #[test]
    fn edit_in_middle_keeps_context() {
        let out = diff_tokens(&["a", "b", "c", "d"], &["a", "x", "c", "d", "e"]);
        assert_eq!(out, vec![d(WordKind::Changed, "x"), d(WordKind::Added, "e")]);
    }

    fn small_tokens() -> impl Strategy<Value = Vec<&'static str>> {
        proptest::collection::vec(prop_oneof![Just("a"), Just("b"), Just("c"), Just("d")], 0..8)
    }

    proptest! {
        #[test]
        fn alignment_is_a_longest_common_subsequence(old in small_tokens(), new in small_tokens()) {
            let lcs = brute_force_lcs(&old, &new);
            let edits = align(&old, &new);
            let removed = edits.iter().filter(|e| matches!(e, Edit::Removed { .. } | Edit::Changed { .. })).count();
            let added = edits.iter().filter(|e| matches!(e, Edit::Added { .. } | Edit::Changed { .. })).count();
            prop_assert_eq!(removed, old.len() - lcs);
            prop_assert_eq!(added, new.len() - lcs);
            // every new index is touched at most once, in ascending order
            let new_idx: Vec<usize> = edits.iter().filter_map(|e| match e {
                Edit::Added { new } | Edit::Changed { new, .. } => Some(*new),
                _ => None,
            }).collect();
            prop_assert!(new_idx.windows(2).all(|w| w[0] < w[1]));
        }

        #[test]
        fn self_diff_is_empty(x in small_tokens()) {
            prop_assert!(diff_tokens(&x, &x).is_empty());
        }
    }
}

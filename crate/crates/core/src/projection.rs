//! Projection pairs `(A, B)`, complete-case recovery on `A`, and collapsed
//! class labels built from missingness patterns restricted to `B`.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;

use crate::data::MissingnessMask;
use crate::error::{PklmError, Result};

/// Disjoint variable subsets; `a_dims` selects features and complete rows,
/// `b_dims` forms the class labels. Both are sorted ascending, 0-based.
#[derive(Debug, Clone, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct ProjectionPair {
    pub a_dims: Vec<usize>,
    pub b_dims: Vec<usize>,
}

/// Draws `|A|` uniformly from `1..=p-1`, then `A` without replacement; then
/// `|B|` uniformly from `1..=p-|A|` and `B` from the complement of `A`.
pub fn sample_projection_pair<R: Rng + ?Sized>(rng: &mut R, p: usize) -> Result<ProjectionPair> {
    if p < 2 {
        return Err(PklmError::DimensionTooSmall(p));
    }
    let r1 = rng.random_range(1..p);
    let mut a_dims = index::sample(rng, p, r1).into_vec();
    a_dims.sort_unstable();

    let rest: Vec<usize> = (0..p).filter(|j| a_dims.binary_search(j).is_err()).collect();
    let r2 = rng.random_range(1..=rest.len());
    let mut b_dims: Vec<usize> = index::sample(rng, rest.len(), r2)
        .into_iter()
        .map(|k| rest[k])
        .collect();
    b_dims.sort_unstable();
    Ok(ProjectionPair { a_dims, b_dims })
}

/// Rows fully observed on every index in `a_dims`, ascending.
pub fn complete_rows(mask: &MissingnessMask, a_dims: &[usize]) -> Vec<usize> {
    (0..mask.n_rows())
        .filter(|&i| {
            let row = mask.row(i);
            a_dims.iter().all(|&j| row[j] == 0)
        })
        .collect()
}

fn restricted_pattern(row: &[u8], dims: &[usize]) -> Vec<u8> {
    dims.iter().map(|&j| row[j]).collect()
}

/// How a projection whose `B` shows more than `size_resp_set` patterns is
/// brought down to that many classes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassReduction {
    /// Drop random variables from `B` until few enough patterns remain.
    #[default]
    Shrink,
    /// Keep `B`; the rarest patterns merge into one residual class.
    Merge,
}

impl FromStr for ClassReduction {
    type Err = PklmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "shrink" => Ok(Self::Shrink),
            "merge" => Ok(Self::Merge),
            other => Err(PklmError::InvalidConfig(format!(
                "unknown class reduction {other:?} (expected shrink or merge)"
            ))),
        }
    }
}

impl fmt::Display for ClassReduction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Shrink => "shrink",
            Self::Merge => "merge",
        })
    }
}

fn distinct_patterns(mask: &MissingnessMask, row_ids: &[usize], dims: &[usize]) -> usize {
    row_ids
        .iter()
        .map(|&i| restricted_pattern(mask.row(i), dims))
        .collect::<HashSet<_>>()
        .len()
}

/// Removes uniformly chosen variables from `b_dims` until the rows in
/// `row_ids` show at most `max_classes` distinct patterns on it. Draws
/// nothing from `rng` when `b_dims` already qualifies. A single binary
/// column always qualifies, so `b_dims` never becomes empty.
pub fn shrink_response_set<R: Rng + ?Sized>(
    mask: &MissingnessMask,
    row_ids: &[usize],
    b_dims: &mut Vec<usize>,
    max_classes: usize,
    rng: &mut R,
) -> Result<()> {
    if max_classes < 2 {
        return Err(PklmError::InvalidConfig(format!(
            "max_classes must be at least 2, got {max_classes}"
        )));
    }
    while b_dims.len() > 1 && distinct_patterns(mask, row_ids, b_dims) > max_classes {
        b_dims.remove(rng.random_range(0..b_dims.len()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollapsedLabeling {
    /// Rows complete on `A`, ascending.
    pub row_ids: Vec<usize>,
    /// Class id per entry of `row_ids`, in `0..n_classes`.
    pub labels: Vec<usize>,
    /// Every `B`-restricted pattern seen among `row_ids`, merged ones included.
    pub pattern_to_class: HashMap<Vec<u8>, usize>,
    pub class_counts: Vec<usize>,
    pub n_classes: usize,
}

/// Groups `row_ids` by their mask restricted to `b_dims`.
///
/// Class ids follow decreasing pattern frequency, ties by first occurrence.
/// With more than `max_classes` patterns the `max_classes - 1` most frequent
/// keep their class and the tail merges into one residual class.
pub fn collapse_labels(
    mask: &MissingnessMask,
    row_ids: &[usize],
    b_dims: &[usize],
    max_classes: usize,
) -> Result<CollapsedLabeling> {
    if max_classes < 2 {
        return Err(PklmError::InvalidConfig(format!(
            "max_classes must be at least 2, got {max_classes}"
        )));
    }
    if row_ids.is_empty() {
        return Err(PklmError::DegenerateLabeling);
    }

    let mut first_seen: HashMap<Vec<u8>, usize> = HashMap::new();
    let mut patterns: Vec<(Vec<u8>, usize)> = Vec::new();
    let mut row_pattern = Vec::with_capacity(row_ids.len());
    for &i in row_ids {
        let key = restricted_pattern(mask.row(i), b_dims);
        let id = *first_seen.entry(key.clone()).or_insert_with(|| {
            patterns.push((key, 0));
            patterns.len() - 1
        });
        patterns[id].1 += 1;
        row_pattern.push(id);
    }
    if patterns.len() < 2 {
        return Err(PklmError::DegenerateLabeling);
    }

    // Stable sort keeps first-occurrence order among equal counts.
    let mut order: Vec<usize> = (0..patterns.len()).collect();
    order.sort_by(|&x, &y| patterns[y].1.cmp(&patterns[x].1));
    let n_classes = patterns.len().min(max_classes);
    let mut class_of_pattern = vec![0usize; patterns.len()];
    for (rank, &pid) in order.iter().enumerate() {
        class_of_pattern[pid] = rank.min(n_classes - 1);
    }

    let labels: Vec<usize> = row_pattern.iter().map(|&pid| class_of_pattern[pid]).collect();
    let mut class_counts = vec![0usize; n_classes];
    for &c in &labels {
        class_counts[c] += 1;
    }
    let pattern_to_class = patterns
        .into_iter()
        .enumerate()
        .map(|(pid, (key, _))| (key, class_of_pattern[pid]))
        .collect();

    Ok(CollapsedLabeling {
        row_ids: row_ids.to_vec(),
        labels,
        pattern_to_class,
        class_counts,
        n_classes,
    })
}

/// Labels for the frozen rows of `labeling`, read from a row-permuted mask.
/// Patterns never seen in training map to `None`.
pub fn relabel_under_permutation(
    mask_perm: &MissingnessMask,
    labeling: &CollapsedLabeling,
    b_dims: &[usize],
) -> Vec<Option<usize>> {
    labeling
        .row_ids
        .iter()
        .map(|&i| {
            let key = restricted_pattern(mask_perm.row(i), b_dims);
            labeling.pattern_to_class.get(&key).copied()
        })
        .collect()
}

/// Class of every row of `mask` under `labeling`'s pattern map.
///
/// With `M_s` the mask whose row `i` is row `s(i)` of `mask`, the permuted
/// label of row `i` is `table[s(i)]`; this avoids materializing `M_s`.
pub fn class_lookup_table(
    mask: &MissingnessMask,
    labeling: &CollapsedLabeling,
    b_dims: &[usize],
) -> Vec<Option<usize>> {
    let mut key = Vec::with_capacity(b_dims.len());
    (0..mask.n_rows())
        .map(|i| {
            let row = mask.row(i);
            key.clear();
            key.extend(b_dims.iter().map(|&j| row[j]));
            labeling.pattern_to_class.get(key.as_slice()).copied()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    // Rows x = (NA,1,NA,2,4) and y = (NA,NA,NA,1,3).
    fn xy_mask() -> MissingnessMask {
        MissingnessMask::from_bits(2, 5, vec![1, 0, 1, 0, 0, 1, 1, 1, 0, 0]).unwrap()
    }

    #[test]
    fn p2_yields_two_singletons() {
        let mut rng = substream(1, &[]);
        for _ in 0..100 {
            let pair = sample_projection_pair(&mut rng, 2).unwrap();
            assert_eq!(pair.a_dims.len(), 1);
            assert_eq!(pair.b_dims.len(), 1);
            assert_ne!(pair.a_dims[0], pair.b_dims[0]);
        }
    }

    #[test]
    fn p_below_two_rejected() {
        let mut rng = substream(1, &[]);
        assert!(matches!(
            sample_projection_pair(&mut rng, 1),
            Err(PklmError::DimensionTooSmall(1))
        ));
    }

    #[test]
    fn shrink_stops_once_patterns_fit() {
        // Columns 0 and 1 each vary; column 2 is always observed.
        let bits = vec![0, 0, 0, 1, 0, 0, 0, 1, 0, 1, 1, 0];
        let mask = MissingnessMask::from_bits(4, 3, bits).unwrap();
        let rows = [0, 1, 2, 3];
        let mut rng = substream(3, &[]);
        for _ in 0..50 {
            let mut b = vec![0, 1, 2];
            shrink_response_set(&mask, &rows, &mut b, 2, &mut rng).unwrap();
            assert!(!b.is_empty() && b.iter().all(|j| [0, 1, 2].contains(j)));
            assert!(distinct_patterns(&mask, &rows, &b) <= 2);
            assert!(b.windows(2).all(|w| w[0] < w[1]));
        }

        let mut b = vec![0, 1, 2];
        shrink_response_set(&mask, &rows, &mut b, 4, &mut rng).unwrap();
        assert_eq!(b, vec![0, 1, 2]);
    }

    #[test]
    fn shrink_leaves_qualifying_sets_and_rng_alone() {
        let mask = xy_mask();
        let mut b = vec![0, 2];
        let mut rng = substream(4, &[]);
        let mut untouched = substream(4, &[]);
        shrink_response_set(&mask, &[0, 1], &mut b, 2, &mut rng).unwrap();
        assert_eq!(b, vec![0, 2]);
        assert_eq!(rng.random::<u64>(), untouched.random::<u64>());
        assert!(shrink_response_set(&mask, &[0, 1], &mut b, 1, &mut rng).is_err());
    }

    #[test]
    fn class_reduction_parses() {
        assert_eq!("shrink".parse::<ClassReduction>().unwrap(), ClassReduction::Shrink);
        assert_eq!("Merge".parse::<ClassReduction>().unwrap(), ClassReduction::Merge);
        assert!("drop".parse::<ClassReduction>().is_err());
        assert_eq!(ClassReduction::default().to_string(), "shrink");
    }

    #[test]
    fn five_column_pair_attainable() {
        // A = {3,4,5}, B = {2} in 1-based indexing.
        let target = ProjectionPair {
            a_dims: vec![2, 3, 4],
            b_dims: vec![1],
        };
        let mut rng = substream(2, &[]);
        assert!((0..20_000).any(|_| sample_projection_pair(&mut rng, 5).unwrap() == target));
    }

    #[test]
    fn sampled_pairs_are_disjoint_and_bounded() {
        let mut rng = substream(3, &[]);
        for k in 0..10_000 {
            let p = 2 + k % 9;
            let pair = sample_projection_pair(&mut rng, p).unwrap();
            assert!(!pair.a_dims.is_empty() && !pair.b_dims.is_empty());
            assert!(pair.a_dims.len() + pair.b_dims.len() <= p);
            assert!(pair.a_dims.len() < p);
            assert!(pair.a_dims.iter().all(|a| !pair.b_dims.contains(a)));
            assert!(pair.a_dims.iter().chain(&pair.b_dims).all(|&j| j < p));
        }
    }

    #[test]
    fn dimension_membership_in_a_is_symmetric() {
        // p = 3: P(j in A) = 1/2 for every j; chi-square on 3 cells, 2 df.
        let mut rng = substream(4, &[]);
        let draws = 30_000;
        let mut counts = [0usize; 3];
        for _ in 0..draws {
            for j in sample_projection_pair(&mut rng, 3).unwrap().a_dims {
                counts[j] += 1;
            }
        }
        let total: usize = counts.iter().sum();
        let expected = total as f64 / 3.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // 99.9% quantile of chi-square(2) is 13.8.
        assert!(chi2 < 13.8, "chi2 = {chi2}, counts = {counts:?}");
    }

    #[test]
    fn complete_rows_examples() {
        let m = xy_mask();
        assert_eq!(complete_rows(&m, &[3, 4]), vec![0, 1]);
        assert_eq!(complete_rows(&m, &[1]), vec![0]);
        let full = MissingnessMask::from_bits(3, 2, vec![0; 6]).unwrap();
        assert_eq!(complete_rows(&full, &[0, 1]), vec![0, 1, 2]);
    }

    #[test]
    fn shared_b_pattern_is_degenerate() {
        let m = xy_mask();
        assert!(matches!(
            collapse_labels(&m, &[0, 1], &[0, 2], 2),
            Err(PklmError::DegenerateLabeling)
        ));
    }

    #[test]
    fn differing_b_pattern_gives_two_classes() {
        let m = xy_mask();
        let lab = collapse_labels(&m, &[0, 1], &[0, 1], 2).unwrap();
        assert_eq!(lab.n_classes, 2);
        assert_eq!(lab.class_counts, vec![1, 1]);
        assert_ne!(lab.labels[0], lab.labels[1]);
    }

    #[test]
    fn three_complete_rows_give_two_classes() {
        // Four rows with distinct patterns; A = {3,4,5} keeps three of them,
        // B = {2} separates one from the other two.
        let m = MissingnessMask::from_bits(
            4,
            5,
            vec![
                0, 0, 0, 0, 0, //
                0, 1, 0, 0, 0, //
                1, 0, 0, 0, 0, //
                0, 0, 1, 1, 1,
            ],
        )
        .unwrap();
        let rows = complete_rows(&m, &[2, 3, 4]);
        assert_eq!(rows, vec![0, 1, 2]);
        let lab = collapse_labels(&m, &rows, &[1], 5).unwrap();
        assert_eq!(lab.n_classes, 2);
        let mut counts = lab.class_counts.clone();
        counts.sort_unstable();
        assert_eq!(counts, vec![1, 2]);
    }

    #[test]
    fn frequency_ranked_merge() {
        // B-patterns over 7 rows: a a a b b c d; the last column is observed.
        let bits = vec![
            0, 0, 0, 0, 0, 0, 0, 0, 0, // a
            0, 1, 0, 0, 1, 0, // b b
            1, 0, 0, // c
            1, 1, 0, // d
        ];
        let m = MissingnessMask::from_bits(7, 3, bits).unwrap();
        let rows: Vec<usize> = (0..7).collect();
        let lab = collapse_labels(&m, &rows, &[0, 1], 3).unwrap();
        assert_eq!(lab.n_classes, 3);
        assert_eq!(lab.labels, vec![0, 0, 0, 1, 1, 2, 2]);
        assert_eq!(lab.class_counts, vec![3, 2, 2]);
        assert_eq!(lab.pattern_to_class[&vec![1, 0]], 2);
        assert_eq!(lab.pattern_to_class[&vec![1, 1]], 2);

        let unmerged = collapse_labels(&m, &rows, &[0, 1], 10).unwrap();
        assert_eq!(unmerged.n_classes, 4);
        assert_eq!(unmerged.labels, vec![0, 0, 0, 1, 1, 2, 3]);
    }

    #[test]
    fn ties_resolved_by_first_occurrence() {
        let m = MissingnessMask::from_bits(4, 2, vec![0, 1, 0, 0, 0, 0, 0, 1]).unwrap();
        let lab = collapse_labels(&m, &[0, 1, 2, 3], &[1], 2).unwrap();
        assert_eq!(lab.labels, vec![0, 1, 1, 0]);
    }

    #[test]
    fn rejects_max_classes_below_two() {
        let m = xy_mask();
        assert!(matches!(
            collapse_labels(&m, &[0, 1], &[0, 1], 1),
            Err(PklmError::InvalidConfig(_))
        ));
    }

    #[test]
    fn identity_permutation_reproduces_labels() {
        let m = xy_mask();
        let lab = collapse_labels(&m, &[0, 1], &[0, 1], 2).unwrap();
        let relabeled = relabel_under_permutation(&m, &lab, &[0, 1]);
        assert_eq!(relabeled, lab.labels.iter().map(|&c| Some(c)).collect::<Vec<_>>());
    }

    #[test]
    fn swapping_rows_with_equal_b_pattern_keeps_labels() {
        let m = MissingnessMask::from_bits(3, 3, vec![0, 0, 1, 1, 0, 1, 0, 0, 0]).unwrap();
        let rows = complete_rows(&m, &[1]);
        let lab = collapse_labels(&m, &rows, &[2], 2).unwrap();
        let swapped = m.permute_rows(&[1, 0, 2]);
        let relabeled = relabel_under_permutation(&swapped, &lab, &[2]);
        assert_eq!(relabeled, lab.labels.iter().map(|&c| Some(c)).collect::<Vec<_>>());
    }

    #[test]
    fn unseen_pattern_maps_to_no_class() {
        // Rows (A = {0}, B = {1, 2}):
        //   r0: 0 0 0 -> in N_A, B-pattern (0,0)
        //   r1: 0 1 0 -> in N_A, B-pattern (1,0)
        //   r2: 1 0 1 -> not in N_A, B-pattern (0,1)
        // Permutation s = (2, 0, 1): row 0 of M_s is r2, whose pattern (0,1)
        // was never seen among N_A.
        let m = MissingnessMask::from_bits(3, 3, vec![0, 0, 0, 0, 1, 0, 1, 0, 1]).unwrap();
        let rows = complete_rows(&m, &[0]);
        assert_eq!(rows, vec![0, 1]);
        let lab = collapse_labels(&m, &rows, &[1, 2], 2).unwrap();
        // Tie on frequency: (0,0) first seen -> class 0, (1,0) -> class 1.
        assert_eq!(lab.labels, vec![0, 1]);
        let perm = [2, 0, 1];
        let relabeled = relabel_under_permutation(&m.permute_rows(&perm), &lab, &[1, 2]);
        assert_eq!(relabeled, vec![None, Some(0)]);

        let table = class_lookup_table(&m, &lab, &[1, 2]);
        let fast: Vec<_> = lab.row_ids.iter().map(|&i| table[perm[i]]).collect();
        assert_eq!(fast, relabeled);
    }

    #[test]
    fn same_full_pattern_same_label_and_class_bound() {
        let mut rng = substream(9, &[]);
        let n = 60;
        let p = 5;
        let bits: Vec<u8> = (0..n * p)
            .map(|k| u8::from((k * 7919 + k / 3) % 5 == 0))
            .collect();
        let m = MissingnessMask::from_bits(n, p, bits).unwrap();
        for _ in 0..200 {
            let pair = sample_projection_pair(&mut rng, p).unwrap();
            let rows = complete_rows(&m, &pair.a_dims);
            let Ok(lab) = collapse_labels(&m, &rows, &pair.b_dims, usize::MAX) else {
                continue;
            };
            let mut full: HashMap<&[u8], usize> = HashMap::new();
            for (k, &i) in rows.iter().enumerate() {
                let prev = *full.entry(m.row(i)).or_insert(lab.labels[k]);
                assert_eq!(prev, lab.labels[k]);
            }
            assert!(lab.n_classes <= full.len());
            assert_eq!(lab.class_counts.iter().sum::<usize>(), rows.len());
            let identity: Vec<usize> = (0..n).collect();
            let relabeled = relabel_under_permutation(&m.permute_rows(&identity), &lab, &pair.b_dims);
            assert!(relabeled.iter().zip(&lab.labels).all(|(r, &l)| *r == Some(l)));
        }
    }
}

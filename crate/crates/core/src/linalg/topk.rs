use std::cmp::Ordering;

/// Indices of the `k` largest entries of `v`, largest first.
///
/// Ties are broken towards the lower index, so the result is a pure function
/// of the values. `k > v.len()` clamps. Entries must not be NaN.
pub fn topk_select(v: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    topk_in_place(v, k, &mut idx);
    idx
}

/// Reorders the candidate indices in `idx` so that it holds the top
/// `min(k, idx.len())` of them, largest first, same tie-break as
/// [`topk_select`]. Lets hot loops reuse one buffer and pre-filter
/// candidates.
pub fn topk_in_place(v: &[f64], k: usize, idx: &mut Vec<usize>) {
    let k = k.min(idx.len());
    if k == 0 {
        idx.clear();
        return;
    }
    let order =
        |&a: &usize, &b: &usize| -> Ordering { v[b].partial_cmp(&v[a]).expect("NaN in topk_select").then(a.cmp(&b)) };
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, order);
        idx.truncate(k);
    }
    idx.sort_unstable_by(order);
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        assert_eq!(topk_select(&[0.1, 0.5, 0.3], 1), vec![1]);
        let mut all = topk_select(&[0.1, 0.5, 0.3], 3);
        all.sort_unstable();
        assert_eq!(all, vec![0, 1, 2]);
        assert_eq!(topk_select(&[1.0, 1.0, 0.0], 1), vec![0]);
        assert_eq!(topk_select(&[0.0, 2.0, 2.0, 2.0], 2), vec![1, 2]);
        assert_eq!(topk_select(&[1.0], 5), vec![0]);
        assert!(topk_select(&[1.0, 2.0], 0).is_empty());
    }

    fn reference(v: &[f64], k: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[b].partial_cmp(&v[a]).unwrap().then(a.cmp(&b)));
        idx.truncate(k.min(v.len()));
        idx
    }

    proptest! {
        #[test]
        fn size_distinct_and_matches_full_sort(
            v in proptest::collection::vec(prop_oneof![Just(0.0), Just(1.0), -5.0..5.0f64], 0..40),
            k in 0usize..50,
        ) {
            let got = topk_select(&v, k);
            prop_assert_eq!(got.len(), k.min(v.len()));
            let mut dedup = got.clone();
            dedup.sort_unstable();
            dedup.dedup();
            prop_assert_eq!(dedup.len(), got.len());
            prop_assert_eq!(got, reference(&v, k));
        }
    }
}

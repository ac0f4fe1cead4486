//! Integer rounding and robust-statistics helpers shared by the aggregators.
//!
//! All answer arithmetic stays in `i128` so results are identical across
//! platforms. Where a true result would be fractional (means, even-count
//! medians) we round half away from zero; the exact medians and deviation
//! comparisons below avoid rounding entirely by working in doubled or
//! quadrupled units.

/// Divides rounding half away from zero. `den` must be positive.
///
/// `div_round_half_away(7, 2) == 4`, `div_round_half_away(-7, 2) == -4`,
/// `div_round_half_away(1, 3) == 0`.
pub fn div_round_half_away(num: i128, den: i128) -> i128 {
    assert!(den > 0, "denominator must be positive");
    let q = num / den;
    let r = (num % den).abs();
    if 2 * r >= den {
        if num >= 0 {
            q + 1
        } else {
            q - 1
        }
    } else {
        q
    }
}

/// Median rounded to an integer: middle element for odd counts, half-away
/// rounding of the midpoint for even counts. Panics on empty input.
pub fn median_rounded(values: &[i128]) -> i128 {
    let (lo, hi) = median_doubled(values);
    div_round_half_away(lo + hi, 2)
}

/// The two central elements of the sorted input (equal for odd counts).
/// The exact median is their mean; callers needing exactness work with the
/// pair directly.
pub fn median_doubled(values: &[i128]) -> (i128, i128) {
    assert!(!values.is_empty(), "median of empty set");
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    if n % 2 == 1 {
        (sorted[n / 2], sorted[n / 2])
    } else {
        (sorted[n / 2 - 1], sorted[n / 2])
    }
}

/// Mean with half-away rounding. Panics on empty input.
pub fn mean_rounded(values: &[i128]) -> i128 {
    assert!(!values.is_empty(), "mean of empty set");
    let sum: i128 = values.iter().sum();
    div_round_half_away(sum, values.len() as i128)
}

/// Flags values lying outside the `3 * MAD` band around the median, where
/// MAD is the median absolute deviation. Both the median and the MAD are
/// kept as exact rationals (denominators 2 and 4), so no value is ever
/// misclassified by rounding. A MAD of zero flags nothing.
///
/// Returns one bool per input, `true` meaning the value survives.
pub fn mad_survivors(values: &[i128]) -> Vec<bool> {
    assert!(!values.is_empty());
    // Median as p/2, deviations as e_i/2 with e_i = |2x - p|.
    let (lo, hi) = median_doubled(values);
    let p = lo + hi;
    let e: Vec<i128> = values.iter().map(|x| (2 * x - p).abs()).collect();
    // MAD as mad4/4: doubled median of the e_i (which are halves).
    let (elo, ehi) = median_doubled(&e);
    let mad4 = elo + ehi;
    if mad4 == 0 {
        return vec![true; values.len()];
    }
    // dev_i > 3*MAD  <=>  e_i/2 > 3*mad4/4  <=>  2*e_i > 3*mad4.
    e.iter().map(|e_i| 2 * e_i <= 3 * mad4).collect()
}

/// Weighted median: the smallest value whose cumulative weight reaches half
/// the total, computed without division so it is invariant under scaling
/// all weights by a common factor. Panics if total weight is zero or the
/// input is empty.
pub fn weighted_median(pairs: &[(u128, i128)]) -> i128 {
    assert!(!pairs.is_empty(), "weighted median of empty set");
    let mut sorted = pairs.to_vec();
    sorted.sort_unstable_by_key(|&(_, v)| v);
    let total: u128 = sorted.iter().map(|&(w, _)| w).sum();
    assert!(total > 0, "weighted median needs positive total weight");
    let mut cum: u128 = 0;
    for &(w, v) in &sorted {
        cum += w;
        if 2 * cum >= total {
            return v;
        }
    }
    unreachable!("cumulative weight reaches total");
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_away_rounding() {
        assert_eq!(div_round_half_away(7, 2), 4);
        assert_eq!(div_round_half_away(-7, 2), -4);
        assert_eq!(div_round_half_away(5, 2), 3);
        assert_eq!(div_round_half_away(1, 3), 0);
        assert_eq!(div_round_half_away(2, 3), 1);
        assert_eq!(div_round_half_away(-1, 3), 0);
        assert_eq!(div_round_half_away(-2, 3), -1);
        assert_eq!(div_round_half_away(6, 2), 3);
        assert_eq!(div_round_half_away(0, 5), 0);
    }

    #[test]
    fn medians() {
        assert_eq!(median_rounded(&[1, 2, 3]), 2);
        assert_eq!(median_rounded(&[3, 1, 2]), 2);
        assert_eq!(median_rounded(&[1, 2]), 2); // 1.5 away from zero
        assert_eq!(median_rounded(&[1, 4]), 3); // 2.5 away from zero
        assert_eq!(median_rounded(&[-1, -2]), -2);
        assert_eq!(median_rounded(&[5]), 5);
    }

    #[test]
    fn means() {
        assert_eq!(mean_rounded(&[10, 10, 10, 10, 10]), 10);
        assert_eq!(mean_rounded(&[10, 11, 12, 11]), 11);
        assert_eq!(mean_rounded(&[1, 2]), 2);
        assert_eq!(mean_rounded(&[-1, -2]), -2);
    }

    #[test]
    fn mad_band_rejects_documented_outlier() {
        // median 11, MAD 1: only 100 falls outside the 3*MAD band.
        let survivors = mad_survivors(&[10, 11, 12, 11, 100]);
        assert_eq!(survivors, vec![true, true, true, true, false]);
    }

    #[test]
    fn mad_zero_keeps_everything() {
        // MAD of {10,10,10,10,99} is 0: the band would otherwise reject 99.
        let survivors = mad_survivors(&[10, 10, 10, 10, 99]);
        assert!(survivors.iter().all(|&s| s));
    }

    #[test]
    fn mad_boundary_is_inclusive() {
        // {0,0,0,6,6}: median 0, e = {0,0,0,12,12}, MAD4 = 0? No: sorted e
        // {0,0,0,12,12}, middle 0 -> MAD 0, keep all.
        assert!(mad_survivors(&[0, 0, 0, 6, 6]).iter().all(|&s| s));
        // {0,0,2,2,20}: median 2? sorted {0,0,2,2,20} -> median 2,
        // e = {4,4,0,0,36}, sorted {0,0,4,4,36}, MAD4 = 8 (MAD 2).
        // Reject iff 2e > 24: only e=36. Values 0 (e=4) survive.
        assert_eq!(
            mad_survivors(&[0, 0, 2, 2, 20]),
            vec![true, true, true, true, false]
        );
    }

    #[test]
    fn weighted_median_basics() {
        assert_eq!(weighted_median(&[(1, 5)]), 5);
        assert_eq!(weighted_median(&[(1, 1), (1, 2), (1, 3)]), 2);
        // Heavy weight dominates.
        assert_eq!(weighted_median(&[(10, 7), (1, 1), (1, 2), (1, 3)]), 7);
        // Even split: smallest value reaching half wins.
        assert_eq!(weighted_median(&[(1, 1), (1, 9)]), 1);
    }

    #[test]
    fn weighted_median_scale_invariant() {
        let base = [(3u128, 4i128), (2, 10), (5, 7)];
        let scaled: Vec<(u128, i128)> = base.iter().map(|&(w, v)| (w * 17, v)).collect();
        assert_eq!(weighted_median(&base), weighted_median(&scaled));
    }
}

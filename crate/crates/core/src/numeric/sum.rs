//! Pairwise (tree) summation with a shape that depends only on the slice
//! length, so reductions are bit-identical run to run regardless of how the
//! caller chunks its work.

/// Sum `values` by recursive halving. Empty input sums to 0.
pub fn ordered_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        2 => values[0] + values[1],
        n => {
            let mid = n / 2;
            ordered_sum(&values[..mid]) + ordered_sum(&values[mid..])
        }
    }
}

/// Mean via [`ordered_sum`]; 0 for empty input.
pub fn ordered_mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        ordered_sum(values) / values.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_sums_to_zero() {
        assert_eq!(ordered_sum(&[]), 0.0);
    }

    #[test]
    fn small_exact_cases() {
        assert_eq!(ordered_sum(&[1.0, 2.0, 3.0, 4.0]), 10.0);
        assert_eq!(ordered_sum(&[5.0]), 5.0);
        assert_eq!(ordered_mean(&[1.0, 2.0, 3.0, 4.0]), 2.5);
    }

    #[test]
    fn chunked_tree_matches_whole_tree_shape() {
        // The tree shape is a function of length alone: summing the two
        // halves separately and adding reproduces the root split exactly.
        let xs: Vec<f64> = (0..1024).map(|i| ((i * 2654435761u64 as usize) % 997) as f64 * 0.1).collect();
        let whole = ordered_sum(&xs);
        let split = ordered_sum(&xs[..512]) + ordered_sum(&xs[512..]);
        assert_eq!(whole, split);
    }

    #[test]
    fn close_to_exact_on_adversarial_magnitudes() {
        // 1e16 + many 1.0's: naive left fold loses all the ones.
        let mut xs = vec![1.0f64; 4096];
        xs[0] = 1e16;
        let got = ordered_sum(&xs);
        // pairwise keeps the small terms: they accumulate before meeting 1e16
        assert!((got - (1e16 + 4095.0)).abs() <= 512.0, "got {got}");
    }
}

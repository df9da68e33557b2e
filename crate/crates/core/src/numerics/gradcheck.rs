use crate::numerics::{Matrix, Rng};

const STEP: f64 = 1e-6;
const DENOM_FLOOR: f64 = 1e-6;

/// Compares analytic gradients against central finite differences on
/// `probe_count` randomly chosen coordinates and returns the largest relative
/// error `|analytic - numeric| / max(|numeric|, 1e-6)`.
pub fn check_gradient<F>(mut loss: F, params: &[Matrix], analytic: &[Matrix], probe_count: usize, rng: &mut Rng) -> f64
where
    F: FnMut(&[Matrix]) -> f64,
{
    assert_eq!(params.len(), analytic.len(), "one gradient block per parameter block");
    let total: usize = params.iter().map(Matrix::len).sum();
    if total == 0 {
        return 0.0;
    }
    let mut work = params.to_vec();
    let mut worst: f64 = 0.0;
    for _ in 0..probe_count {
        let mut flat = rng.below(total);
        let mut block = 0;
        while flat >= work[block].len() {
            flat -= work[block].len();
            block += 1;
        }
        let original = work[block].as_slice()[flat];
        work[block].as_mut_slice()[flat] = original + STEP;
        let plus = loss(&work);
        work[block].as_mut_slice()[flat] = original - STEP;
        let minus = loss(&work);
        work[block].as_mut_slice()[flat] = original;
        let numeric = (plus - minus) / (2.0 * STEP);
        let a = analytic[block].as_slice()[flat];
        let rel = (a - numeric).abs() / numeric.abs().max(DENOM_FLOOR);
        worst = worst.max(rel);
    }
    worst
}

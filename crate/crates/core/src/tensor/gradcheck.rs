//! Central finite-difference verification of analytic gradients.

use super::Real;

/// Default absolute floor for 64-bit checks: differences below it are
/// counted as zero error. Central differences of an O(1) loss carry
/// roundoff noise around `1e-16 / eps`, so coordinates whose true
/// gradient sits near zero cannot be certified to a relative
/// tolerance at all; the floor is far below any gradient that matters
/// in these models.
pub const FD_ATOL_F64: f64 = 1e-8;

/// Compares `analytic` against central differences of `f` around
/// `params`, returning the largest relative error over coordinates
/// whose absolute difference exceeds `atol`.
///
/// The difference quotient is formed in f64 regardless of `T` so that
/// 32-bit checks are not dominated by quotient rounding. `coords`
/// restricts the check to a subset of coordinates; pass `None` to
/// sweep all of them.
pub fn finite_diff_check<T: Real>(
    params: &mut [T],
    analytic: &[T],
    eps: f64,
    atol: f64,
    coords: Option<&[usize]>,
    mut f: impl FnMut(&[T]) -> T,
) -> f64 {
    assert_eq!(params.len(), analytic.len());
    assert!(eps > 0.0, "eps must be positive");
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..params.len()).collect();
            &all
        }
    };
    let step = T::from_f64c(eps);
    let mut max_rel = 0.0f64;
    for &i in coords {
        let orig = params[i];
        params[i] = orig + step;
        let plus = f(params).to_f64c();
        params[i] = orig - step;
        let minus = f(params).to_f64c();
        params[i] = orig;

        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic[i].to_f64c();
        let diff = (a - numeric).abs();
        if diff <= atol {
            continue;
        }
        let rel = diff / a.abs().max(numeric.abs());
        if rel > max_rel {
            max_rel = rel;
        }
    }
    max_rel
}

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Scalar;

/// Settings for [`finite_diff_check`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FdOptions {
    pub n_probes: usize,
    /// Central-difference step.
    pub h: f64,
    /// Maximum accepted relative error.
    pub tol: f64,
    /// Denominator floor for the relative error, so coordinates whose true
    /// gradient is zero compare absolutely.
    pub abs_floor: f64,
}

impl Default for FdOptions {
    fn default() -> Self {
        Self {
            n_probes: 100,
            h: 1e-5,
            tol: 1e-4,
            abs_floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FdReport {
    pub max_rel_err: f64,
    /// Coordinate with the largest error.
    pub worst_index: Option<usize>,
    pub probed: usize,
    /// Coordinates dropped because the loss is not smooth across `±h`.
    pub kinks_skipped: usize,
    /// Coordinate whose perturbed loss was not finite.
    pub non_finite_at: Option<usize>,
    pub pass: bool,
}

/// Compares `analytic` with central differences of `loss` at randomly
/// chosen coordinates of `params`.
///
/// A coordinate where the estimates at `h` and `h/4` disagree by more
/// than `tol` straddles a non-smooth point; it is skipped and another
/// coordinate is probed in its place.
pub fn finite_diff_check<T, F, R>(
    mut loss: F,
    params: &[T],
    analytic: &[T],
    opts: &FdOptions,
    rng: &mut R,
) -> FdReport
where
    T: Scalar,
    F: FnMut(&[T]) -> T,
    R: Rng + ?Sized,
{
    assert_eq!(params.len(), analytic.len(), "gradient length mismatch");
    let mut order: Vec<usize> = (0..params.len()).collect();
    order.shuffle(rng);

    let mut report = FdReport {
        max_rel_err: 0.0,
        worst_index: None,
        probed: 0,
        kinks_skipped: 0,
        non_finite_at: None,
        pass: true,
    };
    let mut x = params.to_vec();

    let mut central = |x: &mut Vec<T>, i: usize, h: f64| -> Option<f64> {
        let orig = x[i];
        x[i] = orig + T::of(h);
        let plus = loss(x).as_f64();
        x[i] = orig - T::of(h);
        let minus = loss(x).as_f64();
        x[i] = orig;
        (plus.is_finite() && minus.is_finite()).then(|| (plus - minus) / (2.0 * h))
    };
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(opts.abs_floor);

    for &i in &order {
        if report.probed >= opts.n_probes {
            break;
        }
        let a = analytic[i].as_f64();
        let Some(n1) = central(&mut x, i, opts.h) else {
            report.non_finite_at = Some(i);
            report.pass = false;
            return report;
        };
        let mut err = rel(a, n1);
        if err > opts.tol {
            let Some(n2) = central(&mut x, i, opts.h / 4.0) else {
                report.non_finite_at = Some(i);
                report.pass = false;
                return report;
            };
            if rel(n1, n2) > opts.tol {
                report.kinks_skipped += 1;
                continue;
            }
            err = err.min(rel(a, n2));
        }
        report.probed += 1;
        if err > report.max_rel_err || report.worst_index.is_none() {
            report.max_rel_err = report.max_rel_err.max(err);
            report.worst_index = Some(i);
        }
    }
    report.pass = report.max_rel_err <= opts.tol && report.probed > 0;
    report
}

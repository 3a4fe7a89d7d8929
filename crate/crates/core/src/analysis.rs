//! Empirical probes of the coefficient bounds and of the eps-domain shape.
//!
//! Nothing here proves convergence: the scans run ratio tests on truncated
//! tables and report proxies with the truncation order attached. What they
//! are good for is catching scaling bugs (a coefficient growing faster than
//! exponentially in the order, an |eps| power below the guaranteed one) and
//! reproducing the qualitative domain geometry — shrinking radius toward the
//! imaginary axis, a radial cutoff that grows with the parabola steepness.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::problem::{Mode, ProblemSpec};
use crate::series::{coeff_via_recursion, CoefficientTable};

/// Log-linear fit of weighted coefficient maxima against order and log|eps|.
#[derive(Clone, Debug)]
pub struct BoundFit {
    pub xi: f64,
    /// Per-order growth factor (exp of the order slope).
    pub a1: f64,
    /// Fitted exponent of |eps|.
    pub eps_exponent: f64,
    pub intercept: f64,
    /// Smallest and largest order contributing rows.
    pub orders: (usize, usize),
    /// Per-row residuals of the fit, in row order (tables outer, orders inner).
    pub residuals: Vec<f64>,
    /// Only one order carried data (e.g. a linear nonlinearity), so the
    /// per-order growth is unidentifiable and `a1` is reported as 1.
    pub degenerate: bool,
    /// Orders whose isolated |eps| exponent falls below 1 — the bound
    /// guarantees at least 1, so entries here indicate a defect.
    pub low_eps_exponent_orders: Vec<usize>,
}

struct FitRow {
    order: usize,
    ln_eps: f64,
    y: f64,
}

fn weighted_order_max(table: &CoefficientTable, k: usize, xi: f64) -> f64 {
    table
        .order_slice(k)
        .map(|slice| {
            slice
                .iter()
                .map(|(nu, u)| u.norm() * (xi * nu.l1() as f64 / 2.0).exp())
                .fold(0.0, f64::max)
        })
        .unwrap_or(0.0)
}

fn solve_linear(mut m: Vec<Vec<f64>>, mut rhs: Vec<f64>) -> Option<Vec<f64>> {
    let n = rhs.len();
    let scale = m
        .iter()
        .flat_map(|row| row.iter())
        .fold(0.0f64, |acc, &v| acc.max(v.abs()));
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .unwrap();
        if m[pivot_row][col].abs() <= 1e-12 * scale.max(1.0) {
            return None;
        }
        m.swap(col, pivot_row);
        rhs.swap(col, pivot_row);
        let pivot = m[col].clone();
        for row in col + 1..n {
            let factor = m[row][col] / pivot[col];
            for (entry, &p) in m[row][col..].iter_mut().zip(&pivot[col..]) {
                *entry -= factor * p;
            }
            rhs[row] -= factor * rhs[col];
        }
    }
    let mut solution = vec![0.0; n];
    for row in (0..n).rev() {
        let mut value = rhs[row];
        for col in row + 1..n {
            value -= m[row][col] * solution[col];
        }
        solution[row] = value / m[row][row];
    }
    Some(solution)
}

/// Least-squares fit of `log(max_nu |u^(k)_nu| e^{xi |nu|/2})` against the
/// order k and log|eps|, across a family of tables at different eps.
pub fn fit_bound(tables: &[CoefficientTable], xi: f64) -> Result<BoundFit> {
    if xi.is_nan() || xi <= 0.0 {
        return Err(Error::InvalidSpec(format!("fit needs xi > 0, got {xi}")));
    }
    let mut rows: Vec<FitRow> = Vec::new();
    for table in tables {
        let eps_norm = table.eps().norm();
        if eps_norm == 0.0 {
            continue;
        }
        for k in table.nonzero_orders() {
            rows.push(FitRow {
                order: k,
                ln_eps: eps_norm.ln(),
                y: weighted_order_max(table, k, xi).ln(),
            });
        }
    }
    if rows.len() < 4 {
        return Err(Error::InsufficientData {
            reason: format!("{} usable data points; the fit needs at least 4", rows.len()),
        });
    }
    let mut distinct_orders: Vec<usize> = rows.iter().map(|r| r.order).collect();
    distinct_orders.sort_unstable();
    distinct_orders.dedup();
    let mut distinct_eps: Vec<f64> = rows.iter().map(|r| r.ln_eps).collect();
    distinct_eps.sort_by(f64::total_cmp);
    distinct_eps.dedup();
    if distinct_eps.len() < 2 {
        return Err(Error::InsufficientData {
            reason: "all tables share one |eps|; the eps exponent is unidentifiable".into(),
        });
    }

    let degenerate = distinct_orders.len() < 2;
    let n = rows.len() as f64;
    let (coefficients, predictions): (Vec<f64>, Vec<f64>) = if degenerate {
        let (sl, sy, sll, sly) = rows.iter().fold((0.0, 0.0, 0.0, 0.0), |acc, r| {
            (acc.0 + r.ln_eps, acc.1 + r.y, acc.2 + r.ln_eps * r.ln_eps, acc.3 + r.ln_eps * r.y)
        });
        let solution = solve_linear(vec![vec![n, sl], vec![sl, sll]], vec![sy, sly])
            .ok_or_else(|| Error::InsufficientData {
                reason: "degenerate normal equations in the two-parameter fit".into(),
            })?;
        let predictions =
            rows.iter().map(|r| solution[0] + solution[1] * r.ln_eps).collect();
        (vec![solution[0], 0.0, solution[1]], predictions)
    } else {
        let mut s = [[0.0f64; 3]; 3];
        let mut b = [0.0f64; 3];
        for r in &rows {
            let x = [1.0, r.order as f64, r.ln_eps];
            for i in 0..3 {
                for j in 0..3 {
                    s[i][j] += x[i] * x[j];
                }
                b[i] += x[i] * r.y;
            }
        }
        let solution = solve_linear(
            s.iter().map(|row| row.to_vec()).collect(),
            b.to_vec(),
        )
        .ok_or_else(|| Error::InsufficientData {
            reason: "degenerate normal equations in the three-parameter fit".into(),
        })?;
        let predictions = rows
            .iter()
            .map(|r| solution[0] + solution[1] * r.order as f64 + solution[2] * r.ln_eps)
            .collect();
        (solution, predictions)
    };

    let residuals: Vec<f64> =
        rows.iter().zip(&predictions).map(|(r, p)| r.y - p).collect();

    // Isolated |eps| exponent per order: slope of y against ln|eps| within
    // the rows of that order alone.
    let mut low_eps_exponent_orders = Vec::new();
    for &k in &distinct_orders {
        let subset: Vec<&FitRow> = rows.iter().filter(|r| r.order == k).collect();
        let m = subset.len() as f64;
        let mean_l = subset.iter().map(|r| r.ln_eps).sum::<f64>() / m;
        let mean_y = subset.iter().map(|r| r.y).sum::<f64>() / m;
        let var: f64 = subset.iter().map(|r| (r.ln_eps - mean_l).powi(2)).sum();
        if var == 0.0 {
            continue;
        }
        let cov: f64 =
            subset.iter().map(|r| (r.ln_eps - mean_l) * (r.y - mean_y)).sum();
        if cov / var < 1.0 - 1e-9 {
            low_eps_exponent_orders.push(k);
        }
    }

    Ok(BoundFit {
        xi,
        a1: coefficients[1].exp(),
        eps_exponent: coefficients[2],
        intercept: coefficients[0],
        orders: (distinct_orders[0], *distinct_orders.last().unwrap()),
        residuals,
        degenerate,
        low_eps_exponent_orders,
    })
}

/// Order-wise ratio test on a truncated table: geometric rates between the
/// top consecutive nonzero orders must sit below 1. With at most one nonzero
/// order there is nothing to test and the table passes.
fn ratio_test_passes(table: &CoefficientTable) -> bool {
    let orders = table.nonzero_orders();
    if orders.len() < 2 {
        return true;
    }
    let pairs = orders.windows(2).rev().take(2);
    for pair in pairs {
        let (a, b) = (pair[0], pair[1]);
        let rate = (table.max_abs(b) / table.max_abs(a)).powf(1.0 / (b - a) as f64);
        // NaN rates (0/0 from an all-zero pair) fail the test too.
        if rate >= 1.0 || rate.is_nan() {
            return false;
        }
    }
    true
}

fn check_radius_grid(radii: &[f64]) -> Result<()> {
    if radii.is_empty() {
        return Err(Error::InvalidSpec("the radius grid is empty".into()));
    }
    if radii.iter().any(|&r| r.is_nan() || r <= 0.0) || radii.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidSpec(
            "radius grid must be positive and strictly increasing".into(),
        ));
    }
    Ok(())
}

fn passes_at(spec: &ProblemSpec, eps: Complex64, k_max: usize) -> Result<bool> {
    match coeff_via_recursion(spec, eps, k_max) {
        Ok(table) => Ok(ratio_test_passes(&table)),
        Err(Error::SingularPropagator { .. }) => Ok(false),
        Err(other) => Err(other),
    }
}

/// Largest grid radius r such that the ratio test passes at every grid point
/// up to r along the ray eps = r e^{i arg}. Radii beyond the first failure
/// are not credited even if the test happens to pass again (resonance gaps
/// make the raw pass set non-monotone; the cumulative rule keeps the
/// estimate conservative and monotone). Returns 0 if the first point fails.
pub fn ray_radius(
    spec: &ProblemSpec,
    arg_eps: f64,
    k_max: usize,
    radii: &[f64],
) -> Result<f64> {
    if k_max < 4 {
        return Err(Error::InvalidSpec("ray scans need k_max >= 4".into()));
    }
    check_radius_grid(radii)?;
    let mut best = 0.0;
    for &r in radii {
        if !passes_at(spec, Complex64::from_polar(r, arg_eps), k_max)? {
            break;
        }
        best = r;
    }
    Ok(best)
}

/// Ratio-test proxies for the eps domain: per-ray radii and/or a radial
/// cutoff per parabola steepness, with the truncation order attached.
#[derive(Clone, Debug)]
pub struct DomainScan {
    /// (arg eps, largest passing radius) per scanned ray.
    pub rays: Vec<(f64, f64)>,
    /// (B, largest passing radial cutoff) per scanned steepness.
    pub b_grid: Vec<(f64, f64)>,
    /// Slope of log eps0 against log B, when fitted.
    pub alpha_hat: Option<f64>,
    /// Standard error of that slope.
    pub alpha_stderr: Option<f64>,
    /// Truncation order behind every ratio test in this scan.
    pub k_max: usize,
}

/// 64 directions covering [0, 2 pi).
pub fn default_angles() -> Vec<f64> {
    (0..64).map(|i| std::f64::consts::TAU * i as f64 / 64.0).collect()
}

/// 64 radii log-spaced over 1e-4 ..= 0.9. The top end sits past the first
/// imaginary-axis blow-up of the 1-d example so a default rays scan actually
/// resolves the direction dependence instead of saturating.
pub fn default_radii() -> Vec<f64> {
    log_spaced(64, 1e-4, 0.9)
}

/// `count` points log-spaced over lo ..= hi, endpoints exact.
pub fn log_spaced(count: usize, lo: f64, hi: f64) -> Vec<f64> {
    assert!(count >= 2 && lo > 0.0 && hi > lo);
    let (lln, hln) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| {
            if i == 0 {
                lo
            } else if i == count - 1 {
                hi
            } else {
                (lln + (hln - lln) * i as f64 / (count - 1) as f64).exp()
            }
        })
        .collect()
}

/// Ray sweep: ray_radius over each angle (parallel over rays, output in
/// input order).
pub fn scan_rays(
    spec: &ProblemSpec,
    k_max: usize,
    angles: &[f64],
    radii: &[f64],
) -> Result<DomainScan> {
    if angles.is_empty() {
        return Err(Error::InvalidSpec("the angle grid is empty".into()));
    }
    let rays: Result<Vec<(f64, f64)>> = angles
        .par_iter()
        .map(|&arg| ray_radius(spec, arg, k_max, radii).map(|r| (arg, r)))
        .collect();
    Ok(DomainScan { rays: rays?, b_grid: Vec::new(), alpha_hat: None, alpha_stderr: None, k_max })
}

/// Boundary points of the parabolic domain with steepness b at radial size r:
/// |Re eps| = b (Im eps)^2 and |eps| = r.
fn parabola_boundary_points(b: f64, r: f64) -> [Complex64; 2] {
    let t2 = ((1.0 + 4.0 * b * b * r * r).sqrt() - 1.0) / (2.0 * b * b);
    let t = t2.sqrt();
    let x = b * t2;
    [Complex64::new(x, t), Complex64::new(-x, t)]
}

/// Largest cumulative radial cutoff whose parabola boundary points pass the
/// ratio test, for each steepness B, plus a log-log fit of cutoff against B.
pub fn scan_eps0_of_b(
    spec: &ProblemSpec,
    b_grid: &[f64],
    k_max: usize,
    radii: &[f64],
) -> Result<DomainScan> {
    if k_max < 4 {
        return Err(Error::InvalidSpec("domain scans need k_max >= 4".into()));
    }
    if b_grid.is_empty() || b_grid.iter().any(|&b| !(b > 0.0 && b <= 1.0)) {
        return Err(Error::InvalidSpec("B grid entries must lie in (0, 1]".into()));
    }
    check_radius_grid(radii)?;

    let cutoffs: Result<Vec<(f64, f64)>> = b_grid
        .par_iter()
        .map(|&b| {
            let mut best = 0.0;
            'radius: for &r in radii {
                for eps in parabola_boundary_points(b, r) {
                    if !passes_at(spec, eps, k_max)? {
                        break 'radius;
                    }
                }
                best = r;
            }
            Ok((b, best))
        })
        .collect();
    let b_grid_results = cutoffs?;

    let points: Vec<(f64, f64)> = b_grid_results
        .iter()
        .filter(|&&(_, eps0)| eps0 > 0.0)
        .map(|&(b, eps0)| (b.ln(), eps0.ln()))
        .collect();
    if points.len() < 2 {
        return Err(Error::InsufficientData {
            reason: "fewer than two positive cutoffs; cannot fit an exponent".into(),
        });
    }
    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let var: f64 = points.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    let (alpha_hat, alpha_stderr) = if var > 0.0 {
        let cov: f64 = points.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
        let slope = cov / var;
        let stderr = if points.len() > 2 {
            let ss_res: f64 = points
                .iter()
                .map(|p| {
                    let predicted = mean_y + slope * (p.0 - mean_x);
                    (p.1 - predicted).powi(2)
                })
                .sum();
            Some((ss_res / (n - 2.0) / var).sqrt())
        } else {
            None
        };
        (Some(slope), stderr)
    } else {
        (None, None)
    };

    Ok(DomainScan {
        rays: Vec::new(),
        b_grid: b_grid_results,
        alpha_hat,
        alpha_stderr,
        k_max,
    })
}

/// Largest stored momentum over a table family — the ball radius a divisor
/// constant must cover to classify these coefficients' trees.
pub fn max_momentum_radius(tables: &[CoefficientTable]) -> i64 {
    tables.iter().map(CoefficientTable::momentum_radius).max().unwrap_or(0)
}

/// Convenience: the momenta a table stores at its top order.
pub fn top_order_momenta(table: &CoefficientTable) -> Vec<Mode> {
    table
        .order_slice(table.max_order())
        .map(|slice| slice.keys().cloned().collect())
        .unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{ForcingSpectrum, FrequencyVector, NonlinearityTaylor};

    fn mode(components: &[i32]) -> Mode {
        Mode::new(components.to_vec())
    }

    fn spec_1d(coeffs: Vec<f64>) -> ProblemSpec {
        let half = Complex64::new(0.5, 0.0);
        ProblemSpec::new(
            FrequencyVector::new(vec![1.0]).unwrap(),
            ForcingSpectrum::new(
                1,
                vec![(mode(&[1]), half), (mode(&[-1]), half)],
                0.0,
                1.0,
            )
            .unwrap(),
            NonlinearityTaylor::new(0.0, coeffs).unwrap(),
        )
        .unwrap()
    }

    fn quadratic() -> ProblemSpec {
        spec_1d(vec![0.0, 1.0, 1.0])
    }

    fn tables_at(spec: &ProblemSpec, magnitudes: &[f64], k_max: usize) -> Vec<CoefficientTable> {
        magnitudes
            .iter()
            .map(|&m| coeff_via_recursion(spec, Complex64::new(m, 0.0), k_max).unwrap())
            .collect()
    }

    #[test]
    fn first_order_eps_exponent_is_one() {
        let spec = spec_1d(vec![0.0, 1.0]);
        let tables = tables_at(&spec, &[1e-3, 2e-3, 4e-3, 8e-3, 1.6e-2], 4);
        let fit = fit_bound(&tables, 1.0).unwrap();
        assert!(fit.degenerate);
        assert_eq!(fit.a1, 1.0);
        assert!((fit.eps_exponent - 1.0).abs() <= 1e-3, "exponent {}", fit.eps_exponent);
        assert!(fit.low_eps_exponent_orders.is_empty());
    }

    #[test]
    fn quadratic_fit_sees_healthy_exponents() {
        let spec = quadratic();
        let tables = tables_at(&spec, &[1e-3, 2e-3, 4e-3, 8e-3, 1.6e-2], 5);
        let fit = fit_bound(&tables, 1.0).unwrap();
        assert!(!fit.degenerate);
        assert!(fit.a1.is_finite() && fit.a1 > 0.0);
        assert!(fit.eps_exponent >= 1.0 && fit.eps_exponent <= 3.5);
        assert!(fit.low_eps_exponent_orders.is_empty(), "{:?}", fit.low_eps_exponent_orders);
        assert_eq!(fit.orders, (1, 5));
        assert_eq!(fit.residuals.len(), 15);
    }

    #[test]
    fn fit_requires_eps_variation() {
        let spec = quadratic();
        let tables = tables_at(&spec, &[1e-2, 1e-2], 5);
        assert!(matches!(
            fit_bound(&tables, 1.0),
            Err(Error::InsufficientData { .. })
        ));
        let too_few = tables_at(&spec, &[1e-2], 3);
        assert!(matches!(
            fit_bound(&too_few, 1.0),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn ray_radius_is_even_in_the_angle() {
        let spec = quadratic();
        let radii = log_spaced(12, 1e-3, 0.3);
        for arg in [0.0, 0.7, std::f64::consts::FRAC_PI_2] {
            let plus = ray_radius(&spec, arg, 5, &radii).unwrap();
            let minus = ray_radius(&spec, -arg, 5, &radii).unwrap();
            assert_eq!(plus, minus, "arg = {arg}");
        }
    }

    #[test]
    fn linear_nonlinearity_passes_until_singularities() {
        let spec = spec_1d(vec![0.0, 1.0]);
        let radii = log_spaced(10, 1e-3, 0.1);
        let radius = ray_radius(&spec, 0.0, 4, &radii).unwrap();
        assert_eq!(radius, *radii.last().unwrap());
    }

    #[test]
    fn imaginary_ray_is_shorter_than_real() {
        let spec = quadratic();
        let radii = log_spaced(24, 1e-3, 0.9);
        let real = ray_radius(&spec, 0.0, 6, &radii).unwrap();
        let imaginary = ray_radius(&spec, std::f64::consts::FRAC_PI_2, 6, &radii).unwrap();
        assert!(
            imaginary < real,
            "imaginary ray {imaginary} not shorter than real ray {real}"
        );
    }

    #[test]
    fn steeper_parabolas_extend_the_cutoff() {
        let spec = quadratic();
        let radii = log_spaced(16, 1e-3, 0.5);
        let scan =
            scan_eps0_of_b(&spec, &[0.2, 0.5, 1.0], 6, &radii).unwrap();
        assert_eq!(scan.b_grid.len(), 3);
        for pair in scan.b_grid.windows(2) {
            assert!(pair[1].1 >= pair[0].1, "{:?}", scan.b_grid);
        }
        assert!(scan.alpha_hat.is_some());
        assert!(scan.alpha_hat.unwrap().is_finite());
        assert_eq!(scan.k_max, 6);
    }

    #[test]
    fn ray_scan_covers_requested_angles() {
        let spec = quadratic();
        let angles = [0.0, std::f64::consts::FRAC_PI_2, std::f64::consts::PI];
        let radii = log_spaced(8, 1e-3, 0.2);
        let scan = scan_rays(&spec, 5, &angles, &radii).unwrap();
        assert_eq!(scan.rays.len(), 3);
        assert_eq!(scan.rays[0].0, 0.0);
        // Real rays agree in both directions for symmetric data.
        assert_eq!(scan.rays[0].1, scan.rays[2].1);
    }

    #[test]
    fn grid_validation() {
        let spec = quadratic();
        assert!(matches!(
            ray_radius(&spec, 0.0, 6, &[]),
            Err(Error::InvalidSpec(_))
        ));
        assert!(matches!(
            ray_radius(&spec, 0.0, 6, &[0.2, 0.1]),
            Err(Error::InvalidSpec(_))
        ));
        assert!(matches!(
            ray_radius(&spec, 0.0, 2, &[0.1]),
            Err(Error::InvalidSpec(_))
        ));
        assert!(matches!(
            scan_eps0_of_b(&spec, &[1.5], 6, &[0.1]),
            Err(Error::InvalidSpec(_))
        ));
    }
}

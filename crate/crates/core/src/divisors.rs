//! Small divisors, the propagator symbol, and the complex-eps domains.
//!
//! The linearization of the equation at mode `nu` divides by
//!
//! ```text
//! D(eps, s) = -eps s^2 + i s + eps a,    s = omega . nu,
//! ```
//!
//! so everything here is about how small `|D|` and `|omega . nu|` can get:
//! the dyadic minima `alpha_n`/`beta_n` and their Bryuno-type partial sums,
//! the parabolic domains where `|D|` admits a uniform floor, and the constant
//! trading a small divisor against the l1 size of the modes that produced it.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::problem::{ForcingSpectrum, FrequencyVector, Mode};

/// Cap on lattice points any single enumeration is allowed to visit.
pub const DEFAULT_LATTICE_BUDGET: u128 = 10_000_000;

/// D(eps, s) = -eps s^2 + i s + eps a.
pub fn d_symbol(eps: Complex64, s: f64, a: f64) -> Complex64 {
    -eps * (s * s) + Complex64::new(0.0, s) + eps * a
}

/// Number of lattice points with |nu|_1 <= radius in Z^dim, as a float
/// (exact until far beyond any usable budget).
fn lattice_ball_count(dim: usize, radius: f64) -> f64 {
    // sum_j 2^j C(dim, j) C(radius, j)
    let mut total = 0.0;
    let mut binom_dim = 1.0; // C(dim, j)
    let mut pow2 = 1.0;
    for j in 0..=dim {
        let mut binom_radius = 1.0; // C(radius, j)
        for i in 0..j {
            binom_radius *= (radius - i as f64) / (i as f64 + 1.0);
        }
        if radius >= j as f64 {
            total += pow2 * binom_dim * binom_radius;
        }
        binom_dim *= (dim - j) as f64 / (j as f64 + 1.0);
        pow2 *= 2.0;
    }
    total
}

fn check_budget(dim: usize, radius: f64, budget: u128) -> Result<()> {
    let needed = lattice_ball_count(dim, radius);
    if needed > budget as f64 {
        return Err(Error::BudgetExceeded { needed: needed as u128, budget });
    }
    Ok(())
}

/// Visit every nu in Z^dim with |nu|_1 <= radius (the origin included).
fn for_each_lattice_point(dim: usize, radius: i64, visit: &mut impl FnMut(&[i32])) {
    let mut point = vec![0i32; dim];
    fn recurse(point: &mut Vec<i32>, index: usize, remaining: i64, visit: &mut impl FnMut(&[i32])) {
        if index == point.len() {
            visit(point);
            return;
        }
        for c in -remaining..=remaining {
            point[index] = c as i32;
            recurse(point, index + 1, remaining - c.abs(), visit);
        }
        point[index] = 0;
    }
    recurse(&mut point, 0, radius, visit);
}

fn ceil_log2(value: i64) -> u32 {
    debug_assert!(value >= 1);
    let mut n = 0;
    while (1i64 << n) < value {
        n += 1;
    }
    n
}

/// alpha_n = min { |omega . nu| : 0 < |nu|_1 <= 2^n }, by exhaustive
/// enumeration of the l1 ball.
pub fn alpha_n(omega: &FrequencyVector, n: u32) -> Result<f64> {
    let minima = alpha_minima(omega, n)?;
    Ok(minima[n as usize])
}

/// alpha_m for every m = 0..=n from a single pass over the largest ball.
fn alpha_minima(omega: &FrequencyVector, n: u32) -> Result<Vec<f64>> {
    let dim = omega.dim();
    let radius_f = (2.0f64).powi(n as i32);
    check_budget(dim, radius_f, DEFAULT_LATTICE_BUDGET)?;
    let radius = radius_f as i64;

    // Minimum per dyadic scale: scale_min[m] covers 2^(m-1) < |nu|_1 <= 2^m.
    let mut scale_min = vec![f64::INFINITY; n as usize + 1];
    for_each_lattice_point(dim, radius, &mut |nu| {
        let l1: i64 = nu.iter().map(|&c| (c as i64).abs()).sum();
        if l1 == 0 {
            return;
        }
        let s = nu
            .iter()
            .zip(omega.components())
            .map(|(&c, &w)| c as f64 * w)
            .sum::<f64>()
            .abs();
        let m = ceil_log2(l1) as usize;
        if s < scale_min[m] {
            scale_min[m] = s;
        }
    });
    // Prefix minima turn per-scale minima into ball minima.
    let mut minima = scale_min;
    for m in 1..minima.len() {
        minima[m] = minima[m].min(minima[m - 1]);
    }
    Ok(minima)
}

/// beta_n = min over the forcing support restricted to |nu|_1 <= 2^n.
///
/// When the ball misses the support entirely, the minimum is taken at the
/// first larger dyadic scale that does contain a supported mode and the
/// result is flagged.
pub fn beta_n(omega: &FrequencyVector, forcing: &ForcingSpectrum, n: u32) -> Result<(f64, bool)> {
    if forcing.is_empty() {
        return Err(Error::EmptySupport);
    }
    let min_l1 = forcing.modes().keys().map(Mode::l1).min().unwrap();
    let effective_n = n.max(ceil_log2(min_l1));
    let flagged = effective_n != n;
    let radius = 1i64 << effective_n;
    let value = forcing
        .modes()
        .keys()
        .filter(|nu| nu.l1() <= radius)
        .map(|nu| omega.dot(nu).abs())
        .fold(f64::INFINITY, f64::min);
    Ok((value, flagged))
}

/// eps_n = 2^-n log(1 / beta_n).
pub fn eps_n(omega: &FrequencyVector, forcing: &ForcingSpectrum, n: u32) -> Result<f64> {
    let (beta, _) = beta_n(omega, forcing, n)?;
    Ok((2.0f64).powi(-(n as i32)) * (1.0 / beta).ln())
}

/// Partial Bryuno sum: sum_{m=0}^{n} 2^-m log(1 / alpha_m).
pub fn bruno_partial(omega: &FrequencyVector, n: u32) -> Result<f64> {
    let minima = alpha_minima(omega, n)?;
    let mut total = 0.0;
    for (m, &alpha) in minima.iter().enumerate() {
        if alpha == 0.0 {
            return Err(Error::InvalidSpec(format!(
                "omega is resonant at scale 2^{m}; the Bryuno sum is undefined"
            )));
        }
        total += (2.0f64).powi(-(m as i32)) * (1.0 / alpha).ln();
    }
    Ok(total)
}

/// One row of the dyadic divisor profile.
#[derive(Clone, Debug)]
pub struct DivisorRow {
    pub n: u32,
    pub alpha: f64,
    pub beta: f64,
    pub beta_flagged: bool,
    pub eps_n: f64,
    /// Bryuno partial sum up to this scale.
    pub bruno_partial: f64,
}

#[derive(Clone, Debug)]
pub struct DivisorProfile {
    pub rows: Vec<DivisorRow>,
}

/// Profile rows for n = 0..=n_max from one enumeration pass.
pub fn divisor_profile(
    omega: &FrequencyVector,
    forcing: &ForcingSpectrum,
    n_max: u32,
) -> Result<DivisorProfile> {
    let minima = alpha_minima(omega, n_max)?;
    let mut rows = Vec::with_capacity(n_max as usize + 1);
    let mut bruno = 0.0;
    for n in 0..=n_max {
        let alpha = minima[n as usize];
        if alpha == 0.0 {
            return Err(Error::InvalidSpec(format!(
                "omega is resonant at scale 2^{n}; the Bryuno sum is undefined"
            )));
        }
        bruno += (2.0f64).powi(-(n as i32)) * (1.0 / alpha).ln();
        let (beta, beta_flagged) = beta_n(omega, forcing, n)?;
        let eps = (2.0f64).powi(-(n as i32)) * (1.0 / beta).ln();
        rows.push(DivisorRow { n, alpha, beta, beta_flagged, eps_n: eps, bruno_partial: bruno });
    }
    Ok(DivisorProfile { rows })
}

/// Pair of open disks |Re(1/eps)| > 1/(2R): eps strictly inside the two disks
/// of radius R tangent to the imaginary axis at the origin.
pub fn in_c_r(eps: Complex64, r: f64) -> Result<bool> {
    if r.is_nan() || r <= 0.0 {
        return Err(Error::InvalidSpec(format!("disk radius must be positive, got {r}")));
    }
    if eps == Complex64::new(0.0, 0.0) {
        return Err(Error::ZeroEps);
    }
    Ok((1.0 / eps).re.abs() > 1.0 / (2.0 * r))
}

/// Parabolic domain |Re eps| >= B (Im eps)^2 with 0 < |eps| < 2 eps0.
pub fn in_omega(eps: Complex64, b: f64, eps0: f64) -> bool {
    let norm = eps.norm();
    norm > 0.0 && norm < 2.0 * eps0 && eps.re.abs() >= b * eps.im * eps.im
}

/// Radial/steepness parameters tying the disks C_R to a parabolic domain.
#[derive(Clone, Copy, Debug)]
pub struct DomainParams {
    pub r: f64,
    pub b: f64,
    pub eps0: f64,
}

impl DomainParams {
    /// The disks C_R sit inside the parabolic domain with cutoff R exactly
    /// when 2 R B < 1.
    pub fn inclusion_holds(&self) -> bool {
        2.0 * self.r * self.b < 1.0
    }
}

/// A complex eps together with its domain memberships.
#[derive(Clone, Copy, Debug)]
pub struct DomainPoint {
    pub eps: Complex64,
    pub in_c_r: bool,
    pub in_omega: bool,
}

impl DomainPoint {
    pub fn classify(eps: Complex64, params: &DomainParams) -> Result<DomainPoint> {
        Ok(DomainPoint {
            eps,
            in_c_r: in_c_r(eps, params.r)?,
            in_omega: in_omega(eps, params.b, params.eps0),
        })
    }
}

/// Uniform lower bound for the propagator denominator on the parabolic
/// domain with steepness B and radial cutoff eps1:
///
/// ```text
/// |D(eps, s)| >= kappa0 * max { min(1, s^2), |eps|^2 }    for real s.
/// ```
#[derive(Clone, Copy, Debug)]
pub struct DivisorFloor {
    pub kappa0: f64,
    pub a: f64,
    pub b_steepness: f64,
    pub eps1: f64,
}

/// Floor constant and its guaranteed radial cutoff for given a and B.
///
/// kappa0 = min { 1/8, B/18, B/(8|a|), |a|/8, |a|B/4, sqrt(|a|)/2 }. The
/// cutoff eps1 is chosen so the three estimates behind the bound hold for
/// every 0 < Im eps <= eps1 (re-verified numerically on a grid; eps1 is
/// halved in the never-observed case a condition fails).
pub fn divisor_floor(a: f64, b: f64) -> Result<DivisorFloor> {
    if a == 0.0 || !a.is_finite() {
        return Err(Error::InvalidSpec(format!("floor needs a nonzero finite a, got {a}")));
    }
    if !b.is_finite() || b <= 0.0 {
        return Err(Error::InvalidSpec(format!("floor needs a positive finite B, got {b}")));
    }
    let abs_a = a.abs();
    let kappa0 = [
        0.125,
        b / 18.0,
        b / (8.0 * abs_a),
        abs_a / 8.0,
        abs_a * b / 4.0,
        abs_a.sqrt() / 2.0,
    ]
    .into_iter()
    .fold(f64::INFINITY, f64::min);

    let mut eps1 = [(18.0 * abs_a).powf(-0.5), 1.0 / (4.0 * abs_a), 0.1]
        .into_iter()
        .fold(f64::INFINITY, f64::min)
        / 2.0;
    while !floor_conditions_hold(a, eps1) {
        eps1 *= 0.5;
        assert!(eps1 > 1e-300, "floor cutoff collapsed for a = {a}");
    }

    Ok(DivisorFloor { kappa0, a, b_steepness: b, eps1 })
}

/// The three root estimates the floor rests on, checked on a y-grid.
/// s1 and s2 are the real roots of s + ya - ys^2 = 0.
fn floor_conditions_hold(a: f64, eps1: f64) -> bool {
    const GRID: usize = 512;
    for i in 0..GRID {
        let y = eps1 * (i + 1) as f64 / GRID as f64;
        let disc = 1.0 + 4.0 * a * y * y;
        if disc <= 0.0 {
            return false;
        }
        let root = disc.sqrt();
        let s1 = (1.0 - root) / (2.0 * y);
        let s2 = (1.0 + root) / (2.0 * y);
        let ok = (s1 + a * y).abs() <= a.abs() * y / 2.0
            && (s2 - 1.0 / y).abs() <= 1.0 / (6.0 * y)
            && 18.0 * a.abs() * y * y <= 1.0;
        if !ok {
            return false;
        }
    }
    true
}

/// Sampling resolution for [`verify_divisor_floor`].
#[derive(Clone, Copy, Debug)]
pub struct FloorSampling {
    /// Points along Im eps.
    pub n_y: usize,
    /// Points along Re eps per Im value (boundary |Re| = B Im^2 included).
    pub n_x: usize,
    /// Real s grid points on [-s_max, s_max].
    pub n_s: usize,
    pub s_max: f64,
}

impl Default for FloorSampling {
    fn default() -> Self {
        // ~5.8k eps points x 401 s points ~ 2.3M samples.
        FloorSampling { n_y: 120, n_x: 24, n_s: 401, s_max: 10.0 }
    }
}

/// Result of sampling the floor inequality over the parabolic domain.
#[derive(Clone, Copy, Debug)]
pub struct FloorReport {
    pub kappa0: f64,
    pub eps1: f64,
    pub samples: u64,
    pub violations: u64,
    /// min over samples of |D| / (kappa0 * max{min(1,s^2), |eps|^2}).
    pub min_ratio: f64,
}

/// Sample |D(eps,s)| against its floor over a grid on the parabolic domain
/// (parabola boundary included, radial boundary kept strictly inside) and
/// real s in [-s_max, s_max].
pub fn verify_divisor_floor(a: f64, b: f64, sampling: &FloorSampling) -> Result<FloorReport> {
    let floor = divisor_floor(a, b)?;
    let eps1 = floor.eps1;
    let kappa0 = floor.kappa0;

    // Largest admissible Im eps: B^2 y^4 + y^2 = (2 eps1)^2 on the parabola.
    let rad2 = (2.0 * eps1) * (2.0 * eps1);
    let y_max = (((1.0 + 4.0 * b * b * rad2).sqrt() - 1.0) / (2.0 * b * b)).sqrt();

    let mut points: Vec<Complex64> = Vec::new();
    for iy in 0..sampling.n_y {
        // Both half-planes in y; conjugation symmetry is exact but cheap to
        // sample rather than assume.
        let y = y_max * (2.0 * (iy as f64 / (sampling.n_y - 1) as f64) - 1.0);
        let x_lo = b * y * y;
        let x_hi = (rad2 - y * y).max(0.0).sqrt() * 0.999;
        if x_hi <= x_lo {
            continue;
        }
        for ix in 0..sampling.n_x {
            let x = x_lo + (x_hi - x_lo) * ix as f64 / (sampling.n_x - 1) as f64;
            if x == 0.0 && y == 0.0 {
                continue;
            }
            points.push(Complex64::new(x, y));
            points.push(Complex64::new(-x, y));
        }
    }

    let s_grid: Vec<f64> = (0..sampling.n_s)
        .map(|i| -sampling.s_max + 2.0 * sampling.s_max * i as f64 / (sampling.n_s - 1) as f64)
        .collect();

    let (violations, min_ratio) = points
        .par_iter()
        .map(|&eps| {
            let eps_sq = eps.norm_sqr();
            let mut violations = 0u64;
            let mut min_ratio = f64::INFINITY;
            for &s in &s_grid {
                let target = kappa0 * (s * s).min(1.0).max(eps_sq);
                let ratio = d_symbol(eps, s, a).norm() / target;
                if ratio < 1.0 {
                    violations += 1;
                }
                if ratio < min_ratio {
                    min_ratio = ratio;
                }
            }
            (violations, min_ratio)
        })
        .reduce(|| (0, f64::INFINITY), |x, y| (x.0 + y.0, x.1.min(y.1)));

    Ok(FloorReport {
        kappa0,
        eps1,
        samples: (points.len() * s_grid.len()) as u64,
        violations,
        min_ratio,
    })
}

/// Smallest constant relating divisors to mode size on an l1 ball.
#[derive(Clone, Debug)]
pub struct DivisorConstant {
    /// min C such that C |omega . nu| >= e^{-xi |nu|_1 / 16} whenever
    /// 0 < |nu|_1 <= ball radius.
    pub value: f64,
    /// The mode attaining it.
    pub argmax: Mode,
}

/// Enumerate the l1 ball of radius `n_ball` and take the worst ratio
/// e^{-xi |nu|_1 / 16} / |omega . nu|.
pub fn estimate_divisor_constant(
    omega: &FrequencyVector,
    xi: f64,
    n_ball: i64,
) -> Result<DivisorConstant> {
    if xi.is_nan() || xi <= 0.0 || n_ball < 1 {
        return Err(Error::InvalidSpec(format!(
            "divisor constant needs xi > 0 and a ball radius >= 1, got xi = {xi}, N = {n_ball}"
        )));
    }
    check_budget(omega.dim(), n_ball as f64, DEFAULT_LATTICE_BUDGET)?;
    let mut best = f64::NEG_INFINITY;
    let mut argmax: Option<Mode> = None;
    let mut resonant: Option<Mode> = None;
    for_each_lattice_point(omega.dim(), n_ball, &mut |nu| {
        let l1: i64 = nu.iter().map(|&c| (c as i64).abs()).sum();
        if l1 == 0 || resonant.is_some() {
            return;
        }
        let s = nu
            .iter()
            .zip(omega.components())
            .map(|(&c, &w)| c as f64 * w)
            .sum::<f64>()
            .abs();
        if s == 0.0 {
            resonant = Some(Mode::new(nu.to_vec()));
            return;
        }
        let ratio = (-xi * l1 as f64 / 16.0).exp() / s;
        if ratio > best {
            best = ratio;
            argmax = Some(Mode::new(nu.to_vec()));
        }
    });
    if let Some(nu) = resonant {
        return Err(Error::InvalidSpec(format!(
            "omega . nu = 0 at nu = {nu}; no finite divisor constant exists"
        )));
    }
    Ok(DivisorConstant { value: best, argmax: argmax.ok_or(Error::EmptySupport)? })
}

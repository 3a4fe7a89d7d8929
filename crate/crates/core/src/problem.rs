//! Problem data: frequency vector, forcing spectrum, and the nonlinearity
//! re-centred at the forced equilibrium.
//!
//! A problem is the triple (omega, f, g). Loading one from JSON solves
//! `g(c0) = f_average` by Newton's method and re-expands `g` around `c0`, so
//! that downstream code only ever sees the shifted Taylor coefficients `a_p`
//! of `g(c0 + u)`; the constant terms cancel against the forcing average and
//! the series for `u` starts at the linear term `a = a_1`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::Deserialize;

use crate::error::{Error, Result};

/// Newton tolerance used when a spec file is loaded.
pub const EQUILIBRIUM_TOL: f64 = 1e-12;
/// Newton iteration cap.
pub const EQUILIBRIUM_MAX_ITER: usize = 100;

/// Fourier mode index in Z^d.
///
/// Lexicographic `Ord` makes every mode-keyed `BTreeMap` iterate in a fixed
/// order, which is what keeps sums and convolutions byte-reproducible.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct Mode(Vec<i32>);

impl Mode {
    pub fn new(components: Vec<i32>) -> Self {
        Mode(components)
    }

    pub fn zero(dim: usize) -> Self {
        Mode(vec![0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn components(&self) -> &[i32] {
        &self.0
    }

    /// l1 norm |nu|_1 = sum_i |nu_i|.
    pub fn l1(&self) -> i64 {
        self.0.iter().map(|&c| (c as i64).abs()).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&c| c == 0)
    }

    pub fn add(&self, other: &Mode) -> Mode {
        debug_assert_eq!(self.dim(), other.dim());
        Mode(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn neg(&self) -> Mode {
        Mode(self.0.iter().map(|&c| -c).collect())
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|c| c.to_string()).collect();
        write!(f, "{}", parts.join(","))
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let components: std::result::Result<Vec<i32>, _> =
            s.split(',').map(|p| p.trim().parse::<i32>()).collect();
        match components {
            Ok(v) if !v.is_empty() => Ok(Mode(v)),
            _ => Err(Error::InvalidSpec(format!("cannot parse mode from {s:?}"))),
        }
    }
}

/// Frequency vector omega in R^d.
#[derive(Clone, Debug)]
pub struct FrequencyVector {
    components: Vec<f64>,
}

impl FrequencyVector {
    pub fn new(components: Vec<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidSpec("omega must have dimension >= 1".into()));
        }
        if components.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidSpec("omega components must be finite".into()));
        }
        if components.iter().all(|&c| c == 0.0) {
            return Err(Error::InvalidSpec("omega must be a nonzero vector".into()));
        }
        Ok(FrequencyVector { components })
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[f64] {
        &self.components
    }

    /// omega . nu
    pub fn dot(&self, mode: &Mode) -> f64 {
        assert_eq!(self.dim(), mode.dim(), "mode dimension mismatch");
        self.components
            .iter()
            .zip(mode.components())
            .map(|(&w, &n)| w * n as f64)
            .sum()
    }
}

/// Finitely supported forcing spectrum: f(psi) = average + sum_nu f_nu e^{i nu . psi}
/// with the zero mode excluded from the sum and kept in `average`.
#[derive(Clone, Debug)]
pub struct ForcingSpectrum {
    dim: usize,
    modes: BTreeMap<Mode, Complex64>,
    average: f64,
    decay_xi: f64,
}

impl ForcingSpectrum {
    /// `decay_xi` is the exponential decay rate assumed for the spectrum; it
    /// only enters diagnostics (divisor compensation, weighted coefficient
    /// norms), never the coefficients themselves.
    pub fn new(
        dim: usize,
        entries: Vec<(Mode, Complex64)>,
        average: f64,
        decay_xi: f64,
    ) -> Result<Self> {
        if !average.is_finite() {
            return Err(Error::InvalidSpec("f_average must be finite".into()));
        }
        if !(decay_xi.is_finite() && decay_xi > 0.0) {
            return Err(Error::InvalidSpec("xi must be positive and finite".into()));
        }
        let mut modes = BTreeMap::new();
        for (mode, value) in entries {
            if mode.dim() != dim {
                return Err(Error::InvalidSpec(format!(
                    "mode {mode} has dimension {}, expected {dim}",
                    mode.dim()
                )));
            }
            if mode.is_zero() {
                return Err(Error::InvalidSpec(
                    "zero mode belongs in f_average, not in the mode list".into(),
                ));
            }
            if !value.re.is_finite() || !value.im.is_finite() {
                return Err(Error::InvalidSpec(format!("mode {mode} has non-finite amplitude")));
            }
            if modes.insert(mode.clone(), value).is_some() {
                return Err(Error::InvalidSpec(format!("mode {mode} listed twice")));
            }
        }
        Ok(ForcingSpectrum { dim, modes, average, decay_xi })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn modes(&self) -> &BTreeMap<Mode, Complex64> {
        &self.modes
    }

    pub fn amplitude(&self, mode: &Mode) -> Complex64 {
        self.modes.get(mode).copied().unwrap_or(Complex64::new(0.0, 0.0))
    }

    pub fn average(&self) -> f64 {
        self.average
    }

    pub fn decay_xi(&self) -> f64 {
        self.decay_xi
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    /// Largest |nu|_1 in the support (0 for empty support).
    pub fn max_mode_l1(&self) -> i64 {
        self.modes.keys().map(Mode::l1).max().unwrap_or(0)
    }

    /// f(psi), averaging term included.
    pub fn eval(&self, psi: &[f64]) -> Complex64 {
        let mut acc = Complex64::new(self.average, 0.0);
        for (mode, value) in &self.modes {
            let phase: f64 = mode
                .components()
                .iter()
                .zip(psi)
                .map(|(&n, &p)| n as f64 * p)
                .sum();
            acc += value * Complex64::new(0.0, phase).exp();
        }
        acc
    }
}

/// Taylor coefficients of `g(c0 + u)` in `u`: `coeffs[p] = a_p` for
/// p = 0..=P. `a_0 = g(c0)` is kept so residuals can be taken against the
/// original equation; `a = a_1` is the linear response coefficient.
#[derive(Clone, Debug)]
pub struct NonlinearityTaylor {
    c0: f64,
    coeffs: Vec<f64>,
}

impl NonlinearityTaylor {
    pub fn new(c0: f64, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() < 2 {
            return Err(Error::InvalidSpec(
                "nonlinearity needs at least the coefficients a_0, a_1".into(),
            ));
        }
        if coeffs.iter().any(|c| !c.is_finite()) || !c0.is_finite() {
            return Err(Error::InvalidSpec("nonlinearity coefficients must be finite".into()));
        }
        Ok(NonlinearityTaylor { c0, coeffs })
    }

    pub fn c0(&self) -> f64 {
        self.c0
    }

    /// a_p, zero beyond the stored truncation degree.
    pub fn a(&self, p: usize) -> f64 {
        self.coeffs.get(p).copied().unwrap_or(0.0)
    }

    /// The linear coefficient a = a_1.
    pub fn a1(&self) -> f64 {
        self.coeffs[1]
    }

    /// Truncation degree P.
    pub fn max_power(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }
}

/// Evaluate sum_i coeffs[i] x^i by Horner's scheme.
pub fn poly_eval(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

/// Coefficients of d/dx applied to `coeffs`.
pub fn poly_derivative(coeffs: &[f64]) -> Vec<f64> {
    coeffs
        .iter()
        .enumerate()
        .skip(1)
        .map(|(i, &c)| i as f64 * c)
        .collect()
}

/// Solve `g(c0) = f_average` by Newton's method from `guess`.
///
/// Converges when |g(x) - f_average| <= tol; the zero must be simple
/// (|g'(c0)| > tol), otherwise [`Error::DegenerateZero`].
pub fn find_equilibrium(g_poly: &[f64], f_average: f64, guess: f64, tol: f64) -> Result<f64> {
    let deriv = poly_derivative(g_poly);
    let mut x = guess;
    let mut residual = f64::INFINITY;
    for _ in 0..EQUILIBRIUM_MAX_ITER {
        residual = (poly_eval(g_poly, x) - f_average).abs();
        if residual <= tol {
            let slope = poly_eval(&deriv, x);
            if slope.abs() <= tol {
                return Err(Error::DegenerateZero { x, derivative: slope.abs(), tol });
            }
            // One extra step squares the remaining error (kept only if it
            // actually helps, so a flat tail cannot degrade the iterate).
            let polished = x - (poly_eval(g_poly, x) - f_average) / slope;
            if (poly_eval(g_poly, polished) - f_average).abs() <= residual {
                x = polished;
            }
            return Ok(x);
        }
        let slope = poly_eval(&deriv, x);
        if slope == 0.0 || !x.is_finite() {
            break;
        }
        x -= (poly_eval(g_poly, x) - f_average) / slope;
    }
    Err(Error::NoConvergence { max_iter: EQUILIBRIUM_MAX_ITER, residual })
}

/// Re-centre the polynomial `g` at `c0`: returns the Taylor coefficients of
/// `g(c0 + u)` in `u`, truncated (or zero-padded) to degree `p_max`.
///
/// The shift is the exact synthetic-division scheme, so for polynomial `g`
/// with `p_max >= deg g` there is no truncation error.
pub fn taylor_at(g_poly: &[f64], c0: f64, p_max: usize) -> Result<NonlinearityTaylor> {
    if g_poly.is_empty() {
        return Err(Error::InvalidSpec("g_poly must not be empty".into()));
    }
    if p_max < 1 {
        return Err(Error::InvalidSpec("P must be at least 1".into()));
    }
    let mut shifted = g_poly.to_vec();
    let n = shifted.len();
    // Repeated synthetic division by (x - c0); after pass j, shifted[j] is the
    // coefficient of u^j in g(c0 + u).
    for j in 0..n {
        for i in (j..n - 1).rev() {
            let update = c0 * shifted[i + 1];
            shifted[i] += update;
        }
    }
    shifted.resize(p_max + 1, 0.0);
    NonlinearityTaylor::new(c0, shifted)
}

/// A named validation finding; `field` is the part of the spec it concerns.
#[derive(Clone, Debug)]
pub struct Violation {
    pub field: &'static str,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// The assembled problem (omega, f, g recentred at c0).
#[derive(Clone, Debug)]
pub struct ProblemSpec {
    pub frequency: FrequencyVector,
    pub forcing: ForcingSpectrum,
    pub nonlinearity: NonlinearityTaylor,
}

/// l1 ball radius used by the advisory rational-independence check.
const INDEPENDENCE_CHECK_RADIUS: i64 = 6;
/// |omega . nu| below this (for small nu) is reported as a likely resonance.
const INDEPENDENCE_TOL: f64 = 1e-9;
/// Relative tolerance for the Hermitian-symmetry check.
const HERMITIAN_TOL: f64 = 1e-12;

impl ProblemSpec {
    pub fn new(
        frequency: FrequencyVector,
        forcing: ForcingSpectrum,
        nonlinearity: NonlinearityTaylor,
    ) -> Result<Self> {
        if frequency.dim() != forcing.dim() {
            return Err(Error::InvalidSpec(format!(
                "omega has dimension {} but the forcing modes have dimension {}",
                frequency.dim(),
                forcing.dim()
            )));
        }
        Ok(ProblemSpec { frequency, forcing, nonlinearity })
    }

    pub fn dim(&self) -> usize {
        self.frequency.dim()
    }

    /// Maximal branching allowed for internal tree nodes (= truncation degree P).
    pub fn max_branch(&self) -> usize {
        self.nonlinearity.max_power()
    }

    /// Branch factors that can actually occur: p >= 2 with a_p != 0.
    /// A vanishing Taylor coefficient removes that node arity entirely.
    pub fn branchings(&self) -> Vec<usize> {
        (2..=self.max_branch()).filter(|&p| self.nonlinearity.a(p) != 0.0).collect()
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: SpecFile = serde_json::from_str(text)?;
        file.assemble()
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    /// Non-fatal consistency findings. An empty report means the spec is
    /// usable as-is; anything listed here makes results suspect.
    pub fn validate(&self) -> Vec<Violation> {
        let mut report = Vec::new();

        if self.forcing.is_empty() {
            report.push(Violation { field: "modes", message: "forcing support is empty".into() });
        }

        // Hermitian symmetry: f(-nu) = conj f(nu), so that f is real-valued.
        for (mode, value) in self.forcing.modes() {
            let mirror = self.forcing.amplitude(&mode.neg());
            let defect = (mirror - value.conj()).norm();
            if defect > HERMITIAN_TOL * value.norm().max(1.0) {
                report.push(Violation {
                    field: "modes",
                    message: format!(
                        "Hermitian symmetry broken at {mode}: f(-nu) = {mirror}, conj f(nu) = {}",
                        value.conj()
                    ),
                });
            }
        }

        if self.nonlinearity.a1() == 0.0 {
            report.push(Violation {
                field: "g_poly",
                message: "a_1 = g'(c0) vanishes; the linearized response is singular".into(),
            });
        }

        let a0 = self.nonlinearity.a(0);
        let f0 = self.forcing.average();
        if (a0 - f0).abs() > 1e-9 * f0.abs().max(1.0) {
            report.push(Violation {
                field: "c0_guess",
                message: format!("g(c0) = {a0} does not match f_average = {f0}"),
            });
        }

        // Advisory only: exact rational dependence cannot be decided in
        // floating point, but a tiny |omega . nu| at small |nu| will poison
        // every divisor-sensitive computation downstream.
        let mut nu = vec![0i32; self.dim()];
        self.independence_scan(&mut nu, 0, INDEPENDENCE_CHECK_RADIUS, &mut report);

        report
    }

    fn independence_scan(
        &self,
        nu: &mut Vec<i32>,
        index: usize,
        remaining: i64,
        report: &mut Vec<Violation>,
    ) {
        if index == nu.len() {
            let mode = Mode::new(nu.clone());
            if !mode.is_zero() {
                let s = self.frequency.dot(&mode);
                if s.abs() < INDEPENDENCE_TOL {
                    report.push(Violation {
                        field: "omega",
                        message: format!(
                            "|omega . nu| = {:.3e} at nu = {mode}; omega looks rationally dependent",
                            s.abs()
                        ),
                    });
                }
            }
            return;
        }
        for c in -(remaining as i32)..=(remaining as i32) {
            nu[index] = c;
            self.independence_scan(nu, index + 1, remaining - (c as i64).abs(), report);
        }
        nu[index] = 0;
    }
}

fn default_xi() -> f64 {
    1.0
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecFile {
    omega: Vec<f64>,
    modes: Vec<SpecMode>,
    f_average: f64,
    g_poly: Vec<f64>,
    c0_guess: f64,
    #[serde(rename = "P")]
    p_max: usize,
    #[serde(default = "default_xi")]
    xi: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecMode {
    nu: Vec<i32>,
    re: f64,
    im: f64,
}

impl SpecFile {
    fn assemble(self) -> Result<ProblemSpec> {
        let frequency = FrequencyVector::new(self.omega)?;
        let entries = self
            .modes
            .into_iter()
            .map(|m| (Mode::new(m.nu), Complex64::new(m.re, m.im)))
            .collect();
        let forcing = ForcingSpectrum::new(frequency.dim(), entries, self.f_average, self.xi)?;
        let c0 = find_equilibrium(&self.g_poly, self.f_average, self.c0_guess, EQUILIBRIUM_TOL)?;
        let nonlinearity = taylor_at(&self.g_poly, c0, self.p_max)?;
        ProblemSpec::new(frequency, forcing, nonlinearity)
    }
}

//! Series coefficients by two independent routes, truncated solutions, and
//! the equation residual.
//!
//! The coefficients u^(k)_nu of the response expansion are computed either by
//! summing labelled-tree values or by a Fourier-space recursion that never
//! touches trees: order 1 is `eps f_nu / D(eps, omega . nu)`, and each higher
//! order divides a convolution of lower orders by the same propagator
//! denominator (by `a` alone for the zero mode). Agreement of the two routes
//! on every entry is the core correctness check of this crate.

use std::collections::{BTreeMap, BTreeSet};

use num_complex::Complex64;

use crate::divisors::d_symbol;
use crate::error::{Error, Result};
use crate::problem::{Mode, ProblemSpec};
use crate::trees::{self};

/// Coefficients u^(k)_nu at one fixed eps, for 1 <= k <= max_order.
#[derive(Clone, Debug)]
pub struct CoefficientTable {
    eps: Complex64,
    dim: usize,
    /// orders[k] maps momentum -> u^(k)_nu; index 0 is unused and empty.
    orders: Vec<BTreeMap<Mode, Complex64>>,
    momentum_radius: i64,
}

impl CoefficientTable {
    fn new(eps: Complex64, dim: usize, orders: Vec<BTreeMap<Mode, Complex64>>) -> Self {
        let momentum_radius =
            orders.iter().flat_map(|s| s.keys()).map(Mode::l1).max().unwrap_or(0);
        CoefficientTable { eps, dim, orders, momentum_radius }
    }

    pub fn eps(&self) -> Complex64 {
        self.eps
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn max_order(&self) -> usize {
        self.orders.len() - 1
    }

    /// Largest |nu|_1 actually stored.
    pub fn momentum_radius(&self) -> i64 {
        self.momentum_radius
    }

    /// u^(k)_nu, zero for anything not stored.
    pub fn get(&self, k: usize, nu: &Mode) -> Complex64 {
        self.orders
            .get(k)
            .and_then(|slice| slice.get(nu))
            .copied()
            .unwrap_or_else(|| Complex64::new(0.0, 0.0))
    }

    pub fn order_slice(&self, k: usize) -> Option<&BTreeMap<Mode, Complex64>> {
        self.orders.get(k)
    }

    /// max_nu |u^(k)_nu| (zero for an empty or absent order).
    pub fn max_abs(&self, k: usize) -> f64 {
        self.orders
            .get(k)
            .map(|slice| slice.values().map(|u| u.norm()).fold(0.0, f64::max))
            .unwrap_or(0.0)
    }

    /// Orders with at least one nonzero coefficient, ascending.
    pub fn nonzero_orders(&self) -> Vec<usize> {
        (1..=self.max_order()).filter(|&k| self.max_abs(k) > 0.0).collect()
    }
}

fn convolve_into(
    lhs: &BTreeMap<Mode, Complex64>,
    rhs: &BTreeMap<Mode, Complex64>,
    acc: &mut BTreeMap<Mode, Complex64>,
) {
    for (m_lhs, v_lhs) in lhs {
        for (m_rhs, v_rhs) in rhs {
            *acc.entry(m_lhs.add(m_rhs)).or_insert_with(|| Complex64::new(0.0, 0.0)) +=
                v_lhs * v_rhs;
        }
    }
}

fn propagate(
    spec: &ProblemSpec,
    eps: Complex64,
    nu: &Mode,
    numerator: Complex64,
) -> Result<Complex64> {
    let a = spec.nonlinearity.a1();
    if nu.is_zero() {
        if a == 0.0 {
            return Err(Error::SingularPropagator { eps, s: 0.0 });
        }
        Ok(numerator / a)
    } else {
        let s = spec.frequency.dot(nu);
        let d = d_symbol(eps, s, a);
        if d.norm() == 0.0 {
            return Err(Error::SingularPropagator { eps, s });
        }
        Ok(eps * numerator / d)
    }
}

/// All coefficients up to order `k_max` by the Fourier-space recursion.
///
/// Convolutions run over the exact finite supports in lexicographic mode
/// order, so repeated runs are bit-identical.
pub fn coeff_via_recursion(
    spec: &ProblemSpec,
    eps: Complex64,
    k_max: usize,
) -> Result<CoefficientTable> {
    if k_max < 1 {
        return Err(Error::InvalidSpec("the recursion needs k_max >= 1".into()));
    }
    let a = spec.nonlinearity.a1();
    let p_max = spec.max_branch();
    let mut orders: Vec<BTreeMap<Mode, Complex64>> = vec![BTreeMap::new(); k_max + 1];

    for (nu, f) in spec.forcing.modes() {
        let s = spec.frequency.dot(nu);
        let d = d_symbol(eps, s, a);
        if d.norm() == 0.0 {
            return Err(Error::SingularPropagator { eps, s });
        }
        orders[1].insert(nu.clone(), eps * f / d);
    }

    // powers[p][m]: sum over ordered p-tuples of lower-order slices with
    // orders summing to m of their convolution products.
    let mut powers: Vec<Vec<BTreeMap<Mode, Complex64>>> =
        vec![vec![BTreeMap::new(); k_max]; p_max + 1];

    for k in 2..=k_max {
        let m = k - 1;
        powers[1][m] = orders[m].clone();
        for p in 2..=p_max.min(m) {
            let mut acc = BTreeMap::new();
            for i in 1..=m - (p - 1) {
                convolve_into(&powers[p - 1][m - i], &powers[1][i], &mut acc);
            }
            powers[p][m] = acc;
        }

        let mut rhs: BTreeMap<Mode, Complex64> = BTreeMap::new();
        #[allow(clippy::needless_range_loop)]
        for p in 2..=p_max.min(m) {
            let a_p = spec.nonlinearity.a(p);
            if a_p == 0.0 {
                continue;
            }
            for (nu, total) in &powers[p][m] {
                *rhs.entry(nu.clone()).or_insert_with(|| Complex64::new(0.0, 0.0)) +=
                    a_p * total;
            }
        }

        let mut slice = BTreeMap::new();
        for (nu, total) in rhs {
            let coeff = propagate(spec, eps, &nu, -total)?;
            slice.insert(nu, coeff);
        }
        orders[k] = slice;
    }

    Ok(CoefficientTable::new(eps, spec.dim(), orders))
}

/// u^(k)_nu as the ordered sum of tree values.
pub fn coeff_via_trees(
    spec: &ProblemSpec,
    eps: Complex64,
    k: usize,
    nu: &Mode,
) -> Result<Complex64> {
    let forest = trees::enumerate_trees(&spec.forcing, &spec.branchings(), k, nu)?;
    let mut total = Complex64::new(0.0, 0.0);
    for tree in &forest {
        total += trees::value(tree, eps, spec)?;
    }
    Ok(total)
}

/// Tree-route tables for several eps values from a single enumeration
/// (trees do not depend on eps, so the forest is reused).
pub fn tables_via_trees(
    spec: &ProblemSpec,
    epsilons: &[Complex64],
    k_max: usize,
) -> Result<Vec<CoefficientTable>> {
    let forest = trees::enumerate_orders(&spec.forcing, &spec.branchings(), k_max)?;
    let mut tables = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let mut orders: Vec<BTreeMap<Mode, Complex64>> = vec![BTreeMap::new(); k_max + 1];
        for (k, groups) in forest.iter().enumerate().skip(1) {
            for (nu, trees_k) in groups {
                let mut total = Complex64::new(0.0, 0.0);
                for tree in trees_k {
                    total += trees::value(tree, eps, spec)?;
                }
                orders[k].insert(nu.clone(), total);
            }
        }
        tables.push(CoefficientTable::new(eps, spec.dim(), orders));
    }
    Ok(tables)
}

/// The truncated response solution: constant offset plus the summed Fourier
/// coefficients of all orders up to the truncation.
#[derive(Clone, Debug)]
pub struct ResponseSolution {
    eps: Complex64,
    truncation_order: usize,
    constant: f64,
    dim: usize,
    fourier: BTreeMap<Mode, Complex64>,
}

impl ResponseSolution {
    pub fn eps(&self) -> Complex64 {
        self.eps
    }

    pub fn truncation_order(&self) -> usize {
        self.truncation_order
    }

    /// The equilibrium offset around which the expansion is built.
    pub fn constant(&self) -> f64 {
        self.constant
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Summed coefficients U_nu = sum_k u^(k)_nu (without the constant).
    pub fn fourier(&self) -> &BTreeMap<Mode, Complex64> {
        &self.fourier
    }

    /// x evaluated at angles psi: constant + sum U_nu e^{i nu . psi}.
    pub fn eval(&self, psi: &[f64]) -> Complex64 {
        assert_eq!(psi.len(), self.dim, "angle vector has the wrong dimension");
        let mut total = Complex64::new(self.constant, 0.0);
        for (nu, coeff) in &self.fourier {
            let phase: f64 =
                nu.components().iter().zip(psi).map(|(&c, &angle)| c as f64 * angle).sum();
            total += coeff * Complex64::new(0.0, phase).exp();
        }
        total
    }
}

/// Sum the table's orders 1..=k_trunc into a solution.
pub fn assemble(
    spec: &ProblemSpec,
    table: &CoefficientTable,
    k_trunc: usize,
) -> Result<ResponseSolution> {
    if k_trunc < 1 || k_trunc > table.max_order() {
        return Err(Error::InsufficientData {
            reason: format!(
                "truncation order {k_trunc} not covered by a table of max order {}",
                table.max_order()
            ),
        });
    }
    let mut fourier: BTreeMap<Mode, Complex64> = BTreeMap::new();
    for k in 1..=k_trunc {
        if let Some(slice) = table.order_slice(k) {
            for (nu, coeff) in slice {
                *fourier.entry(nu.clone()).or_insert_with(|| Complex64::new(0.0, 0.0)) += coeff;
            }
        }
    }
    Ok(ResponseSolution {
        eps: table.eps(),
        truncation_order: k_trunc,
        constant: spec.nonlinearity.c0(),
        dim: spec.dim(),
        fourier,
    })
}

/// l1 norm of the Fourier-space defect of the equation at the truncated
/// solution: for every mode,
/// `-eps (omega.nu)^2 U_nu + i (omega.nu) U_nu + eps [g(c0+u)]_nu - eps f_nu`,
/// with the composition g(c0 + u) expanded exactly over the finite support.
pub fn residual(sol: &ResponseSolution, spec: &ProblemSpec) -> f64 {
    let eps = sol.eps();
    let u = sol.fourier();
    let dim = sol.dim();
    let zero = Mode::zero(dim);

    let mut composed: BTreeMap<Mode, Complex64> = BTreeMap::new();
    composed.insert(zero.clone(), Complex64::new(spec.nonlinearity.a(0), 0.0));
    let mut power: BTreeMap<Mode, Complex64> = BTreeMap::new();
    power.insert(zero.clone(), Complex64::new(1.0, 0.0));
    for p in 1..=spec.max_branch() {
        let mut next = BTreeMap::new();
        convolve_into(&power, u, &mut next);
        power = next;
        let a_p = spec.nonlinearity.a(p);
        if a_p == 0.0 {
            continue;
        }
        for (nu, value) in &power {
            *composed.entry(nu.clone()).or_insert_with(|| Complex64::new(0.0, 0.0)) +=
                a_p * value;
        }
    }

    let mut modes: BTreeSet<Mode> = BTreeSet::new();
    modes.insert(zero);
    modes.extend(u.keys().cloned());
    modes.extend(composed.keys().cloned());
    modes.extend(spec.forcing.modes().keys().cloned());

    let mut total = 0.0;
    for nu in &modes {
        let s = spec.frequency.dot(nu);
        let u_nu = u.get(nu).copied().unwrap_or_else(|| Complex64::new(0.0, 0.0));
        let g_nu = composed.get(nu).copied().unwrap_or_else(|| Complex64::new(0.0, 0.0));
        let f_nu = if nu.is_zero() {
            Complex64::new(spec.forcing.average(), 0.0)
        } else {
            spec.forcing.amplitude(nu)
        };
        let defect = -eps * (s * s) * u_nu
            + Complex64::new(0.0, s) * u_nu
            + eps * g_nu
            - eps * f_nu;
        total += defect.norm();
    }
    total
}

/// l1 mass of the orders `from..=to` of a table — the natural yardstick for
/// the residual of a truncation just below `from`.
pub fn tail_mass(table: &CoefficientTable, from: usize, to: usize) -> Result<f64> {
    if from < 1 || to > table.max_order() || from > to {
        return Err(Error::InsufficientData {
            reason: format!(
                "tail range {from}..={to} not covered by a table of max order {}",
                table.max_order()
            ),
        });
    }
    let mut mass = 0.0;
    for k in from..=to {
        if let Some(slice) = table.order_slice(k) {
            mass += slice.values().map(|u| u.norm()).sum::<f64>();
        }
    }
    Ok(mass)
}

/// Worst Hermitian-symmetry defect of a table. For real eps the coefficients
/// of a real solution must satisfy u^(k)_{-nu} = conj(u^(k)_nu).
#[derive(Clone, Copy, Debug)]
pub struct RealityReport {
    /// max over (k, nu) of |u^(k)_{-nu} - conj(u^(k)_nu)|.
    pub max_defect: f64,
    /// max over (k, nu) of |u^(k)_nu|.
    pub scale: f64,
}

impl RealityReport {
    pub fn relative(&self) -> f64 {
        if self.scale > 0.0 {
            self.max_defect / self.scale
        } else {
            0.0
        }
    }
}

pub fn reality_check(table: &CoefficientTable) -> RealityReport {
    let mut max_defect = 0.0f64;
    let mut scale = 0.0f64;
    for k in 1..=table.max_order() {
        let Some(slice) = table.order_slice(k) else { continue };
        for (nu, coeff) in slice {
            scale = scale.max(coeff.norm());
            let mirrored = table.get(k, &nu.neg());
            max_defect = max_defect.max((mirrored - coeff.conj()).norm());
        }
    }
    RealityReport { max_defect, scale }
}

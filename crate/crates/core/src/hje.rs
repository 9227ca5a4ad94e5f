//! Explicit grid solvers for the Hamilton–Jacobi equations of the ε-network
//! and of the coarse-grained network.
//!
//! The spatial operator is the exponential upwind form obtained from the WKB
//! ansatz for the jump process on a lattice of spacing `h`:
//!
//! `u_i ← u_i − Δt Σ_r [a_r(x_i)(e^{(u_i − u_{i−γ_r})/h} − 1) + b_r(x_i)(e^{(u_i − u_{i+γ_r})/h} − 1)]`
//!
//! with `a_r, b_r` the scaled forward and backward intensities. Terms whose
//! neighbor lies outside the box are dropped (state constraint).

use nalgebra::DVector;
use rayon::prelude::*;
use thiserror::Error;

use crate::domain::BoxDomain;
use crate::equilibria::FastSlowSystem;
use crate::kinetics::intensity;
use crate::model::Network;
use crate::stoich::StoichStructure;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HjeError {
    #[error("hje: {0}")]
    Invalid(String),
    #[error("hje: time step {dt:e} exceeds the stability bound {bound:e}")]
    Cfl { dt: f64, bound: f64 },
    #[error("hje: exponential overflow at node {node} (exponent {exponent:e})")]
    Overflow { node: usize, exponent: f64 },
    #[error(
        "hje: intensities vanish at node {node}; the box must stay away from the orthant boundary"
    )]
    Coercivity { node: usize },
    #[error("hje: initial data not constant along fast directions (max |γ·∇u0| = {0:e})")]
    NotWellPrepared(f64),
    #[error("hje: step limit {0} reached")]
    MaxSteps(usize),
}

/// Nodes `origin + h·k` for `0 ≤ k_j < counts[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    pub origin: DVector<f64>,
    pub h: f64,
    pub counts: Vec<usize>,
}

impl Lattice {
    pub fn new(origin: DVector<f64>, h: f64, counts: Vec<usize>) -> Result<Self, HjeError> {
        if !(h > 0.0) || origin.len() != counts.len() || counts.contains(&0) {
            return Err(HjeError::Invalid(
                "lattice needs h > 0 and a positive count per axis".into(),
            ));
        }
        Ok(Lattice { origin, h, counts })
    }

    /// Largest lattice with spacing `h` anchored at `domain.lo` inside the box.
    pub fn covering(domain: &BoxDomain, h: f64) -> Result<Self, HjeError> {
        let counts = (0..domain.dim())
            .map(|j| ((domain.hi[j] - domain.lo[j]) / h + 1e-9).floor() as usize + 1)
            .collect();
        Lattice::new(domain.lo.clone(), h, counts)
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn multi_index(&self, mut idx: usize) -> Vec<usize> {
        let mut k = vec![0; self.dim()];
        for j in (0..self.dim()).rev() {
            k[j] = idx % self.counts[j];
            idx /= self.counts[j];
        }
        k
    }

    pub fn flat_index(&self, k: &[usize]) -> usize {
        k.iter()
            .zip(&self.counts)
            .fold(0, |acc, (&kj, &c)| acc * c + kj)
    }

    pub fn node(&self, idx: usize) -> DVector<f64> {
        let k = self.multi_index(idx);
        DVector::from_fn(self.dim(), |j, _| self.origin[j] + self.h * k[j] as f64)
    }

    /// Index of `node(idx) + h·offset`, if it is on the lattice.
    pub fn shift(&self, idx: usize, offset: &[i64]) -> Option<usize> {
        let k = self.multi_index(idx);
        let mut out = Vec::with_capacity(k.len());
        for ((&kj, &oj), &c) in k.iter().zip(offset).zip(&self.counts) {
            let v = kj as i64 + oj;
            if v < 0 || v >= c as i64 {
                return None;
            }
            out.push(v as usize);
        }
        Some(self.flat_index(&out))
    }

    /// Nearest lattice node to `x`, if `x` lies within half a cell of the lattice.
    pub fn locate(&self, x: &DVector<f64>) -> Option<usize> {
        let mut k = Vec::with_capacity(self.dim());
        for j in 0..self.dim() {
            let r = ((x[j] - self.origin[j]) / self.h).round();
            if r < 0.0 || r >= self.counts[j] as f64 {
                return None;
            }
            k.push(r as usize);
        }
        Some(self.flat_index(&k))
    }
}

#[derive(Debug, Clone)]
pub struct WellPreparedData {
    pub lattice: Lattice,
    pub values: Vec<f64>,
    /// `max_r fast |γ_r·∇_h u0|` over nodes with both points on the lattice.
    pub fast_gradient: f64,
    /// Largest axis difference quotient of `u0`.
    pub c1_bound: f64,
}

impl WellPreparedData {
    /// Initial data on a coarse lattice; there are no fast directions to check.
    pub fn coarse(lattice: Lattice, g: &dyn Fn(&DVector<f64>) -> f64) -> Self {
        let values: Vec<f64> = (0..lattice.len()).map(|i| g(&lattice.node(i))).collect();
        let c1_bound = axis_gradient_bound(&lattice, &values);
        WellPreparedData {
            lattice,
            values,
            fast_gradient: 0.0,
            c1_bound,
        }
    }

    pub fn constant(lattice: Lattice, c: f64) -> Self {
        let values = vec![c; lattice.len()];
        WellPreparedData {
            lattice,
            values,
            fast_gradient: 0.0,
            c1_bound: 0.0,
        }
    }
}

fn axis_gradient_bound(lattice: &Lattice, values: &[f64]) -> f64 {
    let mut bound = 0.0f64;
    for i in 0..lattice.len() {
        for j in 0..lattice.dim() {
            let mut e = vec![0i64; lattice.dim()];
            e[j] = 1;
            if let Some(nb) = lattice.shift(i, &e) {
                bound = bound.max((values[nb] - values[i]).abs() / lattice.h);
            }
        }
    }
    bound
}

/// Maximum of `|u(x + hγ) − u(x)|/h` over nodes with both points on the lattice.
pub fn directional_gradient(
    lattice: &Lattice,
    values: &[f64],
    gamma: &[i64],
    nodes: Option<&[usize]>,
) -> f64 {
    let mut best = 0.0f64;
    let mut visit = |i: usize| {
        if let Some(nb) = lattice.shift(i, gamma) {
            best = best.max((values[nb] - values[i]).abs() / lattice.h);
        }
    };
    match nodes {
        Some(list) => list.iter().for_each(|&i| visit(i)),
        None => (0..lattice.len()).for_each(&mut visit),
    }
    best
}

/// Samples `profile` on the lattice and checks that it is constant along
/// every fast reaction vector.
pub fn make_well_prepared(
    structure: &StoichStructure,
    lattice: Lattice,
    profile: &dyn Fn(&DVector<f64>) -> f64,
) -> Result<WellPreparedData, HjeError> {
    if lattice.dim() != structure.species {
        return Err(HjeError::Invalid(
            "lattice dimension differs from the species count".into(),
        ));
    }
    let values: Vec<f64> = (0..lattice.len())
        .map(|i| profile(&lattice.node(i)))
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(HjeError::Invalid("initial data is not finite".into()));
    }
    let fast_gradient = structure
        .fast_rows
        .iter()
        .map(|&r| directional_gradient(&lattice, &values, &structure.g[r], None))
        .fold(0.0, f64::max);
    let scale = 1.0 + values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if fast_gradient > 1e-10 * scale {
        return Err(HjeError::NotWellPrepared(fast_gradient));
    }
    let c1_bound = axis_gradient_bound(&lattice, &values);
    Ok(WellPreparedData {
        lattice,
        values,
        fast_gradient,
        c1_bound,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct HjeOptions {
    /// Fraction of the stability bound used for each step.
    pub cfl: f64,
    pub max_steps: usize,
}

impl Default for HjeOptions {
    fn default() -> Self {
        HjeOptions {
            cfl: 0.45,
            max_steps: 5_000_000,
        }
    }
}

/// Discrete Hamiltonian in compressed form: node `i` owns terms
/// `start[i]..start[i+1]`, each a neighbor index and a rate.
#[derive(Debug, Clone)]
pub struct Scheme {
    pub lattice: Lattice,
    start: Vec<usize>,
    neighbor: Vec<usize>,
    rate: Vec<f64>,
    /// Nodes where at least one term was dropped at the box boundary.
    pub boundary: Vec<bool>,
    /// Nodes excluded from the update (kept at their initial value).
    pub masked: Vec<bool>,
}

impl Scheme {
    /// Builds the scheme from reaction vectors and per-node intensities
    /// `(forward, backward)` already multiplied by their time scale.
    pub fn assemble(
        lattice: Lattice,
        gammas: &[Vec<i64>],
        rates: &(dyn Fn(usize, &DVector<f64>) -> Option<Vec<(f64, f64)>> + Sync),
    ) -> Result<Self, HjeError> {
        let n = lattice.len();
        let per_node: Vec<Option<Vec<(f64, f64)>>> = (0..n)
            .into_par_iter()
            .map(|i| rates(i, &lattice.node(i)))
            .collect();
        let masked: Vec<bool> = per_node.iter().map(|p| p.is_none()).collect();
        let mut start = Vec::with_capacity(n + 1);
        let mut neighbor = Vec::new();
        let mut rate = Vec::new();
        let mut boundary = vec![false; n];
        start.push(0);
        for i in 0..n {
            if let Some(psi) = &per_node[i] {
                for (gamma, &(a, b)) in gammas.iter().zip(psi) {
                    if !(a > 0.0 && b > 0.0) {
                        return Err(HjeError::Coercivity { node: i });
                    }
                    let back: Vec<i64> = gamma.iter().map(|g| -g).collect();
                    for (offset, w) in [(&back, a), (gamma, b)] {
                        match lattice.shift(i, offset) {
                            Some(nb) if !masked[nb] => {
                                neighbor.push(nb);
                                rate.push(w);
                            }
                            _ => boundary[i] = true,
                        }
                    }
                }
            }
            start.push(neighbor.len());
        }
        Ok(Scheme {
            lattice,
            start,
            neighbor,
            rate,
            boundary,
            masked,
        })
    }

    pub fn terms(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.start[i]..self.start[i + 1]).map(|t| (self.neighbor[t], self.rate[t]))
    }

    /// Largest stable step for the field `u`: the update is monotone when
    /// `Δt·Σ rate·e^{(u_i − u_nb)/h} ≤ h` at every node.
    pub fn stable_dt(&self, u: &[f64]) -> f64 {
        let h = self.lattice.h;
        let worst = (0..self.lattice.len())
            .into_par_iter()
            .map(|i| {
                self.terms(i)
                    .map(|(nb, w)| w * ((u[i] - u[nb]) / h).min(700.0).exp())
                    .sum::<f64>()
            })
            .reduce(|| 0.0, f64::max);
        if worst > 0.0 {
            h / worst
        } else {
            f64::INFINITY
        }
    }

    /// One explicit step. Fails if `dt` exceeds the stability bound.
    pub fn step(&self, u: &[f64], dt: f64) -> Result<Vec<f64>, HjeError> {
        let bound = self.stable_dt(u);
        if dt > bound * (1.0 + 1e-12) {
            return Err(HjeError::Cfl { dt, bound });
        }
        self.step_unchecked(u, dt)
    }

    /// Discrete Hamiltonian `Σ rate·(e^{(u_i − u_nb)/h} − 1)` at every node (zero at masked nodes).
    pub fn operator(&self, u: &[f64]) -> Result<Vec<f64>, HjeError> {
        let h = self.lattice.h;
        (0..self.lattice.len())
            .into_par_iter()
            .map(|i| {
                if self.masked[i] {
                    return Ok(0.0);
                }
                let mut acc = 0.0;
                for (nb, w) in self.terms(i) {
                    let e = (u[i] - u[nb]) / h;
                    if e > 700.0 {
                        return Err(HjeError::Overflow {
                            node: i,
                            exponent: e,
                        });
                    }
                    acc += w * e.exp_m1();
                }
                Ok(acc)
            })
            .collect()
    }

    fn step_unchecked(&self, u: &[f64], dt: f64) -> Result<Vec<f64>, HjeError> {
        let op = self.operator(u)?;
        Ok(u.iter().zip(op).map(|(a, o)| a - dt * o).collect())
    }

    /// Runs from `u0` at `t = 0` to `t_final` with adaptive stable steps.
    pub fn solve(&self, u0: &[f64], t_final: f64, opts: HjeOptions) -> Result<GridField, HjeError> {
        if u0.len() != self.lattice.len() {
            return Err(HjeError::Invalid(
                "initial data does not match the lattice".into(),
            ));
        }
        if !(t_final >= 0.0) {
            return Err(HjeError::Invalid("final time must be nonnegative".into()));
        }
        let mut u = u0.to_vec();
        let mut t = 0.0;
        let mut steps = 0;
        let mut dt_min = f64::INFINITY;
        let mut dt_max = 0.0f64;
        let mut dudt = vec![0.0; u.len()];
        while t < t_final * (1.0 - 1e-14) {
            if steps >= opts.max_steps {
                return Err(HjeError::MaxSteps(opts.max_steps));
            }
            let bound = self.stable_dt(&u);
            let dt = (opts.cfl.min(1.0) * bound).min(t_final - t);
            let next = self.step_unchecked(&u, dt)?;
            for ((d, a), b) in dudt.iter_mut().zip(&next).zip(&u) {
                *d = (a - b) / dt;
            }
            u = next;
            t += dt;
            steps += 1;
            dt_min = dt_min.min(dt);
            dt_max = dt_max.max(dt);
        }
        Ok(GridField {
            lattice: self.lattice.clone(),
            values: u,
            time: t_final,
            dudt,
            steps,
            dt_min,
            dt_max,
            boundary: self.boundary.clone(),
            masked: self.masked.clone(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct GridField {
    pub lattice: Lattice,
    pub values: Vec<f64>,
    pub time: f64,
    /// Difference quotient of the final step.
    pub dudt: Vec<f64>,
    pub steps: usize,
    pub dt_min: f64,
    pub dt_max: f64,
    pub boundary: Vec<bool>,
    pub masked: Vec<bool>,
}

impl GridField {
    pub fn value_at(&self, x: &DVector<f64>) -> Option<f64> {
        self.lattice
            .locate(x)
            .filter(|&i| !self.masked[i])
            .map(|i| self.values[i])
    }
}

fn check_eps(eps: f64, species: usize) -> Result<(), HjeError> {
    if !(eps >= 1e-3) {
        return Err(HjeError::Invalid(format!(
            "ε = {eps:e} is below the supported 1e-3"
        )));
    }
    if species > 3 {
        return Err(HjeError::Invalid(format!(
            "{species} species exceed the supported grid dimension 3"
        )));
    }
    Ok(())
}

/// Scheme for the ε-network on `lattice`.
pub fn eps_scheme(
    net: &Network,
    structure: &StoichStructure,
    lattice: Lattice,
    eps: f64,
) -> Result<Scheme, HjeError> {
    if lattice.origin.iter().any(|&v| v <= 0.0) {
        return Err(HjeError::Coercivity { node: 0 });
    }
    let gammas: Vec<Vec<i64>> = structure.g.clone();
    let rates = |_i: usize, x: &DVector<f64>| {
        Some(
            (0..net.reaction_count())
                .map(|r| {
                    let (a, b) = intensity(net, x, r);
                    let s = net.rate_scale(r, eps);
                    (s * a, s * b)
                })
                .collect(),
        )
    };
    Scheme::assemble(lattice, &gammas, &rates)
}

/// Grid solution `u^ε(·, T)` on the lattice of `data`.
pub fn solve_hje_eps(
    net: &Network,
    structure: &StoichStructure,
    data: &WellPreparedData,
    eps: f64,
    t_final: f64,
    opts: HjeOptions,
) -> Result<GridField, HjeError> {
    check_eps(eps, net.species_count())?;
    if data.lattice.dim() != net.species_count() {
        return Err(HjeError::Invalid(
            "lattice dimension differs from the species count".into(),
        ));
    }
    let scheme = eps_scheme(net, structure, data.lattice.clone(), eps)?;
    scheme.solve(&data.values, t_final, opts)
}

/// Scheme for the coarse HJE on a `q`-lattice: reaction vectors `Q_fast γ_r`
/// for slow `r`, intensities at `R(q)`. Nodes where reconstruction fails are masked.
pub fn coarse_scheme(sys: &FastSlowSystem, lattice: Lattice) -> Result<Scheme, HjeError> {
    if lattice.dim() != sys.m_fast() {
        return Err(HjeError::Invalid(
            "lattice dimension differs from the number of fast-conserved quantities".into(),
        ));
    }
    let st = &sys.structure;
    let gammas: Vec<Vec<i64>> = st
        .slow_rows
        .iter()
        .map(|&r| {
            st.q_fast
                .iter()
                .map(|row| row.iter().zip(&st.g[r]).map(|(a, b)| a * b).sum())
                .collect()
        })
        .collect();
    let rates = |_i: usize, q: &DVector<f64>| {
        let x = sys.reconstruct(q).ok()?.x;
        Some(
            st.slow_rows
                .iter()
                .map(|&r| intensity(&sys.network, &x, r))
                .collect(),
        )
    };
    Scheme::assemble(lattice, &gammas, &rates)
}

/// Grid solution of the coarse HJE at time `T`.
pub fn solve_hje_cg(
    sys: &FastSlowSystem,
    data: &WellPreparedData,
    t_final: f64,
    opts: HjeOptions,
) -> Result<GridField, HjeError> {
    coarse_scheme(sys, data.lattice.clone())?.solve(&data.values, t_final, opts)
}

#[derive(Debug, Clone)]
pub struct LipschitzRow {
    pub eps: f64,
    /// `max |Δu/Δt|` over interior nodes.
    pub time_constant: f64,
    /// `max_r slow |γ_r·∇_h u|` over interior nodes.
    pub slow_constant: f64,
    /// Scheme-consistent fast-direction gradient at manifold-adjacent nodes.
    pub fast_on_manifold: f64,
    /// `fast_on_manifold / √ε`.
    pub fast_normalized: f64,
    /// `max_r fast |γ_r·∇_h u|` at manifold-adjacent nodes without interpolation.
    pub fast_adjacent_raw: f64,
    pub manifold_nodes: usize,
}

#[derive(Debug, Clone)]
pub struct LipschitzReport {
    pub rows: Vec<LipschitzRow>,
}

impl LipschitzReport {
    /// Ratio of the largest to the smallest slow-direction constant.
    pub fn slow_band(&self) -> f64 {
        let vals: Vec<f64> = self.rows.iter().map(|r| r.slow_constant).collect();
        let hi = vals.iter().cloned().fold(0.0, f64::max);
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        if hi == 0.0 {
            1.0
        } else {
            hi / lo
        }
    }

    /// For consecutive rows: measured fast-gradient ratio and `√(ε ratio)`.
    pub fn fast_decay(&self) -> Vec<(f64, f64)> {
        self.rows
            .windows(2)
            .map(|w| {
                let measured = if w[0].fast_on_manifold == 0.0 {
                    0.0
                } else {
                    w[1].fast_on_manifold / w[0].fast_on_manifold
                };
                (measured, (w[1].eps / w[0].eps).sqrt())
            })
            .collect()
    }
}

/// Nodes with every scheme term present, away from the box boundary.
fn interior_nodes(field: &GridField, structure: &StoichStructure) -> Vec<usize> {
    let lat = &field.lattice;
    (0..lat.len())
        .filter(|&i| {
            !field.masked[i]
                && structure.g.iter().all(|g| {
                    let back: Vec<i64> = g.iter().map(|v| -v).collect();
                    lat.shift(i, g).is_some() && lat.shift(i, &back).is_some()
                })
        })
        .collect()
}

/// Nodes within `h/2` (max norm) of their projection `R(Q_fast x)`.
pub fn manifold_adjacent(sys: &FastSlowSystem, lattice: &Lattice, nodes: &[usize]) -> Vec<usize> {
    nodes
        .par_iter()
        .copied()
        .filter(|&i| {
            let x = lattice.node(i);
            sys.project(&x)
                .is_ok_and(|r| (&x - &r.x).amax() <= 0.5 * lattice.h)
        })
        .collect()
}

/// Fast gradient as seen by the scheme at manifold-adjacent nodes. With
/// one-sided quotients `D∓` along `∓γ_r`, the node's fast term divided by
/// `2√(ψ⁺ψ⁻)` is a discrete `cosh(g) − 1`; `g` is returned. One-sided
/// quotients alone carry an `O(√h)` floor from the fast curvature.
fn fast_gradient_on_manifold(sys: &FastSlowSystem, field: &GridField, nodes: &[usize]) -> f64 {
    let lat = &field.lattice;
    let u = &field.values;
    let h = lat.h;
    let mut best = 0.0f64;
    for &r in &sys.structure.fast_rows {
        let gamma = &sys.structure.g[r];
        let back: Vec<i64> = gamma.iter().map(|v| -v).collect();
        for &i in nodes {
            let (Some(lo), Some(hi)) = (lat.shift(i, &back), lat.shift(i, gamma)) else {
                continue;
            };
            let (a, b) = intensity(&sys.network, &lat.node(i), r);
            let d_lo = (u[i] - u[lo]) / h;
            let d_hi = (u[hi] - u[i]) / h;
            let term = a * d_lo.exp_m1() + b * (-d_hi).exp_m1();
            let excess = (term / (2.0 * (a * b).sqrt())).max(0.0);
            best = best.max((1.0 + excess).acosh());
        }
    }
    best
}

/// Lipschitz diagnostics for fields of one network computed on the same lattice.
pub fn lipschitz_report(
    sys: &FastSlowSystem,
    fields: &[(f64, GridField)],
) -> Result<LipschitzReport, HjeError> {
    let Some((_, first)) = fields.first() else {
        return Ok(LipschitzReport { rows: Vec::new() });
    };
    if fields.iter().any(|(_, f)| f.lattice != first.lattice) {
        return Err(HjeError::Invalid("fields are on different lattices".into()));
    }
    let st = &sys.structure;
    let interior = interior_nodes(first, st);
    let near = manifold_adjacent(sys, &first.lattice, &interior);
    let rows = fields
        .iter()
        .map(|(eps, f)| {
            let slow = st
                .slow_rows
                .iter()
                .map(|&r| directional_gradient(&f.lattice, &f.values, &st.g[r], Some(&interior)))
                .fold(0.0, f64::max);
            let fast_raw = st
                .fast_rows
                .iter()
                .map(|&r| directional_gradient(&f.lattice, &f.values, &st.g[r], Some(&near)))
                .fold(0.0, f64::max);
            let fast = fast_gradient_on_manifold(sys, f, &near);
            let time_constant = interior
                .iter()
                .map(|&i| f.dudt[i].abs())
                .fold(0.0, f64::max);
            LipschitzRow {
                eps: *eps,
                time_constant,
                slow_constant: slow,
                fast_on_manifold: fast,
                fast_normalized: fast / eps.sqrt(),
                fast_adjacent_raw: fast_raw,
                manifold_nodes: near.len(),
            }
        })
        .collect();
    Ok(LipschitzReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_network;
    use crate::stoich::build_structure;

    #[test]
    fn lattice_indexing_round_trips() {
        let lat = Lattice::new(DVector::from_vec(vec![0.5, 1.0]), 0.25, vec![3, 4]).unwrap();
        assert_eq!(lat.len(), 12);
        for i in 0..lat.len() {
            assert_eq!(lat.flat_index(&lat.multi_index(i)), i);
            assert_eq!(lat.locate(&lat.node(i)), Some(i));
        }
        assert_eq!(lat.shift(0, &[-1, 0]), None);
        assert_eq!(lat.shift(0, &[1, 1]), Some(5));
    }

    #[test]
    fn constants_are_preserved() {
        let net = parse_network("species A B\nslow: A <-> B ; 1 2").unwrap();
        let st = build_structure(&net);
        let lat = Lattice::covering(&BoxDomain::uniform(2, 0.2, 1.2), 0.1).unwrap();
        let data = WellPreparedData::constant(lat, 0.7);
        let f = solve_hje_eps(&net, &st, &data, 1.0, 0.3, HjeOptions::default()).unwrap();
        assert!(f.values.iter().all(|&v| v == 0.7));
    }

    #[test]
    fn rejects_data_varying_along_fast_directions() {
        let net = parse_network("species A B C\nfast: A <-> B ; 1 1\nslow: B <-> C ; 1 1").unwrap();
        let st = build_structure(&net);
        let lat = Lattice::covering(&BoxDomain::uniform(3, 0.5, 1.0), 0.25).unwrap();
        let bad = make_well_prepared(&st, lat.clone(), &|x| x[0] - x[1]);
        assert!(matches!(bad, Err(HjeError::NotWellPrepared(_))));
        let good =
            make_well_prepared(&st, lat, &|x| 0.5 * (x[0] + x[1] - 1.0).powi(2) + x[2]).unwrap();
        assert!(good.fast_gradient <= 1e-12);
    }

    #[test]
    fn oversized_step_is_refused() {
        let net = parse_network("species A B\nslow: A <-> B ; 1 1").unwrap();
        let st = build_structure(&net);
        let lat = Lattice::covering(&BoxDomain::uniform(2, 0.2, 1.0), 0.1).unwrap();
        let scheme = eps_scheme(&net, &st, lat.clone(), 1.0).unwrap();
        let u = vec![0.0; lat.len()];
        let bound = scheme.stable_dt(&u);
        assert!(scheme.step(&u, 0.9 * bound).is_ok());
        assert!(matches!(
            scheme.step(&u, 2.0 * bound),
            Err(HjeError::Cfl { .. })
        ));
    }

    #[test]
    fn box_touching_the_orthant_boundary_is_refused() {
        let net = parse_network("species A B\nslow: A <-> B ; 1 1").unwrap();
        let st = build_structure(&net);
        let lat = Lattice::covering(&BoxDomain::uniform(2, 0.0, 1.0), 0.1).unwrap();
        let data = WellPreparedData::constant(lat, 0.0);
        assert!(matches!(
            solve_hje_eps(&net, &st, &data, 1.0, 0.1, HjeOptions::default()),
            Err(HjeError::Coercivity { .. })
        ));
    }
}

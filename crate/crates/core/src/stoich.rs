//! Linear conservation structure of a fast-slow network.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::exact::{self, mul_transpose};
use crate::model::Network;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StoichError {
    #[error("stoich: basis is rank deficient (rank {rank} < {rows} rows)")]
    RankDeficient { rank: usize, rows: usize },
    #[error("stoich: dimension mismatch: {0}")]
    Dimension(String),
    #[error("stoich: invalid fast extension: {0}")]
    InvalidExtension(String),
}

/// Exact bases plus cached floating-point views.
#[derive(Debug, Clone, Serialize)]
pub struct StoichStructure {
    pub species: usize,
    /// Wegscheider matrix, one row `γ_r` per reaction.
    pub g: Vec<Vec<i64>>,
    pub fast_rows: Vec<usize>,
    pub slow_rows: Vec<usize>,
    /// Basis of `Γ^⊥` as rows.
    pub q: Vec<Vec<i64>>,
    /// Basis of `Γ_fast^⊥` as rows whose first `m` rows equal `q`.
    pub q_fast: Vec<Vec<i64>>,
    /// `G · Q_fastᵀ`.
    pub g_fast: Vec<Vec<i64>>,
    pub gamma_basis: Vec<Vec<i64>>,
    pub gamma_fast_basis: Vec<Vec<i64>>,
    pub gamma_fast_perp_basis: Vec<Vec<i64>>,
    pub rank_g: usize,
    #[serde(skip)]
    cache: FloatCache,
}

#[derive(Debug, Clone, Default)]
struct FloatCache {
    q_fast: DMatrix<f64>,
    gamma_onb: DMatrix<f64>,
    gamma_fast_onb: DMatrix<f64>,
    coarse_slow_onb: DMatrix<f64>,
}

pub fn to_dmatrix(rows: &[Vec<i64>], ncols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j] as f64)
}

/// Orthonormal rows spanning the row space of `basis`. Tiny singular values are
/// treated as zero, so dependent inputs are allowed here.
pub fn orthonormal_rows(basis: &DMatrix<f64>) -> DMatrix<f64> {
    let n = basis.ncols();
    if basis.nrows() == 0 || n == 0 {
        return DMatrix::zeros(0, n);
    }
    let svd = basis.clone().svd(false, true);
    let v_t = svd.v_t.expect("v_t requested");
    let smax = svd.singular_values.max();
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > 1e-12 * smax.max(1.0))
        .collect();
    DMatrix::from_fn(keep.len(), n, |i, j| v_t[(keep[i], j)])
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub projection: DVector<f64>,
    pub residual: DVector<f64>,
}

/// Orthogonal projection of `v` onto the row span of `basis`.
pub fn project_onto(basis: &DMatrix<f64>, v: &DVector<f64>) -> Result<Projection, StoichError> {
    let n = v.len();
    if basis.ncols() != n {
        return Err(StoichError::Dimension(format!(
            "basis has {} columns, vector has {n} entries",
            basis.ncols()
        )));
    }
    let onb = orthonormal_rows(basis);
    if onb.nrows() < basis.nrows() {
        return Err(StoichError::RankDeficient {
            rank: onb.nrows(),
            rows: basis.nrows(),
        });
    }
    let projection = onb.transpose() * (&onb * v);
    let residual = v - &projection;
    Ok(Projection {
        projection,
        residual,
    })
}

/// Membership tolerance `1e-9·(1 + ‖v‖)`.
pub fn membership_tol(v: &DVector<f64>) -> f64 {
    1e-9 * (1.0 + v.norm())
}

/// Whether `v` lies in the span of orthonormal rows `onb`.
pub fn in_span(onb: &DMatrix<f64>, v: &DVector<f64>) -> bool {
    span_residual(onb, v) <= membership_tol(v)
}

pub fn span_residual(onb: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    if onb.nrows() == 0 {
        return v.norm();
    }
    (v - onb.transpose() * (onb * v)).norm()
}

pub fn build_structure(net: &Network) -> StoichStructure {
    let n = net.species_count();
    let g: Vec<Vec<i64>> = net
        .reactions()
        .iter()
        .map(|r| r.reaction_vector())
        .collect();
    let fast_rows = net.fast_reactions();
    let slow_rows = net.slow_reactions();
    let g_fast_only: Vec<Vec<i64>> = fast_rows.iter().map(|&r| g[r].clone()).collect();

    let gamma = exact::rref(&g, n);
    let gamma_fast = exact::rref(&g_fast_only, n);
    let q = exact::kernel(&g, n);
    let fast_perp = exact::kernel(&g_fast_only, n);

    // Append canonical Γ_fast^⊥ rows, last first, while they add rank.
    let mut q_fast = q.clone();
    let target = fast_perp.len();
    for row in fast_perp.iter().rev() {
        if q_fast.len() == target {
            break;
        }
        let mut trial = q_fast.clone();
        trial.push(row.clone());
        if exact::rank(&trial, n) == trial.len() {
            q_fast = trial;
        }
    }

    assemble(
        n,
        g,
        fast_rows,
        slow_rows,
        q,
        q_fast,
        gamma.rows,
        gamma_fast.rows,
        fast_perp,
        gamma.pivots.len(),
    )
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    species: usize,
    g: Vec<Vec<i64>>,
    fast_rows: Vec<usize>,
    slow_rows: Vec<usize>,
    q: Vec<Vec<i64>>,
    q_fast: Vec<Vec<i64>>,
    gamma_basis: Vec<Vec<i64>>,
    gamma_fast_basis: Vec<Vec<i64>>,
    gamma_fast_perp_basis: Vec<Vec<i64>>,
    rank_g: usize,
) -> StoichStructure {
    let g_fast = mul_transpose(&g, &q_fast);
    let q_fast_f = to_dmatrix(&q_fast, species);
    let coarse_slow: Vec<Vec<i64>> = slow_rows.iter().map(|&r| g_fast[r].clone()).collect();
    let cache = FloatCache {
        gamma_onb: orthonormal_rows(&to_dmatrix(&gamma_basis, species)),
        gamma_fast_onb: orthonormal_rows(&to_dmatrix(&gamma_fast_basis, species)),
        coarse_slow_onb: orthonormal_rows(&to_dmatrix(&coarse_slow, q_fast.len())),
        q_fast: q_fast_f,
    };
    StoichStructure {
        species,
        g,
        fast_rows,
        slow_rows,
        q,
        q_fast,
        g_fast,
        gamma_basis,
        gamma_fast_basis,
        gamma_fast_perp_basis,
        rank_g,
        cache,
    }
}

impl StoichStructure {
    pub fn m(&self) -> usize {
        self.q.len()
    }

    pub fn m_fast(&self) -> usize {
        self.q_fast.len()
    }

    pub fn reactions(&self) -> usize {
        self.g.len()
    }

    pub fn q_fast_f64(&self) -> &DMatrix<f64> {
        &self.cache.q_fast
    }

    /// Orthonormal rows spanning `Γ`.
    pub fn gamma_onb(&self) -> &DMatrix<f64> {
        &self.cache.gamma_onb
    }

    /// Orthonormal rows spanning `Γ_fast`.
    pub fn gamma_fast_onb(&self) -> &DMatrix<f64> {
        &self.cache.gamma_fast_onb
    }

    /// Orthonormal rows spanning `{Q_fast γ_r : r slow}` in coarse coordinates.
    pub fn coarse_slow_onb(&self) -> &DMatrix<f64> {
        &self.cache.coarse_slow_onb
    }

    pub fn gamma_f64(&self, r: usize) -> DVector<f64> {
        DVector::from_iterator(self.species, self.g[r].iter().map(|&v| v as f64))
    }

    /// Coarse reaction vector `Q_fast γ_r`.
    pub fn coarse_gamma_f64(&self, r: usize) -> DVector<f64> {
        DVector::from_iterator(self.m_fast(), self.g_fast[r].iter().map(|&v| v as f64))
    }

    pub fn q_fast_apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.cache.q_fast * x
    }

    /// Same structure with a different `Γ_fast^⊥` basis. The first `m` rows must
    /// still span `Γ^⊥`; this is checked exactly.
    pub fn with_fast_extension(
        &self,
        q_fast: Vec<Vec<i64>>,
    ) -> Result<StoichStructure, StoichError> {
        let n = self.species;
        if q_fast.len() != self.m_fast() || q_fast.iter().any(|r| r.len() != n) {
            return Err(StoichError::InvalidExtension(format!(
                "expected {} rows of length {n}",
                self.m_fast()
            )));
        }
        if exact::rank(&q_fast, n) != q_fast.len() {
            return Err(StoichError::InvalidExtension("rows are dependent".into()));
        }
        for &r in &self.fast_rows {
            if q_fast.iter().any(|row| exact::dot(row, &self.g[r]) != 0) {
                return Err(StoichError::InvalidExtension(format!(
                    "row not orthogonal to fast reaction {r}"
                )));
            }
        }
        let head = q_fast[..self.m()].to_vec();
        if exact::rref(&head, n) != exact::rref(&self.q, n) {
            return Err(StoichError::InvalidExtension(
                "leading rows do not span the conserved subspace".into(),
            ));
        }
        Ok(assemble(
            n,
            self.g.clone(),
            self.fast_rows.clone(),
            self.slow_rows.clone(),
            self.q.clone(),
            q_fast,
            self.gamma_basis.clone(),
            self.gamma_fast_basis.clone(),
            self.gamma_fast_perp_basis.clone(),
            self.rank_g,
        ))
    }

    /// Exact invariant check; returns a list of failures.
    pub fn check_invariants(&self) -> Vec<String> {
        let mut bad = Vec::new();
        let n = self.species;
        for (r, gr) in self.g.iter().enumerate() {
            for (k, q) in self.q.iter().enumerate() {
                if exact::dot(q, gr) != 0 {
                    bad.push(format!("q_{k}·γ_{r} ≠ 0"));
                }
            }
        }
        for &r in &self.fast_rows {
            for (k, q) in self.q_fast.iter().enumerate() {
                if exact::dot(q, &self.g[r]) != 0 {
                    bad.push(format!("q_fast_{k}·γ_{r} ≠ 0"));
                }
            }
            if self.g_fast[r].iter().any(|&v| v != 0) {
                bad.push(format!("G_fast row {r} nonzero"));
            }
        }
        if self.rank_g + self.m() != n {
            bad.push(format!("rank(G) + m = {} ≠ {n}", self.rank_g + self.m()));
        }
        if exact::rank(&self.q, n) != self.m() {
            bad.push("Q rank deficient".into());
        }
        let fast_rank = self.gamma_fast_basis.len();
        if exact::rank(&self.q_fast, n) != self.m_fast() || self.m_fast() != n - fast_rank {
            bad.push("Q_fast rank mismatch".into());
        }
        if self.q_fast[..self.m()] != self.q[..] {
            bad.push("leading rows of Q_fast differ from Q".into());
        }
        if self.g_fast != mul_transpose(&self.g, &self.q_fast) {
            bad.push("G_fast ≠ G·Q_fastᵀ".into());
        }
        bad
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_network;

    fn chain() -> Network {
        parse_network("species A B C\nfast: A <-> B ; 1 1\nslow: B <-> C ; 2 1").unwrap()
    }

    fn binding() -> Network {
        parse_network("species A B C D\nfast: A + B <-> C ; 1 1\nslow: C <-> D ; 1 1").unwrap()
    }

    #[test]
    fn chain_structure() {
        let s = build_structure(&chain());
        assert_eq!(s.q, vec![vec![1, 1, 1]]);
        assert_eq!(s.q_fast, vec![vec![1, 1, 1], vec![0, 0, 1]]);
        assert_eq!(s.gamma_fast_basis, vec![vec![1, -1, 0]]);
        assert_eq!(s.m(), 1);
        assert_eq!(s.m_fast(), 2);
        assert_eq!(s.g_fast, vec![vec![0, 0], vec![0, 1]]);
        assert!(s.check_invariants().is_empty());
    }

    #[test]
    fn binding_structure() {
        let s = build_structure(&binding());
        assert_eq!(s.q, vec![vec![1, 0, 1, 1], vec![0, 1, 1, 1]]);
        assert_eq!(s.m_fast(), 3);
        assert_eq!(s.q_fast[2], vec![0, 0, 0, 1]);
        assert_eq!(s.rank_g, 2);
        assert!(s.check_invariants().is_empty());
    }

    #[test]
    fn alternative_extension() {
        let s = build_structure(&chain());
        let alt = s
            .with_fast_extension(vec![vec![1, 1, 1], vec![1, 1, 2]])
            .unwrap();
        assert!(alt.check_invariants().is_empty());
        assert!(s
            .with_fast_extension(vec![vec![1, 1, 1], vec![1, 0, 0]])
            .is_err());
        assert!(s
            .with_fast_extension(vec![vec![0, 0, 1], vec![1, 1, 1]])
            .is_err());
    }

    #[test]
    fn projection_examples() {
        let basis = DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]);
        let p = project_onto(&basis, &DVector::from_vec(vec![1.0, 1.0, 0.0])).unwrap();
        assert!((p.projection - DVector::from_vec(vec![1.0, 0.0, 0.0])).norm() < 1e-15);
        assert!((p.residual - DVector::from_vec(vec![0.0, 1.0, 0.0])).norm() < 1e-15);

        let v = DVector::from_vec(vec![0.3, -2.0, 5.0]);
        let full = project_onto(&DMatrix::identity(3, 3), &v).unwrap();
        assert!(full.residual.norm() < 1e-14);

        let dependent = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]);
        assert!(matches!(
            project_onto(&dependent, &DVector::from_vec(vec![1.0, 0.0])),
            Err(StoichError::RankDeficient { rank: 1, rows: 2 })
        ));
    }

    #[test]
    fn reaction_vectors_lie_in_gamma() {
        for net in [chain(), binding()] {
            let s = build_structure(&net);
            for r in 0..s.reactions() {
                assert!(in_span(s.gamma_onb(), &s.gamma_f64(r)));
            }
        }
    }
}

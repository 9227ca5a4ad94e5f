//! Exact integer row reduction.
//!
//! Elimination is fraction-free over `BigInt`; every row is divided by the gcd of
//! its entries after each update so coefficients stay small. The final form has
//! primitive integer rows with positive pivots and zeros above and below each
//! pivot, which is the rational RREF up to a positive row scaling and therefore
//! canonical for the row space.

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};

/// Canonical reduced row-echelon form of an integer matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntRref {
    pub rows: Vec<Vec<i64>>,
    pub pivots: Vec<usize>,
    pub ncols: usize,
}

impl IntRref {
    pub fn rank(&self) -> usize {
        self.rows.len()
    }
}

fn to_big(rows: &[Vec<i64>], ncols: usize) -> Vec<Vec<BigInt>> {
    rows.iter()
        .map(|r| {
            assert_eq!(r.len(), ncols, "ragged integer matrix");
            r.iter().map(|&v| BigInt::from(v)).collect()
        })
        .collect()
}

fn make_primitive(row: &mut [BigInt]) {
    let g = row.iter().fold(BigInt::zero(), |acc, v| acc.gcd(v));
    if g.is_zero() || g.is_one() {
        return;
    }
    for v in row.iter_mut() {
        *v = &*v / &g;
    }
}

fn to_i64_row(row: &[BigInt]) -> Vec<i64> {
    row.iter()
        .map(|v| v.to_i64().expect("integer basis entry exceeds i64"))
        .collect()
}

/// Row-reduces `rows` (each of length `ncols`).
pub fn rref(rows: &[Vec<i64>], ncols: usize) -> IntRref {
    let mut m = to_big(rows, ncols);
    let mut pivots = Vec::new();
    let mut r = 0;
    for c in 0..ncols {
        if r == m.len() {
            break;
        }
        let Some(p) = (r..m.len()).find(|&i| !m[i][c].is_zero()) else {
            continue;
        };
        m.swap(r, p);
        if m[r][c].is_negative() {
            for v in m[r].iter_mut() {
                *v = -&*v;
            }
        }
        make_primitive(&mut m[r]);
        let pivot_row = m[r].clone();
        for (i, row) in m.iter_mut().enumerate() {
            if i == r || row[c].is_zero() {
                continue;
            }
            let a = pivot_row[c].clone();
            let b = row[c].clone();
            for (v, pv) in row.iter_mut().zip(&pivot_row) {
                *v = &a * &*v - &b * pv;
            }
            make_primitive(row);
        }
        pivots.push(c);
        r += 1;
    }
    m.truncate(r);
    for (row, &c) in m.iter_mut().zip(&pivots) {
        if row[c].is_negative() {
            for v in row.iter_mut() {
                *v = -&*v;
            }
        }
        make_primitive(row);
    }
    IntRref {
        rows: m.iter().map(|r| to_i64_row(r)).collect(),
        pivots,
        ncols,
    }
}

pub fn rank(rows: &[Vec<i64>], ncols: usize) -> usize {
    rref(rows, ncols).rank()
}

/// Canonical integer basis (as rows) of `{x : rows · x = 0}`.
pub fn kernel(rows: &[Vec<i64>], ncols: usize) -> Vec<Vec<i64>> {
    let red = rref(rows, ncols);
    let free: Vec<usize> = (0..ncols).filter(|c| !red.pivots.contains(c)).collect();
    let big = to_big(&red.rows, ncols);
    let mut basis = Vec::with_capacity(free.len());
    for &f in &free {
        // Scale by the lcm of pivots so the free coordinate clears every denominator.
        let l = big
            .iter()
            .zip(&red.pivots)
            .fold(BigInt::one(), |acc, (row, &p)| acc.lcm(&row[p]));
        let mut v = vec![BigInt::zero(); ncols];
        v[f] = l.clone();
        for (row, &p) in big.iter().zip(&red.pivots) {
            v[p] = -(&l / &row[p]) * &row[f];
        }
        make_primitive(&mut v);
        basis.push(to_i64_row(&v));
    }
    rref(&basis, ncols).rows
}

pub fn dot(a: &[i64], b: &[i64]) -> i64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `a · bᵀ` for integer matrices stored as rows.
pub fn mul_transpose(a: &[Vec<i64>], b: &[Vec<i64>]) -> Vec<Vec<i64>> {
    a.iter()
        .map(|ra| b.iter().map(|rb| dot(ra, rb)).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn chain_kernel() {
        let g = vec![vec![-1, 1, 0], vec![0, -1, 1]];
        assert_eq!(kernel(&g, 3), vec![vec![1, 1, 1]]);
        assert_eq!(rank(&g, 3), 2);
    }

    #[test]
    fn binding_kernel() {
        let g = vec![vec![-1, -1, 1, 0], vec![0, 0, -1, 1]];
        assert_eq!(kernel(&g, 4), vec![vec![1, 0, 1, 1], vec![0, 1, 1, 1]]);
    }

    #[test]
    fn rref_is_primitive_with_positive_pivots() {
        let red = rref(&[vec![2, 4, 6], vec![3, 6, 10]], 3);
        assert_eq!(red.rows, vec![vec![1, 2, 0], vec![0, 0, 1]]);
        assert_eq!(red.pivots, vec![0, 2]);
    }

    #[test]
    fn empty_and_full_rank() {
        assert_eq!(kernel(&[], 2), vec![vec![1, 0], vec![0, 1]]);
        assert!(kernel(&[vec![1, 0], vec![1, 1]], 2).is_empty());
    }

    // Independent oracle: floating-point rank from the singular values.
    fn float_rank(rows: &[Vec<i64>], ncols: usize) -> usize {
        if rows.is_empty() {
            return 0;
        }
        let m = nalgebra::DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j] as f64);
        m.svd(false, false)
            .singular_values
            .iter()
            .filter(|&&s| s > 1e-9)
            .count()
    }

    fn matrix() -> impl Strategy<Value = (Vec<Vec<i64>>, usize)> {
        (1usize..6, 1usize..6).prop_flat_map(|(r, c)| {
            (
                proptest::collection::vec(proptest::collection::vec(-3i64..=3, c), r),
                Just(c),
            )
        })
    }

    proptest! {
        #[test]
        fn kernel_is_annihilated_and_complementary((rows, ncols) in matrix()) {
            let k = kernel(&rows, ncols);
            for v in &k {
                for r in &rows {
                    prop_assert_eq!(dot(r, v), 0);
                }
            }
            let r = rank(&rows, ncols);
            prop_assert_eq!(r + k.len(), ncols);
            prop_assert_eq!(r, float_rank(&rows, ncols));
            prop_assert_eq!(float_rank(&k, ncols), k.len());
        }

        #[test]
        fn rref_is_row_space_invariant((rows, ncols) in matrix(), perm in any::<u64>()) {
            let mut shuffled = rows.clone();
            let n = shuffled.len();
            shuffled.rotate_left((perm as usize) % n);
            let combined: Vec<i64> = shuffled[0].iter().zip(&shuffled[n - 1]).map(|(a, b)| 2 * a - b).collect();
            shuffled.push(combined);
            prop_assert_eq!(rref(&rows, ncols), rref(&shuffled, ncols));
        }
    }
}

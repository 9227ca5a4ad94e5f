//! Box domains and discrete paths.

use nalgebra::DVector;

/// Axis-aligned closed box `[lo, hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxDomain {
    pub lo: DVector<f64>,
    pub hi: DVector<f64>,
}

impl BoxDomain {
    pub fn new(lo: DVector<f64>, hi: DVector<f64>) -> Self {
        assert_eq!(lo.len(), hi.len(), "box bounds differ in length");
        BoxDomain { lo, hi }
    }

    pub fn uniform(dim: usize, lo: f64, hi: f64) -> Self {
        BoxDomain::new(
            DVector::from_element(dim, lo),
            DVector::from_element(dim, hi),
        )
    }

    /// Default working domain for states of size `scale`: each axis runs from
    /// `0.05·scale_i` (a positive distance from the orthant boundary) to `10·scale_i`.
    pub fn default_for(scale: &DVector<f64>) -> Self {
        BoxDomain::new(scale * 0.05, scale * 10.0)
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        x.len() == self.dim()
            && x.iter().enumerate().all(|(i, &v)| {
                let slack = 1e-12 * (1.0 + self.hi[i].abs());
                v >= self.lo[i] - slack && v <= self.hi[i] + slack
            })
    }

    pub fn clamp(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            x.len(),
            x.iter()
                .enumerate()
                .map(|(i, &v)| v.clamp(self.lo[i], self.hi[i])),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathKind {
    /// States in species space.
    Full,
    /// States in fast-conserved coordinates `q`.
    Coarse,
}

#[derive(Debug, Clone)]
pub struct Path {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub kind: PathKind,
}

impl Path {
    /// Path on the uniform grid `t_k = k·T/N` with `N = states.len() − 1`.
    pub fn uniform(t_final: f64, states: Vec<DVector<f64>>, kind: PathKind) -> Self {
        let n = states.len() - 1;
        let times = (0..=n).map(|k| t_final * k as f64 / n as f64).collect();
        Path {
            times,
            states,
            kind,
        }
    }

    pub fn steps(&self) -> usize {
        self.states.len().saturating_sub(1)
    }

    pub fn t_final(&self) -> f64 {
        *self.times.last().unwrap_or(&0.0)
    }

    /// Piecewise-linear value at time `t`.
    pub fn at(&self, t: f64) -> DVector<f64> {
        let n = self.steps();
        if t <= self.times[0] || n == 0 {
            return self.states[0].clone();
        }
        for k in 0..n {
            if t <= self.times[k + 1] {
                let w = (t - self.times[k]) / (self.times[k + 1] - self.times[k]);
                return &self.states[k] * (1.0 - w) + &self.states[k + 1] * w;
            }
        }
        self.states[n].clone()
    }

    /// The same curve sampled on a uniform grid with `n` steps.
    pub fn resample(&self, n: usize) -> Path {
        let t_final = self.t_final();
        let states = (0..=n)
            .map(|k| self.at(t_final * k as f64 / n as f64))
            .collect();
        Path::uniform(t_final, states, self.kind)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resample_keeps_endpoints_and_linear_paths() {
        let p = Path::uniform(
            2.0,
            vec![DVector::from_vec(vec![0.0]), DVector::from_vec(vec![4.0])],
            PathKind::Full,
        );
        let r = p.resample(8);
        assert_eq!(r.states.len(), 9);
        for (t, x) in r.times.iter().zip(&r.states) {
            assert!((x[0] - 2.0 * t).abs() < 1e-14);
        }
    }

    #[test]
    fn box_membership() {
        let b = BoxDomain::uniform(2, 0.1, 1.0);
        assert!(b.contains(&DVector::from_vec(vec![0.1, 1.0])));
        assert!(!b.contains(&DVector::from_vec(vec![0.05, 0.5])));
        assert_eq!(
            b.clamp(&DVector::from_vec(vec![2.0, 0.0])),
            DVector::from_vec(vec![1.0, 0.1])
        );
    }
}

use std::collections::VecDeque;

/// Limited-memory inverse-Hessian approximation (two-loop recursion).
#[derive(Debug, Clone)]
pub(crate) struct Lbfgs {
    memory: usize,
    pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)>,
}

impl Lbfgs {
    pub fn new(memory: usize) -> Self {
        Self { memory, pairs: VecDeque::with_capacity(memory) }
    }

    pub fn reset(&mut self) {
        self.pairs.clear();
    }

    /// Store `(s, y)` if it satisfies the curvature condition.
    pub fn update(&mut self, s: Vec<f64>, y: Vec<f64>) -> bool {
        if self.memory == 0 {
            return false;
        }
        let sy = dot(&s, &y);
        let ss = dot(&s, &s);
        if !(sy > 1e-12 * ss) || !sy.is_finite() {
            return false;
        }
        if self.pairs.len() == self.memory {
            self.pairs.pop_back();
        }
        self.pairs.push_front((s, y, 1.0 / sy));
        true
    }

    /// `H·g` in place.
    pub fn apply(&self, g: &mut [f64]) {
        if self.pairs.is_empty() {
            return;
        }
        let mut alpha = vec![0.0; self.pairs.len()];
        for (k, (s, y, rho)) in self.pairs.iter().enumerate() {
            let a = rho * dot(s, g);
            alpha[k] = a;
            axpy(-a, y, g);
        }
        let (s0, y0, _) = &self.pairs[0];
        let gamma = dot(s0, y0) / dot(y0, y0);
        g.iter_mut().for_each(|x| *x *= gamma);
        for (k, (s, y, rho)) in self.pairs.iter().enumerate().rev() {
            let b = rho * dot(y, g);
            axpy(alpha[k] - b, s, g);
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += a * xi);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_inverse_of_diagonal_quadratic() {
        // f = ½ Σ d_i x_i²; y = D s
        let d = [1.0, 4.0, 9.0];
        let mut h = Lbfgs::new(5);
        for k in 0..3 {
            let mut s = vec![0.0; 3];
            s[k] = 1.0;
            let y: Vec<f64> = s.iter().zip(&d).map(|(a, b)| a * b).collect();
            assert!(h.update(s, y));
        }
        let mut g = vec![1.0, 4.0, 9.0];
        h.apply(&mut g);
        for x in g {
            assert!((x - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_negative_curvature() {
        let mut h = Lbfgs::new(3);
        assert!(!h.update(vec![1.0, 0.0], vec![-1.0, 0.0]));
        let mut g = vec![2.0, 3.0];
        h.apply(&mut g);
        assert_eq!(g, vec![2.0, 3.0]);
    }
}

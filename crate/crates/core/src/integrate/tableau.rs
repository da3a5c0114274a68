//! Gauss–Legendre collocation coefficients.

use nalgebra::DMatrix;

/// Nodes `cᵢ`, stage coefficients `aᵢⱼ = ∫₀^{cᵢ} lⱼ` and weights
/// `aⱼ = ∫₀¹ lⱼ` of an `s`-stage collocation method.
#[derive(Debug, Clone, PartialEq)]
pub struct CollocationTableau {
    pub nodes: Vec<f64>,
    pub stage: DMatrix<f64>,
    pub weights: Vec<f64>,
}

/// Gauss–Legendre nodes on `[0, 1]` for `s ∈ {1, 2, 3}`.
pub fn gauss_legendre_nodes(s: usize) -> Option<Vec<f64>> {
    let r3 = 3f64.sqrt() / 6.0;
    let r15 = 15f64.sqrt() / 10.0;
    match s {
        1 => Some(vec![0.5]),
        2 => Some(vec![0.5 - r3, 0.5 + r3]),
        3 => Some(vec![0.5 - r15, 0.5, 0.5 + r15]),
        _ => None,
    }
}

/// Monomial coefficients (ascending) of the `j`-th Lagrange basis polynomial.
fn lagrange_coefficients(nodes: &[f64], j: usize) -> Vec<f64> {
    let mut coef = vec![1.0];
    for (m, &cm) in nodes.iter().enumerate() {
        if m == j {
            continue;
        }
        let denom = nodes[j] - cm;
        let mut next = vec![0.0; coef.len() + 1];
        for (p, &c) in coef.iter().enumerate() {
            next[p + 1] += c / denom;
            next[p] -= c * cm / denom;
        }
        coef = next;
    }
    coef
}

fn integrate_poly(coef: &[f64], upper: f64) -> f64 {
    coef.iter()
        .enumerate()
        .map(|(p, c)| c * upper.powi(p as i32 + 1) / (p as f64 + 1.0))
        .sum()
}

impl CollocationTableau {
    pub fn from_nodes(nodes: Vec<f64>) -> Self {
        let s = nodes.len();
        let basis: Vec<Vec<f64>> = (0..s).map(|j| lagrange_coefficients(&nodes, j)).collect();
        let stage = DMatrix::from_fn(s, s, |i, j| integrate_poly(&basis[j], nodes[i]));
        let weights = basis.iter().map(|b| integrate_poly(b, 1.0)).collect();
        Self {
            nodes,
            stage,
            weights,
        }
    }

    pub fn gauss(s: usize) -> Option<Self> {
        gauss_legendre_nodes(s).map(Self::from_nodes)
    }

    pub fn stages(&self) -> usize {
        self.nodes.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn implicit_midpoint() {
        let t = CollocationTableau::gauss(1).unwrap();
        assert_eq!(t.stage[(0, 0)], 0.5);
        assert_eq!(t.weights, vec![1.0]);
    }

    #[test]
    fn two_stage_gauss_matches_closed_form() {
        let t = CollocationTableau::gauss(2).unwrap();
        let r = 3f64.sqrt() / 6.0;
        let expected = [[0.25, 0.25 - r], [0.25 + r, 0.25]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((t.stage[(i, j)] - expected[i][j]).abs() < 1e-14);
            }
            assert!((t.weights[i] - 0.5).abs() < 1e-14);
        }
    }

    #[test]
    fn three_stage_gauss_weights_and_row_sums() {
        let t = CollocationTableau::gauss(3).unwrap();
        let w = [5.0 / 18.0, 4.0 / 9.0, 5.0 / 18.0];
        for i in 0..3 {
            assert!((t.weights[i] - w[i]).abs() < 1e-14);
            // row sums reproduce the nodes
            let row: f64 = t.stage.row(i).sum();
            assert!((row - t.nodes[i]).abs() < 1e-14);
        }
        assert!((t.stage[(0, 0)] - 5.0 / 36.0).abs() < 1e-14);
    }
}

use crate::dist::{marginal, Axes, Joint3};

/// Conditional-independence proxy `P(x1,y) P(x2,y) / P(y)`; zero where
/// `P(y) = 0`. Its `(X1,Y)` and `(X2,Y)` marginals equal those of `p`.
pub fn analytical_init(p: &Joint3) -> Joint3 {
    let [a, b, c] = p.dims();
    let m1 = marginal(p, Axes::X1Y);
    let m2 = marginal(p, Axes::X2Y);
    let py = m1.sum_first();
    let mut q = vec![0.0; a * b * c];
    for i in 0..a {
        for j in 0..b {
            for k in 0..c {
                if py[k] > 0.0 {
                    q[(i * b + j) * c + k] = m1.probs[i * c + k] * m2.probs[j * c + k] / py[k];
                }
            }
        }
    }
    Joint3::from_parts(p.dims(), q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::build_joint;
    use crate::synth::{gen_gate, Gate};

    #[test]
    fn xor_proxy_is_uniform() {
        let q = analytical_init(&gen_gate(Gate::Xor));
        assert!(q.probs().iter().all(|&v| (v - 0.125).abs() < 1e-15));
    }

    #[test]
    fn product_distribution_is_reproduced() {
        let mut raw = Vec::new();
        for a in [0.1, 0.9] {
            for b in [0.3, 0.3, 0.4] {
                for c in [0.25, 0.75] {
                    raw.push(a * b * c);
                }
            }
        }
        let p = build_joint([2, 3, 2], &raw).unwrap();
        let q = analytical_init(&p);
        for (x, y) in q.probs().iter().zip(p.probs()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn marginals_are_preserved() {
        let p = build_joint([3, 2, 2], &[1., 0., 2., 3., 0., 0., 4., 1., 1., 1., 0., 5.]).unwrap();
        let q = analytical_init(&p);
        assert!(q.marginal_deviation(&p) < 1e-12);
        assert!((q.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

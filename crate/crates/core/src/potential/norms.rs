//! Empirical Hölder norms ‖f‖_α = ‖f‖ + R^α H_α[f] and the order-k
//! versions ‖f‖^{(k)}_α = sup_{|β|=k} ‖D^βf‖_α.
//!
//! Estimates are maxima over a seeded sample of points and pairs. Samples
//! are drawn as one stream, so a larger count only adds pairs and the
//! estimates never decrease.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::field::ScalarField;
use crate::multiindex::MultiIndex;
use crate::residue::random_in_ball;
use crate::specfun::norm;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderNorm {
    pub order: u32,
    /// sup over |β| = order of sup|D^βf|.
    pub sup: f64,
    /// sup over |β| = order of H_α[D^βf].
    pub holder: f64,
    /// ‖f‖^{(order)}_α.
    pub composite: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormEstimate {
    pub alpha: f64,
    pub radius: f64,
    pub samples: usize,
    pub sup: f64,
    pub holder: f64,
    pub composite: f64,
    /// Orders 0..=k.
    pub per_order: Vec<OrderNorm>,
}

impl NormEstimate {
    pub fn order(&self, l: u32) -> Option<&OrderNorm> {
        self.per_order.iter().find(|o| o.order == l)
    }
}

// Points p_i in the ball and partners q_i: every other partner is a nearby
// point at a log-uniform distance so that short-range quotients are seen.
fn sample_pairs(n: usize, radius: f64, count: usize, seed: u64) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let p = random_in_ball(&mut rng, n, radius);
            let q = if i % 2 == 0 {
                random_in_ball(&mut rng, n, radius)
            } else {
                let dist = radius * 10f64.powf(-3.0 * rng.gen::<f64>());
                let dir = random_in_ball(&mut rng, n, 1.0);
                let dn = norm(&dir).max(1e-12);
                let mut q: Vec<f64> = p.iter().zip(&dir).map(|(a, d)| a + dist * d / dn).collect();
                let qn = norm(&q);
                if qn > radius {
                    q.iter_mut().for_each(|v| *v *= radius / qn);
                }
                q
            };
            (p, q)
        })
        .collect()
}

/// Norms of the derivatives supplied by `deriv(β, x)` for the listed orders,
/// sampled in the ball of radius `frac`·R.
#[allow(clippy::too_many_arguments)]
pub fn empirical_norms(
    n: usize,
    radius: f64,
    alpha: f64,
    orders: &[u32],
    deriv: &(dyn Fn(&MultiIndex, &[f64]) -> f64 + Sync),
    samples: usize,
    seed: u64,
    frac: f64,
) -> Vec<OrderNorm> {
    let pairs = sample_pairs(n, frac * radius, samples, seed);
    orders
        .iter()
        .map(|&l| {
            let betas = MultiIndex::all_of_order(n, l);
            let per_pair: Vec<(f64, f64)> = pairs
                .par_iter()
                .map(|(p, q)| {
                    let d = norm(&p.iter().zip(q).map(|(a, b)| a - b).collect::<Vec<_>>());
                    let mut sup = 0.0f64;
                    let mut hol = 0.0f64;
                    for b in &betas {
                        let (fp, fq) = (deriv(b, p), deriv(b, q));
                        sup = sup.max(fp.abs()).max(fq.abs());
                        if d > 0.0 {
                            hol = hol.max((fp - fq).abs() / d.powf(alpha));
                        }
                    }
                    (sup, hol)
                })
                .collect();
            let sup = per_pair.iter().fold(0.0f64, |a, v| a.max(v.0));
            let holder = per_pair.iter().fold(0.0f64, |a, v| a.max(v.1));
            OrderNorm { order: l, sup, holder, composite: sup + radius.powf(alpha) * holder }
        })
        .collect()
}

/// ‖f‖_α and ‖f‖^{(l)}_α for l ≤ k over the whole ball.
pub fn holder_norms(f: &dyn ScalarField, alpha: f64, k: u32, sample_count: usize, seed: u64) -> NormEstimate {
    holder_norms_in(f, alpha, k, sample_count, seed, 1.0)
}

/// As [`holder_norms`] with samples restricted to |x| ≤ frac·R.
pub fn holder_norms_in(f: &dyn ScalarField, alpha: f64, k: u32, sample_count: usize, seed: u64, frac: f64) -> NormEstimate {
    assert!(alpha > 0.0 && alpha < 1.0, "Hölder exponent must lie in (0, 1)");
    let orders: Vec<u32> = (0..=k).collect();
    let deriv = |b: &MultiIndex, x: &[f64]| if b.is_zero() { f.value(x) } else { f.derivative(b, x) };
    let per_order = empirical_norms(f.dim(), f.radius(), alpha, &orders, &deriv, sample_count, seed, frac);
    let base = per_order[0].clone();
    NormEstimate {
        alpha,
        radius: f.radius(),
        samples: sample_count,
        sup: base.sup,
        holder: base.holder,
        composite: base.composite,
        per_order,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polys::Polynomial;
    use crate::potential::PolyField;

    #[test]
    fn constant_field() {
        let f = PolyField::new(Polynomial::constant(3, -2.5), 1.0);
        let e = holder_norms(&f, 0.5, 0, 200, 1);
        assert_eq!(e.holder, 0.0);
        assert_eq!(e.composite, 2.5);
    }

    #[test]
    fn linear_field_holder_increases_toward_sqrt2() {
        let f = PolyField::new(Polynomial::variable(3, 0), 1.0);
        let mut last = 0.0;
        for m in [100, 1000, 10000] {
            let e = holder_norms(&f, 0.5, 0, m, 7);
            assert!(e.holder >= last);
            assert!(e.holder <= 2f64.sqrt() + 1e-12);
            last = e.holder;
        }
        assert!(last > 1.2);
    }

    #[test]
    fn reproducible() {
        let f = PolyField::new(Polynomial::r_squared(3), 1.0);
        assert_eq!(holder_norms(&f, 0.3, 2, 300, 5), holder_norms(&f, 0.3, 2, 300, 5));
    }
}

//! One-dimensional adaptive Gauss–Kronrod integration and fixed triangle rules.

use crate::error::{Error, Result};

// Gauss–Kronrod 7/15 abscissae and weights on [-1, 1] (QUADPACK qk15).
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
// Gauss weights for the nodes XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

const MAX_INTERVALS: usize = 4000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

fn kronrod15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Segment {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let dx = half * XGK[j];
        let pair = f(center - dx) + f(center + dx);
        kronrod += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    Segment {
        a,
        b,
        value: kronrod * half,
        error: ((kronrod - gauss) * half).abs(),
    }
}

/// Adaptive integration of `f` over `[a, b]` with global error control.
///
/// Stops once the summed error estimate is below `max(abs_tol, rel_tol·|I|)`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64, rel_tol: f64) -> Result<Estimate> {
    integrate_with_breaks(f, &[a, b], abs_tol, rel_tol)
}

/// Same as [`integrate`] with the initial partition given by `breaks`
/// (sorted; the integral runs from the first to the last entry).
pub fn integrate_with_breaks<F: Fn(f64) -> f64>(
    f: F,
    breaks: &[f64],
    abs_tol: f64,
    rel_tol: f64,
) -> Result<Estimate> {
    if breaks.len() < 2 {
        return Err(Error::InvalidInput("integration needs at least two breakpoints".into()));
    }
    let mut segments: Vec<Segment> = breaks
        .windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| kronrod15(&f, w[0], w[1]))
        .collect();
    if segments.is_empty() {
        return Ok(Estimate { value: 0.0, error: 0.0 });
    }
    loop {
        let value: f64 = segments.iter().map(|s| s.value).sum();
        let error: f64 = segments.iter().map(|s| s.error).sum();
        if !value.is_finite() {
            return Err(Error::Quadrature {
                estimate: f64::INFINITY,
                tolerance: abs_tol,
            });
        }
        let tolerance = abs_tol.max(rel_tol * value.abs());
        if error <= tolerance {
            return Ok(Estimate { value, error });
        }
        if segments.len() >= MAX_INTERVALS {
            return Err(Error::Quadrature {
                estimate: error,
                tolerance,
            });
        }
        let (worst, _) = segments
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, s)| if s.error > acc.1 { (i, s.error) } else { acc });
        let seg = segments[worst];
        let mid = 0.5 * (seg.a + seg.b);
        if !(mid > seg.a && mid < seg.b) {
            // interval no longer splittable in floating point
            return Err(Error::Quadrature {
                estimate: error,
                tolerance,
            });
        }
        segments[worst] = kronrod15(&f, seg.a, mid);
        segments.push(kronrod15(&f, mid, seg.b));
    }
}

/// Symmetric quadrature rule on a triangle in barycentric coordinates.
/// Weights sum to one; integrals are `area · Σ w_q g(x_q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleRule {
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    pub degree: u32,
}

impl TriangleRule {
    /// 7-point rule exact for polynomials of degree 5.
    pub fn degree5() -> Self {
        let s15 = 15f64.sqrt();
        let b1 = (6.0 - s15) / 21.0;
        let b2 = (6.0 + s15) / 21.0;
        let w1 = (155.0 - s15) / 1200.0;
        let w2 = (155.0 + s15) / 1200.0;
        let mut rule = TriangleRule {
            points: vec![[1.0 / 3.0; 3]],
            weights: vec![9.0 / 40.0],
            degree: 5,
        };
        rule.push_orbit3(b1, w1);
        rule.push_orbit3(b2, w2);
        rule
    }

    /// 16-point rule exact for polynomials of degree 8.
    pub fn degree8() -> Self {
        let mut rule = TriangleRule {
            points: vec![[1.0 / 3.0; 3]],
            weights: vec![0.144_315_607_677_787],
            degree: 8,
        };
        rule.push_orbit3(0.459_292_588_292_723, 0.095_091_634_267_285);
        rule.push_orbit3(0.170_569_307_751_760, 0.103_217_370_534_718);
        rule.push_orbit3(0.050_547_228_317_031, 0.032_458_497_623_198);
        let (a, b) = (0.008_394_777_409_958, 0.263_112_829_634_638);
        let c = 1.0 - a - b;
        for p in [[a, b, c], [a, c, b], [b, a, c], [b, c, a], [c, a, b], [c, b, a]] {
            rule.points.push(p);
            rule.weights.push(0.027_230_314_174_435);
        }
        rule
    }

    pub fn with_degree(degree: u32) -> Result<Self> {
        match degree {
            5 => Ok(Self::degree5()),
            8 => Ok(Self::degree8()),
            d => Err(Error::InvalidInput(format!("no triangle rule of degree {d} (use 5 or 8)"))),
        }
    }

    // orbit (1-2b, b, b) and its permutations
    fn push_orbit3(&mut self, b: f64, w: f64) {
        let a = 1.0 - 2.0 * b;
        for p in [[a, b, b], [b, a, b], [b, b, a]] {
            self.points.push(p);
            self.weights.push(w);
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_kronrod_polynomial_and_exponential() {
        let est = integrate(|x| x * x, 0.0, 3.0, 1e-14, 0.0).unwrap();
        assert!((est.value - 9.0).abs() < 1e-13);
        let est = integrate(|x| (-x).exp(), 0.0, 40.0, 1e-14, 0.0).unwrap();
        assert!((est.value - (1.0 - (-40f64).exp())).abs() < 1e-13);
    }

    #[test]
    fn peaked_integrand_converges() {
        // ∫_0^1 e^{-200 s} ds
        let est = integrate(|s| (-200.0 * s).exp(), 0.0, 1.0, 1e-15, 0.0).unwrap();
        let exact = (1.0 - (-200f64).exp()) / 200.0;
        assert!((est.value - exact).abs() < 1e-14);
    }

    #[test]
    fn quadrature_failure_reports_estimate() {
        let err = integrate(|x| 1.0 / x.abs().sqrt().max(1e-300) * x.signum(), -1.0, 1.0, 1e-16, 0.0);
        // odd integrable singularity; either converges to ~0 or reports its estimate
        if let Err(Error::Quadrature { estimate, .. }) = err {
            assert!(estimate > 0.0);
        }
        let err = integrate(|_| f64::INFINITY, 0.0, 1.0, 1e-10, 0.0).unwrap_err();
        assert!(matches!(err, Error::Quadrature { .. }));
    }

    // exact ∫ over the reference triangle of L1^i L2^j L3^k = 2·i!j!k!/(i+j+k+2)!
    fn monomial_exact(i: u32, j: u32, k: u32) -> f64 {
        let fact = |n: u32| (1..=n).map(f64::from).product::<f64>();
        2.0 * fact(i) * fact(j) * fact(k) / fact(i + j + k + 2)
    }

    fn check_rule(rule: &TriangleRule) {
        let w: f64 = rule.weights.iter().sum();
        assert!((w - 1.0).abs() < 1e-13, "weights sum {w}");
        for total in 0..=rule.degree {
            for i in 0..=total {
                for j in 0..=(total - i) {
                    let k = total - i - j;
                    let approx: f64 = rule
                        .points
                        .iter()
                        .zip(&rule.weights)
                        .map(|(p, w)| w * p[0].powi(i as i32) * p[1].powi(j as i32) * p[2].powi(k as i32))
                        .sum::<f64>()
                        * 0.5;
                    let exact = 0.5 * monomial_exact(i, j, k);
                    assert!(
                        (approx - exact).abs() < 1e-13,
                        "degree {} rule fails on ({i},{j},{k}): {approx} vs {exact}",
                        rule.degree
                    );
                }
            }
        }
    }

    #[test]
    fn triangle_rules_are_exact_to_their_degree() {
        check_rule(&TriangleRule::degree5());
        check_rule(&TriangleRule::degree8());
        assert!(TriangleRule::with_degree(3).is_err());
    }
}

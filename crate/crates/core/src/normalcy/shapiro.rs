//! Shapiro-Wilk W test with Royston's coefficient approximation and
//! normalizing transformation for the p-value (3 <= n <= 5000).

use statrs::distribution::{ContinuousCDF, Normal};

use super::NormalcyError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapiroWilk {
    pub w: f64,
    pub p_value: f64,
}

const C1: [f64; 6] = [0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056];
const C2: [f64; 6] = [0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633];
const C3: [f64; 4] = [0.5440, -0.39978, 0.025054, -6.714e-4];
const C4: [f64; 4] = [1.3822, -0.77857, 0.062767, -0.0020322];
const C5: [f64; 4] = [-1.5861, -0.31082, -0.083751, 0.0038915];
const C6: [f64; 3] = [-0.4803, -0.082676, 0.0030302];
const G: [f64; 2] = [-2.273, 0.459];

fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ci| acc * x + ci)
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// Half of the antisymmetric coefficient vector, a[0] being the weight of the
/// extreme pair.
fn coefficients(n: usize) -> Vec<f64> {
    let half = n / 2;
    if n == 3 {
        return vec![std::f64::consts::FRAC_1_SQRT_2];
    }
    let nf = n as f64;
    let norm = std_normal();
    let m: Vec<f64> = (1..=half).map(|i| norm.inverse_cdf((i as f64 - 0.375) / (nf + 0.25))).collect();
    let summ2 = 2.0 * m.iter().map(|v| v * v).sum::<f64>();
    let ssumm2 = summ2.sqrt();
    let rsn = 1.0 / nf.sqrt();
    let a1 = poly(&C1, rsn) - m[0] / ssumm2;

    let mut a = vec![0.0; half];
    a[0] = a1;
    let (first, fac) = if n > 5 {
        let a2 = -m[1] / ssumm2 + poly(&C2, rsn);
        a[1] = a2;
        let fac = ((summ2 - 2.0 * m[0].powi(2) - 2.0 * m[1].powi(2))
            / (1.0 - 2.0 * a1.powi(2) - 2.0 * a2.powi(2)))
        .sqrt();
        (2, fac)
    } else {
        let fac = ((summ2 - 2.0 * m[0].powi(2)) / (1.0 - 2.0 * a1.powi(2))).sqrt();
        (1, fac)
    };
    for i in first..half {
        a[i] = -m[i] / fac;
    }
    a
}

pub fn shapiro_wilk(samples: &[f64]) -> Result<ShapiroWilk, NormalcyError> {
    let n = samples.len();
    if !(3..=5000).contains(&n) {
        return Err(NormalcyError::UnsupportedSize(n));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(NormalcyError::NonFinite);
    }
    let mut x = samples.to_vec();
    x.sort_by(f64::total_cmp);
    let range = x[n - 1] - x[0];
    if range <= 0.0 {
        return Err(NormalcyError::ZeroVariance);
    }
    // scale for numerical stability; W is scale invariant
    let mean = x.iter().sum::<f64>() / n as f64;
    let xs: Vec<f64> = x.iter().map(|v| (v - mean) / range).collect();
    let ssq: f64 = xs.iter().map(|v| v * v).sum();

    let a = coefficients(n);
    let num: f64 = a.iter().enumerate().map(|(i, ai)| ai * (xs[n - 1 - i] - xs[i])).sum();
    let w = (num * num / ssq).min(1.0);

    let nf = n as f64;
    let p_value = if n == 3 {
        let pi6 = 6.0 / std::f64::consts::PI;
        let stqr = std::f64::consts::PI / 3.0;
        (pi6 * (w.sqrt().asin() - stqr)).max(0.0)
    } else {
        let y = (1.0 - w).ln();
        let (y, mu, sigma) = if n <= 11 {
            let gamma = poly(&G, nf);
            if y >= gamma {
                return Ok(ShapiroWilk { w, p_value: 1e-99 });
            }
            (-(gamma - y).ln(), poly(&C3, nf), poly(&C4, nf).exp())
        } else {
            let ln_n = nf.ln();
            (y, poly(&C5, ln_n), poly(&C6, ln_n).exp())
        };
        std_normal().sf((y - mu) / sigma)
    };
    Ok(ShapiroWilk { w, p_value })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_input_rejected() {
        assert_eq!(shapiro_wilk(&[3.0, 3.0, 3.0, 3.0]), Err(NormalcyError::ZeroVariance));
    }

    #[test]
    fn size_limits() {
        assert_eq!(shapiro_wilk(&[1.0, 2.0]), Err(NormalcyError::UnsupportedSize(2)));
        assert_eq!(shapiro_wilk(&vec![1.0; 5001]), Err(NormalcyError::UnsupportedSize(5001)));
    }

    #[test]
    fn three_points() {
        // equally spaced triple is perfectly "normal"
        let r = shapiro_wilk(&[1.0, 2.0, 3.0]).unwrap();
        assert!((r.w - 1.0).abs() < 1e-12);
        assert!((r.p_value - 1.0).abs() < 1e-9);
    }

    #[test]
    fn reference_values() {
        // expected values from scipy.stats.shapiro (same AS R94 algorithm)
        let cases: [(&[f64], f64, f64); 4] = [
            (
                &[148.0, 154.0, 158.0, 160.0, 161.0, 162.0, 166.0, 170.0, 182.0, 195.0, 236.0],
                0.7888146948631716,
                0.006703814061898823,
            ),
            (
                &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0, 12.0, 13.0, 14.0, 15.0, 16.0, 17.0, 18.0, 19.0, 20.0],
                0.9603751832429884,
                0.5513717457916771,
            ),
            (&[2.1, 3.4, 1.9, 5.6, 4.4, 3.3, 2.8, 4.0, 3.9, 6.1, 2.2, 3.0], 0.9361739248991507, 0.4501508212268392),
            (&[1.0, 2.0, 4.0, 7.0, 11.0], 0.9344338591018548, 0.6269016416083146),
        ];
        for (x, w, p) in cases {
            let r = shapiro_wilk(x).unwrap();
            assert!((r.w - w).abs() < 1e-4, "w = {} vs {w}", r.w);
            assert!((r.p_value - p).abs() < 1e-3, "p = {} vs {p}", r.p_value);
        }
    }

    #[test]
    fn w_is_scale_and_shift_invariant() {
        let x = [2.1, 3.4, 1.9, 5.6, 4.4, 3.3, 2.8, 4.0, 3.9, 6.1, 2.2, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 100.0 + 7.0 * v).collect();
        let a = shapiro_wilk(&x).unwrap();
        let b = shapiro_wilk(&y).unwrap();
        assert!((a.w - b.w).abs() < 1e-12);
        assert!(a.w > 0.0 && a.w <= 1.0);
    }
}

//! Log-Gamma and log-Beta for the Beta-marginal selector score.
//!
//! Prior parameters reach 1e9, where `lnΓ(a) + lnΓ(b) − lnΓ(a+b)` loses
//! about six digits to cancellation. `ln_beta` avoids forming the large
//! Gamma values and works with the Stirling remainders instead.

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Stirling remainder `lnΓ(x) − ((x − ½)ln x − x + ½ln 2π)` for `x ≥ 10`.
fn stirling_remainder(x: f64) -> f64 {
    debug_assert!(x >= 10.0);
    const C: [f64; 6] = [
        1.0 / 12.0,
        -1.0 / 360.0,
        1.0 / 1260.0,
        -1.0 / 1680.0,
        1.0 / 1188.0,
        -691.0 / 360_360.0,
    ];
    let inv2 = 1.0 / (x * x);
    let mut acc = 0.0;
    for &c in C.iter().rev() {
        acc = acc * inv2 + c;
    }
    acc / x
}

/// Natural log of Γ(x) for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    assert!(x > 0.0, "ln_gamma domain is x > 0, got {x}");
    if x >= 10.0 {
        return (x - 0.5) * x.ln() - x + LN_SQRT_2PI + stirling_remainder(x);
    }
    // Shift up with Γ(x) = Γ(x+n) / (x (x+1) ... (x+n-1)).
    let mut shifted = x;
    let mut prod = 1.0;
    while shifted < 10.0 {
        prod *= shifted;
        shifted += 1.0;
    }
    ln_gamma(shifted) - prod.ln()
}

/// Natural log of the Beta function, `ln B(a, b)`, for `a, b > 0`.
pub fn ln_beta(a: f64, b: f64) -> f64 {
    assert!(a > 0.0 && b > 0.0, "ln_beta domain is a, b > 0, got ({a}, {b})");
    let (p, q) = if a <= b { (a, b) } else { (b, a) };
    let sum = p + q;
    if p == 1.0 {
        -q.ln()
    } else if p >= 10.0 {
        let corr = stirling_remainder(p) + stirling_remainder(q) - stirling_remainder(sum);
        -0.5 * q.ln() + LN_SQRT_2PI + corr + (p - 0.5) * (p / sum).ln() + q * (-p / sum).ln_1p()
    } else if q >= 10.0 {
        let corr = stirling_remainder(q) - stirling_remainder(sum);
        ln_gamma(p) + corr + p - p * sum.ln() + (q - 0.5) * (-p / sum).ln_1p()
    } else {
        ln_gamma(p) + ln_gamma(q) - ln_gamma(sum)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_at_integers() {
        let mut fact = 1.0_f64;
        for n in 1..30 {
            // Γ(n) = (n-1)!
            assert!((ln_gamma(n as f64) - fact.ln()).abs() < 1e-12, "n={n}");
            fact *= n as f64;
        }
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-13);
    }

    #[test]
    fn beta_closed_forms() {
        assert!(ln_beta(1.0, 1.0).abs() < 1e-15);
        // B(3,2) = 2!·1!/4! = 1/12
        assert!((ln_beta(3.0, 2.0) - (1.0_f64 / 12.0).ln()).abs() < 1e-14);
        // B(1,b) = 1/b, including far into the large-argument branch
        for b in [2.0, 9.5, 10.0, 1e3, 1e6, 1e9] {
            assert!((ln_beta(1.0, b) + f64::ln(b)).abs() < 1e-12, "b={b}");
            assert!((ln_beta(b, 1.0) + f64::ln(b)).abs() < 1e-12, "b={b}");
        }
    }

    #[test]
    fn beta_matches_statrs_at_moderate_arguments() {
        for &(a, b) in &[(0.3, 7.0), (2.5, 40.0), (12.0, 15.5), (100.0, 3.0), (55.0, 1234.0)] {
            let reference = statrs::function::gamma::ln_gamma(a) + statrs::function::gamma::ln_gamma(b)
                - statrs::function::gamma::ln_gamma(a + b);
            assert!((ln_beta(a, b) - reference).abs() < 1e-10, "({a},{b})");
        }
    }
}

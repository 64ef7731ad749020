//! Modified Bessel function of the second kind for real order.
//!
//! Temme's series for `x < 2`, Steed's continued fraction otherwise, then
//! forward recurrence from the fractional order `|μ| ≤ 1/2` up to `ν`.
//! Values are carried in log form so large orders and arguments do not
//! overflow.

use core::f64::consts::PI;

const EPS: f64 = 1e-16;
const MAX_ITER: usize = 10_000;
const RESCALE: f64 = 1e250;

/// Taylor coefficients of 1/Γ(z) = Σ c_k z^k, k = 1..26.
const INV_GAMMA_SERIES: [f64; 26] = [
    1.0000000000000000,
    0.5772156649015329,
    -0.6558780715202538,
    -0.0420026350340952,
    0.1665386113822915,
    -0.0421977345555443,
    -0.0096219715278770,
    0.0072189432466630,
    -0.0011651675918591,
    -0.0002152416741149,
    0.0001280502823882,
    -0.0000201348547807,
    -0.0000012504934821,
    0.0000011330272320,
    -0.0000002056338417,
    0.0000000061160950,
    0.0000000050020075,
    -0.0000000011812746,
    0.0000000001043427,
    0.0000000000077823,
    -0.0000000000036968,
    0.0000000000005100,
    -0.0000000000000206,
    -0.0000000000000054,
    0.0000000000000014,
    0.0000000000000001,
];

/// Returns `(gam1, gam2, 1/Γ(1+μ), 1/Γ(1-μ))` for `|μ| ≤ 1/2`, where
/// `gam1 = (1/Γ(1-μ) - 1/Γ(1+μ)) / (2μ)` and
/// `gam2 = (1/Γ(1-μ) + 1/Γ(1+μ)) / 2`.
fn temme_gammas(mu: f64) -> (f64, f64, f64, f64) {
    // 1/Γ(1+x) = Σ_k c_k x^(k-1); split into even and odd parts in μ.
    let mu2 = mu * mu;
    let mut even = 0.0; // Σ c_{odd k} μ^(k-1)
    let mut odd = 0.0; // Σ c_{even k} μ^(k-2)
    let mut p = 1.0;
    for pair in INV_GAMMA_SERIES.chunks(2) {
        even += pair[0] * p;
        if let Some(&c) = pair.get(1) {
            odd += c * p;
        }
        p *= mu2;
    }
    let gampl = even + mu * odd;
    let gammi = even - mu * odd;
    (-odd, even, gampl, gammi)
}

/// Reciprocal gamma 1/Γ(1+μ) from the series; exposed for tests.
#[doc(hidden)]
pub fn inv_gamma_one_plus(mu: f64) -> f64 {
    temme_gammas(mu).2
}

/// `ln K_ν(x)` for `x > 0`. Order sign is irrelevant (`K_{-ν} = K_ν`).
pub fn ln_bessel_k(nu: f64, x: f64) -> f64 {
    debug_assert!(x > 0.0);
    let nu = nu.abs();
    let nl = libm::floor(nu + 0.5) as usize;
    let xmu = nu - nl as f64;
    let xmu2 = xmu * xmu;
    let xi = 1.0 / x;
    let xi2 = 2.0 * xi;

    // (K_μ, K_{μ+1}) = (rkmu, rk1) · exp(log_scale)
    let (mut rkmu, mut rk1, mut log_scale);
    if x < 2.0 {
        let x2 = 0.5 * x;
        let pimu = PI * xmu;
        let fact = if pimu.abs() < EPS {
            1.0
        } else {
            pimu / libm::sin(pimu)
        };
        let d = -libm::log(x2);
        let e = xmu * d;
        let fact2 = if e.abs() < EPS {
            1.0
        } else {
            libm::sinh(e) / e
        };
        let (gam1, gam2, gampl, gammi) = temme_gammas(xmu);
        let mut ff = fact * (gam1 * libm::cosh(e) + gam2 * fact2 * d);
        let mut sum = ff;
        let ee = libm::exp(e);
        let mut p = 0.5 * ee / gampl;
        let mut q = 0.5 / (ee * gammi);
        let mut c = 1.0;
        let dd = x2 * x2;
        let mut sum1 = p;
        for i in 1..MAX_ITER {
            let fi = i as f64;
            ff = (fi * ff + p + q) / (fi * fi - xmu2);
            c *= dd / fi;
            p /= fi - xmu;
            q /= fi + xmu;
            let del = c * ff;
            sum += del;
            let del1 = c * (p - fi * ff);
            sum1 += del1;
            if del.abs() < sum.abs() * EPS {
                break;
            }
        }
        rkmu = sum;
        rk1 = sum1 * xi2;
        log_scale = 0.0;
    } else {
        let mut b = 2.0 * (1.0 + x);
        let mut d = 1.0 / b;
        let mut h = d;
        let mut delh = d;
        let mut q1 = 0.0;
        let mut q2 = 1.0;
        let a1 = 0.25 - xmu2;
        let mut q = a1;
        let mut c = a1;
        let mut a = -a1;
        let mut s = 1.0 + q * delh;
        for i in 2..MAX_ITER {
            let fi = i as f64;
            a -= 2.0 * (fi - 1.0);
            c = -a * c / fi;
            let qnew = (q1 - b * q2) / a;
            q1 = q2;
            q2 = qnew;
            q += c * qnew;
            b += 2.0;
            d = 1.0 / (b + a * d);
            delh *= b * d - 1.0;
            h += delh;
            let dels = q * delh;
            s += dels;
            if (dels / s).abs() < EPS {
                break;
            }
        }
        h *= a1;
        // e^{-x} kept in the log scale.
        rkmu = libm::sqrt(PI / (2.0 * x)) / s;
        rk1 = rkmu * (xmu + x + 0.5 - h) * xi;
        log_scale = -x;
    }

    for i in 1..=nl {
        let next = (xmu + i as f64) * xi2 * rk1 + rkmu;
        rkmu = rk1;
        rk1 = next;
        if rk1 > RESCALE {
            rkmu /= RESCALE;
            rk1 /= RESCALE;
            log_scale += libm::log(RESCALE);
        }
    }
    libm::log(rkmu) + log_scale
}

/// `K_ν(x)` for `x > 0`. Overflows to `inf` / underflows to 0 at extremes;
/// use [`ln_bessel_k`] when that matters.
pub fn bessel_k(nu: f64, x: f64) -> f64 {
    libm::exp(ln_bessel_k(nu, x))
}

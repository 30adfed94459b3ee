//! Real spherical harmonics with Schmidt semi-normalization,
//! `Y_ℓm = sqrt((2 - δ_m0) (ℓ-m)!/(ℓ+m)!) P_ℓ^m(cos θ) · {cos mφ, sin |m|φ}`
//! (cosine for `m ≥ 0`, sine for `m < 0`, no Condon–Shortley phase).
//! `|Y_ℓm| ≤ 1` and `Y_ℓ0 = P_ℓ(cos θ)`.

/// Associated Legendre function `P_ℓ^m(x)` without the Condon–Shortley phase.
pub fn assoc_legendre(l: usize, m: usize, x: f64) -> f64 {
    if m > l {
        return 0.0;
    }
    let somx2 = ((1.0 - x) * (1.0 + x)).max(0.0).sqrt();
    let mut pmm = 1.0;
    let mut fact = 1.0;
    for _ in 0..m {
        pmm *= fact * somx2;
        fact += 2.0;
    }
    if l == m {
        return pmm;
    }
    let mut pmmp1 = x * (2 * m + 1) as f64 * pmm;
    if l == m + 1 {
        return pmmp1;
    }
    let mut pll = 0.0;
    for ll in (m + 2)..=l {
        pll = ((2 * ll - 1) as f64 * x * pmmp1 - (ll + m - 1) as f64 * pmm) / (ll - m) as f64;
        pmm = pmmp1;
        pmmp1 = pll;
    }
    pll
}

fn schmidt(l: usize, m: usize) -> f64 {
    // (l-m)!/(l+m)! as a running product to stay in range
    let ratio: f64 = ((l - m + 1)..=(l + m)).map(|j| 1.0 / j as f64).product();
    let delta = if m == 0 { 1.0 } else { 2.0 };
    (delta * ratio).sqrt()
}

/// Real harmonic `Y_ℓm(θ, φ)`; returns 0 when `|m| > ℓ`.
pub fn real_harmonic(l: usize, m: i64, theta: f64, phi: f64) -> f64 {
    let am = m.unsigned_abs() as usize;
    if am > l {
        return 0.0;
    }
    let p = schmidt(l, am) * assoc_legendre(l, am, theta.cos());
    if m >= 0 {
        p * (am as f64 * phi).cos()
    } else {
        p * (am as f64 * phi).sin()
    }
}

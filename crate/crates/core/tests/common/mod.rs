//! Independent reference computations shared by the integration suites.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use traitseir::model::{normalize, TwoBlockSpec};
use traitseir::spectral::radius_at;
use traitseir::{EpidemicState, Field, Kernel, ModelParams, Scenario, TraitDomain};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Scalar SEIR `dS = −b S I` etc. by RK4 with `steps` equal steps.
pub fn scalar_seir(b: f64, alpha: f64, gamma: f64, y0: [f64; 4], t_end: f64, steps: usize) -> [f64; 4] {
    let f = |y: [f64; 4]| {
        let inc = b * y[0] * y[2];
        [-inc, inc - alpha * y[1], alpha * y[1] - gamma * y[2], gamma * y[2]]
    };
    let h = t_end / steps as f64;
    let mut y = y0;
    for _ in 0..steps {
        y = rk4(&f, y, h);
    }
    y
}

pub fn rk4<const N: usize>(f: &impl Fn([f64; N]) -> [f64; N], y: [f64; N], h: f64) -> [f64; N] {
    let add = |a: [f64; N], b: [f64; N], c: f64| {
        let mut o = a;
        for k in 0..N {
            o[k] += c * b[k];
        }
        o
    };
    let k1 = f(y);
    let k2 = f(add(y, k1, 0.5 * h));
    let k3 = f(add(y, k2, 0.5 * h));
    let k4 = f(add(y, k3, h));
    let mut o = y;
    for k in 0..N {
        o[k] += h / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k]);
    }
    o
}

/// Root of `f` on `[lo, hi]` by bisection (sign change assumed).
pub fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    let neg_lo = f(lo) < 0.0;
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if (f(mid) < 0.0) == neg_lo {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Root below `γ/β` of `s − (γ/β) ln s = n0 − (γ/β) ln s0`.
pub fn scalar_final_size(beta: f64, gamma: f64, s0: f64, n0: f64) -> f64 {
    let k = gamma / beta;
    let rhs = n0 - k * s0.ln();
    bisect(1e-300, k.min(s0), |s| s - k * s.ln() - rhs)
}

/// Time at which the scalar SEIR `S` crosses `level`, from a fine RK4 path
/// refined by bisection on sub-step re-integration.
pub fn scalar_crossing(b: f64, alpha: f64, gamma: f64, y0: [f64; 4], level: f64) -> f64 {
    let h = 1e-3;
    let f = |y: [f64; 4]| {
        let inc = b * y[0] * y[2];
        [-inc, inc - alpha * y[1], alpha * y[1] - gamma * y[2], gamma * y[2]]
    };
    let mut y = y0;
    let mut t = 0.0;
    loop {
        let next = rk4(&f, y, h);
        if next[0] <= level {
            let tau = bisect(0.0, h, |dt| rk4(&f, y, dt)[0] - level);
            return t + tau;
        }
        y = next;
        t += h;
        assert!(t < 1e3, "no crossing");
    }
}

/// Block-total system for the two-block scenario:
/// `dS_k = −S_k Σ_l β_kl I_l` with `I_l` block totals.
pub fn two_block_totals(spec: &TwoBlockSpec, t_end: f64, steps: usize) -> [f64; 8] {
    let b = [[spec.beta[0], spec.beta12], [spec.beta21, spec.beta[1]]];
    let (a, g) = (spec.alpha, spec.gamma);
    let f = |y: [f64; 8]| {
        let mut d = [0.0; 8];
        for k in 0..2 {
            let (s, e, i) = (y[4 * k], y[4 * k + 1], y[4 * k + 2]);
            let inc = s * (b[k][0] * y[2] + b[k][1] * y[6]);
            d[4 * k] = -inc;
            d[4 * k + 1] = inc - a[k] * e;
            d[4 * k + 2] = a[k] * e - g[k] * i;
            d[4 * k + 3] = g[k] * i;
        }
        d
    };
    let mut y = [
        spec.s0[0], spec.e0[0], spec.i0[0], spec.r0[0], spec.s0[1], spec.e0[1], spec.i0[1], spec.r0[1],
    ];
    let h = t_end / steps as f64;
    for _ in 0..steps {
        y = rk4(&f, y, h);
    }
    y
}

/// Perron root of a positive `n × n` matrix as the largest zero of
/// `det(A − λI)`, bracketed by the row-sum bounds.
pub fn perron_root(n: usize, a: &[f64]) -> f64 {
    let det = |lambda: f64| {
        let mut m = a.to_vec();
        for k in 0..n {
            m[k * n + k] -= lambda;
        }
        let mut d = 1.0;
        for c in 0..n {
            let p = (c..n).max_by(|&i, &j| m[i * n + c].abs().total_cmp(&m[j * n + c].abs())).unwrap();
            if m[p * n + c] == 0.0 {
                return 0.0;
            }
            if p != c {
                for k in 0..n {
                    m.swap(p * n + k, c * n + k);
                }
                d = -d;
            }
            d *= m[c * n + c];
            for r in c + 1..n {
                let f = m[r * n + c] / m[c * n + c];
                for k in c..n {
                    m[r * n + k] -= f * m[c * n + k];
                }
            }
        }
        d
    };
    let sums: Vec<f64> = a.chunks(n).map(|r| r.iter().sum()).collect();
    let lo = sums.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = sums.iter().cloned().fold(0.0, f64::max);
    if hi - lo < 1e-14 * hi {
        return hi;
    }
    bisect(lo * (1.0 - 1e-12), hi * (1.0 + 1e-12), det)
}

/// Smooth heterogeneous SEIR scenario on `(0,1)` with `R0` drawn from
/// `r0_range` and a localized initial infection.
pub fn random_scenario(rng: &mut ChaCha8Rng, n: usize, r0_range: (f64, f64)) -> Scenario {
    let d = TraitDomain::interval(0.0, 1.0, n).unwrap();
    let (a0, a1) = (rng.random_range(0.5..2.0), rng.random_range(0.0..0.5));
    let (g0, g1) = (rng.random_range(0.5..1.2), rng.random_range(0.0..0.5));
    let (width, tilt) = (rng.random_range(0.1..1.0), rng.random_range(0.0..1.0));
    let alpha = Field::from_fn(&d, |x| a0 + a1 * (std::f64::consts::PI * x).sin());
    let gamma = Field::from_fn(&d, |x| g0 + g1 * x);
    let beta = Kernel::from_fn(&d, |x, y| (-(x - y) * (x - y) / width).exp() * (1.0 + tilt * x));
    let params = ModelParams::new(d.clone(), alpha, gamma, beta).unwrap();

    let x0 = rng.random_range(0.1..0.9);
    let amp = rng.random_range(0.005..0.02);
    let bump = Field::from_fn(&d, |x| amp * (-(x - x0) * (x - x0) / 0.01).exp());
    let s0 = Field::from_fn(&d, |x| 0.8 + 0.2 * x * (1.0 - x));
    let s0 = s0.zip_with(&bump, |s, b| s - b);
    let init = EpidemicState::new(0.0, s0, bump.scaled(0.5), bump.clone(), Field::zeros(n)).unwrap();
    let init = normalize(&init, &d).unwrap();

    let target = rng.random_range(r0_range.0..r0_range.1);
    let r = radius_at(&params, &init.s).unwrap();
    let params = params.scale_beta(target / r).unwrap();
    Scenario::new(params, init).unwrap().named("random", "heterogeneous test scenario")
}

//! Bernoulli KL divergence and its bisection inverses.

/// Iteration cap shared by the bisection routines.
pub const KL_MAX_ITERATIONS: usize = 60;

fn entropy_term(a: f64, b: f64) -> f64 {
    if a <= 0.0 {
        0.0
    } else if b <= 0.0 {
        f64::INFINITY
    } else {
        a * (a / b).ln()
    }
}

/// `KL(Ber(p) || Ber(q))` with `0 log 0 = 0` and `x log(x/0) = +inf`.
pub fn bernoulli_kl(p: f64, q: f64) -> f64 {
    let p = p.clamp(0.0, 1.0);
    let q = q.clamp(0.0, 1.0);
    let kl = entropy_term(p, q) + entropy_term(1.0 - p, 1.0 - q);
    kl.max(0.0)
}

/// Largest `q` in `[p, 1]` with `KL(p, q) <= budget`.
///
/// Bisection keeps `lo` feasible. It stops once the bracket is narrower than
/// `tolerance` *and* the divergence at `lo` is within `tolerance` of the
/// budget, when the bracket collapses to adjacent floats, or after
/// [`KL_MAX_ITERATIONS`] halvings.
pub fn kl_upper_bound(p: f64, budget: f64, tolerance: f64) -> f64 {
    let p = p.clamp(0.0, 1.0);
    if !(budget > 0.0) || p >= 1.0 {
        return p;
    }
    let (mut lo, mut hi) = (p, 1.0);
    for _ in 0..KL_MAX_ITERATIONS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if bernoulli_kl(p, mid) > budget {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= tolerance && budget - bernoulli_kl(p, lo) <= tolerance {
            break;
        }
    }
    lo
}

/// Smallest `q` in `[0, p]` with `KL(p, q) <= budget`.
pub fn kl_lower_bound(p: f64, budget: f64, tolerance: f64) -> f64 {
    let p = p.clamp(0.0, 1.0);
    if !(budget > 0.0) || p <= 0.0 {
        return p;
    }
    let (mut lo, mut hi) = (0.0, p);
    for _ in 0..KL_MAX_ITERATIONS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if bernoulli_kl(p, mid) > budget {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= tolerance && budget - bernoulli_kl(p, hi) <= tolerance {
            break;
        }
    }
    hi
}

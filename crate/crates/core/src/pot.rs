//! Periodic-orbit-theory weights from a truncated spectral determinant over
//! prime cycles and their repeats.
//!
//! With trace coefficients
//!
//! ```text
//! C_j = − Σ_{n_p r = j} (1/r) e^{−r T_p (s − β⟨a⟩_p)} / |det(1 − M_p^r)|
//! ```
//!
//! (the transverse determinant approximated by |1 − e^{r T_p λ_p}|), the
//! determinant truncated at symbol length n is F_n = 1 + Σ_j Q_j where
//! Q_1 = C_1 and Q_j = C_j + Σ_{i<j} ((j−i)/j) C_{j−i} Q_i. The average of
//! an observable and the per-orbit weights follow from derivatives of F_n
//! at the real root s₀ of F_n(s, 0):
//!
//! ```text
//! E[a] ≈ −∂_β F_n / ∂_s F_n,      w_p = −∂_{μ_p} ∂_β F_n / ∂_s F_n.
//! ```
//!
//! All derivative recurrences are differentiated term by term (no numerical
//! differencing); ∂_{μ_p} C_j vanishes at β = 0, which collapses the mixed
//! recurrence to a linear pass per orbit.

use crate::measures::MeasureKind;
use crate::orbits::{complete_library_sizes, OrbitLibrary};
use crate::weights::{Method, Provenance, WeightVector};
use crate::{Error, Result};

/// Per-orbit data consumed by the spectral determinant.
#[derive(Debug, Clone)]
pub struct Cycle {
    pub word_len: usize,
    pub period: f64,
    pub exponent: f64,
}

#[derive(Debug, Clone)]
pub struct CycleData {
    pub cycles: Vec<Cycle>,
}

impl CycleData {
    pub fn from_library(lib: &OrbitLibrary) -> Self {
        CycleData {
            cycles: lib
                .orbits
                .iter()
                .map(|o| Cycle {
                    word_len: o.symbol.len(),
                    period: o.period,
                    exponent: o.floquet_exponent,
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.cycles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cycles.is_empty()
    }

    /// Errors unless the cycles contain exactly the complete set of prime
    /// words for every length 2..=n.
    pub fn verify_complete(&self, n: usize) -> Result<()> {
        if n < 2 {
            return Err(Error::Precondition("truncation must be >= 2".into()));
        }
        let sizes = complete_library_sizes(n)?;
        let mut counts = vec![0usize; n + 1];
        for c in &self.cycles {
            if c.word_len <= n {
                counts[c.word_len] += 1;
            }
        }
        let mut cum = 0usize;
        for l in 2..=n {
            cum += counts[l];
            if cum != sizes[l - 2] {
                return Err(Error::Precondition(format!(
                    "P={cum} at symbol length {l} is not a complete library size \
                     (expected {})",
                    sizes[l - 2]
                )));
            }
        }
        Ok(())
    }
}

/// ln(1 / |1 − e^x|) for x > 0, switching to the asymptotic −x once e^x
/// would overflow the direct form. Kept in the log domain so that the
/// combined term exp(−rTs + ln_w) never multiplies Inf by 0.
fn ln_inv_det_factor(x: f64) -> f64 {
    if x > 500.0 {
        -x
    } else {
        -(1.0 - x.exp()).abs().ln()
    }
}

/// Trace coefficients C_1..C_n at (s, β) given per-orbit averages ⟨a⟩_p.
pub fn trace_coefficients(
    cycles: &CycleData,
    n: usize,
    s: f64,
    beta: f64,
    avgs: &[f64],
) -> Result<Vec<f64>> {
    if avgs.len() != cycles.len() {
        return Err(Error::LengthMismatch(format!(
            "{} cycles vs {} observable averages",
            cycles.len(),
            avgs.len()
        )));
    }
    let mut c = vec![0.0_f64; n + 1];
    for (cycle, &a_p) in cycles.cycles.iter().zip(avgs) {
        if cycle.word_len == 0 || cycle.word_len > n {
            continue;
        }
        let mut r = 1usize;
        while r * cycle.word_len <= n {
            let j = r * cycle.word_len;
            let rf = r as f64;
            let ln_w = ln_inv_det_factor(rf * cycle.period * cycle.exponent);
            let term = (-rf * cycle.period * (s - beta * a_p) + ln_w).exp();
            c[j] -= term / rf;
            r += 1;
        }
    }
    Ok(c[1..].to_vec())
}

/// F_n and its derivatives at (s, β = 0): value, ∂_s, ∂_β, and the mixed
/// per-orbit derivatives ∂_{μ_p}∂_β.
#[derive(Debug, Clone)]
pub struct DeterminantEval {
    pub value: f64,
    pub d_s: f64,
    pub d_beta: f64,
    pub d_beta_per_orbit: Vec<f64>,
}

/// Evaluate the truncated spectral determinant and its derivatives at β = 0.
pub fn spectral_determinant(
    cycles: &CycleData,
    n: usize,
    s: f64,
    avgs: &[f64],
) -> Result<DeterminantEval> {
    if avgs.len() != cycles.len() {
        return Err(Error::LengthMismatch(format!(
            "{} cycles vs {} observable averages",
            cycles.len(),
            avgs.len()
        )));
    }
    let n_orb = cycles.len();
    // Per-j accumulators: C_j, ∂_s C_j, ∂_β C_j, and per-orbit ∂_{μ_p}∂_β C_j.
    let mut c = vec![0.0_f64; n + 1];
    let mut cs = vec![0.0_f64; n + 1];
    let mut cb = vec![0.0_f64; n + 1];
    let mut cw = vec![vec![0.0_f64; n + 1]; n_orb];
    for (p_idx, (cycle, &a_p)) in cycles.cycles.iter().zip(avgs).enumerate() {
        if cycle.word_len == 0 || cycle.word_len > n {
            continue;
        }
        let mut r = 1usize;
        while r * cycle.word_len <= n {
            let j = r * cycle.word_len;
            let rf = r as f64;
            let ln_w = ln_inv_det_factor(rf * cycle.period * cycle.exponent);
            let e = (-rf * cycle.period * s + ln_w).exp();
            c[j] -= e / rf;
            cs[j] += e * cycle.period;
            cb[j] -= e * cycle.period * a_p;
            cw[p_idx][j] -= e * cycle.period;
            r += 1;
        }
    }

    // Q recurrence and its term-by-term derivatives. ∂_{μ_p} C_j = 0 at
    // β = 0, so ∂_{μ_p} Q_j = 0 and the mixed recurrence needs only Q.
    let mut q = vec![0.0_f64; n + 1];
    let mut qs = vec![0.0_f64; n + 1];
    let mut qb = vec![0.0_f64; n + 1];
    let mut qw = vec![vec![0.0_f64; n + 1]; n_orb];
    for j in 1..=n {
        q[j] = c[j];
        qs[j] = cs[j];
        qb[j] = cb[j];
        for p_idx in 0..n_orb {
            qw[p_idx][j] = cw[p_idx][j];
        }
        for i in 1..j {
            let f = (j - i) as f64 / j as f64;
            q[j] += f * c[j - i] * q[i];
            qs[j] += f * (cs[j - i] * q[i] + c[j - i] * qs[i]);
            qb[j] += f * (cb[j - i] * q[i] + c[j - i] * qb[i]);
            for p_idx in 0..n_orb {
                qw[p_idx][j] += f * (cw[p_idx][j - i] * q[i] + c[j - i] * qw[p_idx][i]);
            }
        }
    }

    let mut eval = DeterminantEval {
        value: 1.0,
        d_s: 0.0,
        d_beta: 0.0,
        d_beta_per_orbit: vec![0.0; n_orb],
    };
    for j in 1..=n {
        eval.value += q[j];
        eval.d_s += qs[j];
        eval.d_beta += qb[j];
        for p_idx in 0..n_orb {
            eval.d_beta_per_orbit[p_idx] += qw[p_idx][j];
        }
    }
    Ok(eval)
}

const NEWTON_EPS: f64 = 1e-8;
const NEWTON_MAX_ITERS: usize = 100;

/// Real root of F_n(s, 0) by Newton iteration from s = 0.
pub fn newton_root(cycles: &CycleData, n: usize) -> Result<f64> {
    cycles.verify_complete(n)?;
    let ones = vec![1.0; cycles.len()];
    let mut s = 0.0_f64;
    for _ in 0..NEWTON_MAX_ITERS {
        let eval = spectral_determinant(cycles, n, s, &ones)?;
        if eval.value.abs() < NEWTON_EPS {
            return Ok(s);
        }
        if eval.d_s.abs() < 1e-14 {
            return Err(Error::NoConvergence(
                "Newton derivative vanished during root search".into(),
            ));
        }
        s -= eval.value / eval.d_s;
        if !s.is_finite() {
            return Err(Error::NoConvergence("Newton iterate diverged".into()));
        }
    }
    Err(Error::NoConvergence(format!(
        "Newton root search exceeded {NEWTON_MAX_ITERS} iterations"
    )))
}

/// POT weights at truncation n: w_p = −∂_{μ_p}∂_β F_n / ∂_s F_n at (s₀, 0).
/// Orbits with word length above n get zero weight.
pub fn pot_weights(cycles: &CycleData, n: usize) -> Result<WeightVector> {
    let s0 = newton_root(cycles, n)?;
    let ones = vec![1.0; cycles.len()];
    let eval = spectral_determinant(cycles, n, s0, &ones)?;
    if eval.d_s.abs() < 1e-300 {
        return Err(Error::Numeric("∂_s F vanished at the root".into()));
    }
    let w: Vec<f64> = eval
        .d_beta_per_orbit
        .iter()
        .map(|d| -d / eval.d_s)
        .collect();
    Ok(WeightVector {
        w,
        method: Method::Pot,
        prov: Provenance {
            kind: MeasureKind::Orbit,
            p: cycles.len(),
            r: 1,
            s: 1,
            n: 0,
            theta: 0.0,
            alpha: 0.0,
        },
        support: None,
        converged: true,
    })
}

/// POT average of an observable with per-orbit averages `avgs`:
/// −∂_β F_n / ∂_s F_n at (s₀, 0). Equals Σ w_p ⟨a⟩_p by linearity.
pub fn pot_average(cycles: &CycleData, n: usize, avgs: &[f64]) -> Result<f64> {
    let s0 = newton_root(cycles, n)?;
    let eval = spectral_determinant(cycles, n, s0, avgs)?;
    if eval.d_s.abs() < 1e-300 {
        return Err(Error::Numeric("∂_s F vanished at the root".into()));
    }
    Ok(-eval.d_beta / eval.d_s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ab_only() -> CycleData {
        CycleData {
            cycles: vec![Cycle {
                word_len: 2,
                period: 1.5586522107162,
                exponent: 0.99465,
            }],
        }
    }

    /// Brute-force oracle: enumerate all (orbit, repeat) pairs with
    /// n_p r = j directly, without the production binning loop.
    fn c_j_oracle(cycles: &CycleData, j: usize, s: f64, beta: f64, avgs: &[f64]) -> f64 {
        let mut total = 0.0;
        for (cycle, &a_p) in cycles.cycles.iter().zip(avgs) {
            for r in 1..=j {
                if cycle.word_len * r == j {
                    let rf = r as f64;
                    let det = (1.0 - (rf * cycle.period * cycle.exponent).exp()).abs();
                    total -=
                        (-rf * cycle.period * (s - beta * a_p)).exp() / (rf * det);
                }
            }
        }
        total
    }

    #[test]
    fn single_cycle_trace_coefficients() {
        let cd = ab_only();
        let s = 0.3;
        let c = trace_coefficients(&cd, 4, s, 0.0, &[0.0]).unwrap();
        assert_eq!(c[0], 0.0); // C_1: no length-1 cycles
        let t = cd.cycles[0].period;
        let lam = cd.cycles[0].exponent;
        let c2_expect = -(-t * s).exp() / (1.0 - (t * lam).exp()).abs();
        assert!((c[1] - c2_expect).abs() < 1e-15 * c2_expect.abs());
        assert_eq!(c[2], 0.0); // C_3: 3 is not a multiple of 2
        // C_4 is the r = 2 repeat with its 1/2 factor.
        let c4_expect = -(-2.0 * t * s).exp() / (2.0 * (1.0 - (2.0 * t * lam).exp()).abs());
        assert!((c[3] - c4_expect).abs() < 1e-18);
    }

    #[test]
    fn trace_coefficients_match_oracle() {
        // A synthetic complete-to-4 library: 1 + 2 + 3 prime cycles.
        let mut cycles = Vec::new();
        let lens = [2usize, 3, 3, 4, 4, 4];
        for (i, &l) in lens.iter().enumerate() {
            cycles.push(Cycle {
                word_len: l,
                period: 0.7 * l as f64 + 0.05 * i as f64,
                exponent: 0.9 + 0.02 * i as f64,
            });
        }
        let cd = CycleData { cycles };
        let avgs: Vec<f64> = (0..cd.len()).map(|i| 0.3 + 0.1 * i as f64).collect();
        let (s, beta) = (0.21, 0.07);
        let c = trace_coefficients(&cd, 8, s, beta, &avgs).unwrap();
        for j in 1..=8 {
            let oracle = c_j_oracle(&cd, j, s, beta, &avgs);
            assert!(
                (c[j - 1] - oracle).abs() <= 1e-14 * (1.0 + oracle.abs()),
                "C_{j}: {} vs {}",
                c[j - 1],
                oracle
            );
        }
    }

    #[test]
    fn q_recurrence_low_order() {
        // Q_2 = C_2 + (1/2) C_1^2 checked against a two-cycle fake library
        // that populates C_1 (word_len 1 is synthetic but exercises the
        // recurrence itself).
        let cd = CycleData {
            cycles: vec![
                Cycle {
                    word_len: 1,
                    period: 1.0,
                    exponent: 1.0,
                },
                Cycle {
                    word_len: 2,
                    period: 1.5,
                    exponent: 0.9,
                },
            ],
        };
        let avgs = vec![1.0, 1.0];
        let s = 0.4;
        let c = trace_coefficients(&cd, 2, s, 0.0, &avgs).unwrap();
        let eval = spectral_determinant(&cd, 2, s, &avgs).unwrap();
        // F_2 = 1 + Q_1 + Q_2 with Q_1 = C_1, Q_2 = C_2 + C_1 Q_1 / 2.
        let q1 = c[0];
        let q2 = c[1] + 0.5 * c[0] * q1;
        assert!((eval.value - (1.0 + q1 + q2)).abs() < 1e-15);
    }

    #[test]
    fn empty_coefficients_give_unit_determinant() {
        let cd = CycleData { cycles: vec![] };
        let eval = spectral_determinant(&cd, 5, 1.3, &[]).unwrap();
        assert_eq!(eval.value, 1.0);
        assert_eq!(eval.d_s, 0.0);
        assert_eq!(eval.d_beta, 0.0);
    }

    #[test]
    fn single_cycle_closed_forms() {
        let cd = ab_only();
        let t = cd.cycles[0].period;
        let lam = cd.cycles[0].exponent;
        // F_2(s, 0) = 1 − e^{−Ts}/|1 − e^{Tλ}|.
        let s = 0.17;
        let eval = spectral_determinant(&cd, 2, s, &[0.0]).unwrap();
        let expect = 1.0 - (-t * s).exp() / (1.0 - (t * lam).exp()).abs();
        assert!((eval.value - expect).abs() < 1e-15);

        // Root: s0 = −ln|1 − e^{Tλ}| / T. The stopping rule |F| < 1e-8
        // bounds the root error by 1e-8/|∂_s F| ≈ 1e-8/T.
        let s0 = newton_root(&cd, 2).unwrap();
        let s0_expect = -(1.0 - (t * lam).exp()).abs().ln() / t;
        assert!((s0 - s0_expect).abs() < 2e-8, "{s0} vs {s0_expect}");
        let at_root = spectral_determinant(&cd, 2, s0, &[0.0]).unwrap();
        assert!(at_root.value.abs() < NEWTON_EPS);

        // Single orbit: w = (1).
        let w = pot_weights(&cd, 2).unwrap();
        assert_eq!(w.w.len(), 1);
        assert!((w.w[0] - 1.0).abs() < 1e-12, "{}", w.w[0]);
    }

    #[test]
    fn average_is_linear_in_per_orbit_averages() {
        let cd = ab_only();
        let w = pot_weights(&cd, 2).unwrap();
        let avgs = vec![23.547];
        let direct = pot_average(&cd, 2, &avgs).unwrap();
        let via_weights: f64 = w.w.iter().zip(&avgs).map(|(wi, ai)| wi * ai).sum();
        assert!((direct - via_weights).abs() < 1e-10 * direct.abs());
        // a ≡ 1 is reproduced exactly up to rounding.
        assert!((pot_average(&cd, 2, &[1.0]).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn incomplete_library_is_rejected() {
        let cd = ab_only();
        let err = newton_root(&cd, 3).unwrap_err();
        assert!(
            err.to_string().contains("not a complete library size"),
            "{err}"
        );
    }

    #[test]
    fn overflow_exponents_degrade_gracefully() {
        let cd = CycleData {
            cycles: vec![Cycle {
                word_len: 2,
                period: 100.0,
                exponent: 10.0,
            }],
        };
        // T λ = 1000 > 500 triggers the asymptotic branch. All evaluations
        // stay finite, including near the root s ≈ −λ where the naive
        // exp(−Ts)·exp(−Tλ) split would produce Inf × 0.
        let c = trace_coefficients(&cd, 2, 0.0, 0.0, &[0.0]).unwrap();
        assert!(c[1].is_finite());
        let lo = spectral_determinant(&cd, 2, -10.1, &[1.0]).unwrap();
        let hi = spectral_determinant(&cd, 2, -9.9, &[1.0]).unwrap();
        assert!(lo.value.is_finite() && hi.value.is_finite());
        assert!(lo.value < 0.0 && hi.value > 0.0, "{} {}", lo.value, hi.value);
    }
}

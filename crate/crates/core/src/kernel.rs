//! Gaussian-kernel correlation machinery: the measure-correlation matrix A,
//! the chaotic data vector b, and kernel-width selection by Frobenius
//! equidistance.
//!
//! The base kernel is G_θ(x, y) = exp(−‖y−x‖²/2θ). Convolving it with
//! itself over state space doubles the variance, so every correlation-type
//! quantity uses the induced kernel with 4θ in the denominator:
//!
//! ```text
//! A_pq = (1/T_p T_q) ∫∫ exp(−‖x_p(t) − x_q(τ)‖² / 4θ) dt dτ
//! b_q  = (1/N) Σ_n a_q(x(n Δt)),    a_q(x) = (1/T_q) ∫ exp(−‖x_q(τ) − x‖²/4θ) dτ
//! ```
//!
//! The Gaussian normalization prefactor (πθ)^{3/2} cancels between the two
//! sides of the weight system and is omitted by default; a flag restores it
//! for both A and b so the weights are unchanged either way.
//!
//! For θ too large A tends to a matrix of all ones (a single normalization
//! constraint); for θ too small it tends to the identity and the weights
//! become Markov-like. `theta_scan` reports the Frobenius distances to both
//! extremes and picks the grid point where they are closest to equal.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::dynamics::{State, Trajectory};
use crate::measures::ReferenceMeasure;
use crate::textio::{check_header, fmt_f64, keyed, parse_f64, parse_u64, parse_usize};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct KernelConfig {
    /// Variance of the base Gaussian kernel.
    pub theta: f64,
    /// Include the (πθ)^{3/2} convolution prefactor in A and b. Scales both
    /// sides of the weight system identically.
    pub with_prefactor: bool,
}

impl KernelConfig {
    pub fn new(theta: f64) -> Result<Self> {
        if !(theta > 0.0) {
            return Err(Error::Precondition("theta must be positive".into()));
        }
        Ok(KernelConfig {
            theta,
            with_prefactor: false,
        })
    }

    fn prefactor(&self) -> f64 {
        if self.with_prefactor {
            (std::f64::consts::PI * self.theta).powf(1.5)
        } else {
            1.0
        }
    }
}

/// Base Gaussian kernel exp(−‖y−x‖²/2θ).
pub fn gaussian_kernel(x: &State, y: &State, theta: f64) -> f64 {
    (-(y - x).norm_squared() / (2.0 * theta)).exp()
}

/// Induced kernel exp(−‖y−x‖²/4θ): the state-space self-convolution of the
/// base kernel, up to the omitted prefactor.
pub fn induced_kernel(x: &State, y: &State, theta: f64) -> f64 {
    (-(y - x).norm_squared() / (4.0 * theta)).exp()
}

/// Measure correlation K(μ_p, μ_q): double quadrature of the induced kernel
/// over both measures.
pub fn correlation_entry(
    mp: &ReferenceMeasure,
    mq: &ReferenceMeasure,
    cfg: &KernelConfig,
) -> f64 {
    let theta = cfg.theta;
    cfg.prefactor() * mp.average_fn(|x| mq.average_fn(|y| induced_kernel(x, y, theta)))
}

/// The observable a_p(x) attached to measure p.
pub fn kernel_observable(mp: &ReferenceMeasure, x: &State, cfg: &KernelConfig) -> f64 {
    let theta = cfg.theta;
    cfg.prefactor() * mp.average_fn(|y| induced_kernel(y, x, theta))
}

/// Prefactor-free a_p(x); the form used by `Observable::Kernel`.
pub fn kernel_observable_theta(mp: &ReferenceMeasure, x: &State, theta: f64) -> f64 {
    mp.average_fn(|y| induced_kernel(y, x, theta))
}

/// The P×P correlation matrix A, data vector b, and sampling metadata.
#[derive(Debug, Clone)]
pub struct CorrelationSystem {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub theta: f64,
    /// Chaotic samples used for b.
    pub n_samples: usize,
    pub seed: u64,
    pub measure_ids: Vec<String>,
}

impl CorrelationSystem {
    pub fn p(&self) -> usize {
        self.b.len()
    }

    /// Restriction to a subset of measures (used by permuted sweeps).
    pub fn subsystem(&self, idx: &[usize]) -> CorrelationSystem {
        let p = idx.len();
        let mut a = DMatrix::zeros(p, p);
        let mut b = DVector::zeros(p);
        for (i, &pi) in idx.iter().enumerate() {
            b[i] = self.b[pi];
            for (j, &pj) in idx.iter().enumerate() {
                a[(i, j)] = self.a[(pi, pj)];
            }
        }
        CorrelationSystem {
            a,
            b,
            theta: self.theta,
            n_samples: self.n_samples,
            seed: self.seed,
            measure_ids: idx.iter().map(|&i| self.measure_ids[i].clone()).collect(),
        }
    }

    /// Structural invariants: symmetry, entries in (0,1] (prefactor-free
    /// convention), Cauchy–Schwarz, positive semidefiniteness up to a small
    /// negative eigenvalue tolerance.
    pub fn validate(&self) -> Result<()> {
        let p = self.p();
        for i in 0..p {
            for j in 0..p {
                let v = self.a[(i, j)];
                if (v - self.a[(j, i)]).abs() > 1e-12 {
                    return Err(Error::Numeric(format!(
                        "A not symmetric at ({i},{j}): {v} vs {}",
                        self.a[(j, i)]
                    )));
                }
                if !(v > 0.0 && v <= 1.0 + 1e-12) {
                    return Err(Error::Numeric(format!("A[{i},{j}] = {v} outside (0,1]")));
                }
                let bound = (self.a[(i, i)] * self.a[(j, j)]).sqrt() + 1e-8;
                if v.abs() > bound {
                    return Err(Error::Numeric(format!(
                        "Cauchy-Schwarz violated at ({i},{j})"
                    )));
                }
            }
        }
        let eig = self.a.clone().symmetric_eigen().eigenvalues;
        if let Some(min) = eig.iter().cloned().reduce(f64::min) {
            if min < -1e-8 {
                return Err(Error::Numeric(format!(
                    "A has eigenvalue {min:.3e} below PSD tolerance"
                )));
            }
        }
        Ok(())
    }
}

/// Deterministic fixed-order block summation: block sums are accumulated
/// sequentially, so parallel scheduling cannot change the result.
pub(crate) fn block_sum(values: impl ExactSizeIterator<Item = f64>) -> f64 {
    const BLOCK: usize = 4096;
    let mut blocks: Vec<f64> = Vec::new();
    let mut acc = 0.0;
    for (i, v) in values.enumerate() {
        acc += v;
        if (i + 1) % BLOCK == 0 {
            blocks.push(acc);
            acc = 0.0;
        }
    }
    blocks.push(acc);
    blocks.iter().sum()
}

/// Build the full correlation system: A over all measure pairs and b from
/// the first `n` chaotic samples.
pub fn build_system(
    measures: &[ReferenceMeasure],
    chaotic: &Trajectory,
    cfg: &KernelConfig,
    n: usize,
    seed: u64,
) -> Result<CorrelationSystem> {
    let p = measures.len();
    if p == 0 {
        return Err(Error::Precondition("need at least one measure".into()));
    }
    if n > chaotic.len() || n == 0 {
        return Err(Error::Precondition(format!(
            "need 1 <= N <= {} chaotic samples, got N = {n}",
            chaotic.len()
        )));
    }
    let a = correlation_matrix(measures, cfg);
    let samples = &chaotic.states[..n];
    let b_vals: Vec<f64> = (0..p)
        .into_par_iter()
        .map(|q| {
            block_sum(samples.iter().map(|x| kernel_observable(&measures[q], x, cfg)))
                / n as f64
        })
        .collect();
    Ok(CorrelationSystem {
        a,
        b: DVector::from_vec(b_vals),
        theta: cfg.theta,
        n_samples: n,
        seed,
        measure_ids: measures.iter().map(|m| m.id.clone()).collect(),
    })
}

/// A alone (used by the theta scan). Upper triangle computed in parallel,
/// then mirrored.
pub fn correlation_matrix(measures: &[ReferenceMeasure], cfg: &KernelConfig) -> DMatrix<f64> {
    let p = measures.len();
    let pairs: Vec<(usize, usize)> = (0..p)
        .flat_map(|i| (i..p).map(move |j| (i, j)))
        .collect();
    let entries: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| correlation_entry(&measures[i], &measures[j], cfg))
        .collect();
    let mut a = DMatrix::zeros(p, p);
    for (&(i, j), &v) in pairs.iter().zip(&entries) {
        a[(i, j)] = v;
        a[(j, i)] = v;
    }
    a
}

#[derive(Debug, Clone)]
pub struct ThetaScanRow {
    pub theta: f64,
    /// ‖A(θ) − J‖_F, J the all-ones matrix.
    pub dist_ones: f64,
    /// ‖A(θ) − I‖_F.
    pub dist_identity: f64,
}

#[derive(Debug, Clone)]
pub struct ThetaScan {
    pub rows: Vec<ThetaScanRow>,
    /// Grid point where |dist_ones − dist_identity| is smallest; ties go to
    /// the smallest θ.
    pub theta_star: f64,
}

pub fn theta_scan(measures: &[ReferenceMeasure], grid: &[f64]) -> Result<ThetaScan> {
    if grid.is_empty() {
        return Err(Error::Precondition("theta grid is empty".into()));
    }
    let p = measures.len();
    let rows: Vec<ThetaScanRow> = grid
        .iter()
        .map(|&theta| {
            let cfg = KernelConfig::new(theta)?;
            let a = correlation_matrix(measures, &cfg);
            let mut d_ones = 0.0;
            let mut d_id = 0.0;
            for i in 0..p {
                for j in 0..p {
                    let v = a[(i, j)];
                    d_ones += (v - 1.0) * (v - 1.0);
                    let idv = if i == j { 1.0 } else { 0.0 };
                    d_id += (v - idv) * (v - idv);
                }
            }
            Ok(ThetaScanRow {
                theta,
                dist_ones: d_ones.sqrt(),
                dist_identity: d_id.sqrt(),
            })
        })
        .collect::<Result<_>>()?;
    let mut best = (f64::INFINITY, 0usize);
    for (i, r) in rows.iter().enumerate() {
        let gap = (r.dist_ones - r.dist_identity).abs();
        if gap < best.0 {
            best = (gap, i);
        }
    }
    Ok(ThetaScan {
        theta_star: rows[best.1].theta,
        rows,
    })
}

/// Log-spaced grid of `n` points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo && n >= 2) {
        return Err(Error::Precondition(
            "log grid needs 0 < lo < hi and n >= 2".into(),
        ));
    }
    let (llo, lhi) = (lo.ln(), hi.ln());
    Ok((0..n)
        .map(|i| (llo + (lhi - llo) * i as f64 / (n - 1) as f64).exp())
        .collect())
}

// --- Discrete atom-measure mode -------------------------------------------
//
// In the θ → 0 limit the induced kernel collapses to atom overlap: for
// measures supported on a shared finite atom set, K(μ_p, μ_q) = Σ_i m_p(i)
// m_q(i). Exact arithmetic replaces quadrature here, which is what makes
// negative-weight counterexamples on overlapping supports testable.

/// A probability measure on a shared finite atom set.
#[derive(Debug, Clone)]
pub struct DiscreteMeasure {
    pub masses: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(masses: Vec<f64>) -> Result<Self> {
        if masses.is_empty() || masses.iter().any(|&m| m < 0.0) {
            return Err(Error::Precondition(
                "atom masses must be non-negative and non-empty".into(),
            ));
        }
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Precondition(format!(
                "atom masses must sum to 1, got {total}"
            )));
        }
        Ok(DiscreteMeasure { masses })
    }
}

/// Atom-overlap correlation system for discrete measures against a discrete
/// target measure.
pub fn discrete_system(
    refs: &[DiscreteMeasure],
    target: &DiscreteMeasure,
) -> Result<CorrelationSystem> {
    let p = refs.len();
    if p == 0 {
        return Err(Error::Precondition("need at least one measure".into()));
    }
    let atoms = target.masses.len();
    if refs.iter().any(|m| m.masses.len() != atoms) {
        return Err(Error::LengthMismatch(
            "all measures must share the atom set".into(),
        ));
    }
    let overlap = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| x * y).sum() };
    let mut a = DMatrix::zeros(p, p);
    let mut b = DVector::zeros(p);
    for i in 0..p {
        b[i] = overlap(&refs[i].masses, &target.masses);
        for j in 0..p {
            a[(i, j)] = overlap(&refs[i].masses, &refs[j].masses);
        }
    }
    Ok(CorrelationSystem {
        a,
        b,
        theta: 0.0,
        n_samples: 0,
        seed: 0,
        measure_ids: (0..p).map(|i| format!("mu{}", i + 1)).collect(),
    })
}

/// Write a correlation system in the `KSYS v1` plain-text format.
pub fn save_system(sys: &CorrelationSystem, path: &Path) -> Result<()> {
    let p = sys.p();
    let mut out = String::new();
    writeln!(
        out,
        "KSYS v1 P={} theta={} N={} seed={}",
        p,
        fmt_f64(sys.theta),
        sys.n_samples,
        sys.seed
    )
    .unwrap();
    for i in 0..p {
        let row: Vec<String> = (0..p).map(|j| fmt_f64(sys.a[(i, j)])).collect();
        writeln!(out, "{}", row.join(" ")).unwrap();
    }
    let brow: Vec<String> = (0..p).map(|i| fmt_f64(sys.b[i])).collect();
    writeln!(out, "{}", brow.join(" ")).unwrap();
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_system(path: &Path) -> Result<CorrelationSystem> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let toks = check_header(lines.next(), "KSYS", "v1")?;
    if toks.len() != 4 {
        return Err(Error::Parse {
            line: 1,
            msg: "KSYS header needs P= theta= N= seed=".into(),
        });
    }
    let p = parse_usize(keyed(toks[0], "P", 1)?, 1)?;
    let theta = parse_f64(keyed(toks[1], "theta", 1)?, 1)?;
    let n_samples = parse_usize(keyed(toks[2], "N", 1)?, 1)?;
    let seed = parse_u64(keyed(toks[3], "seed", 1)?, 1)?;

    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(p + 1);
    for (idx, raw) in lines.enumerate() {
        let lineno = idx + 2;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| parse_f64(t, lineno))
            .collect::<Result<_>>()?;
        if vals.len() != p {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected {p} values, got {}", vals.len()),
            });
        }
        rows.push(vals);
    }
    if rows.len() != p + 1 {
        return Err(Error::Parse {
            line: text.lines().count(),
            msg: format!("expected {} matrix+vector rows, got {}", p + 1, rows.len()),
        });
    }
    let a = DMatrix::from_fn(p, p, |i, j| rows[i][j]);
    let b = DVector::from_vec(rows[p].clone());
    Ok(CorrelationSystem {
        a,
        b,
        theta,
        n_samples,
        seed,
        measure_ids: (0..p).map(|i| format!("m{i}")).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::ReferenceMeasure;

    #[test]
    fn gaussian_kernel_basics() {
        let x = State::new(1.0, 2.0, 3.0);
        assert_eq!(gaussian_kernel(&x, &x, 5.0), 1.0);
        // ‖y−x‖² = 2θ gives e^{-1}.
        let theta = 2.0;
        let y = State::new(3.0, 2.0, 3.0); // distance² = 4 = 2θ
        assert!((gaussian_kernel(&x, &y, theta) - (-1.0f64).exp()).abs() < 1e-15);
        let mut rng = crate::substream(8, "kernel-sym");
        use rand::Rng;
        for _ in 0..100 {
            let a = State::new(rng.gen(), rng.gen(), rng.gen());
            let b = State::new(rng.gen(), rng.gen(), rng.gen());
            assert_eq!(
                gaussian_kernel(&a, &b, 3.0),
                gaussian_kernel(&b, &a, 3.0)
            );
        }
    }

    #[test]
    fn point_measure_correlations() {
        let cfg = KernelConfig::new(2.5).unwrap();
        let m1 = ReferenceMeasure::point("a", State::new(0.0, 0.0, 0.0));
        let m2 = ReferenceMeasure::point("b", State::new(3.0, 0.0, 0.0));
        assert_eq!(correlation_entry(&m1, &m1, &cfg), 1.0);
        let expect = (-9.0_f64 / (4.0 * 2.5)).exp();
        assert!((correlation_entry(&m1, &m2, &cfg) - expect).abs() < 1e-15);
        assert!(
            (kernel_observable(&m2, &State::new(0.0, 0.0, 0.0), &cfg) - expect).abs() < 1e-15
        );
    }

    #[test]
    fn theta_scan_limits() {
        // Three disjoint point measures: tiny θ gives the identity, huge θ
        // the all-ones matrix.
        let ms = vec![
            ReferenceMeasure::point("a", State::new(0.0, 0.0, 0.0)),
            ReferenceMeasure::point("b", State::new(5.0, 0.0, 0.0)),
            ReferenceMeasure::point("c", State::new(0.0, 7.0, 0.0)),
        ];
        let scan = theta_scan(&ms, &[1e-6, 1e8]).unwrap();
        assert!(scan.rows[0].dist_identity < 1e-6);
        assert!(scan.rows[1].dist_ones < 1e-2 * ms.len() as f64);
    }

    #[test]
    fn discrete_four_atom_example() {
        let refs = vec![
            DiscreteMeasure::new(vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 0.0]).unwrap(),
            DiscreteMeasure::new(vec![0.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]).unwrap(),
            DiscreteMeasure::new(vec![0.0, 0.5, 0.5, 0.0]).unwrap(),
        ];
        let target = DiscreteMeasure::new(vec![0.25; 4]).unwrap();
        let sys = discrete_system(&refs, &target).unwrap();
        let a_expect = [
            [1.0 / 3.0, 2.0 / 9.0, 1.0 / 3.0],
            [2.0 / 9.0, 1.0 / 3.0, 1.0 / 3.0],
            [1.0 / 3.0, 1.0 / 3.0, 0.5],
        ];
        for i in 0..3 {
            assert!((sys.b[i] - 0.25).abs() < 1e-15);
            for j in 0..3 {
                assert!((sys.a[(i, j)] - a_expect[i][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn chaotic_point_samples_match_point_measure() {
        // Chaotic samples all equal x0 and the measure is a point at x0:
        // b must be exactly [1].
        let x0 = State::new(1.0, -2.0, 20.0);
        let traj = Trajectory {
            t0: 0.0,
            dt: 1.0,
            states: vec![x0; 50],
        };
        let cfg = KernelConfig::new(10.0).unwrap();
        let ms = [ReferenceMeasure::point("p", x0)];
        let sys = build_system(&ms, &traj, &cfg, 50, 0).unwrap();
        assert_eq!(sys.b[0], 1.0);
        assert_eq!(sys.a[(0, 0)], 1.0);
        assert!(build_system(&ms, &traj, &cfg, 51, 0).is_err());
    }

    #[test]
    fn system_roundtrip() {
        let sys = CorrelationSystem {
            a: DMatrix::from_row_slice(2, 2, &[1.0, 0.25, 0.25, 1.0]),
            b: DVector::from_vec(vec![1.0 / 3.0, 0.7]),
            theta: 100.0,
            n_samples: 1000,
            seed: 7,
            measure_ids: vec!["m0".into(), "m1".into()],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ksys.txt");
        save_system(&sys, &path).unwrap();
        let back = load_system(&path).unwrap();
        assert_eq!(back.p(), 2);
        assert_eq!(back.theta.to_bits(), sys.theta.to_bits());
        assert_eq!(back.n_samples, 1000);
        assert_eq!(back.seed, 7);
        for i in 0..2 {
            assert_eq!(back.b[i].to_bits(), sys.b[i].to_bits());
            for j in 0..2 {
                assert_eq!(back.a[(i, j)].to_bits(), sys.a[(i, j)].to_bits());
            }
        }
    }

    #[test]
    fn log_grid_spacing() {
        let g = log_grid(1e-2, 1e6, 25).unwrap();
        assert_eq!(g.len(), 25);
        assert!((g[0] - 1e-2).abs() < 1e-12);
        assert!((g[24] - 1e6).abs() < 1e-6);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }
}

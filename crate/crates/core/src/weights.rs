//! Weighting schemes over a library of reference measures: Tikhonov
//! least-squares (LSW), non-negative normalized least squares, simplex-
//! constrained least squares, Markov/Voronoi weights, and uniform weights.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::dynamics::{State, Trajectory};
use crate::kernel::CorrelationSystem;
use crate::measures::{MeasureKind, ReferenceMeasure};
use crate::spatial::KdTree3;
use crate::textio::{check_header, fmt_f64, keyed, parse_f64, parse_u64, parse_usize};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Lsw,
    Nnls,
    Constrained,
    Markov,
    Uniform,
    Pot,
}

impl Method {
    pub fn tag(&self) -> &'static str {
        match self {
            Method::Lsw => "lsw",
            Method::Nnls => "nnls",
            Method::Constrained => "constrained",
            Method::Markov => "markov",
            Method::Uniform => "uniform",
            Method::Pot => "pot",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        Ok(match tag {
            "lsw" => Method::Lsw,
            "nnls" => Method::Nnls,
            "constrained" => Method::Constrained,
            "markov" => Method::Markov,
            "uniform" => Method::Uniform,
            "pot" => Method::Pot,
            other => {
                return Err(Error::UnsupportedInput(format!(
                    "unknown weighting method `{other}`"
                )))
            }
        })
    }

    /// Methods that need the chaotic data vector b.
    pub fn needs_chaotic_data(&self) -> bool {
        matches!(
            self,
            Method::Lsw | Method::Nnls | Method::Constrained | Method::Markov
        )
    }
}

/// Where a weight vector came from: measure kind, library size P, permutation
/// index r, chaotic seed index s, sample count N, kernel width, ridge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Provenance {
    pub kind: MeasureKind,
    pub p: usize,
    pub r: u32,
    pub s: u32,
    pub n: usize,
    pub theta: f64,
    pub alpha: f64,
}

impl Provenance {
    fn from_system(sys: &CorrelationSystem, alpha: f64) -> Self {
        Provenance {
            kind: MeasureKind::Orbit,
            p: sys.p(),
            r: 1,
            s: 1,
            n: sys.n_samples,
            theta: sys.theta,
            alpha,
        }
    }
}

#[derive(Debug, Clone)]
pub struct WeightVector {
    pub w: Vec<f64>,
    pub method: Method,
    pub prov: Provenance,
    /// Nonzero count of the pre-normalization NNLS solution.
    pub support: Option<usize>,
    /// False when an iterative solver hit its cap and returned its best
    /// iterate.
    pub converged: bool,
}

impl WeightVector {
    pub fn sum(&self) -> f64 {
        self.w.iter().sum()
    }
}

/// Normalized weights from a cumulative tally: w_p = fl(C_p/total) −
/// fl(C_{p−1}/total). Each entry is within one rounding of c_p/total, and
/// the left-to-right partial sums reproduce fl(C_p/total) exactly, so the
/// full sum is exactly 1.0.
fn telescoped_fractions(cumulative: &[f64], total: f64) -> Vec<f64> {
    let mut prev = 0.0;
    cumulative
        .iter()
        .map(|&c| {
            let cur = c / total;
            let w = cur - prev;
            prev = cur;
            w
        })
        .collect()
}

/// Normalize non-negative raw weights to exact unit sum via the telescoped
/// cumulative construction.
fn normalize_telescoped(raw: &[f64]) -> Vec<f64> {
    let mut cumulative = Vec::with_capacity(raw.len());
    let mut acc = 0.0;
    for &v in raw {
        acc += v;
        cumulative.push(acc);
    }
    telescoped_fractions(&cumulative, acc)
}

/// Solve (A + αI) w = b by Cholesky with iterative refinement.
pub fn solve_tikhonov(sys: &CorrelationSystem, alpha: f64) -> Result<WeightVector> {
    if alpha < 0.0 {
        return Err(Error::Precondition("alpha must be non-negative".into()));
    }
    let p = sys.p();
    let mut m = sys.a.clone();
    for i in 0..p {
        m[(i, i)] += alpha;
    }
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::SingularSystem(format!("A + {alpha:.1e} I is not positive definite")))?;
    let mut w = chol.solve(&sys.b);
    let b_norm = sys.b.norm().max(f64::MIN_POSITIVE);
    for _ in 0..5 {
        let res = &sys.b - &m * &w;
        if res.norm() <= 1e-12 * b_norm {
            break;
        }
        w += chol.solve(&res);
    }
    let res = (&sys.b - &m * &w).norm();
    if res > 1e-10 * b_norm {
        return Err(Error::SingularSystem(format!(
            "solve residual {res:.3e} exceeds 1e-10 ||b||"
        )));
    }
    Ok(WeightVector {
        w: w.iter().cloned().collect(),
        method: Method::Lsw,
        prov: Provenance::from_system(sys, alpha),
        support: None,
        converged: true,
    })
}

/// Lawson–Hanson active-set NNLS: minimize ‖Ax − b‖² subject to x >= 0.
/// Returns the raw solution and the iteration count of the outer loop.
pub fn nnls_raw(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<Vec<f64>> {
    let (_m, n) = a.shape();
    let mut x = DVector::<f64>::zeros(n);
    let mut passive = vec![false; n];
    let tol = 1e-12 * a.amax().max(1.0) * b.amax().max(1.0);

    for _outer in 0..(10 * n + 10) {
        let grad = a.transpose() * (b - a * &x);
        let mut best: Option<(usize, f64)> = None;
        for j in 0..n {
            if !passive[j] && grad[j] > tol {
                if best.map_or(true, |(_, g)| grad[j] > g) {
                    best = Some((j, grad[j]));
                }
            }
        }
        let Some((j_new, _)) = best else {
            return Ok(x.iter().cloned().collect());
        };
        passive[j_new] = true;

        loop {
            let idx: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
            let sub = a.select_columns(idx.iter());
            let svd = sub.svd(true, true);
            let z_sub = svd
                .solve(b, 1e-13)
                .map_err(|e| Error::SingularSystem(e.to_string()))?;
            if z_sub.iter().all(|&v| v > 0.0) {
                x.fill(0.0);
                for (k, &j) in idx.iter().enumerate() {
                    x[j] = z_sub[k];
                }
                break;
            }
            // Step toward z until the first passive coordinate hits zero.
            let mut alpha = f64::INFINITY;
            for (k, &j) in idx.iter().enumerate() {
                if z_sub[k] <= 0.0 {
                    let denom = x[j] - z_sub[k];
                    if denom > 0.0 {
                        alpha = alpha.min(x[j] / denom);
                    }
                }
            }
            if !alpha.is_finite() {
                return Err(Error::NoConvergence("nnls inner step stalled".into()));
            }
            for (k, &j) in idx.iter().enumerate() {
                x[j] += alpha * (z_sub[k] - x[j]);
            }
            for &j in &idx {
                if x[j] <= 1e-14 {
                    x[j] = 0.0;
                    passive[j] = false;
                }
            }
        }
    }
    Err(Error::NoConvergence(
        "nnls outer loop exceeded iteration cap".into(),
    ))
}

/// NNLS on the correlation system, then normalize to unit sum. The support
/// (nonzero count) of the pre-normalization solution is recorded.
pub fn solve_nnls_normalized(sys: &CorrelationSystem) -> Result<WeightVector> {
    let raw = nnls_raw(&sys.a, &sys.b)?;
    let total: f64 = raw.iter().sum();
    if total <= 0.0 {
        return Err(Error::DegenerateSolution(
            "nnls returned the zero vector".into(),
        ));
    }
    let support = raw.iter().filter(|&&v| v > 0.0).count();
    Ok(WeightVector {
        w: normalize_telescoped(&raw),
        method: Method::Nnls,
        prov: Provenance::from_system(sys, 0.0),
        support: Some(support),
        converged: true,
    })
}

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let mut u: Vec<f64> = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut tau = 0.0;
    for (k, &uk) in u.iter().enumerate() {
        cum += uk;
        let t = (cum - 1.0) / (k + 1) as f64;
        if uk - t > 0.0 {
            tau = t;
        }
    }
    let _ = n;
    v.iter().map(|&vi| (vi - tau).max(0.0)).collect()
}

const CONSTRAINED_TOL: f64 = 1e-10;
const CONSTRAINED_MAX_ITERS: usize = 100_000;

/// Projected-gradient minimization of V = ‖Aw − b‖² over the probability
/// simplex, with fixed step 1/L (L the gradient Lipschitz constant). The
/// result depends on the starting point when A has marginal directions.
pub fn solve_constrained(sys: &CorrelationSystem, w0: &[f64]) -> Result<WeightVector> {
    let p = sys.p();
    if w0.len() != p {
        return Err(Error::LengthMismatch(format!(
            "w0 has {} entries for P = {p}",
            w0.len()
        )));
    }
    let sum0: f64 = w0.iter().sum();
    if (sum0 - 1.0).abs() > 1e-8 || w0.iter().any(|&v| v < -1e-12) {
        return Err(Error::Precondition(
            "w0 must lie on the probability simplex".into(),
        ));
    }
    let a = &sys.a;
    let lam_max = a
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(0.0_f64, |m, &e| m.max(e.abs()));
    let lip = (2.0 * lam_max * lam_max).max(1e-30);
    let mut step = 1.0 / lip;

    let objective = |w: &DVector<f64>| -> f64 { (a * w - &sys.b).norm_squared() };
    let mut w = DVector::from_column_slice(w0);
    let mut v = objective(&w);

    for _iter in 0..CONSTRAINED_MAX_ITERS {
        let grad = 2.0 * a.transpose() * (a * &w - &sys.b);
        let trial_vec: Vec<f64> = (0..p).map(|i| w[i] - step * grad[i]).collect();
        let projected = DVector::from_vec(project_simplex(&trial_vec));
        let pg_norm = (&projected - &w).norm() / step;
        if pg_norm < CONSTRAINED_TOL {
            return Ok(finish_constrained(sys, w, true));
        }
        let v_new = objective(&projected);
        if v_new <= v {
            w = projected;
            v = v_new;
        } else {
            // Fixed 1/L steps are non-increasing in exact arithmetic; halve
            // on the rare rounding-driven increase.
            step *= 0.5;
            if step < 1e-3 / lip {
                return Ok(finish_constrained(sys, w, true));
            }
        }
    }
    Ok(finish_constrained(sys, w, false))
}

fn finish_constrained(sys: &CorrelationSystem, w: DVector<f64>, converged: bool) -> WeightVector {
    let raw: Vec<f64> = w.iter().cloned().collect();
    WeightVector {
        w: normalize_telescoped(&raw),
        method: Method::Constrained,
        prov: Provenance::from_system(sys, 0.0),
        support: None,
        converged,
    }
}

/// Per-sample squared distances to each measure's stored point set.
/// Row q holds dist²(x_n, S_q) for every retained sample n.
pub(crate) fn distance_table(
    measures: &[ReferenceMeasure],
    samples: &[State],
) -> Vec<Vec<f64>> {
    use rayon::prelude::*;
    measures
        .par_iter()
        .map(|m| {
            let tree = KdTree3::build(m.points());
            samples.iter().map(|s| tree.nearest_dist_sq(s)).collect()
        })
        .collect()
}

/// Voronoi assignment counts for a measure subset: each sample is credited
/// to the subset measure with the closest point set; ties go to the lowest
/// index in the subset ordering.
pub(crate) fn voronoi_counts(dist_rows: &[&[f64]], n: usize) -> Vec<usize> {
    let p = dist_rows.len();
    let mut counts = vec![0usize; p];
    for s in 0..n {
        let mut best = (f64::INFINITY, 0usize);
        for (q, row) in dist_rows.iter().enumerate() {
            let d = row[s];
            if d < best.0 {
                best = (d, q);
            }
        }
        counts[best.1] += 1;
    }
    counts
}

pub(crate) fn weights_from_counts(counts: &[usize], n: usize) -> Vec<f64> {
    let mut cumulative = Vec::with_capacity(counts.len());
    let mut acc = 0.0;
    for &c in counts {
        acc += c as f64;
        cumulative.push(acc);
    }
    telescoped_fractions(&cumulative, n as f64)
}

/// Markov weights: w_p is the fraction of the first `n` chaotic samples
/// whose nearest stored reference point belongs to measure p. Exactly
/// normalized and non-negative by construction.
pub fn markov_weights(
    measures: &[ReferenceMeasure],
    chaotic: &Trajectory,
    n: usize,
) -> Result<WeightVector> {
    if measures.is_empty() {
        return Err(Error::Precondition("need at least one measure".into()));
    }
    if n == 0 || n > chaotic.len() {
        return Err(Error::Precondition(format!(
            "need 1 <= N <= {} samples, got {n}",
            chaotic.len()
        )));
    }
    let table = distance_table(measures, &chaotic.states[..n]);
    let rows: Vec<&[f64]> = table.iter().map(|r| r.as_slice()).collect();
    let counts = voronoi_counts(&rows, n);
    Ok(WeightVector {
        w: weights_from_counts(&counts, n),
        method: Method::Markov,
        prov: Provenance {
            kind: measures[0].kind,
            p: measures.len(),
            r: 1,
            s: 1,
            n,
            theta: 0.0,
            alpha: 0.0,
        },
        support: None,
        converged: true,
    })
}

/// w_p = 1/P, exactly normalized.
pub fn uniform_weights(p: usize) -> Result<WeightVector> {
    if p < 1 {
        return Err(Error::Precondition("P must be at least 1".into()));
    }
    let cumulative: Vec<f64> = (1..=p).map(|i| i as f64).collect();
    Ok(WeightVector {
        w: telescoped_fractions(&cumulative, p as f64),
        method: Method::Uniform,
        prov: Provenance {
            kind: MeasureKind::Orbit,
            p,
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

/// Write a weight vector in the `WEIGHTS v1` plain-text format.
pub fn save_weights(w: &WeightVector, path: &Path) -> Result<()> {
    let mut out = String::new();
    writeln!(
        out,
        "WEIGHTS v1 method={} P={} r={} s={} N={} theta={} alpha={} kind={}",
        w.method.tag(),
        w.prov.p,
        w.prov.r,
        w.prov.s,
        w.prov.n,
        fmt_f64(w.prov.theta),
        fmt_f64(w.prov.alpha),
        w.prov.kind.tag(),
    )
    .unwrap();
    for v in &w.w {
        writeln!(out, "{}", fmt_f64(*v)).unwrap();
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<WeightVector> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let toks = check_header(lines.next(), "WEIGHTS", "v1")?;
    if toks.len() < 7 {
        return Err(Error::Parse {
            line: 1,
            msg: "WEIGHTS header needs method= P= r= s= N= theta= alpha=".into(),
        });
    }
    let method = Method::from_tag(keyed(toks[0], "method", 1)?)?;
    let p = parse_usize(keyed(toks[1], "P", 1)?, 1)?;
    let r = parse_u64(keyed(toks[2], "r", 1)?, 1)? as u32;
    let s = parse_u64(keyed(toks[3], "s", 1)?, 1)? as u32;
    let n = parse_usize(keyed(toks[4], "N", 1)?, 1)?;
    let theta = parse_f64(keyed(toks[5], "theta", 1)?, 1)?;
    let alpha = parse_f64(keyed(toks[6], "alpha", 1)?, 1)?;
    let kind = match toks.get(7) {
        Some(t) => MeasureKind::from_tag(keyed(t, "kind", 1)?)?,
        None => MeasureKind::Orbit,
    };
    let mut w = Vec::with_capacity(p);
    for (idx, raw) in lines.enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        w.push(parse_f64(line, idx + 2)?);
    }
    if w.len() != p {
        return Err(Error::Parse {
            line: text.lines().count(),
            msg: format!("header P={p} but found {} weights", w.len()),
        });
    }
    Ok(WeightVector {
        w,
        method,
        prov: Provenance {
            kind,
            p,
            r,
            s,
            n,
            theta,
            alpha,
        },
        support: None,
        converged: true,
    })
}

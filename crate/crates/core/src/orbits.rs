//! Unstable periodic orbits of the Lorenz flow: recurrence-seeded search,
//! multiple-shooting refinement, Floquet analysis, symbolic labeling, and
//! library persistence.
//!
//! Orbits are labeled by binary words over {A, B}: one symbol per local
//! maximum of z, A when x > 0 at the maximum and B when x < 0. A library is
//! complete up to symbol length L when it contains exactly the primitive
//! binary necklaces of length 2..=L (the two length-1 words have no orbit
//! counterpart at the canonical parameters). Candidate guesses come from a
//! long chaotic run: whenever the run's symbol sequence contains a word
//! immediately repeated, the segment spanning the first copy shadows the
//! corresponding orbit and seeds a multiple-shooting Newton solve.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix3};

use crate::dynamics::{
    integrate, propagate, propagate_with_frame, vector_field, Params, State, Trajectory,
};
use crate::textio::{check_header, fmt_f64, keyed, parse_f64, parse_usize};
use crate::{Error, Result};

/// Sample spacing used when an orbit is resampled densely (quadrature,
/// symbol detection, Voronoi point sets).
pub const DENSE_SPACING: f64 = 0.01;

/// A refined unstable periodic orbit.
#[derive(Debug, Clone)]
pub struct PeriodicOrbit {
    /// Stable identifier; equals the canonical symbol word.
    pub id: String,
    /// Multiple-shooting nodes as (time offset, state), offsets i·T/n.
    pub nodes: Vec<(f64, State)>,
    pub period: f64,
    /// Canonical (lexicographically minimal, primitive) cyclic word.
    pub symbol: String,
    /// Leading Floquet exponent ln|Λ_max| / T.
    pub floquet_exponent: f64,
    /// Monodromy eigenvalue magnitudes, sorted descending.
    pub multipliers: [f64; 3],
}

impl PeriodicOrbit {
    pub fn symbol_length(&self) -> usize {
        self.symbol.len()
    }

    /// The symmetry partner under (x,y,z) -> (-x,-y,z). Exact: the discrete
    /// flow map commutes with the symmetry bit for bit, so the mirrored
    /// nodes close with the same residual and stability data.
    pub fn mirrored(&self) -> PeriodicOrbit {
        let word = canonical_cycle(&swap_symbols(&self.symbol));
        PeriodicOrbit {
            id: word.clone(),
            nodes: self
                .nodes
                .iter()
                .map(|(t, s)| (*t, State::new(-s.x, -s.y, s.z)))
                .collect(),
            period: self.period,
            symbol: word,
            floquet_exponent: self.floquet_exponent,
            multipliers: self.multipliers,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LibraryOrdering {
    /// Sorted by (symbol length, word).
    SymbolLength,
    /// Reordered by permutation index r.
    Permuted(u32),
    Custom,
}

#[derive(Debug, Clone)]
pub struct OrbitLibrary {
    pub orbits: Vec<PeriodicOrbit>,
    pub ordering: LibraryOrdering,
}

impl OrbitLibrary {
    pub fn new(mut orbits: Vec<PeriodicOrbit>) -> Result<Self> {
        orbits.sort_by(|a, b| (a.symbol.len(), &a.symbol).cmp(&(b.symbol.len(), &b.symbol)));
        let lib = OrbitLibrary {
            orbits,
            ordering: LibraryOrdering::SymbolLength,
        };
        lib.check_ids()?;
        Ok(lib)
    }

    fn check_ids(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for o in &self.orbits {
            if !seen.insert(o.id.clone()) {
                return Err(Error::Precondition(format!("duplicate orbit id {}", o.id)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.orbits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.orbits.is_empty()
    }

    pub fn total_period(&self) -> f64 {
        self.orbits.iter().map(|o| o.period).sum()
    }

    pub fn max_symbol_length(&self) -> usize {
        self.orbits.iter().map(|o| o.symbol.len()).max().unwrap_or(0)
    }

    /// If the first `p` orbits (in symbol-length order) form a complete
    /// library, returns its maximum symbol length.
    pub fn complete_prefix_length(&self, p: usize) -> Option<usize> {
        if p == 0 || p > self.orbits.len() {
            return None;
        }
        let sizes = complete_library_sizes(16).ok()?;
        let idx = sizes.iter().position(|&c| c == p)?;
        let l = idx + 2;
        let counts = word_counts(self.orbits[..p].iter().map(|o| o.symbol.len()));
        let expect = word_counts(
            (2..=l).flat_map(|len| enumerate_primitive_words(len).into_iter().map(|w| w.len())),
        );
        (counts == expect).then_some(l)
    }
}

fn word_counts(lens: impl Iterator<Item = usize>) -> BTreeMap<usize, usize> {
    let mut m = BTreeMap::new();
    for l in lens {
        *m.entry(l).or_insert(0usize) += 1;
    }
    m
}

/// Lexicographically minimal rotation of a cyclic word.
pub fn canonical_cycle(word: &str) -> String {
    let b = word.as_bytes();
    let n = b.len();
    (0..n)
        .map(|r| {
            let mut s = String::with_capacity(n);
            for i in 0..n {
                s.push(b[(r + i) % n] as char);
            }
            s
        })
        .min()
        .unwrap_or_default()
}

/// True when the word is not a repetition of a shorter word.
pub fn is_primitive(word: &str) -> bool {
    let n = word.len();
    if n == 0 {
        return false;
    }
    for d in 1..n {
        if n % d == 0 && word.as_bytes().chunks(d).all(|c| c == &word.as_bytes()[..d]) {
            return false;
        }
    }
    true
}

/// A <-> B.
pub fn swap_symbols(word: &str) -> String {
    word.chars()
        .map(|c| match c {
            'A' => 'B',
            'B' => 'A',
            other => other,
        })
        .collect()
}

fn moebius(n: u64) -> i64 {
    let mut n = n;
    let mut mu = 1i64;
    let mut d = 2u64;
    while d * d <= n {
        if n % d == 0 {
            n /= d;
            if n % d == 0 {
                return 0;
            }
            mu = -mu;
        }
        d += 1;
    }
    if n > 1 {
        mu = -mu;
    }
    mu
}

/// Cumulative counts of primitive binary necklaces for lengths 2..=l_max,
/// via the Möbius formula (1/n) Σ_{d|n} μ(d) 2^{n/d}.
pub fn complete_library_sizes(l_max: usize) -> Result<Vec<usize>> {
    if l_max < 2 {
        return Err(Error::Precondition("l_max must be at least 2".into()));
    }
    let mut out = Vec::with_capacity(l_max - 1);
    let mut total = 0usize;
    for n in 2..=l_max as u64 {
        let mut c: i64 = 0;
        for d in 1..=n {
            if n % d == 0 {
                c += moebius(d) * (1i64 << (n / d));
            }
        }
        total += (c / n as i64) as usize;
        out.push(total);
    }
    Ok(out)
}

/// All canonical primitive words of the given length, by direct enumeration.
pub fn enumerate_primitive_words(len: usize) -> Vec<String> {
    let mut set = std::collections::BTreeSet::new();
    for mask in 0u32..(1 << len) {
        let word: String = (0..len)
            .map(|i| if mask >> i & 1 == 0 { 'A' } else { 'B' })
            .collect();
        let canon = canonical_cycle(&word);
        if is_primitive(&canon) {
            set.insert(canon);
        }
    }
    set.into_iter().collect()
}

/// A local z-maximum event on a sampled trajectory.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ZMaxEvent {
    pub t: f64,
    pub state: State,
    pub symbol: u8,
}

/// Locate ż sign changes (+ to −) between consecutive samples using the
/// analytic ż = xy − βz, interpolating the event linearly.
pub(crate) fn z_max_events(traj: &Trajectory, p: &Params) -> Vec<ZMaxEvent> {
    let zdot = |s: &State| s.x * s.y - p.beta * s.z;
    let mut events = Vec::new();
    for i in 0..traj.len().saturating_sub(1) {
        let d0 = zdot(&traj.states[i]);
        let d1 = zdot(&traj.states[i + 1]);
        if d0 > 0.0 && d1 <= 0.0 {
            let frac = d0 / (d0 - d1);
            let state = traj.states[i] + (traj.states[i + 1] - traj.states[i]) * frac;
            let symbol = if state.x > 0.0 { b'A' } else { b'B' };
            events.push(ZMaxEvent {
                t: traj.time(i) + frac * traj.dt,
                state,
                symbol,
            });
        }
    }
    events
}

/// Symbol word of a closed orbit: one symbol per z-maximum over one period,
/// in canonical cyclic-minimal form. Errors when a maximum sits on the
/// symbol boundary |x| < 1e-6 or the word is not primitive.
pub fn symbol_sequence(orbit: &PeriodicOrbit, p: &Params) -> Result<String> {
    let n = (orbit.period / 0.002).ceil() as usize;
    let traj = integrate(&orbit.nodes[0].1, p, orbit.period, orbit.period / n as f64)?;
    let zdot = |s: &State| s.x * s.y - p.beta * s.z;
    let mut word = String::new();
    // Cyclic scan: pair i with i+1 mod n over one full period (the stored
    // endpoint duplicates the start).
    for i in 0..n {
        let a = &traj.states[i];
        let b = &traj.states[(i + 1) % n];
        let (d0, d1) = (zdot(a), zdot(b));
        if d0 > 0.0 && d1 <= 0.0 {
            let frac = d0 / (d0 - d1);
            let x = a.x + (b.x - a.x) * frac;
            if x.abs() < 1e-6 {
                return Err(Error::AmbiguousSymbol(x.abs()));
            }
            word.push(if x > 0.0 { 'A' } else { 'B' });
        }
    }
    if word.is_empty() {
        return Err(Error::DegenerateSolution("no z-maxima along orbit".into()));
    }
    if !is_primitive(&word) {
        return Err(Error::DegenerateSolution(format!(
            "non-primitive symbol word {word}"
        )));
    }
    Ok(canonical_cycle(&word))
}

/// Near-recurrence guesses (state, approximate period) on a long trajectory:
/// events with ‖x(t+T) − x(t)‖ < eps, t_min ≤ T ≤ t_max, locally minimal in
/// T, deduplicated along the trajectory.
pub fn scan_recurrences(
    traj: &Trajectory,
    eps: f64,
    t_min: f64,
    t_max: f64,
) -> Result<Vec<(State, f64)>> {
    if !(t_max >= t_min && t_min > 0.0) {
        return Err(Error::Precondition(
            "need 0 < t_min <= t_max for recurrence scan".into(),
        ));
    }
    if traj.duration() <= t_max {
        return Err(Error::Precondition("trajectory shorter than t_max".into()));
    }
    let base_stride = ((0.05 / traj.dt).round() as usize).max(1);
    let cmp_stride = ((0.02 / traj.dt).round() as usize).max(1);
    let j_lo = (t_min / traj.dt).ceil() as usize;
    let j_hi = (t_max / traj.dt).floor() as usize;
    let mut out: Vec<(State, f64)> = Vec::new();
    let mut last_accept_t = f64::NEG_INFINITY;
    let mut i = 0;
    while i + j_hi < traj.len() {
        let x0 = &traj.states[i];
        let mut best = (f64::INFINITY, 0usize);
        let mut j = j_lo;
        while j <= j_hi {
            let d = (traj.states[i + j] - x0).norm_squared();
            if d < best.0 {
                best = (d, j);
            }
            j += cmp_stride;
        }
        // Sample-level scan around the strided minimum, then a parabolic
        // vertex fit on the squared distance: near a true recurrence
        // d²(T) is locally quadratic, so the fit recovers the off-grid
        // period and the distance floor set by the sample spacing drops
        // out.
        let mut fine = best;
        for j in best.1.saturating_sub(cmp_stride)..=(best.1 + cmp_stride).min(j_hi) {
            let d = (traj.states[i + j] - x0).norm_squared();
            if d < fine.0 {
                fine = (d, j);
            }
        }
        let (mut dist_sq, mut period) = (fine.0, fine.1 as f64 * traj.dt);
        if fine.1 > j_lo && fine.1 < j_hi {
            let dm = (traj.states[i + fine.1 - 1] - x0).norm_squared();
            let dp = (traj.states[i + fine.1 + 1] - x0).norm_squared();
            let denom = dm - 2.0 * fine.0 + dp;
            if denom > 0.0 {
                let shift = 0.5 * (dm - dp) / denom;
                if shift.abs() <= 1.0 {
                    period += shift * traj.dt;
                    dist_sq = (fine.0 - 0.125 * (dm - dp) * (dm - dp) / denom).max(0.0);
                }
            }
        }
        let interior = fine.1 > j_lo && fine.1 < j_hi;
        if dist_sq.sqrt() < eps && interior && traj.time(i) - last_accept_t > 1.0 {
            out.push((*x0, period));
            last_accept_t = traj.time(i);
        }
        i += base_stride;
    }
    Ok(out)
}

const SHOOT_RESIDUAL_TOL: f64 = 1e-10;
const CLOSURE_TOL: f64 = 1e-8;

struct ShootState {
    nodes: Vec<State>,
    period: f64,
}

/// Multiple-shooting Newton with a fixed phase plane through the initial
/// node and damped (halving) line search. The period is an unknown; node i
/// carries the arc [iT/n, (i+1)T/n].
fn multiple_shooting(
    p: &Params,
    nodes0: Vec<State>,
    period0: f64,
    max_iters: usize,
) -> Result<ShootState> {
    let n = nodes0.len();
    let dim = 3 * n + 1;
    let anchor = nodes0[0];
    let f_anchor = vector_field(&anchor, p);
    if f_anchor.norm() < 1e-6 {
        return Err(Error::DegenerateSolution(
            "guess starts at an equilibrium".into(),
        ));
    }

    let residual = |nodes: &[State], period: f64| -> Result<DVector<f64>> {
        let tau = period / n as f64;
        let mut out = DVector::zeros(dim);
        for i in 0..n {
            let end = propagate(&nodes[i], p, tau)?;
            let target = nodes[(i + 1) % n];
            out.fixed_rows_mut::<3>(3 * i).copy_from(&(end - target));
        }
        out[3 * n] = f_anchor.dot(&(nodes[0] - anchor));
        Ok(out)
    };

    let mut nodes = nodes0;
    let mut period = period0;
    // A wild Newton step must not send the trial period off to a huge
    // value: the residual integrates n segments of length T/n each.
    let period_cap = 3.0 * period0 + 5.0;
    let mut fval = residual(&nodes, period)?;

    for iter in 0..max_iters {
        let res_norm = fval.amax();
        if res_norm < SHOOT_RESIDUAL_TOL {
            if period < 0.5 {
                return Err(Error::DegenerateSolution(format!(
                    "period collapsed to {period:.3e}"
                )));
            }
            if nodes.iter().any(|x| vector_field(x, p).norm() < 1e-6) {
                return Err(Error::DegenerateSolution(
                    "converged to an equilibrium".into(),
                ));
            }
            return Ok(ShootState { nodes, period });
        }

        let tau = period / n as f64;
        let mut jac = DMatrix::<f64>::zeros(dim, dim);
        for i in 0..n {
            let (end, m) = propagate_with_frame(&nodes[i], &Matrix3::identity(), p, tau)?;
            jac.fixed_view_mut::<3, 3>(3 * i, 3 * i).copy_from(&m);
            let jn = (i + 1) % n;
            for k in 0..3 {
                jac[(3 * i + k, 3 * jn + k)] -= 1.0;
            }
            let dfdt = vector_field(&end, p) / n as f64;
            jac.fixed_view_mut::<3, 1>(3 * i, 3 * n).copy_from(&dfdt);
        }
        for k in 0..3 {
            jac[(3 * n, k)] = f_anchor[k];
        }

        let lu = jac.lu();
        let step = lu.solve(&(-&fval)).ok_or(Error::RefinementFailed {
            iters: iter,
            residual: res_norm,
        })?;

        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..=10 {
            let mut trial_nodes = nodes.clone();
            for i in 0..n {
                for k in 0..3 {
                    trial_nodes[i][k] += lambda * step[3 * i + k];
                }
            }
            let trial_period = period + lambda * step[3 * n];
            let in_box = trial_nodes.iter().all(|x| x.amax() < 200.0);
            if in_box && trial_period > 0.05 && trial_period < period_cap {
                if let Ok(trial_f) = residual(&trial_nodes, trial_period) {
                    if trial_f.amax() < res_norm {
                        nodes = trial_nodes;
                        period = trial_period;
                        fval = trial_f;
                        accepted = true;
                        break;
                    }
                }
            }
            lambda *= 0.5;
        }
        if !accepted {
            return Err(Error::RefinementFailed {
                iters: iter,
                residual: res_norm,
            });
        }
    }
    Err(Error::RefinementFailed {
        iters: max_iters,
        residual: fval.amax(),
    })
}

/// Floquet data from the converged nodes: the monodromy is the ordered
/// product of per-segment tangent maps. The two leading eigenvalue
/// magnitudes come from the 3x3 eigenproblem; the contracting one is
/// recovered from the product of segment determinants, which stays accurate
/// where the direct determinant of the full monodromy cancels away.
pub fn floquet(orbit: &PeriodicOrbit, p: &Params) -> Result<(f64, [f64; 3])> {
    let n = orbit.nodes.len();
    let mut m = Matrix3::<f64>::identity();
    let mut det_prod = 1.0_f64;
    for i in 0..n {
        let t0 = orbit.nodes[i].0;
        let t1 = if i + 1 == n {
            orbit.period
        } else {
            orbit.nodes[i + 1].0
        };
        let (_, seg) = propagate_with_frame(&orbit.nodes[i].1, &Matrix3::identity(), p, t1 - t0)?;
        det_prod *= seg.determinant();
        m = seg * m;
    }
    let eig = m.complex_eigenvalues();
    let mut mags: Vec<f64> = eig.iter().map(|c| c.norm()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    if !mags[0].is_finite() || mags[0] <= 0.0 {
        return Err(Error::Numeric("monodromy eigenvalue solve failed".into()));
    }
    let m2 = det_prod.abs() / (mags[0] * mags[1]);
    let mut mult = [mags[0], mags[1], m2];
    mult.sort_by(|a, b| b.total_cmp(a));
    let exponent = mult[0].ln() / orbit.period;
    Ok((exponent, mult))
}

/// Refine a (state, approximate period) guess into a closed orbit with
/// Floquet data and canonical symbol word.
pub fn refine_orbit(guess: (State, f64), p: &Params) -> Result<PeriodicOrbit> {
    let (state, period) = guess;
    if period <= 0.0 {
        return Err(Error::Precondition("guess period must be positive".into()));
    }
    if vector_field(&state, p).norm() < 1e-6 {
        return Err(Error::DegenerateSolution("guess is an equilibrium".into()));
    }
    // Estimate the symbol length of the guess loop to size the node set.
    let loop_traj = integrate(&state, p, period, (period / 400.0).max(1e-3))?;
    let l_est = z_max_events(&loop_traj, p).len().max(1);
    let n = (4 * l_est).max(8);
    let nodes0: Vec<State> = (0..n)
        .map(|i| {
            let t = period * i as f64 / n as f64;
            let idx = ((t / loop_traj.dt).round() as usize).min(loop_traj.len() - 1);
            loop_traj.states[idx]
        })
        .collect();
    finalize_orbit(multiple_shooting(p, nodes0, period, 60)?, p)
}

fn finalize_orbit(sol: ShootState, p: &Params) -> Result<PeriodicOrbit> {
    let n = sol.nodes.len();
    // Independent single-shooting closure check.
    let closure = (propagate(&sol.nodes[0], p, sol.period)? - sol.nodes[0]).norm();
    if closure > CLOSURE_TOL {
        return Err(Error::RefinementFailed {
            iters: 0,
            residual: closure,
        });
    }
    let mut orbit = PeriodicOrbit {
        id: String::new(),
        nodes: (0..n)
            .map(|i| (sol.period * i as f64 / n as f64, sol.nodes[i]))
            .collect(),
        period: sol.period,
        symbol: String::new(),
        floquet_exponent: 0.0,
        multipliers: [0.0; 3],
    };
    let word = symbol_sequence(&orbit, p)?;
    let (lam, mult) = floquet(&orbit, p)?;
    if !(lam > 0.0) {
        return Err(Error::DegenerateSolution(format!(
            "orbit is not unstable (lambda = {lam:.3e})"
        )));
    }
    orbit.id = word.clone();
    orbit.symbol = word;
    orbit.floquet_exponent = lam;
    orbit.multipliers = mult;
    Ok(orbit)
}

/// Search budget for library construction.
#[derive(Debug, Clone, Copy)]
pub struct SearchBudget {
    /// Duration of the first chaotic scan run (time units); doubled on each
    /// extra round.
    pub scan_duration: f64,
    /// Newton attempts per missing word and scan round.
    pub max_candidates: usize,
    pub max_newton_iters: usize,
    /// Additional scan rounds if words are still missing.
    pub extra_rounds: usize,
}

impl SearchBudget {
    pub fn for_length(l_max: usize) -> Self {
        SearchBudget {
            scan_duration: 20_000.0 * f64::powi(2.0, l_max.saturating_sub(5) as i32),
            max_candidates: 10,
            max_newton_iters: 60,
            extra_rounds: 2,
        }
    }
}

/// Build the complete orbit library up to symbol length `l_max`.
pub fn build_complete_library(
    l_max: usize,
    p: &Params,
    budget: &SearchBudget,
    seed: u64,
) -> Result<OrbitLibrary> {
    if l_max < 2 {
        return Err(Error::Precondition("l_max must be at least 2".into()));
    }
    let mut targets: BTreeMap<String, Option<PeriodicOrbit>> = BTreeMap::new();
    for l in 2..=l_max {
        for w in enumerate_primitive_words(l) {
            targets.insert(w, None);
        }
    }

    let mut duration = budget.scan_duration;
    for round in 0..=budget.extra_rounds {
        if targets.values().all(Option::is_some) {
            break;
        }
        let mut rng = crate::substream(seed, &format!("orbit-search-{round}"));
        let s0 = crate::dynamics::attractor_state(p, &mut rng)?;
        let traj = integrate(&s0, p, duration, DENSE_SPACING)?;
        let events = z_max_events(&traj, p);
        search_round(p, budget, &traj, &events, l_max, &mut targets);
        duration *= 2.0;
    }

    let missing: Vec<String> = targets
        .iter()
        .filter(|(_, v)| v.is_none())
        .map(|(k, _)| k.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::IncompleteLibrary { missing });
    }
    OrbitLibrary::new(targets.into_values().flatten().collect())
}

fn search_round(
    p: &Params,
    budget: &SearchBudget,
    traj: &Trajectory,
    events: &[ZMaxEvent],
    l_max: usize,
    targets: &mut BTreeMap<String, Option<PeriodicOrbit>>,
) {
    let syms: Vec<u8> = events.iter().map(|e| e.symbol).collect();

    // Candidates per word: (recurrence distance, start event, word length).
    // The primary pass requires the word to appear doubled in the symbol
    // stream, which makes the spanned segment shadow the orbit closely.
    let mut doubled: BTreeMap<String, Vec<(f64, usize, usize)>> = BTreeMap::new();
    let mut single: BTreeMap<String, Vec<(f64, usize, usize)>> = BTreeMap::new();
    for l in 2..=l_max {
        for k in 0..syms.len().saturating_sub(2 * l) {
            let word = std::str::from_utf8(&syms[k..k + l]).unwrap();
            let canon = canonical_cycle(word);
            if !targets.contains_key(&canon) {
                continue;
            }
            let dist = (events[k + l].state - events[k].state).norm();
            if syms[k + l..k + 2 * l] == syms[k..k + l] {
                doubled.entry(canon).or_default().push((dist, k, l));
            } else {
                single.entry(canon).or_default().push((dist, k, l));
            }
        }
    }
    for pool in [&mut doubled, &mut single] {
        for v in pool.values_mut() {
            v.sort_by(|a, b| a.0.total_cmp(&b.0));
            v.truncate(budget.max_candidates);
        }
    }

    let words: Vec<String> = targets.keys().cloned().collect();
    for word in words {
        if targets[&word].is_some() {
            continue;
        }
        let cands = doubled
            .get(&word)
            .into_iter()
            .chain(single.get(&word))
            .flatten();
        for &(_, k, l) in cands {
            match refine_candidate(p, budget, traj, events, k, l) {
                Ok(orbit) => {
                    let got = orbit.symbol.clone();
                    let mut matched = false;
                    if let Some(slot) = targets.get_mut(&got) {
                        matched = got == word;
                        if slot.is_none() {
                            let mirror = orbit.mirrored();
                            *slot = Some(orbit);
                            if mirror.symbol != got {
                                if let Some(mslot) = targets.get_mut(&mirror.symbol) {
                                    if mslot.is_none() {
                                        *mslot = Some(mirror);
                                    }
                                }
                            }
                        }
                    }
                    if matched {
                        break;
                    }
                }
                Err(_) => continue,
            }
        }
    }
}

fn refine_candidate(
    p: &Params,
    budget: &SearchBudget,
    traj: &Trajectory,
    events: &[ZMaxEvent],
    k: usize,
    l: usize,
) -> Result<PeriodicOrbit> {
    let t_start = events[k].t;
    let period = events[k + l].t - t_start;
    let n = (4 * l).max(8);
    let nodes0: Vec<State> = (0..n)
        .map(|i| {
            let t = t_start + period * i as f64 / n as f64;
            let idx = ((t - traj.t0) / traj.dt).round() as usize;
            traj.states[idx.min(traj.len() - 1)]
        })
        .collect();
    finalize_orbit(
        multiple_shooting(p, nodes0, period, budget.max_newton_iters)?,
        p,
    )
}

/// Write the library in the `ORBITLIB v1` plain-text format.
pub fn save_library(lib: &OrbitLibrary, path: &Path) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "ORBITLIB v1 count={}", lib.orbits.len()).unwrap();
    for o in &lib.orbits {
        writeln!(
            out,
            "# id={} T={} sym={} lam={} mult={},{},{}",
            o.id,
            fmt_f64(o.period),
            o.symbol,
            fmt_f64(o.floquet_exponent),
            fmt_f64(o.multipliers[0]),
            fmt_f64(o.multipliers[1]),
            fmt_f64(o.multipliers[2]),
        )
        .unwrap();
        for (t, s) in &o.nodes {
            writeln!(
                out,
                "{} {} {} {}",
                fmt_f64(*t),
                fmt_f64(s.x),
                fmt_f64(s.y),
                fmt_f64(s.z)
            )
            .unwrap();
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_library(path: &Path) -> Result<OrbitLibrary> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let header = lines.next().map(|(_, l)| l);
    let toks = check_header(header, "ORBITLIB", "v1")?;
    let count = parse_usize(keyed(toks.first().copied().unwrap_or(""), "count", 1)?, 1)?;

    let mut orbits: Vec<PeriodicOrbit> = Vec::with_capacity(count);
    let mut current: Option<PeriodicOrbit> = None;
    for (idx, raw) in lines {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(meta) = line.strip_prefix('#') {
            if let Some(o) = current.take() {
                orbits.push(o);
            }
            let toks: Vec<&str> = meta.split_whitespace().collect();
            if toks.len() != 5 {
                return Err(Error::Parse {
                    line: lineno,
                    msg: "orbit header needs id= T= sym= lam= mult=".into(),
                });
            }
            let id = keyed(toks[0], "id", lineno)?.to_string();
            let period = parse_f64(keyed(toks[1], "T", lineno)?, lineno)?;
            let symbol = keyed(toks[2], "sym", lineno)?.to_string();
            let lam = parse_f64(keyed(toks[3], "lam", lineno)?, lineno)?;
            let mult_toks: Vec<&str> = keyed(toks[4], "mult", lineno)?.split(',').collect();
            if mult_toks.len() != 3 {
                return Err(Error::Parse {
                    line: lineno,
                    msg: "mult needs three comma-separated values".into(),
                });
            }
            let mut multipliers = [0.0; 3];
            for (i, t) in mult_toks.iter().enumerate() {
                multipliers[i] = parse_f64(t, lineno)?;
            }
            current = Some(PeriodicOrbit {
                id,
                nodes: Vec::new(),
                period,
                symbol,
                floquet_exponent: lam,
                multipliers,
            });
        } else {
            let o = current.as_mut().ok_or(Error::Parse {
                line: lineno,
                msg: "node line before any orbit header".into(),
            })?;
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() != 4 {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("node line needs `t x y z`, got {} fields", toks.len()),
                });
            }
            let t = parse_f64(toks[0], lineno)?;
            let s = State::new(
                parse_f64(toks[1], lineno)?,
                parse_f64(toks[2], lineno)?,
                parse_f64(toks[3], lineno)?,
            );
            o.nodes.push((t, s));
        }
    }
    if let Some(o) = current.take() {
        orbits.push(o);
    }
    if orbits.len() != count {
        return Err(Error::Parse {
            line: text.lines().count(),
            msg: format!("header count={count} but found {} orbits", orbits.len()),
        });
    }
    for o in &orbits {
        if o.nodes.is_empty() {
            return Err(Error::Parse {
                line: 0,
                msg: format!("orbit {} has no nodes", o.id),
            });
        }
    }
    let ordered = orbits
        .windows(2)
        .all(|w| (w[0].symbol.len(), &w[0].symbol) <= (w[1].symbol.len(), &w[1].symbol));
    let lib = OrbitLibrary {
        orbits,
        ordering: if ordered {
            LibraryOrdering::SymbolLength
        } else {
            LibraryOrdering::Custom
        },
    };
    lib.check_ids()?;
    Ok(lib)
}

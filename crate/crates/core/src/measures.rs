//! Uniform-in-time reference measures over orbits and snippets, and time
//! averages of observables over reference measures and long chaotic runs.
//!
//! Every reference measure is normalized by construction: the quadrature
//! weights over its stored samples sum to one exactly. Orbits use the
//! periodic trapezoid rule (equal weights over one period, no duplicated
//! endpoint); snippets use the composite trapezoid rule with half-weight
//! endpoints.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::dynamics::{integrate, Params, State, Trajectory};
use crate::observables::Observable;
use crate::orbits::{OrbitLibrary, PeriodicOrbit, DENSE_SPACING};
use crate::textio::{check_header, fmt_f64, keyed, parse_f64, parse_usize};
use crate::{Error, Result};

/// A finite sampled chaotic trajectory segment; not required to be closed.
#[derive(Debug, Clone)]
pub struct Snippet {
    pub id: String,
    pub dt: f64,
    pub states: Vec<State>,
    pub duration: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasureKind {
    Orbit,
    Snippet,
}

impl MeasureKind {
    pub fn tag(&self) -> &'static str {
        match self {
            MeasureKind::Orbit => "orbit",
            MeasureKind::Snippet => "snippet",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "orbit" => Ok(MeasureKind::Orbit),
            "snippet" => Ok(MeasureKind::Snippet),
            other => Err(Error::UnsupportedInput(format!(
                "unknown measure kind `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Quadrature {
    /// Equal weights over a closed loop.
    Periodic,
    /// Composite trapezoid with half-weight endpoints.
    Trapezoid,
}

/// A normalized uniform-in-time measure, stored as dense samples plus the
/// quadrature rule that integrates over them.
#[derive(Debug, Clone)]
pub struct ReferenceMeasure {
    pub id: String,
    pub kind: MeasureKind,
    samples: Vec<State>,
    quad: Quadrature,
    pub duration: f64,
}

impl ReferenceMeasure {
    /// Dense resampling of an orbit over one period at spacing <= 0.01,
    /// endpoint dropped (the loop closes onto its first sample).
    pub fn from_orbit(orbit: &PeriodicOrbit, p: &Params) -> Result<Self> {
        let n = (orbit.period / DENSE_SPACING).ceil() as usize;
        let traj = integrate(&orbit.nodes[0].1, p, orbit.period, orbit.period / n as f64)?;
        Ok(ReferenceMeasure {
            id: orbit.id.clone(),
            kind: MeasureKind::Orbit,
            samples: traj.states[..n].to_vec(),
            quad: Quadrature::Periodic,
            duration: orbit.period,
        })
    }

    pub fn from_snippet(snippet: &Snippet) -> Self {
        ReferenceMeasure {
            id: snippet.id.clone(),
            kind: MeasureKind::Snippet,
            samples: snippet.states.clone(),
            quad: Quadrature::Trapezoid,
            duration: snippet.duration,
        }
    }

    /// Degenerate single-point measure.
    pub fn point(id: &str, x: State) -> Self {
        ReferenceMeasure {
            id: id.into(),
            kind: MeasureKind::Snippet,
            samples: vec![x],
            quad: Quadrature::Trapezoid,
            duration: 0.0,
        }
    }

    pub fn points(&self) -> &[State] {
        &self.samples
    }

    /// Quadrature average of an arbitrary state function; the weights sum
    /// to one exactly, so constants are reproduced exactly.
    pub fn average_fn(&self, mut f: impl FnMut(&State) -> f64) -> f64 {
        let n = self.samples.len();
        match self.quad {
            Quadrature::Periodic => {
                let mut sum = 0.0;
                for s in &self.samples {
                    sum += f(s);
                }
                sum / n as f64
            }
            Quadrature::Trapezoid => {
                if n == 1 {
                    return f(&self.samples[0]);
                }
                let m = (n - 1) as f64;
                let mut sum = (f(&self.samples[0]) + f(&self.samples[n - 1])) / 2.0;
                for s in &self.samples[1..n - 1] {
                    sum += f(s);
                }
                sum / m
            }
        }
    }

    pub fn average(&self, a: &Observable) -> f64 {
        self.average_fn(|s| a.eval(s))
    }
}

/// Time average over a reference measure, (1/T_p) ∫ a(x_p(t)) dt by
/// composite quadrature over the stored samples.
pub fn measure_average(m: &ReferenceMeasure, a: &Observable) -> f64 {
    m.average(a)
}

/// Sample mean over the retained trajectory samples, (1/N) Σ a(x(n Δt)).
pub fn ergodic_average(traj: &Trajectory, a: &Observable) -> f64 {
    let n = traj.len();
    assert!(n > 0, "empty trajectory");
    traj.states.iter().map(|s| a.eval(s)).sum::<f64>() / n as f64
}

/// One chaotic run of `total_duration` (after the 25-unit transient), cut
/// into `count` contiguous equal-duration snippets. Adjacent snippets share
/// their boundary sample, so concatenation reproduces the parent run.
pub fn sample_snippets(
    p: &Params,
    total_duration: f64,
    count: usize,
    seed: u64,
) -> Result<Vec<Snippet>> {
    if !(total_duration > 0.0) {
        return Err(Error::Precondition(
            "total_duration must be positive".into(),
        ));
    }
    if count < 1 {
        return Err(Error::Precondition("snippet count must be >= 1".into()));
    }
    let mut rng = crate::substream(seed, "snippets");
    let s0 = crate::dynamics::attractor_state(p, &mut rng)?;
    let per = (total_duration / (count as f64 * DENSE_SPACING)).ceil() as usize;
    let dt = total_duration / (count * per) as f64;
    let traj = integrate(&s0, p, total_duration, dt)?;
    debug_assert_eq!(traj.len(), count * per + 1);
    let duration = per as f64 * dt;
    Ok((0..count)
        .map(|i| Snippet {
            id: format!("s{i:03}"),
            dt,
            states: traj.states[i * per..=(i + 1) * per].to_vec(),
            duration,
        })
        .collect())
}

/// Chaotic estimator samples x(n Δt), n = 1..N, initialized at random on
/// the attractor (25-unit transient before t = 0).
pub fn chaotic_samples(p: &Params, n: usize, dt: f64, rng: &mut impl Rng) -> Result<Trajectory> {
    if n < 1 || dt <= 0.0 {
        return Err(Error::Precondition("need n >= 1 and dt > 0".into()));
    }
    let s0 = crate::dynamics::attractor_state(p, rng)?;
    let traj = integrate(&s0, p, n as f64 * dt, dt)?;
    Ok(Trajectory {
        t0: dt,
        dt,
        states: traj.states[1..].to_vec(),
    })
}

/// Write snippets in the `SNIPLIB v1` plain-text format.
pub fn save_snippets(snippets: &[Snippet], path: &Path) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "SNIPLIB v1 count={}", snippets.len()).unwrap();
    for s in snippets {
        writeln!(out, "# id={} T={}", s.id, fmt_f64(s.duration)).unwrap();
        for (i, st) in s.states.iter().enumerate() {
            writeln!(
                out,
                "{} {} {} {}",
                fmt_f64(i as f64 * s.dt),
                fmt_f64(st.x),
                fmt_f64(st.y),
                fmt_f64(st.z)
            )
            .unwrap();
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_snippets(path: &Path) -> Result<Vec<Snippet>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let header = lines.next().map(|(_, l)| l);
    let toks = check_header(header, "SNIPLIB", "v1")?;
    let count = parse_usize(keyed(toks.first().copied().unwrap_or(""), "count", 1)?, 1)?;

    struct Partial {
        id: String,
        duration: f64,
        times: Vec<f64>,
        states: Vec<State>,
    }
    let mut done: Vec<Snippet> = Vec::new();
    let mut cur: Option<Partial> = None;
    let finish = |p: Partial, done: &mut Vec<Snippet>| -> Result<()> {
        if p.states.len() < 2 {
            return Err(Error::Parse {
                line: 0,
                msg: format!("snippet {} has fewer than 2 samples", p.id),
            });
        }
        let dt = p.times[1] - p.times[0];
        done.push(Snippet {
            id: p.id,
            dt,
            states: p.states,
            duration: p.duration,
        });
        Ok(())
    };
    for (idx, raw) in lines {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(meta) = line.strip_prefix('#') {
            if let Some(p) = cur.take() {
                finish(p, &mut done)?;
            }
            let toks: Vec<&str> = meta.split_whitespace().collect();
            if toks.len() != 2 {
                return Err(Error::Parse {
                    line: lineno,
                    msg: "snippet header needs id= T=".into(),
                });
            }
            cur = Some(Partial {
                id: keyed(toks[0], "id", lineno)?.to_string(),
                duration: parse_f64(keyed(toks[1], "T", lineno)?, lineno)?,
                times: Vec::new(),
                states: Vec::new(),
            });
        } else {
            let p = cur.as_mut().ok_or(Error::Parse {
                line: lineno,
                msg: "sample line before any snippet header".into(),
            })?;
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() != 4 {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("sample line needs `t x y z`, got {} fields", toks.len()),
                });
            }
            p.times.push(parse_f64(toks[0], lineno)?);
            p.states.push(State::new(
                parse_f64(toks[1], lineno)?,
                parse_f64(toks[2], lineno)?,
                parse_f64(toks[3], lineno)?,
            ));
        }
    }
    if let Some(p) = cur.take() {
        finish(p, &mut done)?;
    }
    if done.len() != count {
        return Err(Error::Parse {
            line: text.lines().count(),
            msg: format!("header count={count} but found {} snippets", done.len()),
        });
    }
    Ok(done)
}

/// Reference measures for every orbit of a library, in library order.
pub fn orbit_measures(lib: &OrbitLibrary, p: &Params) -> Result<Vec<ReferenceMeasure>> {
    lib.orbits
        .iter()
        .map(|o| ReferenceMeasure::from_orbit(o, p))
        .collect()
}

pub fn snippet_measures(snippets: &[Snippet]) -> Vec<ReferenceMeasure> {
    snippets.iter().map(ReferenceMeasure::from_snippet).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observables::Observable;

    #[test]
    fn normalization_is_exact() {
        // Both quadrature rules reproduce constants exactly: the weight sums
        // are (n ones)/n and (half + ones + half)/m, both integer ratios.
        for n in [1usize, 2, 3, 7, 100, 125, 333] {
            let samples: Vec<State> = (0..n)
                .map(|i| State::new(i as f64, -(i as f64), 0.5 * i as f64))
                .collect();
            let per = ReferenceMeasure {
                id: "t".into(),
                kind: MeasureKind::Orbit,
                samples: samples.clone(),
                quad: Quadrature::Periodic,
                duration: 1.0,
            };
            let trap = ReferenceMeasure {
                id: "t".into(),
                kind: MeasureKind::Snippet,
                samples,
                quad: Quadrature::Trapezoid,
                duration: 1.0,
            };
            assert_eq!(per.average(&Observable::One), 1.0);
            assert_eq!(trap.average(&Observable::One), 1.0);
        }
    }

    #[test]
    fn point_measure_evaluates_at_the_point() {
        let m = ReferenceMeasure::point("pt", State::new(1.0, 2.0, 3.0));
        assert_eq!(m.average(&Observable::X), 1.0);
        assert_eq!(m.average(&Observable::YZ), 6.0);
    }

    #[test]
    fn snippets_partition_parent_run() {
        let p = Params::default();
        let snips = sample_snippets(&p, 10.0, 4, 3).unwrap();
        assert_eq!(snips.len(), 4);
        for w in snips.windows(2) {
            assert_eq!(
                w[0].states.last().unwrap(),
                w[1].states.first().unwrap(),
                "adjacent snippets share the boundary sample"
            );
        }
        let total: f64 = snips.iter().map(|s| s.duration).sum();
        assert!((total - 10.0).abs() < 1e-9);
        for s in &snips {
            assert!(s.dt <= DENSE_SPACING + 1e-12);
        }

        let single = sample_snippets(&p, 10.0, 1, 3).unwrap();
        assert_eq!(single.len(), 1);
        assert!((single[0].duration - 10.0).abs() < 1e-9);
    }

    #[test]
    fn ergodic_average_of_one_is_one() {
        let p = Params::default();
        let mut rng = crate::substream(5, "erg");
        let traj = chaotic_samples(&p, 100, 2.0, &mut rng).unwrap();
        assert_eq!(traj.len(), 100);
        assert_eq!(ergodic_average(&traj, &Observable::One), 1.0);
        assert!((traj.t0 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn snippet_roundtrip() {
        let p = Params::default();
        let snips = sample_snippets(&p, 4.0, 2, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("snip.txt");
        save_snippets(&snips, &path).unwrap();
        let back = load_snippets(&path).unwrap();
        assert_eq!(back.len(), snips.len());
        for (a, b) in snips.iter().zip(&back) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.duration.to_bits(), b.duration.to_bits());
            assert_eq!(a.states, b.states);
        }
        // Mixed-version header.
        let text = std::fs::read_to_string(&path).unwrap();
        let vpath = dir.path().join("v9.txt");
        std::fs::write(&vpath, text.replace("SNIPLIB v1", "SNIPLIB v9")).unwrap();
        assert!(matches!(
            load_snippets(&vpath),
            Err(Error::VersionMismatch { .. })
        ));
    }
}

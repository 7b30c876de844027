//! The comparison protocol: pooled reference truth, full-factorial sweeps
//! over (method × kind × P × r × s × N), relative/maximal error metrics,
//! and persistent result tables.
//!
//! A sweep varies four degrees of freedom: the library size P, the
//! permutation r selecting *which* P measures are used (r = 1 is the
//! unpermuted symbol-length ordering), the chaotic-trajectory seed index s,
//! and the sample count N. POT cells are restricted to complete-library P
//! values at r = 1, since the spectral determinant is only defined there.
//!
//! Results are journaled per (kind, seed) block under `blocks/`, making a
//! sweep resumable; reruns produce a byte-identical result table because
//! every cell is deterministic given the master seed and floats round-trip
//! exactly through the 17-digit text format.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::dynamics::{lyapunov_benettin, Params, Trajectory};
use crate::kernel::{correlation_matrix, kernel_observable, CorrelationSystem, KernelConfig};
use crate::measures::{
    chaotic_samples, orbit_measures, sample_snippets, snippet_measures, MeasureKind,
    ReferenceMeasure, Snippet,
};
use crate::observables::Observable;
use crate::orbits::{LibraryOrdering, OrbitLibrary};
use crate::pot::{pot_weights, CycleData};
use crate::textio::{fmt_f64, parse_f64, parse_u64, parse_usize};
use crate::weights::{
    distance_table, solve_constrained, solve_nnls_normalized, solve_tikhonov, uniform_weights,
    voronoi_counts, weights_from_counts, Method, Provenance, WeightVector,
};
use crate::{Error, Result};

/// Observable tags in CSV column order; index 10 is the Lyapunov row.
pub const OBS_TAGS: [&str; 11] = [
    "1", "x", "y", "z", "x2", "xy", "xz", "y2", "yz", "z2", "lyapunov",
];

fn obs_rank(tag: &str) -> usize {
    OBS_TAGS.iter().position(|&t| t == tag).unwrap_or(usize::MAX)
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub methods: Vec<Method>,
    pub kinds: Vec<MeasureKind>,
    /// Library sizes; empty means "all complete-library sizes that fit".
    pub p_values: Vec<usize>,
    /// Permutation count R (r = 1 is the unpermuted ordering).
    pub permutations: u32,
    /// Chaotic seed count S.
    pub seeds: u32,
    /// Non-decreasing sample counts N.
    pub n_values: Vec<usize>,
    pub dt: f64,
    pub theta: f64,
    pub alpha: f64,
    /// Benettin run length for the reference Lyapunov exponent.
    pub benettin_t: f64,
    pub master_seed: u64,
    pub verbose: bool,
}

impl ExperimentConfig {
    /// Minutes-scale defaults: S=16 seeds, R=32 permutations, N up to 1e5.
    pub fn desk(master_seed: u64) -> Self {
        ExperimentConfig {
            methods: vec![
                Method::Lsw,
                Method::Nnls,
                Method::Markov,
                Method::Uniform,
                Method::Pot,
            ],
            kinds: vec![MeasureKind::Orbit, MeasureKind::Snippet],
            p_values: Vec::new(),
            permutations: 32,
            seeds: 16,
            n_values: vec![100, 1_000, 10_000, 100_000],
            dt: 2.0,
            theta: 100.0,
            alpha: 1e-10,
            benettin_t: 1e5,
            master_seed,
            verbose: false,
        }
    }

    /// Full publication-scale settings (hours of compute).
    pub fn paper_scale(master_seed: u64) -> Self {
        ExperimentConfig {
            permutations: 256,
            seeds: 256,
            n_values: vec![100, 1_000, 10_000, 100_000, 1_000_000],
            ..ExperimentConfig::desk(master_seed)
        }
    }

    fn validate(&self, lib_len: usize) -> Result<()> {
        if self.seeds < 1 || self.permutations < 1 {
            return Err(Error::Precondition("need S >= 1 and R >= 1".into()));
        }
        if self.n_values.is_empty()
            || self.n_values[0] == 0
            || self.n_values.windows(2).any(|w| w[1] < w[0])
        {
            return Err(Error::Precondition(
                "N list must be non-empty, positive, and non-decreasing".into(),
            ));
        }
        if self.methods.is_empty() || self.kinds.is_empty() {
            return Err(Error::Precondition(
                "need at least one method and one kind".into(),
            ));
        }
        if self.p_values.iter().any(|&p| p == 0 || p > lib_len) {
            return Err(Error::Precondition(format!(
                "P values must lie in 1..={lib_len}"
            )));
        }
        Ok(())
    }
}

/// Pooled long-run averages, variances, and standard errors for the
/// standard observable set, plus the Benettin Lyapunov exponent.
#[derive(Debug, Clone)]
pub struct TruthTable {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub se: Vec<f64>,
    pub lambda: f64,
    pub n_total: usize,
}

impl TruthTable {
    /// Variance with the unit substitution for zero-variance observables.
    pub fn var_for(&self, obs_idx: usize) -> f64 {
        let v = self.var[obs_idx];
        if v > 1e-30 {
            v
        } else {
            1.0
        }
    }
}

fn truth_from_trajectories(trajs: &[Trajectory], lambda: f64) -> TruthTable {
    let obs = Observable::standard_set();
    let mut sum = vec![0.0_f64; obs.len()];
    let mut sum_sq = vec![0.0_f64; obs.len()];
    let mut n_total = 0usize;
    for traj in trajs {
        n_total += traj.len();
        for s in &traj.states {
            for (i, a) in obs.iter().enumerate() {
                let v = a.eval(s);
                sum[i] += v;
                sum_sq[i] += v * v;
            }
        }
    }
    let n = n_total as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let var: Vec<f64> = sum_sq
        .iter()
        .zip(&mean)
        .map(|(sq, m)| (sq / n - m * m).max(0.0))
        .collect();
    // Samples at dt = 2 are near-independent (decorrelation time ~1), so
    // the plain sqrt(var/n) standard error is used.
    let se: Vec<f64> = var.iter().map(|v| (v / n).sqrt()).collect();
    TruthTable {
        mean,
        var,
        se,
        lambda,
        n_total,
    }
}

/// Ground truth from `s_count` independent chaotic trajectories of `n_max`
/// samples each, pooled, plus a Benettin exponent.
pub fn reference_truth(
    p: &Params,
    s_count: u32,
    n_max: usize,
    dt: f64,
    benettin_t: f64,
    master_seed: u64,
) -> Result<TruthTable> {
    if s_count < 1 {
        return Err(Error::Precondition("need at least one seed".into()));
    }
    let trajs = seed_trajectories(p, s_count, n_max, dt, master_seed)?;
    let lambda = lyapunov_benettin(p, benettin_t, 1.0, master_seed)?[0];
    Ok(truth_from_trajectories(&trajs, lambda))
}

fn seed_trajectories(
    p: &Params,
    s_count: u32,
    n_max: usize,
    dt: f64,
    master_seed: u64,
) -> Result<Vec<Trajectory>> {
    (1..=s_count)
        .into_par_iter()
        .map(|s| {
            let mut rng = crate::substream(master_seed, &format!("truth-{s}"));
            chaotic_samples(p, n_max, dt, &mut rng)
        })
        .collect()
}

/// E_rel = |E_true − E_hat| / sqrt(var), with var ≡ 1 substituted for
/// zero-variance observables.
pub fn relative_error(e_true: f64, e_hat: f64, var: f64) -> f64 {
    let v = if var > 1e-30 { var } else { 1.0 };
    (e_true - e_hat).abs() / v.sqrt()
}

/// Maximal error over the ten standard observables.
pub fn max_error(e_rels: &[f64]) -> Result<f64> {
    if e_rels.len() != 10 {
        return Err(Error::Precondition(format!(
            "E_max needs all 10 observables, got {}",
            e_rels.len()
        )));
    }
    Ok(e_rels.iter().fold(0.0_f64, |m, &e| m.max(e)))
}

/// Measure ordering for permutation index r: r = 1 is the identity, r > 1 a
/// seeded Fisher–Yates shuffle, reproducible from the master seed.
pub fn permutation(count: usize, r: u32, master_seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..count).collect();
    if r > 1 {
        use rand::Rng;
        let mut rng = crate::substream(master_seed, &format!("permutation-{r}"));
        for i in (1..count).rev() {
            idx.swap(i, rng.gen_range(0..=i));
        }
    }
    idx
}

/// Library reordered by permutation r.
pub fn permuted_library(lib: &OrbitLibrary, r: u32, master_seed: u64) -> OrbitLibrary {
    let idx = permutation(lib.len(), r, master_seed);
    OrbitLibrary {
        orbits: idx.iter().map(|&i| lib.orbits[i].clone()).collect(),
        ordering: if r == 1 {
            lib.ordering
        } else {
            LibraryOrdering::Permuted(r)
        },
    }
}

#[derive(Debug, Clone)]
pub struct ResultRow {
    pub method: Method,
    pub kind: MeasureKind,
    pub p: usize,
    pub r: u32,
    pub s: u32,
    pub n: usize,
    pub observable: &'static str,
    pub e_true: f64,
    pub e_hat: f64,
    pub e_rel: f64,
}

impl ResultRow {
    fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.method.tag(),
            self.kind.tag(),
            self.p,
            self.r,
            self.s,
            self.n,
            self.observable,
            fmt_f64(self.e_true),
            fmt_f64(self.e_hat),
            fmt_f64(self.e_rel)
        )
    }

    fn sort_key(&self) -> (usize, usize, usize, u32, u32, usize, usize) {
        let m = match self.method {
            Method::Lsw => 0,
            Method::Nnls => 1,
            Method::Constrained => 2,
            Method::Markov => 3,
            Method::Uniform => 4,
            Method::Pot => 5,
        };
        let k = match self.kind {
            MeasureKind::Orbit => 0,
            MeasureKind::Snippet => 1,
        };
        (m, k, self.p, self.r, self.s, self.n, obs_rank(self.observable))
    }
}

fn parse_row(line: &str, lineno: usize) -> Result<ResultRow> {
    let f: Vec<&str> = line.split(',').collect();
    if f.len() != 10 {
        return Err(Error::Parse {
            line: lineno,
            msg: format!("expected 10 CSV fields, got {}", f.len()),
        });
    }
    let observable = OBS_TAGS
        .iter()
        .find(|&&t| t == f[6])
        .copied()
        .ok_or(Error::Parse {
            line: lineno,
            msg: format!("unknown observable tag `{}`", f[6]),
        })?;
    Ok(ResultRow {
        method: Method::from_tag(f[0])?,
        kind: MeasureKind::from_tag(f[1])?,
        p: parse_usize(f[2], lineno)?,
        r: parse_u64(f[3], lineno)? as u32,
        s: parse_u64(f[4], lineno)? as u32,
        n: parse_usize(f[5], lineno)?,
        observable,
        e_true: parse_f64(f[7], lineno)?,
        e_hat: parse_f64(f[8], lineno)?,
        e_rel: parse_f64(f[9], lineno)?,
    })
}

#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub method: Method,
    pub kind: MeasureKind,
    pub p: usize,
    pub n: usize,
    /// Observable tag, or "emax" for the per-cell maximum over the set.
    pub observable: String,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    /// Logged alongside the quartiles; not part of the summary CSV schema.
    pub mean: f64,
}

#[derive(Debug, Clone)]
pub struct SkippedCell {
    pub key: String,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub rows: Vec<ResultRow>,
    pub summary: Vec<SummaryRow>,
    pub truth: TruthTable,
    pub skipped: Vec<SkippedCell>,
}

impl SweepOutput {
    /// Median/quartiles of a summary group, if present.
    pub fn summary_for(
        &self,
        method: Method,
        kind: MeasureKind,
        p: usize,
        n: usize,
        observable: &str,
    ) -> Option<&SummaryRow> {
        self.summary.iter().find(|row| {
            row.method == method
                && row.kind == kind
                && row.p == p
                && row.n == n
                && row.observable == observable
        })
    }
}

/// Linear-interpolation quantile on a sorted copy of the values.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Median and interquartile range per (method, kind, P, N, observable),
/// plus `emax` groups holding the per-cell maximum over the standard set.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    type Key = (usize, usize, usize, usize, String);
    let mut groups: BTreeMap<Key, Vec<f64>> = BTreeMap::new();
    let mut cell_emax: BTreeMap<(usize, usize, usize, u32, u32, usize), (usize, f64)> =
        BTreeMap::new();
    for row in rows {
        let (m, k, ..) = row.sort_key();
        groups
            .entry((m, k, row.p, row.n, row.observable.to_string()))
            .or_default()
            .push(row.e_rel);
        if row.observable != "lyapunov" {
            let e = cell_emax
                .entry((m, k, row.p, row.r, row.s, row.n))
                .or_insert((0, 0.0));
            e.0 += 1;
            e.1 = e.1.max(row.e_rel);
        }
    }
    for ((m, k, p, _r, _s, n), (count, emax)) in cell_emax {
        debug_assert_eq!(count, 10);
        groups
            .entry((m, k, p, n, "emax".to_string()))
            .or_default()
            .push(emax);
    }

    let method_of = |m: usize| match m {
        0 => Method::Lsw,
        1 => Method::Nnls,
        2 => Method::Constrained,
        3 => Method::Markov,
        4 => Method::Uniform,
        _ => Method::Pot,
    };
    groups
        .into_iter()
        .map(|((m, k, p, n, observable), mut vals)| {
            vals.sort_by(f64::total_cmp);
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            SummaryRow {
                method: method_of(m),
                kind: if k == 0 {
                    MeasureKind::Orbit
                } else {
                    MeasureKind::Snippet
                },
                p,
                n,
                observable,
                median: quantile(&vals, 0.5),
                q25: quantile(&vals, 0.25),
                q75: quantile(&vals, 0.75),
                mean,
            }
        })
        .collect()
}

pub fn write_results_csv(rows: &[ResultRow], path: &Path) -> Result<()> {
    let mut out = String::with_capacity(rows.len() * 96 + 64);
    out.push_str("method,kind,P,r,s,N,observable,E_true,E_hat,E_rel\n");
    for row in rows {
        out.push_str(&row.csv_line());
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_results_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if idx == 0 || line.is_empty() {
            continue;
        }
        rows.push(parse_row(line, idx + 1)?);
    }
    Ok(rows)
}

pub fn write_summary_csv(summary: &[SummaryRow], path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str("method,kind,P,N,observable,median_Erel,q25,q75\n");
    for row in summary {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            row.method.tag(),
            row.kind.tag(),
            row.p,
            row.n,
            row.observable,
            fmt_f64(row.median),
            fmt_f64(row.q25),
            fmt_f64(row.q75)
        )
        .unwrap();
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Sidecar table of group means, kept out of the fixed summary schema.
pub fn write_means_csv(summary: &[SummaryRow], path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str("method,kind,P,N,observable,mean_Erel\n");
    for row in summary {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            row.method.tag(),
            row.kind.tag(),
            row.p,
            row.n,
            row.observable,
            fmt_f64(row.mean)
        )
        .unwrap();
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Per-kind data shared across every cell of a sweep.
struct KindContext {
    kind: MeasureKind,
    measures: Vec<ReferenceMeasure>,
    /// E_p[a] for the ten standard observables, per measure.
    obs_table: Vec<[f64; 10]>,
    /// Floquet exponents (orbit kind only).
    exponents: Vec<f64>,
    a_full: nalgebra::DMatrix<f64>,
}

impl KindContext {
    fn build(
        kind: MeasureKind,
        measures: Vec<ReferenceMeasure>,
        exponents: Vec<f64>,
        cfg: &KernelConfig,
    ) -> Self {
        let obs = Observable::standard_set();
        let obs_table: Vec<[f64; 10]> = measures
            .par_iter()
            .map(|m| {
                let mut row = [0.0; 10];
                for (i, a) in obs.iter().enumerate() {
                    row[i] = m.average(a);
                }
                row
            })
            .collect();
        let a_full = correlation_matrix(&measures, cfg);
        KindContext {
            kind,
            measures,
            obs_table,
            exponents,
            a_full,
        }
    }
}

/// Run the full sweep. Snippets are generated to match the library's total
/// duration unless supplied. Block results are journaled under
/// `out_dir/blocks/`; a completed block is reused on rerun.
pub fn run_sweep(
    cfg: &ExperimentConfig,
    params: &Params,
    lib: &OrbitLibrary,
    snippets: Option<Vec<Snippet>>,
    out_dir: &Path,
) -> Result<SweepOutput> {
    cfg.validate(lib.len())?;
    std::fs::create_dir_all(out_dir.join("blocks"))?;
    let n_max = *cfg.n_values.last().unwrap();
    let kcfg = KernelConfig::new(cfg.theta)?;

    let p_values: Vec<usize> = if cfg.p_values.is_empty() {
        crate::orbits::complete_library_sizes(16)?
            .into_iter()
            .filter(|&p| p <= lib.len())
            .collect()
    } else {
        cfg.p_values.clone()
    };

    let log = |msg: &str| {
        if cfg.verbose {
            eprintln!("sweep: {msg}");
        }
    };

    log(&format!(
        "generating {} chaotic trajectories of {n_max} samples",
        cfg.seeds
    ));
    let trajs = seed_trajectories(params, cfg.seeds, n_max, cfg.dt, cfg.master_seed)?;
    log("running Benettin reference exponent");
    let lambda = lyapunov_benettin(params, cfg.benettin_t, 1.0, cfg.master_seed)?[0];
    let truth = truth_from_trajectories(&trajs, lambda);

    let mut contexts: Vec<KindContext> = Vec::new();
    for &kind in &cfg.kinds {
        match kind {
            MeasureKind::Orbit => {
                log("building orbit measures and correlation matrix");
                let measures = orbit_measures(lib, params)?;
                let exponents = lib.orbits.iter().map(|o| o.floquet_exponent).collect();
                contexts.push(KindContext::build(kind, measures, exponents, &kcfg));
            }
            MeasureKind::Snippet => {
                log("building snippet measures and correlation matrix");
                let snips = match &snippets {
                    Some(s) => s.clone(),
                    None => sample_snippets(
                        params,
                        lib.total_period(),
                        lib.len(),
                        cfg.master_seed,
                    )?,
                };
                let measures = snippet_measures(&snips);
                contexts.push(KindContext::build(kind, measures, Vec::new(), &kcfg));
            }
        }
    }

    let perms: Vec<Vec<usize>> = (1..=cfg.permutations)
        .map(|r| permutation(lib.len(), r, cfg.master_seed))
        .collect();

    let mut rows: Vec<ResultRow> = Vec::new();
    let mut skipped: Vec<SkippedCell> = Vec::new();
    for ctx in &contexts {
        for s in 1..=cfg.seeds {
            let path = out_dir
                .join("blocks")
                .join(format!("{}-s{s:03}.csv", ctx.kind.tag()));
            let block = load_or_compute_block(&path, || {
                log(&format!("block {} seed {s}", ctx.kind.tag()));
                compute_block(cfg, ctx, &trajs[(s - 1) as usize], s, &perms, &p_values, &truth)
            })?;
            rows.extend(block.0);
            skipped.extend(block.1);
        }
    }

    // POT: complete libraries only, r = 1, orbit kind, at N_max.
    if cfg.methods.contains(&Method::Pot) {
        if let Some(ctx) = contexts.iter().find(|c| c.kind == MeasureKind::Orbit) {
            let path = out_dir.join("blocks").join("pot-orbit.csv");
            let block = load_or_compute_block(&path, || {
                log("block pot");
                Ok(pot_block(lib, ctx, &p_values, n_max, &truth))
            })?;
            rows.extend(block.0);
            skipped.extend(block.1);
        }
    }

    rows.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    let summary = summarize(&rows);
    write_results_csv(&rows, &out_dir.join("results.csv"))?;
    write_summary_csv(&summary, &out_dir.join("summary.csv"))?;
    write_means_csv(&summary, &out_dir.join("summary_means.csv"))?;
    if !skipped.is_empty() {
        let mut text = String::new();
        for sk in &skipped {
            writeln!(text, "{}\t{}", sk.key, sk.reason).unwrap();
        }
        std::fs::write(out_dir.join("skipped.txt"), text)?;
    }
    log("done");
    Ok(SweepOutput {
        rows,
        summary,
        truth,
        skipped,
    })
}

type BlockRows = (Vec<ResultRow>, Vec<SkippedCell>);

fn load_or_compute_block(
    path: &Path,
    compute: impl FnOnce() -> Result<BlockRows>,
) -> Result<BlockRows> {
    if let Ok(text) = std::fs::read_to_string(path) {
        if text.lines().last().is_some_and(|l| l.starts_with("#done")) {
            let mut rows = Vec::new();
            let mut skipped = Vec::new();
            for (idx, line) in text.lines().enumerate() {
                if line.starts_with("#done") {
                    break;
                }
                if let Some(rest) = line.strip_prefix("#skip ") {
                    let (key, reason) = rest.split_once('|').unwrap_or((rest, ""));
                    skipped.push(SkippedCell {
                        key: key.to_string(),
                        reason: reason.to_string(),
                    });
                } else {
                    rows.push(parse_row(line, idx + 1)?);
                }
            }
            return Ok((rows, skipped));
        }
    }
    let (rows, skipped) = compute()?;
    let mut out = String::with_capacity(rows.len() * 96 + 64);
    for row in &rows {
        out.push_str(&row.csv_line());
        out.push('\n');
    }
    for sk in &skipped {
        writeln!(out, "#skip {}|{}", sk.key, sk.reason).unwrap();
    }
    writeln!(out, "#done rows={}", rows.len()).unwrap();
    std::fs::write(path, out)?;
    Ok((rows, skipped))
}

/// All non-POT cells for one (kind, seed) block.
fn compute_block(
    cfg: &ExperimentConfig,
    ctx: &KindContext,
    traj: &Trajectory,
    s: u32,
    perms: &[Vec<usize>],
    p_values: &[usize],
    truth: &TruthTable,
) -> Result<BlockRows> {
    let n_max = *cfg.n_values.last().unwrap();
    let kcfg = KernelConfig::new(cfg.theta)?;

    // b_q prefix sums snapshotted at each N.
    let needs_b = cfg
        .methods
        .iter()
        .any(|m| matches!(m, Method::Lsw | Method::Nnls | Method::Constrained));
    let b_table: Vec<Vec<f64>> = if needs_b {
        ctx.measures
            .par_iter()
            .map(|m| {
                let mut out = Vec::with_capacity(cfg.n_values.len());
                let mut acc = 0.0;
                let mut next = 0usize;
                for (i, x) in traj.states[..n_max].iter().enumerate() {
                    acc += kernel_observable(m, x, &kcfg);
                    while next < cfg.n_values.len() && cfg.n_values[next] == i + 1 {
                        out.push(acc / (i + 1) as f64);
                        next += 1;
                    }
                    if next == cfg.n_values.len() {
                        break;
                    }
                }
                out
            })
            .collect()
    } else {
        Vec::new()
    };

    // Voronoi counts per (r, P, N) from one distance table.
    let markov_counts: Vec<Vec<Vec<Vec<usize>>>> = if cfg.methods.contains(&Method::Markov) {
        let table = distance_table(&ctx.measures, &traj.states[..n_max]);
        perms
            .par_iter()
            .map(|perm| {
                p_values
                    .iter()
                    .map(|&p| {
                        let rows: Vec<&[f64]> =
                            perm[..p].iter().map(|&q| table[q].as_slice()).collect();
                        cfg.n_values
                            .iter()
                            .map(|&n| voronoi_counts(&rows, n))
                            .collect()
                    })
                    .collect()
            })
            .collect()
    } else {
        Vec::new()
    };

    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for (r_idx, perm) in perms.iter().enumerate() {
        let r = (r_idx + 1) as u32;
        for (p_idx, &p) in p_values.iter().enumerate() {
            let idx = &perm[..p];
            for (n_idx, &n) in cfg.n_values.iter().enumerate() {
                for &method in &cfg.methods {
                    if method == Method::Pot {
                        continue; // handled in its own block
                    }
                    let key = format!(
                        "{},{},{p},{r},{s},{n}",
                        method.tag(),
                        ctx.kind.tag()
                    );
                    let wv = match method {
                        Method::Uniform => uniform_weights(p),
                        Method::Markov => {
                            let counts = &markov_counts[r_idx][p_idx][n_idx];
                            Ok(WeightVector {
                                w: weights_from_counts(counts, n),
                                method: Method::Markov,
                                prov: Provenance {
                                    kind: ctx.kind,
                                    p,
                                    r,
                                    s,
                                    n,
                                    theta: 0.0,
                                    alpha: 0.0,
                                },
                                support: None,
                                converged: true,
                            })
                        }
                        _ => {
                            let sys = subsystem(ctx, &b_table, idx, n_idx, cfg, s);
                            match method {
                                Method::Lsw => solve_tikhonov(&sys, cfg.alpha),
                                Method::Nnls => solve_nnls_normalized(&sys),
                                Method::Constrained => {
                                    let w0 = uniform_weights(p)?.w;
                                    solve_constrained(&sys, &w0)
                                }
                                _ => unreachable!(),
                            }
                        }
                    };
                    match wv {
                        Ok(mut wv) => {
                            wv.prov.kind = ctx.kind;
                            wv.prov.r = r;
                            wv.prov.s = s;
                            wv.prov.n = n;
                            rows.extend(cell_rows(&wv, method, ctx, idx, p, r, s, n, truth));
                        }
                        Err(e) => skipped.push(SkippedCell {
                            key,
                            reason: e.to_string().replace('|', "/"),
                        }),
                    }
                }
            }
        }
    }
    Ok((rows, skipped))
}

fn subsystem(
    ctx: &KindContext,
    b_table: &[Vec<f64>],
    idx: &[usize],
    n_idx: usize,
    cfg: &ExperimentConfig,
    s: u32,
) -> CorrelationSystem {
    let p = idx.len();
    let mut a = nalgebra::DMatrix::zeros(p, p);
    let mut b = nalgebra::DVector::zeros(p);
    for (i, &qi) in idx.iter().enumerate() {
        b[i] = b_table[qi][n_idx];
        for (j, &qj) in idx.iter().enumerate() {
            a[(i, j)] = ctx.a_full[(qi, qj)];
        }
    }
    CorrelationSystem {
        a,
        b,
        theta: cfg.theta,
        n_samples: cfg.n_values[n_idx],
        seed: u64::from(s),
        measure_ids: idx.iter().map(|&q| ctx.measures[q].id.clone()).collect(),
    }
}

#[allow(clippy::too_many_arguments)]
fn cell_rows(
    wv: &WeightVector,
    method: Method,
    ctx: &KindContext,
    idx: &[usize],
    p: usize,
    r: u32,
    s: u32,
    n: usize,
    truth: &TruthTable,
) -> Vec<ResultRow> {
    let mut rows = Vec::with_capacity(11);
    for obs_idx in 0..10 {
        let e_hat: f64 = wv
            .w
            .iter()
            .zip(idx)
            .map(|(wi, &q)| wi * ctx.obs_table[q][obs_idx])
            .sum();
        let e_true = truth.mean[obs_idx];
        rows.push(ResultRow {
            method,
            kind: ctx.kind,
            p,
            r,
            s,
            n,
            observable: OBS_TAGS[obs_idx],
            e_true,
            e_hat,
            e_rel: relative_error(e_true, e_hat, truth.var[obs_idx]),
        });
    }
    if ctx.kind == MeasureKind::Orbit && !ctx.exponents.is_empty() {
        let e_hat: f64 = wv
            .w
            .iter()
            .zip(idx)
            .map(|(wi, &q)| wi * ctx.exponents[q])
            .sum();
        rows.push(ResultRow {
            method,
            kind: ctx.kind,
            p,
            r,
            s,
            n,
            observable: OBS_TAGS[10],
            e_true: truth.lambda,
            e_hat,
            // The Lyapunov row reports the absolute error.
            e_rel: (truth.lambda - e_hat).abs(),
        });
    }
    rows
}

/// POT cells: r = 1, complete-library P prefixes, evaluated once at N_max.
fn pot_block(
    lib: &OrbitLibrary,
    ctx: &KindContext,
    p_values: &[usize],
    n_max: usize,
    truth: &TruthTable,
) -> BlockRows {
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    let cycles_all = CycleData::from_library(lib);
    for &p in p_values {
        let key = format!("pot,orbit,{p},1,1,{n_max}");
        match lib.complete_prefix_length(p) {
            Some(l) => {
                let cycles = CycleData {
                    cycles: cycles_all.cycles[..p].to_vec(),
                };
                match pot_weights(&cycles, l) {
                    Ok(wv) => {
                        let idx: Vec<usize> = (0..p).collect();
                        rows.extend(cell_rows(
                            &wv,
                            Method::Pot,
                            ctx,
                            &idx,
                            p,
                            1,
                            1,
                            n_max,
                            truth,
                        ));
                    }
                    Err(e) => skipped.push(SkippedCell {
                        key,
                        reason: e.to_string().replace('|', "/"),
                    }),
                }
            }
            None => skipped.push(SkippedCell {
                key,
                reason: format!("P={p} is not a complete library size"),
            }),
        }
    }
    (rows, skipped)
}

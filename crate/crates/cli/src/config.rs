//! Flat key=value sweep configuration files. Every key mirrors a CLI flag;
//! flags override file entries.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use chaotic_averages::experiments::ExperimentConfig;
use chaotic_averages::measures::MeasureKind;
use chaotic_averages::weights::Method;

pub struct SweepFile {
    pub config: ExperimentConfig,
    pub library: Option<String>,
    pub snippets: Option<String>,
    pub out: Option<String>,
}

pub fn parse_sweep_file(path: &Path, paper_scale: bool) -> Result<SweepFile> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let mut kv: BTreeMap<String, String> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!("config line {}: expected key=value, got `{line}`", i + 1);
        };
        kv.insert(k.trim().to_string(), v.trim().to_string());
    }

    let base = if paper_scale {
        ExperimentConfig::paper_scale(0)
    } else {
        ExperimentConfig::desk(0)
    };
    let mut cfg = base;
    if let Some(v) = kv.get("seed") {
        cfg.master_seed = v.parse().context("seed")?;
    }
    if let Some(v) = kv.get("methods") {
        cfg.methods = v
            .split(',')
            .map(|t| Method::from_tag(t.trim()))
            .collect::<chaotic_averages::Result<_>>()?;
    }
    if let Some(v) = kv.get("kinds") {
        cfg.kinds = v
            .split(',')
            .map(|t| MeasureKind::from_tag(t.trim()))
            .collect::<chaotic_averages::Result<_>>()?;
    }
    if let Some(v) = kv.get("P") {
        cfg.p_values = parse_list(v).context("P")?;
    }
    if let Some(v) = kv.get("R") {
        cfg.permutations = v.parse().context("R")?;
    }
    if let Some(v) = kv.get("S") {
        cfg.seeds = v.parse().context("S")?;
    }
    if let Some(v) = kv.get("N") {
        cfg.n_values = parse_list(v).context("N")?;
    }
    if let Some(v) = kv.get("dt") {
        cfg.dt = v.parse().context("dt")?;
    }
    if let Some(v) = kv.get("theta") {
        cfg.theta = v.parse().context("theta")?;
    }
    if let Some(v) = kv.get("alpha") {
        cfg.alpha = v.parse().context("alpha")?;
    }
    if let Some(v) = kv.get("benettin") {
        cfg.benettin_t = v.parse().context("benettin")?;
    }

    let known = [
        "seed", "methods", "kinds", "P", "R", "S", "N", "dt", "theta", "alpha", "benettin",
        "library", "snippets", "out",
    ];
    for k in kv.keys() {
        if !known.contains(&k.as_str()) {
            bail!("unknown config key `{k}`");
        }
    }

    Ok(SweepFile {
        config: cfg,
        library: kv.get("library").cloned(),
        snippets: kv.get("snippets").cloned(),
        out: kv.get("out").cloned(),
    })
}

fn parse_list(v: &str) -> Result<Vec<usize>> {
    v.split(',')
        .map(|t| t.trim().parse::<usize>().map_err(Into::into))
        .collect()
}

/// `lo:hi:logN` or comma-separated explicit values.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    if let Some((lo, rest)) = spec.split_once(':') {
        let Some((hi, kind)) = rest.split_once(':') else {
            bail!("grid spec needs lo:hi:logN");
        };
        let lo: f64 = lo.parse().context("grid lo")?;
        let hi: f64 = hi.parse().context("grid hi")?;
        let Some(n) = kind.strip_prefix("log") else {
            bail!("only log-spaced grids are supported (lo:hi:logN)");
        };
        let n: usize = n.parse().context("grid count")?;
        return Ok(chaotic_averages::kernel::log_grid(lo, hi, n)?);
    }
    spec.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(Into::into))
        .collect()
}

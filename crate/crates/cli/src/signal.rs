//! Signal pair files: a header line `m n`, then `m + n` whitespace-separated
//! reals (`x` first). `#` starts a comment that runs to the end of the line.

use anyhow::{bail, Context};
use bilift::operator::SignalPair;

pub fn parse(text: &str) -> anyhow::Result<SignalPair> {
    let mut lines = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty());
    let header = lines.next().context("missing header line `m n`")?;
    let dims: Vec<&str> = header.split_whitespace().collect();
    if dims.len() != 2 {
        bail!("header must be `m n`, got `{header}`");
    }
    let m: usize = dims[0].parse().with_context(|| format!("bad m `{}`", dims[0]))?;
    let n: usize = dims[1].parse().with_context(|| format!("bad n `{}`", dims[1]))?;
    if m == 0 || n == 0 {
        bail!("m and n must be positive, got {m} {n}");
    }
    let values = lines
        .flat_map(str::split_whitespace)
        .map(|t| {
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .with_context(|| format!("bad value `{t}`"))
        })
        .collect::<anyhow::Result<Vec<f64>>>()?;
    if values.len() != m + n {
        bail!("expected {} values (m + n), found {}", m + n, values.len());
    }
    Ok(SignalPair::from_slices(&values[..m], &values[m..]))
}

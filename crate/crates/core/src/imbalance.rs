//! Long-tailed split construction and class re-weighted losses.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileKind {
    Balance,
    Exponential,
    Step,
}

impl fmt::Display for ProfileKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProfileKind::Balance => "balance",
            ProfileKind::Exponential => "exponential",
            ProfileKind::Step => "step",
        })
    }
}

/// Recipe for per-class sample counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LongTailProfile {
    pub kind: ProfileKind,
    /// Ratio of the rarest to the most frequent class. Ignored for `balance`.
    pub factor: f64,
    pub base_count: usize,
}

impl LongTailProfile {
    pub fn balance(base_count: usize) -> Self {
        LongTailProfile {
            kind: ProfileKind::Balance,
            factor: 1.0,
            base_count,
        }
    }

    pub fn exponential(factor: f64, base_count: usize) -> Self {
        LongTailProfile {
            kind: ProfileKind::Exponential,
            factor,
            base_count,
        }
    }

    pub fn step(factor: f64, base_count: usize) -> Self {
        LongTailProfile {
            kind: ProfileKind::Step,
            factor,
            base_count,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_count == 0 {
            return Err(Error::Config("profile base_count must be positive".into()));
        }
        if self.kind != ProfileKind::Balance && !(self.factor > 0.0 && self.factor <= 1.0) {
            return Err(Error::Range(format!(
                "imbalance factor {} must lie in (0, 1]",
                self.factor
            )));
        }
        Ok(())
    }

    /// Short label such as `exponential(0.01)` used for table columns.
    pub fn label(&self) -> String {
        match self.kind {
            ProfileKind::Balance => "balance".to_string(),
            k => format!("{k}({})", self.factor),
        }
    }
}

impl fmt::Display for LongTailProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "kind={} factor={} base_count={}",
            self.kind, self.factor, self.base_count
        )
    }
}

/// Per-class sample counts, at least one per class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassHistogram {
    counts: Vec<usize>,
}

impl ClassHistogram {
    pub fn new(counts: Vec<usize>) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::Config("class histogram needs at least one class".into()));
        }
        if let Some(j) = counts.iter().position(|&n| n == 0) {
            return Err(Error::Range(format!("class {j} has zero examples")));
        }
        Ok(ClassHistogram { counts })
    }

    /// Histogram of a dataset's labels.
    pub fn of(dataset: &LabeledDataset) -> Result<Self> {
        ClassHistogram::new(dataset.class_counts())
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Whether counts are non-increasing in class index.
    pub fn is_sorted_descending(&self) -> bool {
        self.counts.windows(2).all(|w| w[0] >= w[1])
    }
}

/// Per-class counts for a long-tail profile over `num_classes` classes.
///
/// Counts are floored and clamped to at least one. The step profile keeps
/// the first `ceil(C / 2)` classes at `base_count`.
pub fn longtail_counts(profile: &LongTailProfile, num_classes: usize) -> Result<ClassHistogram> {
    profile.validate()?;
    if num_classes == 0 {
        return Err(Error::Config("num_classes must be positive".into()));
    }
    let n_max = profile.base_count;
    let scaled = |x: f64| ((n_max as f64 * x).floor() as usize).max(1);
    let counts = match profile.kind {
        _ if num_classes == 1 => vec![n_max],
        ProfileKind::Balance => vec![n_max; num_classes],
        ProfileKind::Exponential => (0..num_classes)
            .map(|i| scaled(profile.factor.powf(i as f64 / (num_classes - 1) as f64)))
            .collect(),
        ProfileKind::Step => {
            let head = num_classes.div_ceil(2);
            (0..num_classes)
                .map(|i| if i < head { n_max } else { scaled(profile.factor) })
                .collect()
        }
    };
    ClassHistogram::new(counts)
}

/// Row indices (sorted ascending) drawing `hist.counts()[j]` examples of each
/// class `j` uniformly without replacement.
pub fn subsample_indices<R: Rng + ?Sized>(
    dataset: &LabeledDataset,
    hist: &ClassHistogram,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if hist.num_classes() != dataset.num_classes() {
        return Err(Error::Shape(format!(
            "histogram has {} classes, dataset has {}",
            hist.num_classes(),
            dataset.num_classes()
        )));
    }
    let by_class = dataset.class_indices();
    for (class, (pool, &needed)) in by_class.iter().zip(hist.counts()).enumerate() {
        if pool.len() < needed {
            return Err(Error::Insufficient {
                class,
                needed,
                available: pool.len(),
            });
        }
    }
    let mut chosen = Vec::with_capacity(hist.total());
    for (pool, &needed) in by_class.iter().zip(hist.counts()) {
        let mut picks: Vec<usize> = rand::seq::index::sample(rng, pool.len(), needed)
            .into_iter()
            .map(|k| pool[k])
            .collect();
        picks.sort_unstable();
        chosen.extend(picks);
    }
    chosen.sort_unstable();
    Ok(chosen)
}

/// Class-wise subsample of `dataset`; original order is preserved.
pub fn subsample<R: Rng + ?Sized>(
    dataset: &LabeledDataset,
    hist: &ClassHistogram,
    rng: &mut R,
) -> Result<LabeledDataset> {
    let idx = subsample_indices(dataset, hist, rng)?;
    Ok(dataset.select(&idx))
}

/// Loss re-weighting settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReweightPolicy {
    pub gamma: f64,
    #[serde(default)]
    pub lambda: f64,
    pub drw_epoch: usize,
    #[serde(default = "default_true")]
    pub normalize: bool,
}

fn default_true() -> bool {
    true
}

impl ReweightPolicy {
    pub fn new(gamma: f64, drw_epoch: usize) -> Self {
        ReweightPolicy {
            gamma,
            lambda: 0.0,
            drw_epoch,
            normalize: true,
        }
    }

    /// Plain cross-entropy throughout.
    pub fn unweighted() -> Self {
        ReweightPolicy::new(0.0, usize::MAX)
    }

    pub fn with_drw_epoch(self, drw_epoch: usize) -> Self {
        ReweightPolicy { drw_epoch, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        check_gamma(self.gamma)?;
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Range(format!("lambda {} must be non-negative", self.lambda)));
        }
        Ok(())
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::Range(format!("gamma {gamma} must lie in [0, 1)")));
    }
    Ok(())
}

/// Effective-number class weights `(1 - γ) / (1 - γ^n_j)`, optionally rescaled
/// to sum to the number of classes.
pub fn effective_weights(hist: &ClassHistogram, gamma: f64, normalize: bool) -> Result<Vec<f64>> {
    check_gamma(gamma)?;
    let one_minus = 1.0 - gamma;
    let log_gamma = (-one_minus).ln_1p();
    let raw: Vec<f64> = hist
        .counts()
        .iter()
        .map(|&n| {
            if gamma == 0.0 || n == 1 {
                1.0
            } else {
                // 1 - γ^n without cancellation near γ = 1
                one_minus / -(n as f64 * log_gamma).exp_m1()
            }
        })
        .collect();
    if !normalize {
        return Ok(raw);
    }
    let total: f64 = raw.iter().sum();
    let c = raw.len() as f64;
    Ok(raw.into_iter().map(|w| w * c / total).collect())
}

/// Class weights in effect at `epoch`: all ones before `drw_epoch`, effective
/// weights from it onward.
pub fn drw_weights(epoch: usize, policy: &ReweightPolicy, hist: &ClassHistogram) -> Result<Vec<f64>> {
    if epoch < policy.drw_epoch {
        Ok(vec![1.0; hist.num_classes()])
    } else {
        effective_weights(hist, policy.gamma, policy.normalize)
    }
}

fn check_batch(logits: &[f64], labels: &[usize], num_classes: usize) -> Result<()> {
    if num_classes == 0 || logits.len() != labels.len() * num_classes {
        return Err(Error::Shape(format!(
            "{} logits for {} labels and {num_classes} classes",
            logits.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Shape("empty batch".into()));
    }
    if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= num_classes) {
        return Err(Error::Index(format!(
            "label {y} at batch row {i} is not below {num_classes} classes"
        )));
    }
    Ok(())
}

#[inline]
fn nll_row(row: &[f64], y: usize) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln() - row[y]
}

/// Unweighted mean cross-entropy.
pub fn cross_entropy(logits: &[f64], labels: &[usize], num_classes: usize) -> Result<f64> {
    check_batch(logits, labels, num_classes)?;
    let mut total = 0.0;
    for (row, &y) in logits.chunks_exact(num_classes).zip(labels) {
        total += nll_row(row, y);
    }
    Ok(total / labels.len() as f64)
}

/// Batch mean of `w[y_i] * -log softmax(logits_i)[y_i]`.
pub fn weighted_cross_entropy(logits: &[f64], labels: &[usize], class_weights: &[f64]) -> Result<f64> {
    let c = class_weights.len();
    check_batch(logits, labels, c)?;
    let mut total = 0.0;
    for (row, &y) in logits.chunks_exact(c).zip(labels) {
        total += class_weights[y] * nll_row(row, y);
    }
    Ok(total / labels.len() as f64)
}

/// Weighted cross-entropy and its gradient with respect to the logits.
pub fn weighted_cross_entropy_grad(
    logits: &[f64],
    labels: &[usize],
    class_weights: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let c = class_weights.len();
    let loss = weighted_cross_entropy(logits, labels, class_weights)?;
    let scale = 1.0 / labels.len() as f64;
    let mut grad = vec![0.0; logits.len()];
    for ((row, g), &y) in logits.chunks_exact(c).zip(grad.chunks_exact_mut(c)).zip(labels) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let w = class_weights[y] * scale;
        for (k, (gk, v)) in g.iter_mut().zip(row).enumerate() {
            let p = (v - max).exp() / sum;
            *gk = w * (p - if k == y { 1.0 } else { 0.0 });
        }
    }
    Ok((loss, grad))
}

/// `ce + λ · rw`
pub fn total_loss(ce: f64, rw: f64, lambda: f64) -> f64 {
    ce + lambda * rw
}

/// Header of a split index file.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitHeader {
    pub source: String,
    pub profile: LongTailProfile,
    pub seed: u64,
}

/// Writes one original-row index per line after a `#` header.
pub fn write_split_index(path: &Path, header: &SplitHeader, indices: &[usize]) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!("# source: {}\n", header.source));
    out.push_str(&format!("# profile: {}\n", header.profile));
    out.push_str(&format!("# seed: {}\n", header.seed));
    out.push_str(&format!("# count: {}\n", indices.len()));
    for i in indices {
        out.push_str(&i.to_string());
        out.push('\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_split_index(path: &Path) -> Result<(SplitHeader, Vec<usize>)> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut source = None;
    let mut profile = None;
    let mut seed = None;
    let mut indices = Vec::new();
    for (lineno, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let bad = |msg: String| Error::Parse {
            position: lineno + 1,
            message: msg,
        };
        if let Some(rest) = line.strip_prefix("# ") {
            let (key, value) = rest
                .split_once(": ")
                .ok_or_else(|| bad(format!("malformed header line `{line}`")))?;
            match key {
                "source" => source = Some(value.to_string()),
                "profile" => profile = Some(parse_profile_line(value).map_err(bad)?),
                "seed" => seed = Some(value.parse().map_err(|_| bad(format!("bad seed `{value}`")))?),
                "count" => {}
                other => return Err(bad(format!("unknown header key `{other}`"))),
            }
        } else if !line.is_empty() {
            indices.push(line.parse().map_err(|_| bad(format!("bad index `{line}`")))?);
        }
    }
    let missing = |k: &str| Error::Parse {
        position: 0,
        message: format!("split header lacks `{k}`"),
    };
    Ok((
        SplitHeader {
            source: source.ok_or_else(|| missing("source"))?,
            profile: profile.ok_or_else(|| missing("profile"))?,
            seed: seed.ok_or_else(|| missing("seed"))?,
        },
        indices,
    ))
}

fn parse_profile_line(s: &str) -> std::result::Result<LongTailProfile, String> {
    let mut kind = None;
    let mut factor = None;
    let mut base = None;
    for part in s.split_whitespace() {
        let (k, v) = part.split_once('=').ok_or(format!("bad profile field `{part}`"))?;
        match k {
            "kind" => {
                kind = Some(match v {
                    "balance" => ProfileKind::Balance,
                    "exponential" => ProfileKind::Exponential,
                    "step" => ProfileKind::Step,
                    _ => return Err(format!("unknown profile kind `{v}`")),
                })
            }
            "factor" => factor = Some(v.parse().map_err(|_| format!("bad factor `{v}`"))?),
            "base_count" => base = Some(v.parse().map_err(|_| format!("bad base_count `{v}`"))?),
            _ => return Err(format!("unknown profile field `{k}`")),
        }
    }
    Ok(LongTailProfile {
        kind: kind.ok_or("profile lacks kind")?,
        factor: factor.ok_or("profile lacks factor")?,
        base_count: base.ok_or("profile lacks base_count")?,
    })
}

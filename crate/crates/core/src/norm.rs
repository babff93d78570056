//! Quantile and min-max normalizers fitted on a KPM corpus, and the
//! normalized state vector built from them.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::kpm::{feature, state_len, KpmReport, StateVector, FEATURES_PER_CELL};

pub const N_QUANTILES: usize = 1000;
pub const NORMALIZER_FORMAT: &str = "cellsleep-normalizers";
pub const NORMALIZER_VERSION: u32 = 1;

/// Probability clip before the inverse normal CDF.
const BOUNDS_THRESHOLD: f64 = 1e-7;
/// Normal outputs are clipped to ±Z_CLIP and mapped affinely onto [0, 1].
pub const Z_CLIP: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum QuantileKind {
    Uniform,
    Normal,
}

impl fmt::Display for QuantileKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QuantileKind::Uniform => "uniform",
            QuantileKind::Normal => "normal",
        })
    }
}

impl FromStr for QuantileKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" => Ok(QuantileKind::Uniform),
            "normal" => Ok(QuantileKind::Normal),
            _ => Err(Error::UnknownName(s.to_string())),
        }
    }
}

/// Linear-interpolated percentile of sorted data, `p` in `[0, 1]`.
fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Empirical-CDF transformer over one scalar feature.
///
/// Ties in the reference quantiles map to the midpoint of their reference
/// range, by averaging a forward and a backward interpolation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QuantileTransformer {
    pub quantiles: Vec<f64>,
    pub references: Vec<f64>,
}

impl QuantileTransformer {
    pub fn fit(samples: &[f64], n_quantiles: usize) -> Result<Self> {
        let mut sorted: Vec<f64> = samples.iter().copied().filter(|x| x.is_finite()).collect();
        if sorted.is_empty() || n_quantiles < 2 {
            return Err(Error::EmptyDataset("no finite samples to fit a quantile transformer".into()));
        }
        sorted.sort_by(f64::total_cmp);
        let n = n_quantiles.min(sorted.len()).max(2);
        let references: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let mut quantiles: Vec<f64> = references.iter().map(|&p| percentile_sorted(&sorted, p)).collect();
        // interpolation round-off must not break monotonicity
        for i in 1..n {
            if quantiles[i] < quantiles[i - 1] {
                quantiles[i] = quantiles[i - 1];
            }
        }
        Ok(QuantileTransformer { quantiles, references })
    }

    pub fn is_fitted(&self) -> bool {
        self.quantiles.len() >= 2 && self.quantiles.len() == self.references.len()
    }

    /// Uniform output in `[0, 1]`.
    pub fn uniform(&self, x: f64) -> Result<f64> {
        if !self.is_fitted() {
            return Err(Error::Unfitted);
        }
        let q = &self.quantiles;
        let r = &self.references;
        let last = q.len() - 1;
        if x.is_nan() {
            return Err(Error::Contract("NaN passed to quantile transform".into()));
        }
        if x <= q[0] {
            return Ok(0.0);
        }
        if x >= q[last] {
            return Ok(1.0);
        }
        // forward: largest j with q[j] <= x
        let j = q.partition_point(|&v| v <= x) - 1;
        let fwd = r[j] + (x - q[j]) * (r[j + 1] - r[j]) / (q[j + 1] - q[j]);
        // backward: smallest k with q[k] >= x
        let k = q.partition_point(|&v| v < x);
        let bwd = if q[k] == x {
            r[k]
        } else {
            r[k - 1] + (x - q[k - 1]) * (r[k] - r[k - 1]) / (q[k] - q[k - 1])
        };
        Ok((0.5 * (fwd + bwd)).clamp(0.0, 1.0))
    }

    pub fn transform(&self, x: f64, kind: QuantileKind) -> Result<f64> {
        let u = self.uniform(x)?;
        Ok(match kind {
            QuantileKind::Uniform => u,
            QuantileKind::Normal => normal_to_unit(u),
        })
    }
}

/// Inverse normal CDF of `u`, clipped to ±3 and rescaled onto `[0, 1]`.
pub fn normal_to_unit(u: f64) -> f64 {
    let std = Normal::standard();
    let p = u.clamp(BOUNDS_THRESHOLD, 1.0 - BOUNDS_THRESHOLD);
    let z = std.inverse_cdf(p).clamp(-Z_CLIP, Z_CLIP);
    (z + Z_CLIP) / (2.0 * Z_CLIP)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub min: f64,
    pub max: f64,
}

impl MinMax {
    pub fn fit(values: impl IntoIterator<Item = f64>) -> Option<Self> {
        values.into_iter().filter(|v| v.is_finite()).fold(None, |acc, v| match acc {
            None => Some(MinMax { min: v, max: v }),
            Some(m) => Some(MinMax {
                min: m.min.min(v),
                max: m.max.max(v),
            }),
        })
    }

    /// Clamped to `[0, 1]`; a constant feature maps to 0.
    pub fn apply(&self, x: f64) -> f64 {
        let span = self.max - self.min;
        if span <= 0.0 || !x.is_finite() {
            return 0.0;
        }
        ((x - self.min) / span).clamp(0.0, 1.0)
    }
}

/// The four reward components that get quantile transformers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardComponent {
    Throughput,
    Energy,
    Rlf,
    Cost,
}

impl RewardComponent {
    pub const ALL: [RewardComponent; 4] = [
        RewardComponent::Throughput,
        RewardComponent::Energy,
        RewardComponent::Rlf,
        RewardComponent::Cost,
    ];

    pub fn feature(self) -> usize {
        match self {
            RewardComponent::Throughput => feature::RHO,
            RewardComponent::Energy => feature::GAMMA,
            RewardComponent::Rlf => feature::RLF_COUNT,
            RewardComponent::Cost => feature::DELTA_COST,
        }
    }

    /// Inactive cells neither transmit nor pay activation cost, so these
    /// components are fitted on active cells and read as 0 when off.
    pub fn masked_when_inactive(self) -> bool {
        !matches!(self, RewardComponent::Rlf)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct NormalizerBody {
    n_cells: usize,
    rho: QuantileTransformer,
    gamma: QuantileTransformer,
    rlf: QuantileTransformer,
    delta: QuantileTransformer,
    minmax: Vec<MinMax>,
}

#[derive(Serialize, Deserialize)]
struct NormalizerFile {
    format: String,
    version: u32,
    sha256: String,
    body: NormalizerBody,
}

/// Fitted normalizers; immutable once built and shareable across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizerSet {
    body: NormalizerBody,
    hash: String,
}

fn body_hash(body: &NormalizerBody) -> String {
    let bytes = serde_json::to_vec(body).expect("normalizer serializes");
    hex::encode(Sha256::digest(&bytes))
}

impl NormalizerSet {
    /// Fits on a corpus of reports. Quantile transformers are pooled over
    /// cells; min-max bounds are per flat feature index.
    pub fn fit<'a>(reports: impl IntoIterator<Item = &'a KpmReport>) -> Result<Self> {
        let mut n_cells = None;
        let mut comp: [Vec<f64>; 4] = Default::default();
        let mut bounds: Vec<Option<MinMax>> = Vec::new();
        for r in reports {
            let n = *n_cells.get_or_insert(r.n_cells());
            if r.n_cells() != n {
                return Err(Error::Contract(format!(
                    "mixed cell counts in corpus: {} and {n}",
                    r.n_cells()
                )));
            }
            for c in &r.cells {
                let f = c.to_features();
                for (i, rc) in RewardComponent::ALL.iter().enumerate() {
                    if c.active || !rc.masked_when_inactive() {
                        comp[i].push(f[rc.feature()]);
                    }
                }
            }
            let flat = r.flatten();
            if bounds.is_empty() {
                bounds = vec![None; flat.len()];
            }
            for (b, &v) in bounds.iter_mut().zip(&flat) {
                *b = MinMax::fit(b.iter().flat_map(|m| [m.min, m.max]).chain([v]));
            }
        }
        let n_cells = n_cells.ok_or_else(|| Error::EmptyDataset("no reports to fit normalizers".into()))?;
        let [rho, gamma, rlf, delta] = comp;
        let body = NormalizerBody {
            n_cells,
            rho: QuantileTransformer::fit(&rho, N_QUANTILES)?,
            gamma: QuantileTransformer::fit(&gamma, N_QUANTILES)?,
            rlf: QuantileTransformer::fit(&rlf, N_QUANTILES)?,
            delta: QuantileTransformer::fit(&delta, N_QUANTILES)?,
            minmax: bounds
                .into_iter()
                .map(|b| b.unwrap_or(MinMax { min: 0.0, max: 0.0 }))
                .collect(),
        };
        let hash = body_hash(&body);
        Ok(NormalizerSet { body, hash })
    }

    pub fn n_cells(&self) -> usize {
        self.body.n_cells
    }

    /// sha256 of the fitted content.
    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn transformer(&self, c: RewardComponent) -> &QuantileTransformer {
        match c {
            RewardComponent::Throughput => &self.body.rho,
            RewardComponent::Energy => &self.body.gamma,
            RewardComponent::Rlf => &self.body.rlf,
            RewardComponent::Cost => &self.body.delta,
        }
    }

    pub fn minmax(&self, flat_index: usize) -> MinMax {
        self.body.minmax[flat_index]
    }

    /// Normalized value of one reward component for one cell.
    pub fn component(&self, report: &KpmReport, cell: usize, c: RewardComponent, kind: QuantileKind) -> Result<f64> {
        let k = &report.cells[cell];
        if !k.active && c.masked_when_inactive() {
            return Ok(0.0);
        }
        self.transformer(c).transform(k.to_features()[c.feature()], kind)
    }

    fn check(&self, report: &KpmReport) -> Result<()> {
        if report.n_cells() != self.body.n_cells {
            return Err(Error::Contract(format!(
                "report has {} cells, normalizers were fitted on {}",
                report.n_cells(),
                self.body.n_cells
            )));
        }
        Ok(())
    }

    /// Normalized DRL observation: quantile transforms for the reward
    /// components, min-max for everything else.
    pub fn assemble_state(&self, report: &KpmReport, kind: QuantileKind) -> Result<StateVector> {
        self.check(report)?;
        let flat = report.flatten();
        let mut out = Vec::with_capacity(state_len(report.n_cells()));
        for (i, &v) in flat.iter().enumerate() {
            let cell = i / FEATURES_PER_CELL;
            let f = i % FEATURES_PER_CELL;
            let comp = if cell < report.n_cells() {
                RewardComponent::ALL.iter().copied().find(|rc| rc.feature() == f)
            } else {
                None
            };
            out.push(match comp {
                Some(rc) => self.component(report, cell, rc, kind)?,
                None => self.body.minmax[i].apply(v),
            });
        }
        Ok(StateVector(out))
    }

    pub fn to_json(&self) -> String {
        let file = NormalizerFile {
            format: NORMALIZER_FORMAT.into(),
            version: NORMALIZER_VERSION,
            sha256: self.hash.clone(),
            body: self.body.clone(),
        };
        serde_json::to_string(&file).expect("normalizer serializes")
    }

    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        let file: NormalizerFile = serde_json::from_str(text)?;
        let corrupt = |reason: String| Error::Corruption {
            path: origin.into(),
            reason,
        };
        if file.format != NORMALIZER_FORMAT {
            return Err(corrupt(format!("unexpected format `{}`", file.format)));
        }
        if file.version != NORMALIZER_VERSION {
            return Err(corrupt(format!("unsupported version {}", file.version)));
        }
        let hash = body_hash(&file.body);
        if hash != file.sha256 {
            return Err(corrupt(format!("content hash {hash} does not match header {}", file.sha256)));
        }
        Ok(NormalizerSet { body: file.body, hash })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_json().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, &path.display().to_string())
    }
}

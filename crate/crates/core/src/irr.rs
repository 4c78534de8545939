//! Inter-rater reliability over ordinal grades.
//!
//! Scores form an items × raters matrix, where an item is one competency of
//! one scenario run. Missing scores are handled pairwise for Spearman
//! correlations and by listwise deletion for Kendall's W and the ICCs.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::assessment::GradeLevel;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Item {
    pub scenario_id: String,
    pub competency: String,
    /// Candidate class, such as "human" or "agent".
    pub class: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RaterScoreMatrix {
    pub items: Vec<Item>,
    pub raters: Vec<String>,
    /// `scores[item][rater]`, grades 1..=4.
    pub scores: Vec<Vec<Option<u8>>>,
}

impl RaterScoreMatrix {
    pub fn new(
        items: Vec<Item>,
        raters: Vec<String>,
        scores: Vec<Vec<Option<u8>>>,
    ) -> Result<Self> {
        let m = Self {
            items,
            raters,
            scores,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.raters.len() < 2 {
            return Err(Error::InvalidValue(format!(
                "need at least 2 raters, got {}",
                self.raters.len()
            )));
        }
        if self.items.len() < 2 {
            return Err(Error::InvalidValue(format!(
                "need at least 2 items, got {}",
                self.items.len()
            )));
        }
        if self.scores.len() != self.items.len()
            || self.scores.iter().any(|r| r.len() != self.raters.len())
        {
            return Err(Error::InvalidValue(
                "score matrix shape does not match items × raters".into(),
            ));
        }
        if let Some(g) = self
            .scores
            .iter()
            .flatten()
            .flatten()
            .find(|g| !(1..=4).contains(*g))
        {
            return Err(Error::InvalidValue(format!("grade {g} outside 1..=4")));
        }
        Ok(())
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn n_raters(&self) -> usize {
        self.raters.len()
    }

    fn column(&self, rater: usize) -> Vec<Option<u8>> {
        self.scores.iter().map(|row| row[rater]).collect()
    }

    /// Items scored by every rater, as f64 rows.
    fn complete_rows(&self) -> Vec<Vec<f64>> {
        self.scores
            .iter()
            .filter(|row| row.iter().all(Option::is_some))
            .map(|row| {
                row.iter()
                    .map(|g| f64::from(g.expect("complete row")))
                    .collect()
            })
            .collect()
    }

    /// Rows restricted to one scenario.
    pub fn scenario(&self, scenario_id: &str) -> Option<RaterScoreMatrix> {
        let idx: Vec<usize> = (0..self.items.len())
            .filter(|&i| self.items[i].scenario_id == scenario_id)
            .collect();
        if idx.is_empty() {
            return None;
        }
        Some(RaterScoreMatrix {
            items: idx.iter().map(|&i| self.items[i].clone()).collect(),
            raters: self.raters.clone(),
            scores: idx.iter().map(|&i| self.scores[i].clone()).collect(),
        })
    }

    pub fn scenario_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = Vec::new();
        for it in &self.items {
            if !ids.contains(&it.scenario_id) {
                ids.push(it.scenario_id.clone());
            }
        }
        ids
    }
}

#[derive(Debug, Deserialize)]
struct ScoreRow {
    scenario_id: String,
    rater_id: String,
    competency: String,
    grade: String,
    #[serde(default)]
    candidate_class: Option<String>,
}

/// Parse `scenario_id,rater_id,competency,grade,candidate_class` rows.
/// Grades may be ordinals or labels such as "Mostly Achieved".
pub fn parse_scores(text: &str) -> Result<RaterScoreMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| Error::parse(1, e.to_string()))?
        .clone();
    for required in ["scenario_id", "rater_id", "competency", "grade"] {
        if !headers.iter().any(|h| h == required) {
            return Err(Error::parse(1, format!("missing column {required}")));
        }
    }
    let mut items: Vec<Item> = Vec::new();
    let mut raters: Vec<String> = Vec::new();
    let mut cells: BTreeMap<(usize, usize), (u8, usize)> = BTreeMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            Error::parse(e.position().map_or(0, |p| p.line() as usize), e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let row: ScoreRow = record
            .deserialize(Some(&headers))
            .map_err(|e| Error::parse(line, e.to_string()))?;
        let grade = row
            .grade
            .parse::<GradeLevel>()
            .map_err(|e| Error::parse(line, e.to_string()))?
            .ordinal();
        let class = row.candidate_class.filter(|c| !c.is_empty());
        let i = match items
            .iter()
            .position(|it| it.scenario_id == row.scenario_id && it.competency == row.competency)
        {
            Some(i) => {
                if class.is_some() && items[i].class.is_some() && items[i].class != class {
                    return Err(Error::parse(
                        line,
                        format!("conflicting candidate class for {}", row.scenario_id),
                    ));
                }
                if items[i].class.is_none() {
                    items[i].class = class;
                }
                i
            }
            None => {
                items.push(Item {
                    scenario_id: row.scenario_id,
                    competency: row.competency,
                    class,
                });
                items.len() - 1
            }
        };
        let r = match raters.iter().position(|x| *x == row.rater_id) {
            Some(r) => r,
            None => {
                raters.push(row.rater_id);
                raters.len() - 1
            }
        };
        if let Some((_, first)) = cells.insert((i, r), (grade, line)) {
            return Err(Error::parse(
                line,
                format!("duplicate score, first given on line {first}"),
            ));
        }
    }
    let mut scores = vec![vec![None; raters.len()]; items.len()];
    for ((i, r), (g, _)) in cells {
        scores[i][r] = Some(g);
    }
    RaterScoreMatrix::new(items, raters, scores)
}

pub fn load_scores(path: &Path) -> Result<RaterScoreMatrix> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scores(&text)
}

pub fn scores_to_csv(m: &RaterScoreMatrix) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "scenario_id",
        "rater_id",
        "competency",
        "grade",
        "candidate_class",
    ])
    .expect("in-memory write");
    for (i, item) in m.items.iter().enumerate() {
        for (r, rater) in m.raters.iter().enumerate() {
            if let Some(g) = m.scores[i][r] {
                w.write_record([
                    item.scenario_id.as_str(),
                    rater.as_str(),
                    item.competency.as_str(),
                    &g.to_string(),
                    item.class.as_deref().unwrap_or(""),
                ])
                .expect("in-memory write");
            }
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv is utf-8")
}

/// 1-based ranks with ties given their average rank.
pub fn midranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        None
    } else {
        Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
    }
}

/// Spearman's rho: Pearson correlation of mid-ranks.
pub fn spearman_pair(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::InvalidValue(format!(
            "lengths differ: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::Undefined(
            "correlation needs at least 2 paired values".into(),
        ));
    }
    pearson(&midranks(x), &midranks(y))
        .ok_or_else(|| Error::Undefined("constant rating vector".into()))
}

/// How items are pooled for the correlation statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// One correlation over all items.
    #[default]
    Items,
    /// Correlations within each scenario, then averaged.
    PerScenario,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeanSpearman {
    pub rho: f64,
    pub pairs_used: usize,
    /// Rater pairs whose correlation was undefined.
    pub skipped: Vec<(String, String)>,
}

/// Mean Spearman rho over all rater pairs, each pair over the items both
/// scored.
pub fn mean_spearman_detail(m: &RaterScoreMatrix) -> Result<MeanSpearman> {
    m.validate()?;
    let k = m.n_raters();
    let mut sum = 0.0;
    let mut used = 0;
    let mut skipped = Vec::new();
    for a in 0..k {
        for b in (a + 1)..k {
            let (ca, cb) = (m.column(a), m.column(b));
            let (x, y): (Vec<f64>, Vec<f64>) = ca
                .iter()
                .zip(&cb)
                .filter_map(|(p, q)| Some((f64::from((*p)?), f64::from((*q)?))))
                .unzip();
            match spearman_pair(&x, &y) {
                Ok(r) => {
                    sum += r;
                    used += 1;
                }
                Err(e) => {
                    log::warn!("skipping raters {} and {}: {e}", m.raters[a], m.raters[b]);
                    skipped.push((m.raters[a].clone(), m.raters[b].clone()));
                }
            }
        }
    }
    if used == 0 {
        return Err(Error::Undefined(
            "no rater pair has a defined correlation".into(),
        ));
    }
    Ok(MeanSpearman {
        rho: sum / used as f64,
        pairs_used: used,
        skipped,
    })
}

pub fn mean_spearman(m: &RaterScoreMatrix) -> Result<f64> {
    mean_spearman_detail(m).map(|d| d.rho)
}

/// Kendall's coefficient of concordance with tie correction, after
/// listwise deletion of incomplete items.
pub fn kendall_w(m: &RaterScoreMatrix) -> Result<f64> {
    m.validate()?;
    let rows = m.complete_rows();
    let n = rows.len();
    let k = m.n_raters();
    if n < 2 {
        return Err(Error::Undefined(format!(
            "{n} complete items after listwise deletion"
        )));
    }
    let mut rank_sums = vec![0.0; n];
    let mut ties = 0.0;
    for r in 0..k {
        let col: Vec<f64> = rows.iter().map(|row| row[r]).collect();
        for (i, rank) in midranks(&col).into_iter().enumerate() {
            rank_sums[i] += rank;
        }
        let mut sorted = col.clone();
        sorted.sort_by(f64::total_cmp);
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j + 1 < n && sorted[j + 1] == sorted[i] {
                j += 1;
            }
            let t = (j - i + 1) as f64;
            ties += t * t * t - t;
            i = j + 1;
        }
    }
    let (nf, kf) = (n as f64, k as f64);
    let mean = rank_sums.iter().sum::<f64>() / nf;
    let s: f64 = rank_sums.iter().map(|r| (r - mean).powi(2)).sum();
    let denom = kf * kf * (nf * nf * nf - nf) - kf * ties;
    if denom <= 0.0 {
        return Err(Error::Undefined(
            "every rater gave a single grade to all items".into(),
        ));
    }
    Ok((12.0 * s / denom).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IccVariant {
    /// Two-way, single score, consistency: ICC(C,1).
    Consistency,
    /// Two-way, single score, absolute agreement: ICC(A,1).
    Agreement,
}

/// Mean squares of the two-way ANOVA without replication.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnovaTable {
    pub items: usize,
    pub raters: usize,
    pub ms_items: f64,
    pub ms_raters: f64,
    pub ms_error: f64,
}

pub fn anova(m: &RaterScoreMatrix) -> Result<AnovaTable> {
    m.validate()?;
    anova_rows(&m.complete_rows())
}

/// Two-way ANOVA over complete rows of any numeric scale.
pub fn anova_rows(rows: &[Vec<f64>]) -> Result<AnovaTable> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::Undefined(format!(
            "{n} complete items after listwise deletion"
        )));
    }
    let k = rows[0].len();
    if k < 2 || rows.iter().any(|r| r.len() != k) {
        return Err(Error::InvalidValue(
            "rows need the same number (at least 2) of raters".into(),
        ));
    }
    let (nf, kf) = (n as f64, k as f64);
    let grand = rows.iter().flatten().sum::<f64>() / (nf * kf);
    let row_means: Vec<f64> = rows.iter().map(|r| r.iter().sum::<f64>() / kf).collect();
    let col_means: Vec<f64> = (0..k)
        .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / nf)
        .collect();
    let ss_total: f64 = rows.iter().flatten().map(|x| (x - grand).powi(2)).sum();
    let ss_items = kf * row_means.iter().map(|r| (r - grand).powi(2)).sum::<f64>();
    let ss_raters = nf * col_means.iter().map(|c| (c - grand).powi(2)).sum::<f64>();
    let ss_error = (ss_total - ss_items - ss_raters).max(0.0);
    Ok(AnovaTable {
        items: n,
        raters: k,
        ms_items: ss_items / (nf - 1.0),
        ms_raters: ss_raters / (kf - 1.0),
        ms_error: ss_error / ((nf - 1.0) * (kf - 1.0)),
    })
}

pub fn icc(m: &RaterScoreMatrix, variant: IccVariant) -> Result<f64> {
    icc_from_anova(&anova(m)?, variant)
}

pub fn icc_from_anova(a: &AnovaTable, variant: IccVariant) -> Result<f64> {
    if a.ms_items <= 0.0 {
        return Err(Error::Undefined("no between-item variance".into()));
    }
    let (n, k) = (a.items as f64, a.raters as f64);
    let num = a.ms_items - a.ms_error;
    let denom = match variant {
        IccVariant::Consistency => a.ms_items + (k - 1.0) * a.ms_error,
        IccVariant::Agreement => {
            a.ms_items + (k - 1.0) * a.ms_error + k * (a.ms_raters - a.ms_error) / n
        }
    };
    if denom <= 0.0 {
        return Err(Error::Undefined("non-positive ICC denominator".into()));
    }
    Ok(num / denom)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    MeanSpearman,
    KendallW,
    IccConsistency,
    IccAgreement,
}

impl Statistic {
    pub fn compute(self, m: &RaterScoreMatrix) -> Result<f64> {
        match self {
            Statistic::MeanSpearman => mean_spearman(m),
            Statistic::KendallW => kendall_w(m),
            Statistic::IccConsistency => icc(m, IccVariant::Consistency),
            Statistic::IccAgreement => icc(m, IccVariant::Agreement),
        }
    }
}

impl std::str::FromStr for Statistic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean_spearman" | "rho" => Ok(Statistic::MeanSpearman),
            "kendall_w" | "w" => Ok(Statistic::KendallW),
            "icc_consistency" => Ok(Statistic::IccConsistency),
            "icc_agreement" => Ok(Statistic::IccAgreement),
            _ => Err(Error::InvalidValue(format!("unknown statistic {s:?}"))),
        }
    }
}

/// Which scores a permutation shuffles together.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PermutationScope {
    /// Each rater's scores are shuffled across all items.
    #[default]
    AllItems,
    /// Each rater's scores are shuffled among the items of each scenario.
    WithinScenario,
}

pub const MIN_PERMUTATIONS: usize = 100;
const MAX_REDRAWS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PermutationResult {
    pub statistic: Statistic,
    pub scope: PermutationScope,
    pub observed: f64,
    pub p_value: f64,
    pub n_permutations: usize,
    /// Draws redone because the statistic was undefined.
    pub redraws: usize,
    /// Percentile to value, for plotting.
    pub null_percentiles: BTreeMap<String, f64>,
    #[serde(skip)]
    pub null: Vec<f64>,
}

fn mix(seed: u64, i: u64) -> u64 {
    let mut z = seed ^ i.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Nearest-rank percentile of an ascending sample.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = ((q / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn shuffled(m: &RaterScoreMatrix, blocks: &[Vec<usize>], rng: &mut ChaCha8Rng) -> RaterScoreMatrix {
    let mut out = m.clone();
    for r in 0..m.n_raters() {
        for block in blocks {
            let mut vals: Vec<Option<u8>> = block.iter().map(|&i| m.scores[i][r]).collect();
            vals.shuffle(rng);
            for (&i, v) in block.iter().zip(vals) {
                out.scores[i][r] = v;
            }
        }
    }
    out
}

/// Permutation null for `statistic`. Draw `i` uses its own RNG stream
/// derived from `seed`, so results do not depend on evaluation order.
pub fn permutation_test(
    m: &RaterScoreMatrix,
    statistic: Statistic,
    n_perm: usize,
    seed: u64,
    scope: PermutationScope,
) -> Result<PermutationResult> {
    if n_perm < MIN_PERMUTATIONS {
        return Err(Error::Config(format!(
            "need at least {MIN_PERMUTATIONS} permutations, got {n_perm}"
        )));
    }
    let observed = statistic.compute(m)?;
    let blocks: Vec<Vec<usize>> = match scope {
        PermutationScope::AllItems => vec![(0..m.n_items()).collect()],
        PermutationScope::WithinScenario => m
            .scenario_ids()
            .iter()
            .map(|s| {
                (0..m.n_items())
                    .filter(|&i| m.items[i].scenario_id == *s)
                    .collect()
            })
            .collect(),
    };
    let mut null = Vec::with_capacity(n_perm);
    let mut redraws = 0;
    for draw in 0..n_perm {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, draw as u64));
        let mut attempts = 0;
        loop {
            match statistic.compute(&shuffled(m, &blocks, &mut rng)) {
                Ok(v) => {
                    null.push(v);
                    break;
                }
                Err(_) if attempts < MAX_REDRAWS => {
                    attempts += 1;
                    redraws += 1;
                }
                Err(e) => {
                    return Err(Error::Undefined(format!(
                        "statistic undefined on {MAX_REDRAWS} consecutive permutations: {e}"
                    )))
                }
            }
        }
    }
    let exceed = null.iter().filter(|&&v| v >= observed).count();
    let p_value = (1 + exceed) as f64 / (1 + n_perm) as f64;
    let mut sorted = null.clone();
    sorted.sort_by(f64::total_cmp);
    let null_percentiles = [1.0, 5.0, 25.0, 50.0, 75.0, 95.0, 99.0, 100.0]
        .iter()
        .map(|&q| (format!("p{q:.0}"), percentile(&sorted, q)))
        .collect();
    Ok(PermutationResult {
        statistic,
        scope,
        observed,
        p_value,
        n_permutations: n_perm,
        redraws,
        null_percentiles,
        null,
    })
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct DeviationHistogram {
    /// Competency to (score − consensus) to count.
    pub by_competency: BTreeMap<String, BTreeMap<i32, usize>>,
    /// Candidate class to (score − consensus) to count; items without a
    /// class are not counted here.
    pub by_class: BTreeMap<String, BTreeMap<i32, usize>>,
    /// Items whose modal grade was tied; the lower grade was taken.
    pub tied_items: Vec<usize>,
    pub total: usize,
}

/// Modal grade of `scores`, with ties going to the lower grade. The flag
/// reports a tie.
pub fn consensus(scores: &[u8]) -> Option<(u8, bool)> {
    let mut counts = [0usize; 5];
    for &g in scores {
        counts[g as usize] += 1;
    }
    let best = *counts.iter().max()?;
    if best == 0 {
        return None;
    }
    let modes: Vec<u8> = (1..=4u8).filter(|&g| counts[g as usize] == best).collect();
    Some((modes[0], modes.len() > 1))
}

pub fn deviation_histogram(m: &RaterScoreMatrix) -> DeviationHistogram {
    let mut h = DeviationHistogram::default();
    for (i, (item, row)) in m.items.iter().zip(&m.scores).enumerate() {
        let present: Vec<u8> = row.iter().flatten().copied().collect();
        let Some((mode, tied)) = consensus(&present) else {
            continue;
        };
        if tied {
            h.tied_items.push(i);
        }
        for g in present {
            let d = i32::from(g) - i32::from(mode);
            *h.by_competency
                .entry(item.competency.clone())
                .or_default()
                .entry(d)
                .or_default() += 1;
            if let Some(c) = &item.class {
                *h.by_class
                    .entry(c.clone())
                    .or_default()
                    .entry(d)
                    .or_default() += 1;
            }
            h.total += 1;
        }
    }
    h
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IrrReport {
    pub raters: usize,
    pub items: usize,
    pub pooling: Pooling,
    pub mean_spearman_rho: Option<f64>,
    pub spearman_pairs_skipped: Vec<(String, String)>,
    pub kendall_w: Option<f64>,
    pub icc_consistency: Option<f64>,
    pub icc_agreement: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub permutation: Option<PermutationResult>,
    pub deviation_histogram: DeviationHistogram,
    /// Statistics that could not be computed, and why.
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IrrOptions {
    pub pooling: Pooling,
    pub permutations: usize,
    pub statistic: Statistic,
    pub scope: PermutationScope,
    pub seed: u64,
}

impl Default for IrrOptions {
    fn default() -> Self {
        Self {
            pooling: Pooling::Items,
            permutations: 10_000,
            statistic: Statistic::KendallW,
            scope: PermutationScope::AllItems,
            seed: 0,
        }
    }
}

fn per_scenario_mean(
    m: &RaterScoreMatrix,
    f: impl Fn(&RaterScoreMatrix) -> Result<f64>,
) -> Result<f64> {
    let vals: Vec<f64> = m
        .scenario_ids()
        .iter()
        .filter_map(|s| m.scenario(s))
        .filter_map(|sub| f(&sub).ok())
        .collect();
    if vals.is_empty() {
        return Err(Error::Undefined(
            "statistic undefined in every scenario".into(),
        ));
    }
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Every statistic. No permutation test when `permutations` is zero.
pub fn irr_report(m: &RaterScoreMatrix, options: &IrrOptions) -> Result<IrrReport> {
    m.validate()?;
    let mut notes = Vec::new();
    let mut keep = |name: &str, r: Result<f64>| match r {
        Ok(v) => Some(v),
        Err(e) => {
            notes.push(format!("{name}: {e}"));
            None
        }
    };
    let (rho, skipped) = match options.pooling {
        Pooling::Items => match mean_spearman_detail(m) {
            Ok(d) => (Some(d.rho), d.skipped),
            Err(e) => (keep("mean_spearman_rho", Err(e)), Vec::new()),
        },
        Pooling::PerScenario => (
            keep("mean_spearman_rho", per_scenario_mean(m, mean_spearman)),
            Vec::new(),
        ),
    };
    let w = match options.pooling {
        Pooling::Items => keep("kendall_w", kendall_w(m)),
        Pooling::PerScenario => keep("kendall_w", per_scenario_mean(m, kendall_w)),
    };
    let icc_c = keep("icc_consistency", icc(m, IccVariant::Consistency));
    let icc_a = keep("icc_agreement", icc(m, IccVariant::Agreement));
    let permutation = if options.permutations == 0 {
        None
    } else {
        Some(permutation_test(
            m,
            options.statistic,
            options.permutations,
            options.seed,
            options.scope,
        )?)
    };
    Ok(IrrReport {
        raters: m.n_raters(),
        items: m.n_items(),
        pooling: options.pooling,
        mean_spearman_rho: rho,
        spearman_pairs_skipped: skipped,
        kendall_w: w,
        icc_consistency: icc_c,
        icc_agreement: icc_a,
        permutation,
        deviation_histogram: deviation_histogram(m),
        notes,
    })
}

/// Synthetic panel: each item has a latent grade drawn uniformly from 1..=4
/// and each rater reports it plus Gaussian noise of scale `sigma`, rounded
/// and clamped to the scale.
pub fn planted_panel(
    n_raters: usize,
    n_items: usize,
    sigma: f64,
    seed: u64,
) -> Result<RaterScoreMatrix> {
    let noise =
        Normal::new(0.0, sigma).map_err(|e| Error::InvalidValue(format!("sigma {sigma}: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scores = Vec::with_capacity(n_items);
    for _ in 0..n_items {
        let q = f64::from(rand::Rng::gen_range(&mut rng, 1u8..=4));
        scores.push(
            (0..n_raters)
                .map(|_| Some((q + noise.sample(&mut rng)).round().clamp(1.0, 4.0) as u8))
                .collect(),
        );
    }
    RaterScoreMatrix::new(
        (0..n_items)
            .map(|i| Item {
                scenario_id: format!("S{:02}", i + 1),
                competency: "Overall".into(),
                class: Some("synthetic".into()),
            })
            .collect(),
        (0..n_raters).map(|r| format!("R{}", r + 1)).collect(),
        scores,
    )
}

/// Average mean-Spearman of planted panels over `seeds` seeds starting at
/// `base_seed`; undefined panels are skipped.
pub fn planted_rho(
    n_raters: usize,
    n_items: usize,
    sigma: f64,
    base_seed: u64,
    seeds: u64,
) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0;
    for s in 0..seeds {
        if let Ok(r) = mean_spearman(&planted_panel(
            n_raters,
            n_items,
            sigma,
            base_seed.wrapping_add(s),
        )?) {
            sum += r;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Undefined(
            "no planted panel had a defined correlation".into(),
        ));
    }
    Ok(sum / n as f64)
}

/// Noise scale whose planted panels average `target` mean-Spearman, by
/// bisection over the seed-averaged estimate.
pub fn calibrate_sigma(
    target: f64,
    n_raters: usize,
    n_items: usize,
    base_seed: u64,
    seeds: u64,
) -> Result<f64> {
    if !(0.0 < target && target < 1.0) {
        return Err(Error::InvalidValue(format!(
            "target rho {target} outside (0, 1)"
        )));
    }
    let (mut lo, mut hi) = (0.01, 5.0);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if planted_rho(n_raters, n_items, mid, base_seed, seeds)? > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Panel with no shared signal: every score uniform on 1..=4.
pub fn null_panel(n_raters: usize, n_items: usize, seed: u64) -> Result<RaterScoreMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scores = (0..n_items)
        .map(|_| {
            (0..n_raters)
                .map(|_| Some(rand::Rng::gen_range(&mut rng, 1u8..=4)))
                .collect()
        })
        .collect();
    RaterScoreMatrix::new(
        (0..n_items)
            .map(|i| Item {
                scenario_id: format!("S{:02}", i + 1),
                competency: "Overall".into(),
                class: None,
            })
            .collect(),
        (0..n_raters).map(|r| format!("R{}", r + 1)).collect(),
        scores,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn matrix(rows: &[&[u8]]) -> RaterScoreMatrix {
        let k = rows[0].len();
        RaterScoreMatrix::new(
            (0..rows.len())
                .map(|i| Item {
                    scenario_id: format!("S{i}"),
                    competency: "Safety".into(),
                    class: None,
                })
                .collect(),
            (0..k).map(|r| format!("R{r}")).collect(),
            rows.iter()
                .map(|r| r.iter().map(|&g| Some(g)).collect())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn spearman_examples() {
        assert_relative_eq!(
            spearman_pair(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 3.0, 4.0]).unwrap(),
            1.0
        );
        assert_relative_eq!(
            spearman_pair(&[1.0, 2.0, 3.0, 4.0], &[4.0, 3.0, 2.0, 1.0]).unwrap(),
            -1.0
        );
        assert_relative_eq!(
            spearman_pair(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap(),
            0.8,
            epsilon = 1e-12
        );
        assert!(matches!(
            spearman_pair(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]),
            Err(Error::Undefined(_))
        ));
    }

    #[test]
    fn midranks_average_ties() {
        assert_eq!(midranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn identical_raters_give_one() {
        let m = matrix(&[&[1, 1, 1], &[2, 2, 2], &[4, 4, 4], &[3, 3, 3]]);
        assert_relative_eq!(mean_spearman(&m).unwrap(), 1.0);
        assert_relative_eq!(kendall_w(&m).unwrap(), 1.0);
        assert_relative_eq!(icc(&m, IccVariant::Consistency).unwrap(), 1.0);
        assert_relative_eq!(icc(&m, IccVariant::Agreement).unwrap(), 1.0);
    }

    #[test]
    fn reversed_pair() {
        let m = matrix(&[&[1, 4], &[2, 3], &[3, 2], &[4, 1]]);
        assert_relative_eq!(mean_spearman(&m).unwrap(), -1.0);
        assert_relative_eq!(kendall_w(&m).unwrap(), 0.0);
    }

    #[test]
    fn offset_rater_splits_icc_forms() {
        let m = matrix(&[&[1, 1, 2], &[2, 2, 3], &[3, 3, 4], &[2, 2, 3], &[1, 1, 2]]);
        assert_relative_eq!(
            icc(&m, IccVariant::Consistency).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        assert!(icc(&m, IccVariant::Agreement).unwrap() < 1.0);
    }

    #[test]
    fn icc_undefined_without_item_variance() {
        let m = matrix(&[&[2, 3], &[2, 3], &[2, 3]]);
        assert!(matches!(
            icc(&m, IccVariant::Consistency),
            Err(Error::Undefined(_))
        ));
    }

    #[test]
    fn icc_reference_values() {
        // Classic six targets by four judges example.
        let rows: Vec<Vec<f64>> = [
            [9.0, 2.0, 5.0, 8.0],
            [6.0, 1.0, 3.0, 2.0],
            [8.0, 4.0, 6.0, 8.0],
            [7.0, 1.0, 2.0, 6.0],
            [10.0, 5.0, 6.0, 9.0],
            [6.0, 2.0, 4.0, 7.0],
        ]
        .iter()
        .map(|r| r.to_vec())
        .collect();
        let a = anova_rows(&rows).unwrap();
        assert_relative_eq!(
            icc_from_anova(&a, IccVariant::Consistency).unwrap(),
            0.7148,
            epsilon = 1e-4
        );
        assert_relative_eq!(
            icc_from_anova(&a, IccVariant::Agreement).unwrap(),
            0.2898,
            epsilon = 1e-4
        );
    }

    #[test]
    fn kendall_examples() {
        let m = matrix(&[&[1, 2, 1], &[2, 1, 2], &[3, 3, 4], &[4, 4, 3]]);
        let w = kendall_w(&m).unwrap();
        let rho = mean_spearman(&m).unwrap();
        assert_relative_eq!(rho, (3.0 * w - 1.0) / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn missing_values() {
        let mut m = matrix(&[&[1, 1, 1], &[2, 2, 2], &[3, 3, 3], &[4, 4, 4]]);
        m.scores[0][2] = None;
        assert_relative_eq!(mean_spearman(&m).unwrap(), 1.0);
        assert_relative_eq!(kendall_w(&m).unwrap(), 1.0);
        m.scores[1][0] = None;
        m.scores[2][1] = None;
        assert!(kendall_w(&m).is_err());
    }

    #[test]
    fn consensus_tie_goes_low() {
        assert_eq!(consensus(&[3, 3, 2]), Some((3, false)));
        assert_eq!(consensus(&[2, 2, 4, 4]), Some((2, true)));
        let m = matrix(&[&[3, 3, 2], &[1, 1, 1]]);
        let h = deviation_histogram(&m);
        assert_eq!(h.by_competency["Safety"][&0], 5);
        assert_eq!(h.by_competency["Safety"][&-1], 1);
        assert_eq!(h.total, 6);
        let m = matrix(&[&[2, 2, 4, 4], &[1, 1, 1, 1]]);
        let h = deviation_histogram(&m);
        assert_eq!(h.by_competency["Safety"][&2], 2);
        assert_eq!(h.tied_items, vec![0]);
        let unanimous = matrix(&[&[2, 2, 2], &[4, 4, 4]]);
        assert_eq!(
            deviation_histogram(&unanimous).by_competency["Safety"]
                .keys()
                .collect::<Vec<_>>(),
            vec![&0]
        );
    }

    #[test]
    fn scores_csv_round_trip_and_errors() {
        let text = "scenario_id,rater_id,competency,grade,candidate_class\n\
                    S1,A,Safety,3,agent\nS1,B,Safety,Mostly Achieved,agent\n\
                    S2,A,Safety,1,human\nS2,B,Safety,2,human\n";
        let m = parse_scores(text).unwrap();
        assert_eq!(
            m.scores,
            vec![vec![Some(3), Some(3)], vec![Some(1), Some(2)]]
        );
        assert_eq!(parse_scores(&scores_to_csv(&m)).unwrap(), m);
        let bad = text.replace("S2,B,Safety,2", "S2,B,Safety,7");
        match parse_scores(&bad) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("{other:?}"),
        }
        let dup = format!("{text}S2,B,Safety,2,human\n");
        assert!(matches!(
            parse_scores(&dup),
            Err(Error::Parse { line: 6, .. })
        ));
        let one_rater = "scenario_id,rater_id,competency,grade\nS1,A,Safety,3\nS2,A,Safety,2\n";
        assert!(matches!(
            parse_scores(one_rater),
            Err(Error::InvalidValue(_))
        ));
    }

    #[test]
    fn permutation_on_perfect_panel_hits_the_floor() {
        let rows: Vec<Vec<u8>> = (0..19).map(|i| vec![(i % 4 + 1) as u8; 7]).collect();
        let refs: Vec<&[u8]> = rows.iter().map(|r| r.as_slice()).collect();
        let m = matrix(&refs);
        let r =
            permutation_test(&m, Statistic::KendallW, 500, 3, PermutationScope::AllItems).unwrap();
        assert_relative_eq!(r.observed, 1.0);
        assert_eq!(r.p_value, 1.0 / 501.0);
        let again =
            permutation_test(&m, Statistic::KendallW, 500, 3, PermutationScope::AllItems).unwrap();
        assert_eq!(r.null, again.null);
        assert!(
            permutation_test(&m, Statistic::KendallW, 10, 3, PermutationScope::AllItems).is_err()
        );
    }

    #[test]
    fn within_scenario_scope_keeps_blocks() {
        let mut m = planted_panel(4, 8, 0.6, 1).unwrap();
        for (i, it) in m.items.iter_mut().enumerate() {
            it.scenario_id = format!("S{}", i / 4);
        }
        let r = permutation_test(
            &m,
            Statistic::MeanSpearman,
            200,
            1,
            PermutationScope::WithinScenario,
        )
        .unwrap();
        assert_eq!(r.null.len(), 200);
    }

    #[test]
    fn report_without_permutations() {
        let m = planted_panel(5, 12, 0.7, 2).unwrap();
        let opts = IrrOptions {
            permutations: 0,
            ..Default::default()
        };
        let r = irr_report(&m, &opts).unwrap();
        assert!(r.permutation.is_none());
        assert!(r.mean_spearman_rho.is_some() && r.kendall_w.is_some());
        let non_missing = m.scores.iter().flatten().flatten().count();
        assert_eq!(r.deviation_histogram.total, non_missing);
        let v = serde_json::to_value(&r).unwrap();
        assert!(v.get("permutation").is_none());
    }

    fn tie_free(k: usize, n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
        proptest::collection::vec(Just((0..n).collect::<Vec<usize>>()).prop_shuffle(), k).prop_map(
            move |cols| {
                (0..n)
                    .map(|i| cols.iter().map(|c| c[i] as f64).collect())
                    .collect()
            },
        )
    }

    fn rank_matrix(rows: &[Vec<f64>]) -> RaterScoreMatrix {
        RaterScoreMatrix {
            items: (0..rows.len())
                .map(|i| Item {
                    scenario_id: format!("S{i}"),
                    competency: "c".into(),
                    class: None,
                })
                .collect(),
            raters: (0..rows[0].len()).map(|r| format!("R{r}")).collect(),
            scores: rows
                .iter()
                .map(|r| r.iter().map(|&x| Some(x as u8 + 1)).collect())
                .collect(),
        }
    }

    proptest! {
        #[test]
        fn w_rho_identity_without_ties(rows in tie_free(5, 4)) {
            let m = rank_matrix(&rows);
            let w = kendall_w(&m).unwrap();
            let rho = mean_spearman(&m).unwrap();
            let k = 5.0;
            prop_assert!((rho - (k * w - 1.0) / (k - 1.0)).abs() < 1e-9);
        }

        #[test]
        fn statistics_ignore_rater_and_item_order(
            seed in 0u64..1000,
            rperm in Just((0..6).collect::<Vec<usize>>()).prop_shuffle(),
            iperm in Just((0..10).collect::<Vec<usize>>()).prop_shuffle(),
        ) {
            let m = planted_panel(6, 10, 0.8, seed).unwrap();
            let p = RaterScoreMatrix::new(
                iperm.iter().map(|&i| m.items[i].clone()).collect(),
                rperm.iter().map(|&r| m.raters[r].clone()).collect(),
                iperm.iter().map(|&i| rperm.iter().map(|&r| m.scores[i][r]).collect()).collect(),
            ).unwrap();
            for s in [Statistic::MeanSpearman, Statistic::KendallW, Statistic::IccConsistency, Statistic::IccAgreement] {
                match (s.compute(&m), s.compute(&p)) {
                    (Ok(a), Ok(b)) => prop_assert!((a - b).abs() < 1e-9),
                    (Err(_), Err(_)) => {}
                    _ => prop_assert!(false, "definedness differs for {s:?}"),
                }
            }
        }

        #[test]
        fn spearman_ignores_monotone_relabeling(
            x in proptest::collection::vec(1u8..=4, 8),
            y in proptest::collection::vec(1u8..=4, 8),
        ) {
            let xf: Vec<f64> = x.iter().map(|&g| f64::from(g)).collect();
            let yf: Vec<f64> = y.iter().map(|&g| f64::from(g)).collect();
            let stretched: Vec<f64> = xf.iter().map(|g| g.powi(3) + 10.0 * g).collect();
            match (spearman_pair(&xf, &yf), spearman_pair(&stretched, &yf)) {
                (Ok(a), Ok(b)) => prop_assert!((a - b).abs() < 1e-12),
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false),
            }
        }

        #[test]
        fn kendall_ignores_swapping_grade_labels_consistently(seed in 0u64..1000) {
            // Reversing the scale for every rater preserves concordance.
            let m = planted_panel(5, 12, 0.9, seed).unwrap();
            let mut r = m.clone();
            for g in r.scores.iter_mut().flatten().flatten() {
                *g = 5 - *g;
            }
            match (kendall_w(&m), kendall_w(&r)) {
                (Ok(a), Ok(b)) => prop_assert!((a - b).abs() < 1e-12),
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false),
            }
        }

        #[test]
        fn consistency_at_least_agreement_when_raters_differ_more_than_noise(seed in 0u64..2000) {
            let m = planted_panel(4, 9, 1.0, seed).unwrap();
            if let (Ok(a), Ok(c), Ok(t)) = (
                icc(&m, IccVariant::Agreement),
                icc(&m, IccVariant::Consistency),
                anova(&m),
            ) {
                if t.ms_raters >= t.ms_error && c >= 0.0 {
                    prop_assert!(c >= a - 1e-12);
                }
            }
        }
    }
}

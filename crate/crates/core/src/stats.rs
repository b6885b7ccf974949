//! Crossover-study analysis: questionnaire ingestion, composites,
//! reliability, a random-intercept linear mixed model fitted by profiled
//! REML, and the effect summaries derived from it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Read;
use std::str::FromStr;

use nalgebra::{DMatrix, Matrix4, Vector4};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::ValidationError;
use crate::profile::Condition;

/// 97.5% standard-normal quantile, fixed for reporting.
pub const Z_975: f64 = 1.96;
pub const CARRYOVER_ALPHA: f64 = 0.05;
pub const LAMBDA_MIN: f64 = 1e-6;
pub const LAMBDA_MAX: f64 = 1e6;
const GRID_POINTS: usize = 97;
const LOG_LAMBDA_TOL: f64 = 1e-8;

pub const COEF_NAMES: [&str; 4] = ["Intercept", "Info-Only", "Sequence(BA)", "Treatment×Sequence"];

#[derive(Debug, Error)]
pub enum StatsError {
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error("data error: {0}")]
    Data(String),
    #[error("data error: missing item {participant}/{period}/{item}")]
    MissingItem {
        participant: String,
        period: Period,
        item: String,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("model error: {0}")]
    Model(String),
    #[error("undefined alpha: {0}")]
    UndefinedAlpha(String),
    #[error("undefined effect size: {0}")]
    UndefinedEffectSize(String),
}

// ---------------------------------------------------------------------------
// Records
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Sequence {
    AB,
    BA,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Period {
    A,
    B,
}

impl fmt::Display for Sequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl fmt::Display for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for Sequence {
    type Err = ValidationError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "AB" => Ok(Sequence::AB),
            "BA" => Ok(Sequence::BA),
            _ => Err(ValidationError::new(format!("unknown sequence `{s}`"))),
        }
    }
}

impl FromStr for Period {
    type Err = ValidationError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" | "1" => Ok(Period::A),
            "B" | "2" => Ok(Period::B),
            _ => Err(ValidationError::new(format!("unknown period `{s}`"))),
        }
    }
}

/// AB starts with Information+Motivation.
pub fn condition_for(sequence: Sequence, period: Period) -> Condition {
    match (sequence, period) {
        (Sequence::AB, Period::A) | (Sequence::BA, Period::B) => Condition::InfoMotive,
        _ => Condition::InfoOnly,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionnaireRecord {
    pub participant_id: String,
    pub sequence: Sequence,
    pub period: Period,
    pub condition: Condition,
    pub items: BTreeMap<String, i64>,
}

/// Baseline affect items use a 5-point scale, everything else 7 points.
pub fn item_range(code: &str) -> (i64, i64) {
    let upper = code.to_ascii_uppercase();
    if upper.starts_with("PA") || upper.starts_with("NA") {
        (1, 5)
    } else {
        (1, 7)
    }
}

const FIXED_COLUMNS: [&str; 4] = ["participant_id", "sequence", "period", "condition"];

pub fn read_responses(reader: impl Read) -> Result<Vec<QuestionnaireRecord>, StatsError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    for (i, want) in FIXED_COLUMNS.iter().enumerate() {
        if headers.get(i) != Some(*want) {
            return Err(StatsError::Data(format!(
                "column {} must be `{want}`, found `{}`",
                i + 1,
                headers.get(i).unwrap_or("")
            )));
        }
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = row + 2;
        let ctx = |e: ValidationError| StatsError::Data(format!("line {line}: {}", e.message));
        let participant_id = rec.get(0).unwrap_or("").to_string();
        if participant_id.is_empty() {
            return Err(StatsError::Data(format!("line {line}: empty participant_id")));
        }
        let sequence: Sequence = rec.get(1).unwrap_or("").parse().map_err(ctx)?;
        let period: Period = rec.get(2).unwrap_or("").parse().map_err(ctx)?;
        let expected = condition_for(sequence, period);
        let condition = match rec.get(3).unwrap_or("") {
            "" => expected,
            c => c.parse::<Condition>().map_err(ctx)?,
        };
        if condition != expected {
            return Err(StatsError::Data(format!(
                "line {line}: condition {condition} inconsistent with sequence {sequence} period {period}"
            )));
        }
        if !seen.insert((participant_id.clone(), period)) {
            return Err(StatsError::Data(format!(
                "line {line}: duplicate record for {participant_id}/{period}"
            )));
        }
        let mut items = BTreeMap::new();
        for (code, raw) in headers.iter().zip(rec.iter()).skip(FIXED_COLUMNS.len()) {
            if raw.is_empty() {
                continue;
            }
            let v: i64 = raw
                .parse()
                .map_err(|_| StatsError::Data(format!("line {line}: {code} = `{raw}` is not an integer")))?;
            let (lo, hi) = item_range(code);
            if v < lo || v > hi {
                return Err(StatsError::Data(format!(
                    "line {line}: {code} = {v} outside {lo}..={hi}"
                )));
            }
            items.insert(code.to_string(), v);
        }
        out.push(QuestionnaireRecord {
            participant_id,
            sequence,
            period,
            condition,
            items,
        });
    }
    Ok(out)
}

pub fn write_responses(records: &[QuestionnaireRecord]) -> Result<String, StatsError> {
    let codes: BTreeSet<&str> = records.iter().flat_map(|r| r.items.keys().map(String::as_str)).collect();
    let mut codes: Vec<&str> = codes.into_iter().collect();
    codes.sort_by_key(|c| (item_order(c), *c));
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<&str> = FIXED_COLUMNS.to_vec();
    header.extend(&codes);
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![
            r.participant_id.clone(),
            r.sequence.to_string(),
            r.period.to_string(),
            r.condition.to_string(),
        ];
        row.extend(codes.iter().map(|c| r.items.get(*c).map(|v| v.to_string()).unwrap_or_default()));
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| StatsError::Data(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn item_order(code: &str) -> (u8, u32) {
    let prefix: String = code.chars().take_while(|c| c.is_ascii_alphabetic()).collect();
    let num: u32 = code[prefix.len()..].parse().unwrap_or(0);
    let rank = match prefix.as_str() {
        "PF" => 0,
        "UX" => 1,
        "PA" => 2,
        "NA" => 3,
        _ => 4,
    };
    (rank, num)
}

// ---------------------------------------------------------------------------
// Composites and reliability
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompositeSpec {
    pub name: String,
    pub item_codes: Vec<String>,
}

impl CompositeSpec {
    fn numbered(name: &str, prefix: &str) -> Self {
        Self {
            name: name.to_string(),
            item_codes: (1..=6).map(|i| format!("{prefix}{i}")).collect(),
        }
    }

    pub fn positive_feelings() -> Self {
        Self::numbered("positive_feelings", "PF")
    }

    pub fn usage_experience() -> Self {
        Self::numbered("usage_experience", "UX")
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "positive_feelings" | "pf" => Some(Self::positive_feelings()),
            "usage_experience" | "ux" => Some(Self::usage_experience()),
            _ => None,
        }
    }
}

fn record_items(r: &QuestionnaireRecord, spec: &CompositeSpec) -> Result<Vec<f64>, StatsError> {
    spec.item_codes
        .iter()
        .map(|code| {
            r.items.get(code).map(|&v| v as f64).ok_or_else(|| StatsError::MissingItem {
                participant: r.participant_id.clone(),
                period: r.period,
                item: code.clone(),
            })
        })
        .collect()
}

pub fn composite_scores(
    records: &[QuestionnaireRecord],
    spec: &CompositeSpec,
) -> Result<BTreeMap<(String, Period), f64>, StatsError> {
    if spec.item_codes.is_empty() {
        return Err(ValidationError::new("composite has no items").into());
    }
    let mut out = BTreeMap::new();
    for r in records {
        let items = record_items(r, spec)?;
        let sum: i64 = items.iter().map(|&v| v as i64).sum();
        out.insert((r.participant_id.clone(), r.period), sum as f64 / items.len() as f64);
    }
    Ok(out)
}

/// Observations × items.
pub fn item_matrix(records: &[QuestionnaireRecord], spec: &CompositeSpec) -> Result<Vec<Vec<f64>>, StatsError> {
    records.iter().map(|r| record_items(r, spec)).collect()
}

fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

fn check_matrix(matrix: &[Vec<f64>]) -> Result<usize, StatsError> {
    if matrix.len() < 2 {
        return Err(StatsError::UndefinedAlpha("need at least two observations".into()));
    }
    let k = matrix[0].len();
    if k < 2 {
        return Err(StatsError::UndefinedAlpha("need at least two items".into()));
    }
    if matrix.iter().any(|row| row.len() != k) {
        return Err(ValidationError::new("ragged item matrix").into());
    }
    Ok(k)
}

/// Covariance-form alpha: k/(k-1) × (1 - Σ item variances / total variance).
pub fn cronbach_alpha(matrix: &[Vec<f64>]) -> Result<f64, StatsError> {
    let k = check_matrix(matrix)?;
    let item_var: f64 = (0..k)
        .map(|j| sample_variance(&matrix.iter().map(|r| r[j]).collect::<Vec<_>>()))
        .sum();
    let totals: Vec<f64> = matrix.iter().map(|r| r.iter().sum()).collect();
    let total_var = sample_variance(&totals);
    if !(total_var > 0.0) {
        return Err(StatsError::UndefinedAlpha("total score has zero variance".into()));
    }
    let k = k as f64;
    Ok(k / (k - 1.0) * (1.0 - item_var / total_var))
}

pub fn standardized_alpha(k: usize, mean_r: f64) -> Result<f64, StatsError> {
    if k < 2 {
        return Err(StatsError::UndefinedAlpha("need at least two items".into()));
    }
    let k = k as f64;
    let denom = 1.0 + (k - 1.0) * mean_r;
    if denom == 0.0 {
        return Err(StatsError::UndefinedAlpha("mean correlation makes the denominator zero".into()));
    }
    Ok(k * mean_r / denom)
}

/// Average Pearson correlation over all item pairs.
pub fn mean_inter_item_r(matrix: &[Vec<f64>]) -> Result<f64, StatsError> {
    let k = check_matrix(matrix)?;
    let cols: Vec<Vec<f64>> = (0..k).map(|j| matrix.iter().map(|r| r[j]).collect()).collect();
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for a in 0..k {
        for b in a + 1..k {
            let r = pearson(&cols[a], &cols[b])
                .ok_or_else(|| StatsError::UndefinedAlpha(format!("item {} has zero variance", a.min(b) + 1)))?;
            sum += r;
            pairs += 1;
        }
    }
    Ok(sum / pairs as f64)
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityReport {
    pub construct: String,
    pub k: usize,
    pub n_obs: usize,
    pub alpha: f64,
    pub mean_inter_item_r: f64,
    pub standardized_alpha: f64,
}

pub fn reliability(records: &[QuestionnaireRecord], spec: &CompositeSpec) -> Result<ReliabilityReport, StatsError> {
    let m = item_matrix(records, spec)?;
    let r = mean_inter_item_r(&m)?;
    Ok(ReliabilityReport {
        construct: spec.name.clone(),
        k: spec.item_codes.len(),
        n_obs: m.len(),
        alpha: cronbach_alpha(&m)?,
        mean_inter_item_r: r,
        standardized_alpha: standardized_alpha(spec.item_codes.len(), r)?,
    })
}

impl fmt::Display for ReliabilityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Construct: {} (k = {}, n = {})", self.construct, self.k, self.n_obs)?;
        writeln!(f, "Cronbach's alpha:        {:.3}", self.alpha)?;
        writeln!(f, "Mean inter-item r:       {:.3}", self.mean_inter_item_r)?;
        write!(f, "Standardized alpha:      {:.3}", self.standardized_alpha)
    }
}

// ---------------------------------------------------------------------------
// Linear mixed model
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct LmmData {
    pub y: Vec<f64>,
    pub participant: Vec<String>,
    pub condition: Vec<Condition>,
    pub sequence: Vec<Sequence>,
}

impl LmmData {
    pub fn push(&mut self, y: f64, participant: impl Into<String>, condition: Condition, sequence: Sequence) {
        self.y.push(y);
        self.participant.push(participant.into());
        self.condition.push(condition);
        self.sequence.push(sequence);
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn from_composites(records: &[QuestionnaireRecord], spec: &CompositeSpec) -> Result<Self, StatsError> {
        let scores = composite_scores(records, spec)?;
        let mut data = LmmData::default();
        for r in records {
            data.push(
                scores[&(r.participant_id.clone(), r.period)],
                r.participant_id.clone(),
                r.condition,
                r.sequence,
            );
        }
        Ok(data)
    }

    /// Group index per observation, in order of first appearance.
    pub fn group_index(&self) -> (Vec<usize>, usize) {
        let mut ids: BTreeMap<&str, usize> = BTreeMap::new();
        let mut out = Vec::with_capacity(self.len());
        for p in &self.participant {
            let next = ids.len();
            out.push(*ids.entry(p.as_str()).or_insert(next));
        }
        (out, ids.len())
    }

    /// Rows `[1, info_only, sequence_BA, info_only × sequence_BA]`.
    pub fn design_row(&self, i: usize) -> [f64; 4] {
        let info = f64::from(self.condition[i] == Condition::InfoOnly);
        let ba = f64::from(self.sequence[i] == Sequence::BA);
        [1.0, info, ba, info * ba]
    }

    pub fn design_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.len(), 4, |i, j| self.design_row(i)[j])
    }

    fn validate(&self) -> Result<(), StatsError> {
        let n = self.len();
        if self.participant.len() != n || self.condition.len() != n || self.sequence.len() != n {
            return Err(ValidationError::new("LMM columns differ in length").into());
        }
        if self.y.iter().any(|v| !v.is_finite()) {
            return Err(ValidationError::new("outcome contains non-finite values").into());
        }
        let mut seq_of: BTreeMap<&str, Sequence> = BTreeMap::new();
        for (p, &s) in self.participant.iter().zip(&self.sequence) {
            if *seq_of.entry(p.as_str()).or_insert(s) != s {
                return Err(StatsError::Data(format!("participant {p} appears in both sequences")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub z: f64,
    pub p: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmmFit {
    pub coefficients: Vec<Coefficient>,
    pub var_intercept: f64,
    pub var_residual: f64,
    /// var_intercept / var_residual at the optimum.
    pub lambda: f64,
    /// Restricted log-likelihood.
    pub log_likelihood: f64,
    pub n_obs: usize,
    pub n_groups: usize,
    /// The optimum sat on λ = 0 and was clamped there.
    pub boundary: bool,
}

impl LmmFit {
    pub fn coefficient(&self, name: &str) -> Option<&Coefficient> {
        self.coefficients.iter().find(|c| c.name == name)
    }
}

/// Two-sided standard-normal tail probability.
pub fn normal_two_sided_p(z: f64) -> f64 {
    statrs::function::erf::erfc(z.abs() / std::f64::consts::SQRT_2)
}

/// Per-group sufficient statistics for the closed-form block inverse.
struct GroupStats {
    n: f64,
    xx: Matrix4<f64>,
    x1: Vector4<f64>,
    xy: Vector4<f64>,
    y1: f64,
    yy: f64,
}

/// Profiled REML evaluation at a fixed variance ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct RemlEval {
    pub lambda: f64,
    pub log_likelihood: f64,
    pub sigma2: f64,
    pub beta: Vector4<f64>,
    /// (Xᵀ H⁻¹ X)⁻¹, to be scaled by σ².
    pub xthx_inv: Matrix4<f64>,
}

pub struct RemlProblem {
    groups: Vec<GroupStats>,
    n: usize,
    n_groups: usize,
}

impl RemlProblem {
    pub fn new(data: &LmmData) -> Result<Self, StatsError> {
        data.validate()?;
        let (gidx, n_groups) = data.group_index();
        let n = data.len();
        if n_groups < 2 {
            return Err(StatsError::Model("need at least two participants".into()));
        }
        if n <= 4 {
            return Err(StatsError::Model(format!("{n} observations cannot identify 4 fixed effects")));
        }
        let mut groups: Vec<GroupStats> = (0..n_groups)
            .map(|_| GroupStats {
                n: 0.0,
                xx: Matrix4::zeros(),
                x1: Vector4::zeros(),
                xy: Vector4::zeros(),
                y1: 0.0,
                yy: 0.0,
            })
            .collect();
        for i in 0..n {
            let x = Vector4::from(data.design_row(i));
            let y = data.y[i];
            let g = &mut groups[gidx[i]];
            g.n += 1.0;
            g.xx += x * x.transpose();
            g.x1 += x;
            g.xy += x * y;
            g.y1 += y;
            g.yy += y * y;
        }
        let xtx: Matrix4<f64> = groups.iter().map(|g| g.xx).sum();
        let eig = xtx.symmetric_eigen();
        let max = eig.eigenvalues.max();
        let min = eig.eigenvalues.min();
        if !(min > max * 1e-10) {
            return Err(StatsError::Model(
                "design matrix is singular (both conditions and both sequences are required)".into(),
            ));
        }
        Ok(Self { groups, n, n_groups })
    }

    pub fn n_obs(&self) -> usize {
        self.n
    }

    pub fn evaluate(&self, lambda: f64) -> Result<RemlEval, StatsError> {
        let mut a = Matrix4::zeros();
        let mut b = Vector4::zeros();
        let mut q = 0.0;
        let mut log_det_h = 0.0;
        for g in &self.groups {
            let c = lambda / (1.0 + lambda * g.n);
            a += g.xx - g.x1 * g.x1.transpose() * c;
            b += g.xy - g.x1 * (c * g.y1);
            q += g.yy - c * g.y1 * g.y1;
            log_det_h += (lambda * g.n).ln_1p();
        }
        let chol = a
            .cholesky()
            .ok_or_else(|| StatsError::Model(format!("weighted normal equations singular at λ = {lambda}")))?;
        let beta = chol.solve(&b);
        let rss = (q - beta.dot(&b)).max(0.0);
        let dof = (self.n - 4) as f64;
        let sigma2 = rss / dof;
        if !(sigma2 > 0.0) {
            return Err(StatsError::Model("residual variance is zero".into()));
        }
        let log_det_a = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let ll = -0.5 * (dof * (2.0 * std::f64::consts::PI * sigma2).ln() + log_det_h + log_det_a + dof);
        Ok(RemlEval {
            lambda,
            log_likelihood: ll,
            sigma2,
            beta,
            xthx_inv: chol.inverse(),
        })
    }

    fn ll_at_log(&self, x: f64) -> f64 {
        self.evaluate(x.exp()).map(|e| e.log_likelihood).unwrap_or(f64::NEG_INFINITY)
    }

    /// Maximise the profiled criterion over λ ≥ 0.
    pub fn optimize(&self) -> Result<(RemlEval, bool), StatsError> {
        let (lo, hi) = (LAMBDA_MIN.ln(), LAMBDA_MAX.ln());
        let step = (hi - lo) / (GRID_POINTS - 1) as f64;
        let grid: Vec<f64> = (0..GRID_POINTS).map(|i| lo + step * i as f64).collect();
        let values: Vec<f64> = grid.iter().map(|&x| self.ll_at_log(x)).collect();
        let best = values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .expect("non-empty grid");
        if !values[best].is_finite() {
            return Err(StatsError::Model("restricted likelihood is not finite anywhere".into()));
        }
        let mut a = grid[best.saturating_sub(1)];
        let mut b = grid[(best + 1).min(GRID_POINTS - 1)];
        let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
        let mut c = b - inv_phi * (b - a);
        let mut d = a + inv_phi * (b - a);
        let mut fc = self.ll_at_log(c);
        let mut fd = self.ll_at_log(d);
        while b - a > LOG_LAMBDA_TOL {
            if fc >= fd {
                b = d;
                d = c;
                fd = fc;
                c = b - inv_phi * (b - a);
                fc = self.ll_at_log(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + inv_phi * (b - a);
                fd = self.ll_at_log(d);
            }
        }
        let mut x = (a + b) / 2.0;
        for cand in [grid[best], c, d] {
            if self.ll_at_log(cand) > self.ll_at_log(x) {
                x = cand;
            }
        }
        let interior = self.evaluate(x.exp())?;
        let zero = self.evaluate(0.0)?;
        if zero.log_likelihood >= interior.log_likelihood {
            Ok((zero, true))
        } else {
            Ok((interior, false))
        }
    }
}

fn fit_from_eval(problem: &RemlProblem, eval: RemlEval, boundary: bool) -> LmmFit {
    let coefficients = COEF_NAMES
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let estimate = eval.beta[j];
            let std_error = (eval.sigma2 * eval.xthx_inv[(j, j)]).sqrt();
            let z = estimate / std_error;
            Coefficient {
                name: name.to_string(),
                estimate,
                std_error,
                z,
                p: normal_two_sided_p(z),
                ci_low: estimate - Z_975 * std_error,
                ci_high: estimate + Z_975 * std_error,
            }
        })
        .collect();
    LmmFit {
        coefficients,
        var_intercept: eval.lambda * eval.sigma2,
        var_residual: eval.sigma2,
        lambda: eval.lambda,
        log_likelihood: eval.log_likelihood,
        n_obs: problem.n,
        n_groups: problem.n_groups,
        boundary,
    }
}

/// Random-intercept LMM with design `[Intercept, Info-Only, Sequence(BA),
/// Treatment×Sequence]`, variance ratio by profiled REML.
pub fn fit_lmm_reml(data: &LmmData) -> Result<LmmFit, StatsError> {
    let problem = RemlProblem::new(data)?;
    let (eval, boundary) = problem.optimize()?;
    Ok(fit_from_eval(&problem, eval, boundary))
}

/// Fit with the variance ratio held fixed (λ = 0 gives OLS).
pub fn fit_lmm_fixed_lambda(data: &LmmData, lambda: f64) -> Result<LmmFit, StatsError> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(ValidationError::new(format!("lambda must be >= 0, got {lambda}")).into());
    }
    let problem = RemlProblem::new(data)?;
    let eval = problem.evaluate(lambda)?;
    Ok(fit_from_eval(&problem, eval, lambda == 0.0))
}

fn require_structure(fit: &LmmFit) -> Result<(f64, f64), StatsError> {
    let names: Vec<&str> = fit.coefficients.iter().map(|c| c.name.as_str()).collect();
    if names != COEF_NAMES {
        return Err(StatsError::Model(format!("unexpected coefficient structure {names:?}")));
    }
    Ok((fit.coefficients[1].estimate, fit.coefficients[3].estimate))
}

/// Sequence-averaged advantage of Information+Motivation.
pub fn marginal_effect_from(beta_info_only: f64, beta_interaction: f64) -> f64 {
    -(beta_info_only + beta_interaction / 2.0)
}

pub fn marginal_effect(fit: &LmmFit) -> Result<f64, StatsError> {
    let (info, inter) = require_structure(fit)?;
    Ok(marginal_effect_from(info, inter))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectSizes {
    pub d_total: f64,
    pub d_paired: f64,
}

pub fn d_total(marginal: f64, var_intercept: f64, var_residual: f64) -> Result<f64, StatsError> {
    let total = var_intercept + var_residual;
    if !(total > 0.0) {
        return Err(StatsError::UndefinedEffectSize("total variance is zero".into()));
    }
    Ok(marginal / total.sqrt())
}

/// Mean over standard deviation of within-participant differences.
pub fn d_paired(differences: &[f64]) -> Result<f64, StatsError> {
    if differences.len() < 2 {
        return Err(StatsError::UndefinedEffectSize("need at least two differences".into()));
    }
    let n = differences.len() as f64;
    let mean = differences.iter().sum::<f64>() / n;
    let sd = sample_variance(differences).sqrt();
    if !(sd > 0.0) {
        return Err(StatsError::UndefinedEffectSize("differences have zero spread".into()));
    }
    Ok(mean / sd)
}

pub fn effect_sizes(fit: &LmmFit, differences: &[f64]) -> Result<EffectSizes, StatsError> {
    Ok(EffectSizes {
        d_total: d_total(marginal_effect(fit)?, fit.var_intercept, fit.var_residual)?,
        d_paired: d_paired(differences)?,
    })
}

/// InfoMotive minus InfoOnly outcome per participant having both.
pub fn paired_differences(data: &LmmData) -> Vec<f64> {
    let mut by: BTreeMap<&str, (Option<f64>, Option<f64>)> = BTreeMap::new();
    for i in 0..data.len() {
        let e = by.entry(data.participant[i].as_str()).or_default();
        match data.condition[i] {
            Condition::InfoMotive => e.0 = Some(data.y[i]),
            Condition::InfoOnly => e.1 = Some(data.y[i]),
        }
    }
    by.values()
        .filter_map(|(m, o)| Some((*m)? - (*o)?))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarryoverReport {
    pub interaction_estimate: f64,
    pub p: f64,
    pub verdict: String,
}

pub fn carryover_verdict(p: f64) -> &'static str {
    if p >= CARRYOVER_ALPHA {
        "no evidence of carryover"
    } else {
        "possible carryover"
    }
}

pub fn carryover_report(fit: &LmmFit) -> Result<CarryoverReport, StatsError> {
    require_structure(fit)?;
    let c = &fit.coefficients[3];
    Ok(CarryoverReport {
        interaction_estimate: c.estimate,
        p: c.p,
        verdict: carryover_verdict(c.p).to_string(),
    })
}

// ---------------------------------------------------------------------------
// Simulation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossoverParams {
    pub beta: [f64; 4],
    pub var_intercept: f64,
    pub var_residual: f64,
}

impl CrossoverParams {
    pub fn design_mean(&self, condition: Condition, sequence: Sequence) -> f64 {
        let info = f64::from(condition == Condition::InfoOnly);
        let ba = f64::from(sequence == Sequence::BA);
        self.beta[0] + self.beta[1] * info + self.beta[2] * ba + self.beta[3] * info * ba
    }
}

/// Balanced AB/BA dataset: the first half of participants in AB, one
/// observation per period.
pub fn simulate_crossover(n_participants: usize, params: &CrossoverParams, rng: &mut impl Rng) -> Result<LmmData, StatsError> {
    if n_participants < 2 {
        return Err(ValidationError::new("need at least two participants").into());
    }
    let u = Normal::new(0.0, params.var_intercept.max(0.0).sqrt()).map_err(|e| StatsError::Model(e.to_string()))?;
    let e = Normal::new(0.0, params.var_residual.max(0.0).sqrt()).map_err(|e| StatsError::Model(e.to_string()))?;
    let mut data = LmmData::default();
    for i in 0..n_participants {
        let seq = if i < n_participants / 2 { Sequence::AB } else { Sequence::BA };
        let ui = u.sample(rng);
        for period in [Period::A, Period::B] {
            let cond = condition_for(seq, period);
            data.push(params.design_mean(cond, seq) + ui + e.sample(rng), format!("P{}", i + 1), cond, seq);
        }
    }
    Ok(data)
}

/// Questionnaire responses whose composites follow the crossover model.
/// Items are the latent composite plus item noise, rounded and clamped.
pub fn synthesize_responses(
    n_participants: usize,
    pf: &CrossoverParams,
    ux: &CrossoverParams,
    item_sd: f64,
    rng: &mut impl Rng,
) -> Result<Vec<QuestionnaireRecord>, StatsError> {
    let noise = Normal::new(0.0, item_sd).map_err(|e| StatsError::Model(e.to_string()))?;
    let pf_data = simulate_crossover(n_participants, pf, rng)?;
    let ux_data = simulate_crossover(n_participants, ux, rng)?;
    let mut out = Vec::new();
    for i in 0..pf_data.len() {
        let seq = pf_data.sequence[i];
        let period = if i % 2 == 0 { Period::A } else { Period::B };
        let mut items = BTreeMap::new();
        for (prefix, latent) in [("PF", pf_data.y[i]), ("UX", ux_data.y[i])] {
            for j in 1..=6 {
                let v = (latent + noise.sample(rng)).round().clamp(1.0, 7.0) as i64;
                items.insert(format!("{prefix}{j}"), v);
            }
        }
        // baseline affect, collected once per period but not modelled
        let pa: f64 = rng.random_range(2.5..4.5);
        let na: f64 = rng.random_range(1.0..2.5);
        for j in 1..=5 {
            let draw = |c: f64, rng: &mut dyn rand::RngCore| (c + noise.sample(rng)).round().clamp(1.0, 5.0) as i64;
            items.insert(format!("PA{j}"), draw(pa, rng));
            items.insert(format!("NA{j}"), draw(na, rng));
        }
        out.push(QuestionnaireRecord {
            participant_id: pf_data.participant[i].clone(),
            sequence: seq,
            period,
            condition: pf_data.condition[i],
            items,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceRow {
    pub name: String,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub outcome: String,
    pub fit: LmmFit,
    pub variance_components: Vec<VarianceRow>,
    pub marginal_effect: f64,
    pub effect_sizes: Option<EffectSizes>,
    pub carryover: CarryoverReport,
}

pub fn analyze(records: &[QuestionnaireRecord], spec: &CompositeSpec) -> Result<AnalysisReport, StatsError> {
    let data = LmmData::from_composites(records, spec)?;
    let fit = fit_lmm_reml(&data)?;
    let marginal = marginal_effect(&fit)?;
    let effect_sizes = effect_sizes(&fit, &paired_differences(&data)).ok();
    Ok(AnalysisReport {
        outcome: spec.name.clone(),
        variance_components: vec![
            VarianceRow {
                name: "Group Var".into(),
                variance: fit.var_intercept,
            },
            VarianceRow {
                name: "Residual Var".into(),
                variance: fit.var_residual,
            },
        ],
        marginal_effect: marginal,
        effect_sizes,
        carryover: carryover_report(&fit)?,
        fit,
    })
}

fn stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

impl fmt::Display for AnalysisReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let fit = &self.fit;
        writeln!(f, "Outcome: {}  (REML, n = {}, groups = {})", self.outcome, fit.n_obs, fit.n_groups)?;
        writeln!(
            f,
            "{:<20} {:>12} {:>7} {:>8} {:>7}  {:>18}",
            "Parameter", "Coefficient", "SE", "z", "p", "95% CI"
        )?;
        for c in &fit.coefficients {
            writeln!(
                f,
                "{:<20} {:>12} {:>7.3} {:>8.3} {:>7.3}  [{:>7.3}, {:>7.3}]",
                c.name,
                format!("{:.3}{}", c.estimate, stars(c.p)),
                c.std_error,
                c.z,
                c.p,
                c.ci_low,
                c.ci_high
            )?;
        }
        for v in &self.variance_components {
            writeln!(f, "{:<20} {:>12.3}", v.name, v.variance)?;
        }
        writeln!(f, "Log-likelihood (REML) {:.3}", fit.log_likelihood)?;
        if fit.boundary {
            writeln!(f, "Note: random-intercept variance estimated at the zero boundary")?;
        }
        writeln!(f, "Marginal effect (InfoMotive vs InfoOnly): {:.3}", self.marginal_effect)?;
        if let Some(d) = &self.effect_sizes {
            writeln!(f, "Cohen's d (total variance): {:.3}   d (paired differences): {:.3}", d.d_total, d.d_paired)?;
        }
        write!(
            f,
            "Treatment×Sequence: {:.3} (p = {:.3}): {}",
            self.carryover.interaction_estimate, self.carryover.p, self.carryover.verdict
        )
    }
}

//! Simulation from a fitted model and probability estimation on general
//! tail regions.
//!
//! A joint-tail draw resamples an angle `w` uniformly from the stored
//! exceedance angles, draws a GPD excess at that angle, and returns
//! `(u(w) + y)·w`. Probabilities over a region `A` combine an exact
//! enumeration of the stored body points with the Monte Carlo tail fraction
//! through the law of total probability:
//!
//! ```text
//! P(X ∈ A) = (1−α)·P(X ∈ A | body) + α·P(X ∈ A | tail).
//! ```
//!
//! Regions entirely beyond the coordinate extremes of the quantile set never
//! intersect the body, so their body term is skipped exactly.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SparError};
use crate::gpd::gpd_sample_one;
use crate::matrix::Matrix;
use crate::spar::SparModel;

/// Blocks per year for weekly maxima: 365.25 / 7.
pub const WEEKLY_BLOCKS_PER_YEAR: f64 = 365.25 / 7.0;

/// Default number of joint-tail Monte Carlo draws.
pub const DEFAULT_M_TAIL: usize = 2_000_000;

/// Default number of uniform sphere probes for quantile-set extremes.
pub const DEFAULT_SPHERE_PROBES: usize = 100_000;

/// Expected tail hits below which a return period is declared unresolvable.
const MIN_EXPECTED_TAIL_HITS: f64 = 10.0;

/// Minimum acceptance rate for event-set rejection sampling.
const MIN_ACCEPTANCE_RATE: f64 = 1e-6;

/// Which marginal tail a level or return period refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TailSide {
    Upper,
    Lower,
}

/// Coordinate scale a region is expressed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scale {
    /// Original data units (positive orthant).
    Raw,
    /// Transformed, centred coordinates.
    Centred,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum RegionKind {
    MarginAbove { margin: usize, level: f64 },
    MarginBelow { margin: usize, level: f64 },
    BoxAbove { levels: Vec<f64> },
    BoxBelow { levels: Vec<f64> },
    SumAbove { level: f64 },
    SumBelow { level: f64 },
    /// Radius exceeds the threshold at its angle (the joint tail itself).
    JointTail,
    /// The whole space.
    All,
    Not(Box<RegionKind>),
}

/// Deterministic membership test over d-dimensional points, evaluated on
/// the centred scale; raw-scale predicates map points through the inverse
/// marginal transform first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionPredicate {
    scale: Scale,
    kind: RegionKind,
    body_disjoint: bool,
}

impl RegionPredicate {
    pub fn margin_above(margin: usize, level: f64, scale: Scale) -> Self {
        Self { scale, kind: RegionKind::MarginAbove { margin, level }, body_disjoint: false }
    }

    pub fn margin_below(margin: usize, level: f64, scale: Scale) -> Self {
        Self { scale, kind: RegionKind::MarginBelow { margin, level }, body_disjoint: false }
    }

    /// All margins simultaneously above their level.
    pub fn box_above(levels: Vec<f64>, scale: Scale) -> Self {
        Self { scale, kind: RegionKind::BoxAbove { levels }, body_disjoint: false }
    }

    /// All margins simultaneously below their level.
    pub fn box_below(levels: Vec<f64>, scale: Scale) -> Self {
        Self { scale, kind: RegionKind::BoxBelow { levels }, body_disjoint: false }
    }

    /// Sum of raw-scale coordinates above `level`.
    pub fn sum_above(level: f64) -> Self {
        Self { scale: Scale::Raw, kind: RegionKind::SumAbove { level }, body_disjoint: false }
    }

    /// Sum of raw-scale coordinates below `level`.
    pub fn sum_below(level: f64) -> Self {
        Self { scale: Scale::Raw, kind: RegionKind::SumBelow { level }, body_disjoint: false }
    }

    /// The joint tail `Q^c_u` itself.
    pub fn joint_tail() -> Self {
        Self { scale: Scale::Centred, kind: RegionKind::JointTail, body_disjoint: true }
    }

    /// The whole space.
    pub fn everything() -> Self {
        Self { scale: Scale::Centred, kind: RegionKind::All, body_disjoint: false }
    }

    /// Complement; never body-disjoint.
    pub fn negate(self) -> Self {
        Self { scale: self.scale, kind: RegionKind::Not(Box::new(self.kind)), body_disjoint: false }
    }

    /// Mark the region as certified disjoint from the body `Q_u`, making the
    /// probability estimate skip the (identically zero) body term.
    pub fn with_body_disjoint(mut self) -> Self {
        self.body_disjoint = true;
        self
    }

    pub fn is_body_disjoint(&self) -> bool {
        self.body_disjoint
    }

    pub fn describe(&self) -> String {
        let scale = match self.scale {
            Scale::Raw => "raw",
            Scale::Centred => "centred",
        };
        fn kind_str(k: &RegionKind) -> String {
            match k {
                RegionKind::MarginAbove { margin, level } => format!("x[{margin}] > {level}"),
                RegionKind::MarginBelow { margin, level } => format!("x[{margin}] < {level}"),
                RegionKind::BoxAbove { levels } => format!("all x[i] > {levels:?}"),
                RegionKind::BoxBelow { levels } => format!("all x[i] < {levels:?}"),
                RegionKind::SumAbove { level } => format!("sum x[i] > {level}"),
                RegionKind::SumBelow { level } => format!("sum x[i] < {level}"),
                RegionKind::JointTail => "radius exceeds threshold".into(),
                RegionKind::All => "everything".into(),
                RegionKind::Not(inner) => format!("not ({})", kind_str(inner)),
            }
        }
        format!("{} [{scale} scale]", kind_str(&self.kind))
    }

    fn kind_contains(kind: &RegionKind, x: &[f64], radius_gap: impl Fn(&[f64]) -> f64 + Copy) -> bool {
        match kind {
            RegionKind::MarginAbove { margin, level } => x[*margin] > *level,
            RegionKind::MarginBelow { margin, level } => x[*margin] < *level,
            RegionKind::BoxAbove { levels } => x.iter().zip(levels).all(|(v, l)| v > l),
            RegionKind::BoxBelow { levels } => x.iter().zip(levels).all(|(v, l)| v < l),
            RegionKind::SumAbove { level } => x.iter().sum::<f64>() > *level,
            RegionKind::SumBelow { level } => x.iter().sum::<f64>() < *level,
            RegionKind::JointTail => radius_gap(x) > 0.0,
            RegionKind::All => true,
            RegionKind::Not(inner) => !Self::kind_contains(inner, x, radius_gap),
        }
    }
}

impl SparModel {
    /// Membership of a centred point in `region`.
    pub fn region_contains(&self, region: &RegionPredicate, x_centred: &[f64]) -> Result<bool> {
        if x_centred.len() != self.dim() {
            return Err(SparError::DimensionMismatch { expected: self.dim(), got: x_centred.len() });
        }
        let radius_gap = |x: &[f64]| -> f64 {
            let r: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if r == 0.0 {
                return -1.0;
            }
            let w: Vec<f64> = x.iter().map(|v| v / r).collect();
            r - self.threshold_at(&w).unwrap_or(f64::INFINITY)
        };
        match region.scale {
            Scale::Centred => Ok(RegionPredicate::kind_contains(&region.kind, x_centred, radius_gap)),
            Scale::Raw => {
                let raw = self.transform().inverse(x_centred)?;
                Ok(RegionPredicate::kind_contains(&region.kind, &raw, radius_gap))
            }
        }
    }
}

/// Probability estimate for one region, with the return-period conversion
/// and the Monte Carlo sample sizes that produced it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TailProbabilityReport {
    pub probability: f64,
    /// `1 / (probability × blocks_per_year)`; absent when the probability
    /// is exactly zero.
    pub return_period_years: Option<f64>,
    /// Body points enumerated (0 when the region is body-disjoint).
    pub m_body: usize,
    /// Joint-tail Monte Carlo draws.
    pub m_tail: usize,
    pub region: String,
    /// Standard error of the tail Monte Carlo term.
    pub std_error: f64,
    /// True when no sampled point landed in the region, i.e. the probability
    /// is below the resolution of the sample sizes used.
    pub sub_resolution: bool,
}

/// Draw `m` points from the joint tail `Q^c_u`, on the centred scale.
pub fn simulate_tail<R: Rng + ?Sized>(model: &SparModel, m: usize, rng: &mut R) -> Result<Matrix> {
    let table = model.tail_law_table()?;
    let angles = model.exceedance_angles();
    let n_angles = angles.nrows();
    let d = model.dim();
    let mut out = Matrix::zeros(m, d);
    for i in 0..m {
        let idx = rng.random_range(0..n_angles);
        let (u, params) = &table[idx];
        let r = u + gpd_sample_one(params, rng);
        for (o, &wv) in out.row_mut(i).iter_mut().zip(angles.row(idx)) {
            *o = r * wv;
        }
    }
    Ok(out)
}

/// Uniform resample (with replacement) of the stored body points.
pub fn sample_body<R: Rng + ?Sized>(model: &SparModel, m: usize, rng: &mut R) -> Result<Matrix> {
    let body = model.body_points();
    if body.nrows() == 0 {
        return Err(SparError::EmptyBody);
    }
    let indices: Vec<usize> = (0..m).map(|_| rng.random_range(0..body.nrows())).collect();
    Ok(body.select_rows(&indices))
}

/// Probability of `region` from a freshly simulated tail sample of size
/// `m_tail` plus exact body enumeration.
pub fn estimate_probability<R: Rng + ?Sized>(
    model: &SparModel,
    region: &RegionPredicate,
    m_tail: usize,
    blocks_per_year: f64,
    rng: &mut R,
) -> Result<TailProbabilityReport> {
    let tail = simulate_tail(model, m_tail, rng)?;
    estimate_probability_with_sample(model, region, &tail, blocks_per_year)
}

/// Probability of `region` reusing an existing tail sample. Estimates for a
/// region and its complement from the same sample sum to exactly one.
pub fn estimate_probability_with_sample(
    model: &SparModel,
    region: &RegionPredicate,
    tail_sample: &Matrix,
    blocks_per_year: f64,
) -> Result<TailProbabilityReport> {
    let alpha = model.alpha();
    let m_tail = tail_sample.nrows();
    let mut tail_hits = 0usize;
    for t in 0..m_tail {
        if model.region_contains(region, tail_sample.row(t))? {
            tail_hits += 1;
        }
    }
    let tail_frac = tail_hits as f64 / m_tail as f64;

    let (body_frac, m_body) = if region.is_body_disjoint() {
        (0.0, 0)
    } else {
        let body = model.body_points();
        let mut hits = 0usize;
        for t in 0..body.nrows() {
            if model.region_contains(region, body.row(t))? {
                hits += 1;
            }
        }
        (hits as f64 / body.nrows() as f64, body.nrows())
    };

    let probability = (1.0 - alpha) * body_frac + alpha * tail_frac;
    let std_error = alpha * (tail_frac * (1.0 - tail_frac) / m_tail as f64).sqrt();
    Ok(TailProbabilityReport {
        probability,
        return_period_years: if probability > 0.0 {
            Some(1.0 / (probability * blocks_per_year))
        } else {
            None
        },
        m_body,
        m_tail,
        region: region.describe(),
        std_error,
        sub_resolution: probability == 0.0,
    })
}

/// Coordinate-wise maxima and minima of the quantile set boundary:
/// `q_i^M = max_w w_i·u(w)` and `q_i^m = min_w w_i·u(w)` over the probes.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileSetExtremes {
    pub q_max: Vec<f64>,
    pub q_min: Vec<f64>,
}

/// Evaluate the extremes over an explicit probe set of unit angles.
pub fn quantile_set_extremes(model: &SparModel, probe_angles: &Matrix) -> Result<QuantileSetExtremes> {
    if probe_angles.nrows() == 0 {
        return Err(SparError::InsufficientData { context: "quantile_set_extremes", needed: 1, got: 0 });
    }
    let d = model.dim();
    let u = model.threshold_net().forward_batch(probe_angles)?;
    let mut q_max = vec![f64::NEG_INFINITY; d];
    let mut q_min = vec![f64::INFINITY; d];
    for t in 0..probe_angles.nrows() {
        let ut = u.row(t)[0];
        for (i, &wi) in probe_angles.row(t).iter().enumerate() {
            let v = wi * ut;
            if v > q_max[i] {
                q_max[i] = v;
            }
            if v < q_min[i] {
                q_min[i] = v;
            }
        }
    }
    Ok(QuantileSetExtremes { q_max, q_min })
}

/// Stored exceedance angles plus `n_sphere` uniform directions.
pub fn default_probe_angles<R: Rng + ?Sized>(model: &SparModel, n_sphere: usize, rng: &mut R) -> Matrix {
    let d = model.dim();
    let stored = model.exceedance_angles();
    let mut probes = Matrix::zeros(stored.nrows() + n_sphere, d);
    for t in 0..stored.nrows() {
        probes.row_mut(t).copy_from_slice(stored.row(t));
    }
    for t in 0..n_sphere {
        loop {
            let row = probes.row_mut(stored.nrows() + t);
            let mut norm2 = 0.0;
            for v in row.iter_mut() {
                *v = rng.sample(rand_distr::StandardNormal);
                norm2 += *v * *v;
            }
            if norm2 > 1e-24 {
                let norm = norm2.sqrt();
                row.iter_mut().for_each(|v| *v /= norm);
                break;
            }
        }
    }
    probes
}

/// Certify that `region` cannot intersect the body `Q_u`, from the quantile
/// set's coordinate extremes. Conservative: `false` means "unknown".
pub fn certify_body_disjoint(
    model: &SparModel,
    region: &RegionPredicate,
    extremes: &QuantileSetExtremes,
) -> Result<bool> {
    let t = model.transform();
    // centred-scale image of a raw-scale level on one margin (the forward
    // map acts margin-wise); None when the raw level is not positive
    let to_centred = |i: usize, level: f64| -> Result<Option<f64>> {
        match region.scale {
            Scale::Centred => Ok(Some(level)),
            Scale::Raw if level > 0.0 => {
                let mut raw = vec![1.0; t.dim()];
                raw[i] = level;
                Ok(Some(t.forward(&raw)?[i]))
            }
            Scale::Raw => Ok(None),
        }
    };
    let ok = match &region.kind {
        RegionKind::MarginAbove { margin, level } => {
            matches!(to_centred(*margin, *level)?, Some(c) if c > extremes.q_max[*margin])
        }
        RegionKind::MarginBelow { margin, level } => {
            matches!(to_centred(*margin, *level)?, Some(c) if c < extremes.q_min[*margin])
        }
        // a box is disjoint as soon as one of its marginal constraints is
        RegionKind::BoxAbove { levels } => {
            let mut any = false;
            for (i, &l) in levels.iter().enumerate() {
                if matches!(to_centred(i, l)?, Some(c) if c > extremes.q_max[i]) {
                    any = true;
                }
            }
            any
        }
        RegionKind::BoxBelow { levels } => {
            let mut any = false;
            for (i, &l) in levels.iter().enumerate() {
                if matches!(to_centred(i, l)?, Some(c) if c < extremes.q_min[i]) {
                    any = true;
                }
            }
            any
        }
        RegionKind::SumAbove { level } => {
            // every body point has raw_i ≤ inverse(q_i^M)
            let mut bound = 0.0;
            for i in 0..model.dim() {
                let mut centred = vec![0.0; model.dim()];
                centred[i] = extremes.q_max[i];
                bound += t.inverse(&centred)?[i];
            }
            *level > bound
        }
        RegionKind::SumBelow { level } => {
            let mut bound = 0.0;
            for i in 0..model.dim() {
                let mut centred = vec![0.0; model.dim()];
                centred[i] = extremes.q_min[i];
                bound += t.inverse(&centred)?[i];
            }
            *level < bound
        }
        RegionKind::JointTail => true,
        RegionKind::All | RegionKind::Not(_) => false,
    };
    Ok(ok)
}

/// Weighted body+tail sample per margin, sorted once, queried for any number
/// of return periods.
struct MarginQuantileSampler {
    /// (value, weight) sorted ascending by value, per margin.
    sorted: Vec<Vec<(f64, f64)>>,
}

impl MarginQuantileSampler {
    fn build<R: Rng + ?Sized>(model: &SparModel, m_tail: usize, rng: &mut R) -> Result<(Self, usize)> {
        let alpha = model.alpha();
        let m_body = (m_tail as f64 / (1.0 - alpha)).ceil() as usize;
        let body = sample_body(model, m_body, rng)?;
        let tail = simulate_tail(model, m_tail, rng)?;
        let body_raw = model.transform().inverse_matrix(&body)?;
        let tail_raw = model.transform().inverse_matrix(&tail)?;
        let d = model.dim();
        let w_body = (1.0 - alpha) / m_body as f64;
        let w_tail = alpha / m_tail as f64;
        let mut sorted = Vec::with_capacity(d);
        for i in 0..d {
            let mut vals: Vec<(f64, f64)> = Vec::with_capacity(m_body + m_tail);
            for t in 0..m_body {
                vals.push((body_raw.row(t)[i], w_body));
            }
            for t in 0..m_tail {
                vals.push((tail_raw.row(t)[i], w_tail));
            }
            vals.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
            sorted.push(vals);
        }
        Ok((Self { sorted }, m_body))
    }

    /// Level with weighted tail mass `p` on the given side: smallest `x`
    /// with `P(X > x) ≤ p` (upper) or `P(X < x) ≥ p` inverted (lower),
    /// linearly interpolated on the weighted CDF.
    fn level(&self, margin: usize, p: f64, side: TailSide) -> f64 {
        let vals = &self.sorted[margin];
        let mut cum = 0.0;
        let mut prev_v = match side {
            TailSide::Upper => vals[vals.len() - 1].0,
            TailSide::Lower => vals[0].0,
        };
        let mut prev_cum = 0.0;
        let iter: Box<dyn Iterator<Item = &(f64, f64)>> = match side {
            TailSide::Upper => Box::new(vals.iter().rev()),
            TailSide::Lower => Box::new(vals.iter()),
        };
        for &(v, w) in iter {
            cum += w;
            if cum >= p {
                let span = cum - prev_cum;
                let frac = if span > 0.0 { (p - prev_cum) / span } else { 1.0 };
                return prev_v + frac * (v - prev_v);
            }
            prev_v = v;
            prev_cum = cum;
        }
        prev_v
    }
}

fn check_resolution(alpha: f64, p: f64, m_tail: usize) -> Result<()> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(SparError::ParamDomain(format!("tail probability {p} outside (0, 1]")));
    }
    if p < alpha {
        let expected_hits = p / alpha * m_tail as f64;
        if expected_hits < MIN_EXPECTED_TAIL_HITS {
            let required = (MIN_EXPECTED_TAIL_HITS * alpha / p).ceil() as usize;
            return Err(SparError::Resolution { m_tail, required_m_tail: required });
        }
    }
    Ok(())
}

/// Raw-scale `N`-year return levels for every margin, from one combined
/// body+tail sample: `⌈m_tail/(1−α)⌉` body resamples and `m_tail` tail
/// draws, weighted `(1−α)` and `α` respectively.
pub fn marginal_return_level<R: Rng + ?Sized>(
    model: &SparModel,
    n_years: f64,
    side: TailSide,
    blocks_per_year: f64,
    m_tail: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let levels = marginal_return_levels(model, &[n_years], side, blocks_per_year, m_tail, rng)?;
    Ok(levels.into_iter().next().unwrap())
}

/// [`marginal_return_level`] for several periods sharing one simulation;
/// returns `levels[period][margin]`.
pub fn marginal_return_levels<R: Rng + ?Sized>(
    model: &SparModel,
    periods_years: &[f64],
    side: TailSide,
    blocks_per_year: f64,
    m_tail: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    if !(blocks_per_year > 0.0) {
        return Err(SparError::ParamDomain("blocks_per_year must be positive".into()));
    }
    for &n in periods_years {
        if !(n > 0.0) {
            return Err(SparError::ParamDomain(format!("return period {n} must be positive")));
        }
        check_resolution(model.alpha(), (n * blocks_per_year).recip().min(1.0), m_tail)?;
    }
    let (sampler, _m_body) = MarginQuantileSampler::build(model, m_tail, rng)?;
    let d = model.dim();
    Ok(periods_years
        .iter()
        .map(|&n| {
            let p = (n * blocks_per_year).recip().min(1.0);
            (0..d).map(|i| sampler.level(i, p, side)).collect()
        })
        .collect())
}

/// Probability that all margins are simultaneously beyond their `N`-year
/// return level (above for `Upper`, below for `Lower`).
pub fn joint_tail_probability<R: Rng + ?Sized>(
    model: &SparModel,
    n_years: f64,
    side: TailSide,
    blocks_per_year: f64,
    m_tail: usize,
    rng: &mut R,
) -> Result<TailProbabilityReport> {
    let levels = marginal_return_level(model, n_years, side, blocks_per_year, m_tail, rng)?;
    let mut region = match side {
        TailSide::Upper => RegionPredicate::box_above(levels, Scale::Raw),
        TailSide::Lower => RegionPredicate::box_below(levels, Scale::Raw),
    };
    let extremes = quantile_set_extremes(
        model,
        &default_probe_angles(model, DEFAULT_SPHERE_PROBES, rng),
    )?;
    if certify_body_disjoint(model, &region, &extremes)? {
        region = region.with_body_disjoint();
    }
    estimate_probability(model, &region, m_tail, blocks_per_year, rng)
}

/// Probability that the raw-scale coordinate sum lies beyond `s`.
pub fn sum_tail_probability<R: Rng + ?Sized>(
    model: &SparModel,
    s: f64,
    side: TailSide,
    blocks_per_year: f64,
    m_tail: usize,
    rng: &mut R,
) -> Result<TailProbabilityReport> {
    let mut region = match side {
        TailSide::Upper => RegionPredicate::sum_above(s),
        TailSide::Lower => RegionPredicate::sum_below(s),
    };
    let extremes = quantile_set_extremes(
        model,
        &default_probe_angles(model, DEFAULT_SPHERE_PROBES, rng),
    )?;
    if certify_body_disjoint(model, &region, &extremes)? {
        region = region.with_body_disjoint();
    }
    estimate_probability(model, &region, m_tail, blocks_per_year, rng)
}

/// Raw-scale event set: joint-tail draws rejection-sampled into `region`
/// (or unconditioned tail draws when `region` is `None`).
pub fn generate_event_set<R: Rng + ?Sized>(
    model: &SparModel,
    m: usize,
    region: Option<&RegionPredicate>,
    rng: &mut R,
) -> Result<Matrix> {
    let d = model.dim();
    let mut accepted = Matrix::zeros(0, d);
    let mut drawn = 0usize;
    let chunk = 65_536.min(m.max(1024));
    let budget_floor = 2_000_000usize;
    let hard_cap = budget_floor.max((m as f64 / MIN_ACCEPTANCE_RATE).ceil() as usize);
    while accepted.nrows() < m {
        let batch = simulate_tail(model, chunk, rng)?;
        drawn += chunk;
        for t in 0..batch.nrows() {
            if accepted.nrows() >= m {
                break;
            }
            let keep = match region {
                None => true,
                Some(reg) => model.region_contains(reg, batch.row(t))?,
            };
            if keep {
                accepted.push_row(batch.row(t))?;
            }
        }
        let rate = accepted.nrows() as f64 / drawn as f64;
        if drawn >= budget_floor && rate < MIN_ACCEPTANCE_RATE || drawn >= hard_cap {
            if accepted.nrows() < m {
                return Err(SparError::InfeasibleRegion { min_rate: MIN_ACCEPTANCE_RATE, trials: drawn });
            }
        }
    }
    model.transform().inverse_matrix(&accepted)
}

//! Goodness-of-fit diagnostic data generators: the GPD QQ transform of
//! radial exceedances, marginal QQ within the joint tail, pairwise `χ(u)`
//! dependence curves, and return-level comparison curves. All outputs are
//! plain sorted data; rendering is left to external tools.

use rand::Rng;

use crate::dataio::ObservationMatrix;
use crate::error::{Result, SparError};
use crate::inference::{marginal_return_levels, simulate_tail, TailSide};
use crate::preprocess::{to_polar, PolarSample};
use crate::spar::SparModel;
use crate::stats::{ordinal_ranks, quantile_type7_sorted};

/// Rank grid `u ∈ {0.80, 0.81, …, 0.99}`.
pub fn default_u_grid() -> Vec<f64> {
    (0..20).map(|k| 0.80 + k as f64 * 0.01).collect()
}

/// Paired quantiles for one QQ comparison; both vectors sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct QqData {
    pub label: String,
    pub empirical_quantiles: Vec<f64>,
    pub model_quantiles: Vec<f64>,
}

impl QqData {
    fn new(label: String, empirical: Vec<f64>, model: Vec<f64>) -> Result<Self> {
        if empirical.len() != model.len() {
            return Err(SparError::ShapeMismatch { expected: empirical.len(), got: model.len() });
        }
        let sorted = |v: &[f64]| v.windows(2).all(|w| w[0] <= w[1]);
        if !sorted(&empirical) || !sorted(&model) || empirical.iter().any(|v| !v.is_finite()) {
            return Err(SparError::InvalidModel("QQ vectors must be finite and sorted".into()));
        }
        Ok(Self { label, empirical_quantiles: empirical, model_quantiles: model })
    }

    pub fn len(&self) -> usize {
        self.empirical_quantiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.empirical_quantiles.is_empty()
    }
}

/// Pairwise upper-tail dependence estimates
/// `χ̂(u) = #{F̂₁(x) > u ∧ F̂₂(y) > u} / #{F̂₁(x) > u}`; `None` marks grid
/// points with an empty conditioning set.
#[derive(Debug, Clone, PartialEq)]
pub struct ChiCurve {
    pub label: String,
    pub u_grid: Vec<f64>,
    pub chi: Vec<Option<f64>>,
}

/// GPD QQ data: every radial exceedance is mapped to the standard
/// exponential scale through the fitted angle-dependent parameters and
/// paired with exponential plotting positions `−ln(1 − k/(n+1))`.
/// Observations beyond a fitted finite endpoint are capped, keeping the
/// output finite.
pub fn gpd_qq(model: &SparModel, polar: &PolarSample) -> Result<QqData> {
    if polar.dim() != model.dim() {
        return Err(SparError::DimensionMismatch { expected: model.dim(), got: polar.dim() });
    }
    let u = model.threshold_net().forward_batch(polar.angles())?;
    let mut transformed = Vec::new();
    for t in 0..polar.len() {
        let ut = u.row(t)[0];
        if polar.radii()[t] <= ut {
            continue;
        }
        let params = model.gpd_params_at(polar.angles().row(t))?;
        let cdf = crate::gpd::gpd_cdf(polar.radii()[t] - ut, &params)?.min(1.0 - 1e-12);
        transformed.push(-(-cdf).ln_1p());
    }
    if transformed.len() < 20 {
        return Err(SparError::InsufficientData {
            context: "gpd_qq",
            needed: 20,
            got: transformed.len(),
        });
    }
    transformed.sort_unstable_by(f64::total_cmp);
    let n = transformed.len();
    let theoretical: Vec<f64> =
        (1..=n).map(|k| -(-(k as f64 / (n + 1) as f64)).ln_1p()).collect();
    QqData::new("radial".into(), transformed, theoretical)
}

/// Empirical `χ(u)` for one pair of series; ranks are ordinal with ties
/// broken by index, pseudo-uniforms `rank/(n+1)`.
pub fn chi_curve(x: &[f64], y: &[f64], u_grid: &[f64], label: &str) -> Result<ChiCurve> {
    if x.len() != y.len() {
        return Err(SparError::ShapeMismatch { expected: x.len(), got: y.len() });
    }
    if x.len() < 100 {
        return Err(SparError::InsufficientData { context: "chi_curve", needed: 100, got: x.len() });
    }
    let n = x.len();
    let fx: Vec<f64> = ordinal_ranks(x).iter().map(|&r| r as f64 / (n + 1) as f64).collect();
    let fy: Vec<f64> = ordinal_ranks(y).iter().map(|&r| r as f64 / (n + 1) as f64).collect();
    let chi = u_grid
        .iter()
        .map(|&u| {
            let mut cond = 0usize;
            let mut both = 0usize;
            for i in 0..n {
                if fx[i] > u {
                    cond += 1;
                    if fy[i] > u {
                        both += 1;
                    }
                }
            }
            if cond == 0 {
                None
            } else {
                Some(both as f64 / cond as f64)
            }
        })
        .collect();
    Ok(ChiCurve { label: label.to_string(), u_grid: u_grid.to_vec(), chi })
}

/// `χ(u)` for the chosen tail; the lower tail negates both series and
/// applies the upper-tail estimator.
pub fn chi_curve_tail(
    x: &[f64],
    y: &[f64],
    u_grid: &[f64],
    side: TailSide,
    label: &str,
) -> Result<ChiCurve> {
    match side {
        TailSide::Upper => chi_curve(x, y, u_grid, label),
        TailSide::Lower => {
            let nx: Vec<f64> = x.iter().map(|v| -v).collect();
            let ny: Vec<f64> = y.iter().map(|v| -v).collect();
            chi_curve(&nx, &ny, u_grid, label)
        }
    }
}

/// Marginal QQ in the joint tail: observed rows inside `Q^c_u` against a
/// large simulated tail sample, both on the raw scale, paired on the grid
/// `k/(K+1)` with `K` observed tail rows.
pub fn marginal_qq_tail<R: Rng + ?Sized>(
    model: &SparModel,
    observed: &ObservationMatrix,
    margin: usize,
    m_tail: usize,
    rng: &mut R,
) -> Result<QqData> {
    if margin >= model.dim() {
        return Err(SparError::ParamDomain(format!(
            "margin {margin} out of range for d={}",
            model.dim()
        )));
    }
    if observed.dim() != model.dim() {
        return Err(SparError::DimensionMismatch { expected: model.dim(), got: observed.dim() });
    }
    let centred = model.transform().forward_matrix(observed.values())?;
    let polar = to_polar(&centred)?;
    let u = model.threshold_net().forward_batch(polar.angles())?;
    let mut observed_tail: Vec<f64> = (0..polar.len())
        .filter(|&t| polar.radii()[t] > u.row(t)[0])
        .map(|t| observed.values().row(t)[margin])
        .collect();
    if observed_tail.len() < 20 {
        return Err(SparError::InsufficientData {
            context: "marginal_qq_tail",
            needed: 20,
            got: observed_tail.len(),
        });
    }
    observed_tail.sort_unstable_by(f64::total_cmp);

    let sim = simulate_tail(model, m_tail, rng)?;
    let sim_raw = model.transform().inverse_matrix(&sim)?;
    let mut sim_margin = sim_raw.column(margin);
    sim_margin.sort_unstable_by(f64::total_cmp);

    let k = observed_tail.len();
    let model_q: Vec<f64> = (1..=k)
        .map(|j| quantile_type7_sorted(&sim_margin, j as f64 / (k + 1) as f64))
        .collect();
    QqData::new(observed.site_names()[margin].clone(), observed_tail, model_q)
}

/// One point of a return-level comparison curve.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnLevelPoint {
    pub period_years: f64,
    pub model_level: f64,
    /// Empirical order-statistic level, absent when the period exceeds the
    /// observed record length.
    pub empirical_level: Option<f64>,
}

/// Model and empirical return levels for one margin and tail side.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnLevelCurve {
    pub site: String,
    pub side: TailSide,
    pub points: Vec<ReturnLevelPoint>,
}

/// Return-level comparison for every margin over `periods` (years, sorted
/// ascending). Model levels come from one combined body+tail simulation;
/// empirical levels from order statistics of the observed block maxima
/// where the record is long enough.
pub fn return_level_curve<R: Rng + ?Sized>(
    model: &SparModel,
    observed: &ObservationMatrix,
    periods: &[f64],
    side: TailSide,
    blocks_per_year: f64,
    m_tail: usize,
    rng: &mut R,
) -> Result<Vec<ReturnLevelCurve>> {
    if periods.is_empty() || periods.windows(2).any(|w| w[0] >= w[1]) || periods[0] <= 0.0 {
        return Err(SparError::ParamDomain("periods must be positive and strictly increasing".into()));
    }
    if observed.dim() != model.dim() {
        return Err(SparError::DimensionMismatch { expected: model.dim(), got: observed.dim() });
    }
    let model_levels = marginal_return_levels(model, periods, side, blocks_per_year, m_tail, rng)?;
    let n_obs = observed.nrows();
    let mut curves = Vec::with_capacity(model.dim());
    for i in 0..model.dim() {
        let mut col = observed.values().column(i);
        col.sort_unstable_by(f64::total_cmp);
        let points = periods
            .iter()
            .enumerate()
            .map(|(pi, &n_years)| {
                let p = (n_years * blocks_per_year).recip();
                let empirical = if p * n_obs as f64 >= 1.0 {
                    Some(match side {
                        TailSide::Upper => quantile_type7_sorted(&col, 1.0 - p),
                        TailSide::Lower => quantile_type7_sorted(&col, p),
                    })
                } else {
                    None
                };
                ReturnLevelPoint {
                    period_years: n_years,
                    model_level: model_levels[pi][i],
                    empirical_level: empirical,
                }
            })
            .collect();
        curves.push(ReturnLevelCurve { site: observed.site_names()[i].clone(), side, points });
    }
    Ok(curves)
}

//! Two-stage angular-radial fit.
//!
//! Stage one trains a threshold network `u(w)` by quantile regression of the
//! radius on the angle at exceedance level `α`, minimising the tilted loss
//! `ρ_{1−α}(r − u)` with `ρ_q(t) = t(q − 𝟙{t<0})`. Stage two selects the
//! radial exceedances `r_t > u(w_t)` and fits a shared-trunk network with
//! two heads for the GPD parameters of the excesses by maximum likelihood.
//! Under the orthogonal reparametrisation the heads emit `(ν, ξ)` with
//! `σ = ν/(1+ξ)`, which decorrelates the two parameter estimates; the
//! direct `(σ, ξ)` parametrisation is kept for comparison.
//!
//! The GPD loss surface is irregular where negative shapes put observations
//! near the support endpoint, so the shape head starts at a small positive
//! constant and training restarts from the last finite checkpoint with a
//! reduced learning rate whenever the loss diverges.

use serde::{Deserialize, Serialize};

use crate::dataio::ObservationMatrix;
use crate::error::{Result, SparError};
use crate::gpd::{GpdParams, XI_SWITCH_TOL};
use crate::matrix::Matrix;
use crate::neural::{
    mlp_init, train, Architecture, BatchSize, Head, Loss, MlpParams, TrainSchedule,
};
use crate::preprocess::{fit_transform, to_polar, MarginalTransform, PolarSample};
use crate::seeds;

/// Serialized model format version.
pub const FORMAT_VERSION: u32 = 1;

/// Tolerance on the training exceedance fraction around `alpha`.
pub const EXCEEDANCE_FRACTION_TOL: f64 = 0.02;

/// Minimum observations required to fit the threshold network.
pub const MIN_THRESHOLD_POINTS: usize = 500;

/// Minimum threshold exceedances required to fit the GPD network.
pub const MIN_GPD_EXCEEDANCES: usize = 200;

/// GPD head parametrisation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Reparam {
    /// Heads emit `(ν, ξ)` with `σ = ν/(1+ξ)`.
    Orthogonal,
    /// Heads emit `(σ, ξ)` directly.
    Direct,
}

/// Configuration of a full two-stage fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparConfig {
    pub alpha: f64,
    pub threshold_arch: Architecture,
    pub gpd_arch: Architecture,
    pub threshold_schedule: TrainSchedule,
    pub gpd_schedule: TrainSchedule,
    pub reparam: Reparam,
    pub seed: u64,
}

impl SparConfig {
    /// Paper-scale defaults: `α = 0.15`, two 3×32 ReLU networks, Adam down
    /// to 5e−5 with halving on stalls; threshold stage 500 epochs at batch
    /// 1024 from rate 1e−3, GPD stage 750 full-batch epochs from 3e−3.
    pub fn new(seed: u64) -> Self {
        let base = TrainSchedule {
            initial_lr: 1e-3,
            min_lr: 5e-5,
            lr_decay_factor: 0.5,
            max_epochs: 500,
            batch_size: BatchSize::Fixed(1024),
            patience: 5,
            validation_fraction: 0.1,
            seed: seeds::derive(seed, 1),
        };
        SparConfig {
            alpha: 0.15,
            threshold_arch: Architecture::new(vec![32, 32, 32]),
            gpd_arch: Architecture::new(vec![32, 32, 32]),
            threshold_schedule: base.clone(),
            // a full-batch epoch is a single optimizer step: the stall
            // patience counts steps, and the higher starting rate lets the
            // shape head cover its range within the epoch budget
            gpd_schedule: TrainSchedule {
                initial_lr: 3e-3,
                max_epochs: 750,
                batch_size: BatchSize::Full,
                patience: 75,
                seed: seeds::derive(seed, 2),
                ..base
            },
            reparam: Reparam::Orthogonal,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            return Err(SparError::ParamDomain(format!("alpha must lie in (0, 0.5), got {}", self.alpha)));
        }
        self.threshold_schedule.validate()?;
        self.gpd_schedule.validate()
    }
}

/// Tilted (pinball) loss `ρ_{1−α}(r − u)`; its minimiser in `u` is the
/// conditional `(1−α)`-quantile of `r`.
pub fn tilted_loss(r: f64, u_val: f64, alpha: f64) -> f64 {
    let t = r - u_val;
    t * (1.0 - alpha - if t < 0.0 { 1.0 } else { 0.0 })
}

/// Subgradient of [`tilted_loss`] in `u_val`; the tie `r = u_val` takes the
/// lower branch.
pub fn tilted_loss_grad_u(r: f64, u_val: f64, alpha: f64) -> f64 {
    if r > u_val {
        alpha - 1.0
    } else {
        alpha
    }
}

/// GPD negative log-likelihood of one excess with analytic gradient in the
/// two head outputs under `reparam`. Outside the support the value is `+∞`
/// (a legal training signal consumed by the restart rule).
pub fn gpd_nll(excess: f64, out1: f64, out2: f64, reparam: Reparam) -> (f64, f64, f64) {
    let (sigma, xi) = match reparam {
        Reparam::Direct => (out1, out2),
        Reparam::Orthogonal => (out1 / (1.0 + out2), out2),
    };
    let y = excess;
    let (value, d_sigma, d_xi) = if xi.abs() < XI_SWITCH_TOL {
        // Taylor-consistent limit of −ln h: ln σ + z + ξ(z − z²/2)
        let z = y / sigma;
        (
            sigma.ln() + z + xi * (z - 0.5 * z * z),
            (1.0 - z - xi * z + xi * z * z) / sigma,
            z - 0.5 * z * z,
        )
    } else {
        let t = 1.0 + xi * y / sigma;
        if t <= 0.0 {
            return (f64::INFINITY, 0.0, 0.0);
        }
        let log_t = (xi * y / sigma).ln_1p();
        let value = sigma.ln() + (1.0 / xi + 1.0) * log_t;
        let d_sigma = 1.0 / sigma - (1.0 + xi) * y / (sigma * sigma * t);
        let d_xi = -log_t / (xi * xi) + (1.0 / xi + 1.0) * (y / sigma) / t;
        (value, d_sigma, d_xi)
    };
    match reparam {
        Reparam::Direct => (value, d_sigma, d_xi),
        Reparam::Orthogonal => {
            let nu = out1;
            let one_plus_xi = 1.0 + xi;
            let d_nu = d_sigma / one_plus_xi;
            let d_xi_total = d_xi - d_sigma * nu / (one_plus_xi * one_plus_xi);
            (value, d_nu, d_xi_total)
        }
    }
}

struct ThresholdLoss {
    alpha: f64,
}

impl Loss for ThresholdLoss {
    fn eval(&self, outputs: &[f64], target: f64) -> f64 {
        tilted_loss(target, outputs[0], self.alpha)
    }

    fn grad(&self, outputs: &[f64], target: f64, grad: &mut [f64]) {
        grad[0] = tilted_loss_grad_u(target, outputs[0], self.alpha);
    }
}

struct GpdRegressionLoss {
    reparam: Reparam,
}

impl Loss for GpdRegressionLoss {
    fn eval(&self, outputs: &[f64], target: f64) -> f64 {
        gpd_nll(target, outputs[0], outputs[1], self.reparam).0
    }

    fn grad(&self, outputs: &[f64], target: f64, grad: &mut [f64]) {
        let (_, d1, d2) = gpd_nll(target, outputs[0], outputs[1], self.reparam);
        grad[0] = d1;
        grad[1] = d2;
    }
}

/// Train the threshold network `u(w)` on `(w_t, r_t)` at level `cfg.alpha`.
/// The output head starts at the marginal `(1−α)` radius quantile, so the
/// network opens calibrated and only learns the angular shape.
pub fn fit_threshold(polar: &PolarSample, cfg: &SparConfig) -> Result<MlpParams> {
    cfg.validate()?;
    if polar.len() < MIN_THRESHOLD_POINTS {
        return Err(SparError::InsufficientData {
            context: "fit_threshold",
            needed: MIN_THRESHOLD_POINTS,
            got: polar.len(),
        });
    }
    let mut net = mlp_init(
        polar.dim(),
        &cfg.threshold_arch,
        &[Head::Exponential],
        seeds::derive(cfg.seed, 10),
        false,
    );
    let mut radii = polar.radii().to_vec();
    radii.sort_unstable_by(f64::total_cmp);
    let k = ((1.0 - cfg.alpha) * (radii.len() - 1) as f64).round() as usize;
    net.reset_output_unit(0, radii[k].ln());
    let loss = ThresholdLoss { alpha: cfg.alpha };
    let out = train(net, polar.angles(), polar.radii(), &loss, &cfg.threshold_schedule)?;
    log::info!(
        "threshold fit: {} epochs, best validation tilted loss {:.6}, final lr {:.2e}",
        out.history.len(),
        out.best_val_loss,
        out.final_lr
    );
    Ok(out.params)
}

/// Select exceedances above the fitted threshold and train the GPD network
/// on the excesses.
pub fn fit_gpd(polar: &PolarSample, threshold_net: &MlpParams, cfg: &SparConfig) -> Result<MlpParams> {
    cfg.validate()?;
    let u = threshold_net.forward_batch(polar.angles())?;
    let idx: Vec<usize> =
        (0..polar.len()).filter(|&t| polar.radii()[t] > u.row(t)[0]).collect();
    if idx.len() < MIN_GPD_EXCEEDANCES {
        return Err(SparError::InsufficientData {
            context: "fit_gpd",
            needed: MIN_GPD_EXCEEDANCES,
            got: idx.len(),
        });
    }
    let inputs = polar.angles().select_rows(&idx);
    let targets: Vec<f64> = idx.iter().map(|&t| polar.radii()[t] - u.row(t)[0]).collect();
    let mut net = mlp_init(
        polar.dim(),
        &cfg.gpd_arch,
        &[Head::Exponential, Head::ScaledTangent],
        seeds::derive(cfg.seed, 11),
        true,
    );
    // warm-start the scale head at the exponential-fit estimate
    // σ₀ = mean excess, matching the constant shape start ξ₀ = atan(0.1)/π
    let mean_excess = targets.iter().sum::<f64>() / targets.len() as f64;
    let xi0 = crate::neural::SHAPE_HEAD_INIT_BIAS.atan() / std::f64::consts::PI;
    let scale0 = match cfg.reparam {
        Reparam::Direct => mean_excess,
        Reparam::Orthogonal => mean_excess * (1.0 + xi0),
    };
    net.reset_output_unit(0, scale0.ln());
    let loss = GpdRegressionLoss { reparam: cfg.reparam };
    let out = train(net, &inputs, &targets, &loss, &cfg.gpd_schedule)?;
    log::info!(
        "gpd fit: {} exceedances, {} epochs, best validation nll {:.6}, final lr {:.2e}",
        idx.len(),
        out.history.len(),
        out.best_val_loss,
        out.final_lr
    );
    Ok(out.params)
}

/// A fitted SPAR model: the marginal transform, both networks, the stored
/// exceedance angles (empirical angular density) and body observations, and
/// the exceedance level. The unit of serialization, simulation, and
/// inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparModel {
    format_version: u32,
    dim: usize,
    alpha: f64,
    reparam: Reparam,
    transform: MarginalTransform,
    threshold_net: MlpParams,
    gpd_net: MlpParams,
    exceedance_angles: Matrix,
    body_points: Matrix,
}

impl SparModel {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn reparam(&self) -> Reparam {
        self.reparam
    }

    pub fn transform(&self) -> &MarginalTransform {
        &self.transform
    }

    pub fn threshold_net(&self) -> &MlpParams {
        &self.threshold_net
    }

    pub fn gpd_net(&self) -> &MlpParams {
        &self.gpd_net
    }

    pub fn exceedance_angles(&self) -> &Matrix {
        &self.exceedance_angles
    }

    pub fn body_points(&self) -> &Matrix {
        &self.body_points
    }

    /// Fraction of training radii above the fitted threshold.
    pub fn exceedance_fraction(&self) -> f64 {
        let n_exc = self.exceedance_angles.nrows() as f64;
        n_exc / (n_exc + self.body_points.nrows() as f64)
    }

    /// Threshold `u(w)` at a unit angle.
    pub fn threshold_at(&self, w: &[f64]) -> Result<f64> {
        Ok(self.threshold_net.forward(w)?[0])
    }

    /// GPD parameters `(σ(w), ξ(w))` at a unit angle.
    pub fn gpd_params_at(&self, w: &[f64]) -> Result<GpdParams> {
        let out = self.gpd_net.forward(w)?;
        self.heads_to_params(out[0], out[1])
    }

    fn heads_to_params(&self, out1: f64, out2: f64) -> Result<GpdParams> {
        match self.reparam {
            Reparam::Direct => GpdParams::new(out1, out2),
            Reparam::Orthogonal => GpdParams::new(out1 / (1.0 + out2), out2),
        }
    }

    /// `(u(w), GpdParams(w))` in one pass.
    pub fn tail_law_at(&self, w: &[f64]) -> Result<(f64, GpdParams)> {
        Ok((self.threshold_at(w)?, self.gpd_params_at(w)?))
    }

    /// Threshold and GPD parameters for every stored exceedance angle, in
    /// storage order; the per-angle lookup table behind tail simulation.
    pub fn tail_law_table(&self) -> Result<Vec<(f64, GpdParams)>> {
        let u = self.threshold_net.forward_batch(&self.exceedance_angles)?;
        let heads = self.gpd_net.forward_batch(&self.exceedance_angles)?;
        (0..self.exceedance_angles.nrows())
            .map(|t| Ok((u.row(t)[0], self.heads_to_params(heads.row(t)[0], heads.row(t)[1])?)))
            .collect()
    }

    /// Check all structural invariants; run after deserialization and at the
    /// end of a fit.
    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(SparError::InvalidModel(format!(
                "unsupported format version {}",
                self.format_version
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            return Err(SparError::InvalidModel(format!("alpha {} outside (0, 0.5)", self.alpha)));
        }
        self.threshold_net.validate()?;
        self.gpd_net.validate()?;
        let d = self.dim;
        if self.transform.dim() != d
            || self.threshold_net.input_dim() != d
            || self.gpd_net.input_dim() != d
            || self.threshold_net.output_dim() != 1
            || self.gpd_net.output_dim() != 2
            || self.exceedance_angles.ncols() != d
            || (self.body_points.nrows() > 0 && self.body_points.ncols() != d)
        {
            return Err(SparError::InvalidModel("component dimensions disagree".into()));
        }
        if self.threshold_net.heads() != [Head::Exponential]
            || self.gpd_net.heads() != [Head::Exponential, Head::ScaledTangent]
        {
            return Err(SparError::InvalidModel("unexpected head configuration".into()));
        }
        if self.exceedance_angles.nrows() == 0 {
            return Err(SparError::InvalidModel("no stored exceedance angles".into()));
        }
        for t in 0..self.exceedance_angles.nrows() {
            let norm: f64 =
                self.exceedance_angles.row(t).iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-9 {
                return Err(SparError::InvalidModel(format!("exceedance angle {t} has norm {norm}")));
            }
        }
        for t in 0..self.body_points.nrows() {
            let row = self.body_points.row(t);
            let r: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if r == 0.0 {
                return Err(SparError::InvalidModel(format!("body point {t} has zero radius")));
            }
            let w: Vec<f64> = row.iter().map(|v| v / r).collect();
            if r > self.threshold_at(&w)? {
                return Err(SparError::InvalidModel(format!("body point {t} lies above the threshold")));
            }
        }
        let fraction = self.exceedance_fraction();
        if (fraction - self.alpha).abs() > EXCEEDANCE_FRACTION_TOL {
            return Err(SparError::Calibration { fraction, alpha: self.alpha });
        }
        Ok(())
    }

    /// Compact JSON; `f64` values round-trip bit-exactly.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let model: SparModel = serde_json::from_str(json)?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(&mut file, self)?;
        use std::io::Write;
        file.flush()?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let json = std::fs::read_to_string(path)?;
        Self::from_json(&json)
    }
}

/// Full pipeline: marginal transform → polar coordinates → threshold fit →
/// GPD fit → model assembly. Deterministic per `(data, cfg)`.
pub fn spar_fit(raw: &ObservationMatrix, cfg: &SparConfig) -> Result<SparModel> {
    cfg.validate()?;
    let transform = fit_transform(raw)?;
    let centred = transform.forward_matrix(raw.values())?;
    let polar = to_polar(&centred)?;
    let threshold_net = fit_threshold(&polar, cfg)?;
    let gpd_net = fit_gpd(&polar, &threshold_net, cfg)?;

    let u = threshold_net.forward_batch(polar.angles())?;
    let mut exc_idx = Vec::new();
    let mut body_idx = Vec::new();
    for t in 0..polar.len() {
        if polar.radii()[t] > u.row(t)[0] {
            exc_idx.push(t);
        } else {
            body_idx.push(t);
        }
    }
    let model = SparModel {
        format_version: FORMAT_VERSION,
        dim: raw.dim(),
        alpha: cfg.alpha,
        reparam: cfg.reparam,
        transform,
        threshold_net,
        gpd_net,
        exceedance_angles: polar.angles().select_rows(&exc_idx),
        body_points: centred.select_rows(&body_idx),
    };
    model.validate()?;
    log::info!(
        "spar fit: n={}, d={}, exceedance fraction {:.4} (alpha {})",
        raw.nrows(),
        raw.dim(),
        model.exceedance_fraction(),
        cfg.alpha
    );
    Ok(model)
}

/// Build a model directly from parts; used for synthetic oracles and tests.
/// All invariants are enforced.
#[allow(clippy::too_many_arguments)]
pub fn assemble_model(
    dim: usize,
    alpha: f64,
    reparam: Reparam,
    transform: MarginalTransform,
    threshold_net: MlpParams,
    gpd_net: MlpParams,
    exceedance_angles: Matrix,
    body_points: Matrix,
) -> Result<SparModel> {
    let model = SparModel {
        format_version: FORMAT_VERSION,
        dim,
        alpha,
        reparam,
        transform,
        threshold_net,
        gpd_net,
        exceedance_angles,
        body_points,
    };
    model.validate()?;
    Ok(model)
}

//! Run configuration: a flat TOML key-value file plus flag overrides.
//! Unknown keys are rejected. All fields have defaults except `data`,
//! which commands that read observations require.

use std::path::PathBuf;

use anyhow::{bail, Context};
use serde::Deserialize;
use spar_core::inference::WEEKLY_BLOCKS_PER_YEAR;
use spar_core::neural::{Architecture, BatchSize, TrainSchedule};
use spar_core::seeds;
use spar_core::spar::{Reparam, SparConfig};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Input series CSV (schema in docs/FORMATS.md).
    pub data: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub alpha: f64,
    /// Inclusive year windows, e.g. `[[1980, 2009], [2010, 2039]]`.
    pub windows: Vec<[i32; 2]>,
    /// Ensemble-member subsample sizes to fit in addition to the full set.
    pub member_subsamples: Vec<usize>,
    pub m_tail: usize,
    pub bootstrap_b: usize,
    pub ci_level: f64,
    /// Return period defining the joint box regions (years).
    pub n_years: f64,
    pub blocks_per_year: f64,
    pub sum_upper_threshold: f64,
    pub sum_lower_threshold: f64,
    /// Return periods (years) for return-level curves and bootstrap CIs.
    pub return_periods: Vec<f64>,
    pub threshold_hidden: Vec<usize>,
    pub gpd_hidden: Vec<usize>,
    pub threshold_epochs: usize,
    pub threshold_batch: usize,
    pub gpd_epochs: usize,
    pub threshold_lr: f64,
    pub gpd_lr: f64,
    pub min_lr: f64,
    pub lr_decay: f64,
    pub patience_threshold: usize,
    pub patience_gpd: usize,
    pub validation_fraction: f64,
    /// "orthogonal" or "direct".
    pub reparam: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        let template = SparConfig::new(0);
        RunConfig {
            data: None,
            out_dir: PathBuf::from("out"),
            seed: 17,
            alpha: template.alpha,
            windows: vec![[1980, 2009], [2010, 2039], [2040, 2069], [2070, 2099]],
            member_subsamples: Vec::new(),
            m_tail: 2_000_000,
            bootstrap_b: 100,
            ci_level: 0.95,
            n_years: 10.0,
            blocks_per_year: WEEKLY_BLOCKS_PER_YEAR,
            sum_upper_threshold: 1000.0,
            sum_lower_threshold: 30.0,
            return_periods: vec![2.0, 5.0, 10.0, 20.0, 50.0, 100.0],
            threshold_hidden: template.threshold_arch.hidden.clone(),
            gpd_hidden: template.gpd_arch.hidden.clone(),
            threshold_epochs: template.threshold_schedule.max_epochs,
            threshold_batch: 1024,
            gpd_epochs: template.gpd_schedule.max_epochs,
            threshold_lr: template.threshold_schedule.initial_lr,
            gpd_lr: template.gpd_schedule.initial_lr,
            min_lr: template.threshold_schedule.min_lr,
            lr_decay: template.threshold_schedule.lr_decay_factor,
            patience_threshold: template.threshold_schedule.patience,
            patience_gpd: template.gpd_schedule.patience,
            validation_fraction: template.threshold_schedule.validation_fraction,
            reparam: "orthogonal".into(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&std::path::Path>) -> anyhow::Result<Self> {
        let cfg = match path {
            None => RunConfig::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            bail!("alpha must lie in (0, 0.5), got {}", self.alpha);
        }
        if self.windows.is_empty() {
            bail!("at least one window is required");
        }
        for w in &self.windows {
            if w[0] > w[1] {
                bail!("window {}-{} is not ordered", w[0], w[1]);
            }
        }
        for w in self.windows.windows(2) {
            if w[0][1] >= w[1][0] {
                bail!("windows overlap or are unordered: {:?} then {:?}", w[0], w[1]);
            }
        }
        if self.m_tail == 0 || self.bootstrap_b == 0 {
            bail!("m_tail and bootstrap_b must be positive");
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            bail!("ci_level must lie in (0, 1)");
        }
        if self.return_periods.is_empty()
            || self.return_periods.windows(2).any(|w| w[0] >= w[1])
            || self.return_periods[0] <= 0.0
        {
            bail!("return_periods must be positive and strictly increasing");
        }
        if self.reparam != "orthogonal" && self.reparam != "direct" {
            bail!("reparam must be 'orthogonal' or 'direct'");
        }
        self.spar_config(0).validate()?;
        Ok(())
    }

    /// Window label, e.g. "1980-2009".
    pub fn window_label(w: [i32; 2]) -> String {
        format!("{}-{}", w[0], w[1])
    }

    pub fn find_window(&self, label: &str) -> anyhow::Result<[i32; 2]> {
        self.windows
            .iter()
            .copied()
            .find(|&w| Self::window_label(w) == label)
            .ok_or_else(|| anyhow::anyhow!("window '{label}' not in config"))
    }

    /// Fitting configuration under the given master seed.
    pub fn spar_config(&self, seed: u64) -> SparConfig {
        let mut cfg = SparConfig::new(seed);
        cfg.alpha = self.alpha;
        cfg.threshold_arch = Architecture::new(self.threshold_hidden.clone());
        cfg.gpd_arch = Architecture::new(self.gpd_hidden.clone());
        cfg.threshold_schedule = TrainSchedule {
            initial_lr: self.threshold_lr,
            min_lr: self.min_lr,
            lr_decay_factor: self.lr_decay,
            max_epochs: self.threshold_epochs,
            batch_size: BatchSize::Fixed(self.threshold_batch),
            patience: self.patience_threshold,
            validation_fraction: self.validation_fraction,
            seed: seeds::derive(seed, 1),
        };
        cfg.gpd_schedule = TrainSchedule {
            initial_lr: self.gpd_lr,
            min_lr: self.min_lr,
            lr_decay_factor: self.lr_decay,
            max_epochs: self.gpd_epochs,
            batch_size: BatchSize::Full,
            patience: self.patience_gpd,
            validation_fraction: self.validation_fraction,
            seed: seeds::derive(seed, 2),
        };
        cfg.reparam = if self.reparam == "direct" { Reparam::Direct } else { Reparam::Orthogonal };
        cfg
    }

    /// Seed for one (window, subsample) cell; `members = 0` is the full set.
    pub fn cell_seed(&self, window_index: usize, members: usize) -> u64 {
        seeds::derive(self.seed, (window_index as u64) << 32 | members as u64)
    }
}

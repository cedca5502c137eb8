//! The five batch subcommands: fit, diagnose, probs, bootstrap, synth.

use std::path::Path;

use anyhow::{bail, Context};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use spar_core::bootstrap::{bootstrap_fit, percentile_ci};
use spar_core::dataio::{
    read_series_csv, subsample_members, synth_gaussian_copula, weekly_maxima, MarginSpec,
    ObservationMatrix,
};
use spar_core::diagnostics::{
    chi_curve, default_u_grid, gpd_qq, marginal_qq_tail, return_level_curve,
};
use spar_core::inference::{
    joint_tail_probability, simulate_tail, sum_tail_probability, TailProbabilityReport, TailSide,
};
use spar_core::preprocess::to_polar;
use spar_core::seeds;
use spar_core::spar::{spar_fit, SparModel};
use spar_core::Matrix;

use crate::config::RunConfig;
use crate::output::{csv_header, opt_field, write_atomic, SCHEMA_VERSION};

/// One (window, subsample) fitting cell. `members = None` is the full set.
struct Cell {
    window_index: usize,
    window: [i32; 2],
    members: Option<usize>,
}

impl Cell {
    fn label(&self) -> String {
        let w = RunConfig::window_label(self.window);
        match self.members {
            None => format!("{w}_full"),
            Some(k) => format!("{w}_m{k}"),
        }
    }

    fn seed(&self, cfg: &RunConfig) -> u64 {
        cfg.cell_seed(self.window_index, self.members.unwrap_or(0))
    }
}

fn cells(cfg: &RunConfig, window: Option<&str>, members: Option<usize>) -> anyhow::Result<Vec<Cell>> {
    let mut out = Vec::new();
    for (i, &w) in cfg.windows.iter().enumerate() {
        if let Some(label) = window {
            if RunConfig::window_label(w) != label {
                continue;
            }
        }
        match members {
            Some(k) => out.push(Cell { window_index: i, window: w, members: Some(k) }),
            None => {
                out.push(Cell { window_index: i, window: w, members: None });
                for &k in &cfg.member_subsamples {
                    out.push(Cell { window_index: i, window: w, members: Some(k) });
                }
            }
        }
    }
    if out.is_empty() {
        bail!("no fitting cells selected (check --window against the config)");
    }
    Ok(out)
}

fn load_window(cfg: &RunConfig, window: [i32; 2]) -> anyhow::Result<ObservationMatrix> {
    let data_path = cfg.data.as_ref().context("config has no 'data' path")?;
    let series = read_series_csv(data_path)?;
    Ok(weekly_maxima(&series, (window[0], window[1]))?)
}

fn cell_data(cfg: &RunConfig, cell: &Cell) -> anyhow::Result<ObservationMatrix> {
    let full = load_window(cfg, cell.window)?;
    Ok(match cell.members {
        None => full,
        Some(k) => subsample_members(&full, k)?,
    })
}

#[derive(Serialize)]
struct CommandMetadata<'a> {
    schema_version: u32,
    command: &'a str,
    seed: u64,
    outputs: Vec<String>,
}

fn write_metadata(cfg: &RunConfig, command: &str, outputs: Vec<String>) -> anyhow::Result<()> {
    let meta = CommandMetadata { schema_version: SCHEMA_VERSION, command, seed: cfg.seed, outputs };
    let path = cfg.out_dir.join(format!("{command}_metadata.json"));
    write_atomic(&path, serde_json::to_string_pretty(&meta)?.as_bytes())
}

pub fn cmd_fit(cfg: &RunConfig, window: Option<&str>, members: Option<usize>) -> anyhow::Result<()> {
    let mut outputs = Vec::new();
    for cell in cells(cfg, window, members)? {
        let data = cell_data(cfg, &cell)?;
        let seed = cell.seed(cfg);
        let spar_cfg = cfg.spar_config(seed);
        log::info!(
            "fitting {} (n={}, d={}, seed={seed})",
            cell.label(),
            data.nrows(),
            data.dim()
        );
        let model = spar_fit(&data, &spar_cfg)?;
        log::info!("{}: exceedance fraction {:.4}", cell.label(), model.exceedance_fraction());
        let path = cfg.out_dir.join(format!("model_{}.json", cell.label()));
        write_atomic(&path, model.to_json()?.as_bytes())?;
        println!("wrote {}", path.display());
        outputs.push(path.display().to_string());
    }
    write_metadata(cfg, "fit", outputs)
}

fn model_stem(model_path: &Path) -> String {
    model_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "model".into())
}

/// Scope of the χ(u) comparison: rows of the joint tail only (default) or
/// the full sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChiScope {
    Tail,
    Full,
}

pub fn cmd_diagnose(
    cfg: &RunConfig,
    model_path: &Path,
    window: Option<&str>,
    chi_scope: ChiScope,
) -> anyhow::Result<()> {
    let model = SparModel::load(model_path)?;
    let w = match window {
        Some(label) => cfg.find_window(label)?,
        None => cfg.windows[0],
    };
    let observed = load_window(cfg, w)?;
    if observed.dim() != model.dim() {
        bail!(spar_core::SparError::DimensionMismatch { expected: model.dim(), got: observed.dim() });
    }
    let stem = model_stem(model_path);
    let d = model.dim();
    let seed = cfg.seed;
    let mut outputs = Vec::new();
    let meta = |extra: &[(&str, String)]| csv_header(seed, extra);

    // radial GPD QQ
    let centred = model.transform().forward_matrix(observed.values())?;
    let polar = to_polar(&centred)?;
    let qq = gpd_qq(&model, &polar)?;
    let mut body = meta(&[("diagnostic", "gpd_qq".into()), ("model", stem.clone())]);
    body.push_str("k,empirical,model\n");
    for (k, (e, m)) in qq.empirical_quantiles.iter().zip(&qq.model_quantiles).enumerate() {
        body.push_str(&format!("{},{},{}\n", k + 1, e, m));
    }
    let path = cfg.out_dir.join(format!("{stem}_gpd_qq.csv"));
    write_atomic(&path, body.as_bytes())?;
    outputs.push(path.display().to_string());

    // marginal QQ in the joint tail
    for margin in 0..d {
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, 100 + margin as u64));
        let qq = marginal_qq_tail(&model, &observed, margin, cfg.m_tail, &mut rng)?;
        let k_total = qq.len();
        let mut body = meta(&[("diagnostic", "marginal_qq".into()), ("site", qq.label.clone())]);
        body.push_str("q,observed,model\n");
        for (k, (e, m)) in qq.empirical_quantiles.iter().zip(&qq.model_quantiles).enumerate() {
            let q = (k + 1) as f64 / (k_total + 1) as f64;
            body.push_str(&format!("{},{},{}\n", q, e, m));
        }
        let path = cfg.out_dir.join(format!("{stem}_qq_{}.csv", qq.label));
        write_atomic(&path, body.as_bytes())?;
        outputs.push(path.display().to_string());
    }

    // pairwise chi curves: observed vs simulated, on the raw scale
    let (obs_rows, sim_rows) = chi_samples(&model, &observed, &polar, cfg, chi_scope)?;
    let grid = default_u_grid();
    for i in 0..d {
        for j in i + 1..d {
            let pair = format!("{}__{}", observed.site_names()[i], observed.site_names()[j]);
            let chi_obs = chi_curve(&obs_rows.column(i), &obs_rows.column(j), &grid, &pair)?;
            let chi_sim = chi_curve(&sim_rows.column(i), &sim_rows.column(j), &grid, &pair)?;
            let mut body = meta(&[
                ("diagnostic", "chi".into()),
                ("pair", pair.clone()),
                ("scope", format!("{chi_scope:?}").to_lowercase()),
            ]);
            body.push_str("u,chi_observed,chi_model\n");
            for ((u, o), s) in grid.iter().zip(&chi_obs.chi).zip(&chi_sim.chi) {
                body.push_str(&format!(
                    "{},{},{}\n",
                    u,
                    opt_field(*o),
                    opt_field(*s)
                ));
            }
            let path = cfg.out_dir.join(format!("{stem}_chi_{pair}.csv"));
            write_atomic(&path, body.as_bytes())?;
            outputs.push(path.display().to_string());
        }
    }

    // return-level comparison curves
    for (side, name) in [(TailSide::Upper, "upper"), (TailSide::Lower, "lower")] {
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, 200 + (side as u64)));
        let curves = return_level_curve(
            &model,
            &observed,
            &cfg.return_periods,
            side,
            cfg.blocks_per_year,
            cfg.m_tail,
            &mut rng,
        )?;
        let mut body = meta(&[("diagnostic", format!("return_levels_{name}"))]);
        body.push_str("site,period_years,model_level,empirical_level\n");
        for c in &curves {
            for p in &c.points {
                body.push_str(&format!(
                    "{},{},{},{}\n",
                    c.site,
                    p.period_years,
                    p.model_level,
                    opt_field(p.empirical_level)
                ));
            }
        }
        let path = cfg.out_dir.join(format!("{stem}_return_levels_{name}.csv"));
        write_atomic(&path, body.as_bytes())?;
        outputs.push(path.display().to_string());
    }

    write_metadata(cfg, "diagnose", outputs)
}

/// Observed and model samples entering the χ comparison, raw scale.
fn chi_samples(
    model: &SparModel,
    observed: &ObservationMatrix,
    polar: &spar_core::preprocess::PolarSample,
    cfg: &RunConfig,
    scope: ChiScope,
) -> anyhow::Result<(Matrix, Matrix)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(cfg.seed, 300));
    let alpha = model.alpha();
    match scope {
        ChiScope::Tail => {
            let u = model.threshold_net().forward_batch(polar.angles())?;
            let tail_idx: Vec<usize> =
                (0..polar.len()).filter(|&t| polar.radii()[t] > u.row(t)[0]).collect();
            let obs = observed.values().select_rows(&tail_idx);
            let m_sim = cfg.m_tail.min(500_000);
            let sim = simulate_tail(model, m_sim, &mut rng)?;
            Ok((obs, model.transform().inverse_matrix(&sim)?))
        }
        ChiScope::Full => {
            let obs = observed.values().clone();
            // representative pooled sample: tail fraction alpha
            let total = cfg.m_tail.min(1_000_000);
            let m_tail = (total as f64 * alpha).round() as usize;
            let m_body = total - m_tail;
            let tail = simulate_tail(model, m_tail.max(1), &mut rng)?;
            let body = spar_core::inference::sample_body(model, m_body.max(1), &mut rng)?;
            let mut all = Matrix::zeros(0, model.dim());
            for t in 0..body.nrows() {
                all.push_row(body.row(t))?;
            }
            for t in 0..tail.nrows() {
                all.push_row(tail.row(t))?;
            }
            Ok((obs, model.transform().inverse_matrix(&all)?))
        }
    }
}

#[derive(Serialize)]
struct ProbsReport<'a> {
    schema_version: u32,
    seed: u64,
    model: String,
    m_tail: usize,
    blocks_per_year: f64,
    n_years: f64,
    sum_upper_threshold: f64,
    sum_lower_threshold: f64,
    reports: std::collections::BTreeMap<&'a str, TailProbabilityReport>,
}

pub fn cmd_probs(cfg: &RunConfig, model_path: &Path) -> anyhow::Result<()> {
    let model = SparModel::load(model_path)?;
    let mut reports = std::collections::BTreeMap::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(cfg.seed, 400));
    reports.insert(
        "sum_upper",
        sum_tail_probability(
            &model,
            cfg.sum_upper_threshold,
            TailSide::Upper,
            cfg.blocks_per_year,
            cfg.m_tail,
            &mut rng,
        )?,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(cfg.seed, 401));
    reports.insert(
        "sum_lower",
        sum_tail_probability(
            &model,
            cfg.sum_lower_threshold,
            TailSide::Lower,
            cfg.blocks_per_year,
            cfg.m_tail,
            &mut rng,
        )?,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(cfg.seed, 402));
    reports.insert(
        "joint_upper_survivor",
        joint_tail_probability(
            &model,
            cfg.n_years,
            TailSide::Upper,
            cfg.blocks_per_year,
            cfg.m_tail,
            &mut rng,
        )?,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(cfg.seed, 403));
    reports.insert(
        "joint_lower_cdf",
        joint_tail_probability(
            &model,
            cfg.n_years,
            TailSide::Lower,
            cfg.blocks_per_year,
            cfg.m_tail,
            &mut rng,
        )?,
    );
    let out = ProbsReport {
        schema_version: SCHEMA_VERSION,
        seed: cfg.seed,
        model: model_path.display().to_string(),
        m_tail: cfg.m_tail,
        blocks_per_year: cfg.blocks_per_year,
        n_years: cfg.n_years,
        sum_upper_threshold: cfg.sum_upper_threshold,
        sum_lower_threshold: cfg.sum_lower_threshold,
        reports,
    };
    let stem = model_stem(model_path);
    let path = cfg.out_dir.join(format!("{stem}_probs.json"));
    write_atomic(&path, serde_json::to_string_pretty(&out)?.as_bytes())?;
    println!("wrote {}", path.display());
    write_metadata(cfg, "probs", vec![path.display().to_string()])
}

/// All scalar statistics evaluated per model in the bootstrap.
fn model_statistics(
    model: &SparModel,
    cfg: &RunConfig,
    site_names: &[String],
    seed: u64,
) -> anyhow::Result<Vec<(String, f64)>> {
    let mut stats = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, 1));
    stats.push((
        "prob_sum_upper".to_string(),
        sum_tail_probability(
            model,
            cfg.sum_upper_threshold,
            TailSide::Upper,
            cfg.blocks_per_year,
            cfg.m_tail,
            &mut rng,
        )?
        .probability,
    ));
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, 2));
    stats.push((
        "prob_sum_lower".to_string(),
        sum_tail_probability(
            model,
            cfg.sum_lower_threshold,
            TailSide::Lower,
            cfg.blocks_per_year,
            cfg.m_tail,
            &mut rng,
        )?
        .probability,
    ));
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, 3));
    stats.push((
        "prob_joint_upper".to_string(),
        joint_tail_probability(model, cfg.n_years, TailSide::Upper, cfg.blocks_per_year, cfg.m_tail, &mut rng)?
            .probability,
    ));
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, 4));
    stats.push((
        "prob_joint_lower".to_string(),
        joint_tail_probability(model, cfg.n_years, TailSide::Lower, cfg.blocks_per_year, cfg.m_tail, &mut rng)?
            .probability,
    ));
    for (side, name) in [(TailSide::Upper, "upper"), (TailSide::Lower, "lower")] {
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, 5 + side as u64));
        let levels = spar_core::inference::marginal_return_levels(
            model,
            &cfg.return_periods,
            side,
            cfg.blocks_per_year,
            cfg.m_tail,
            &mut rng,
        )?;
        for (pi, &period) in cfg.return_periods.iter().enumerate() {
            for (i, site) in site_names.iter().enumerate() {
                stats.push((format!("rl_{name}_{site}_{period}y"), levels[pi][i]));
            }
        }
    }
    Ok(stats)
}

pub fn cmd_bootstrap(
    cfg: &RunConfig,
    window: Option<&str>,
    members: Option<usize>,
    b_override: Option<usize>,
    save_replicates: bool,
) -> anyhow::Result<()> {
    let b = b_override.unwrap_or(cfg.bootstrap_b);
    let mut outputs = Vec::new();
    for cell in cells(cfg, window, members)? {
        let data = cell_data(cfg, &cell)?;
        let seed = cell.seed(cfg);
        let spar_cfg = cfg.spar_config(seed);
        log::info!("bootstrap {}: base fit + {b} replicates", cell.label());
        let base = spar_fit(&data, &spar_cfg)?;
        let ensemble = bootstrap_fit(&data, &spar_cfg, b, seed)?;
        if !ensemble.failures.is_empty() {
            log::warn!("{} replicate failures: {:?}", ensemble.failures.len(), ensemble.failures);
        }
        if save_replicates {
            for (i, m) in ensemble.models.iter().enumerate() {
                let path = cfg.out_dir.join(format!("bootstrap_{}_rep{:03}.json", cell.label(), i));
                write_atomic(&path, m.to_json()?.as_bytes())?;
                outputs.push(path.display().to_string());
            }
        }

        let point = model_statistics(&base, cfg, data.site_names(), seeds::derive(seed, 7000))?;
        let mut replicate_values: Vec<Vec<f64>> = vec![Vec::with_capacity(ensemble.models.len()); point.len()];
        for (mi, m) in ensemble.models.iter().enumerate() {
            let stats = model_statistics(m, cfg, data.site_names(), seeds::derive(seed, 8000 + mi as u64))?;
            for (si, (_, v)) in stats.into_iter().enumerate() {
                replicate_values[si].push(v);
            }
        }
        let mut body = csv_header(
            cfg.seed,
            &[
                ("window", RunConfig::window_label(cell.window)),
                ("members", cell.members.map(|k| k.to_string()).unwrap_or_else(|| "all".into())),
                ("b_requested", b.to_string()),
                ("b_succeeded", ensemble.models.len().to_string()),
                ("level", cfg.ci_level.to_string()),
            ],
        );
        body.push_str("statistic,point,lo,hi,b,level\n");
        for (si, (name, point_value)) in point.iter().enumerate() {
            let (lo, hi) = percentile_ci(&replicate_values[si], cfg.ci_level)?;
            if !(lo <= *point_value && *point_value <= hi) {
                log::warn!("statistic {name}: point {point_value} outside percentile CI [{lo}, {hi}]");
            }
            body.push_str(&format!(
                "{},{},{},{},{},{}\n",
                name,
                point_value,
                lo,
                hi,
                ensemble.models.len(),
                cfg.ci_level
            ));
        }
        let path = cfg.out_dir.join(format!("bootstrap_{}.csv", cell.label()));
        write_atomic(&path, body.as_bytes())?;
        println!("wrote {}", path.display());
        outputs.push(path.display().to_string());
    }
    write_metadata(cfg, "bootstrap", outputs)
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_synth(
    out_file: &Path,
    weeks: usize,
    members: usize,
    sites: usize,
    rho: f64,
    start_year: i32,
    seed: u64,
) -> anyhow::Result<()> {
    if sites < 2 {
        bail!("need at least 2 sites");
    }
    if !(-0.99..=0.999).contains(&rho) {
        bail!("rho must lie in [-0.99, 0.999]");
    }
    let n = weeks * members;
    let mut corr = vec![rho; sites * sites];
    for i in 0..sites {
        corr[i * sites + i] = 1.0;
    }
    // discharge-like lognormal margins with distinct scales
    let margins: Vec<MarginSpec> = (0..sites)
        .map(|i| MarginSpec::LogNormal { mu: (20.0 + 15.0 * i as f64).ln(), sigma: 0.5 })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = synth_gaussian_copula(n, sites, &corr, &margins, &mut rng)?;

    let start = chrono::NaiveDate::from_ymd_opt(start_year, 1, 1)
        .context("invalid start year")?
        .and_hms_opt(0, 0, 0)
        .unwrap();
    let mut body = format!("# seed={seed}\ntimestamp,member");
    for i in 0..sites {
        body.push_str(&format!(",site{}", i + 1));
    }
    body.push('\n');
    let mut row = 0usize;
    for m in 0..members {
        for wk in 0..weeks {
            let ts = start + chrono::Duration::days(7 * wk as i64);
            body.push_str(&format!("{},m{:02}", ts.format("%Y-%m-%dT%H:%M:%S"), m + 1));
            for j in 0..sites {
                body.push_str(&format!(",{}", data.values().row(row)[j]));
            }
            body.push('\n');
            row += 1;
        }
    }
    write_atomic(out_file, body.as_bytes())?;
    println!("wrote {}", out_file.display());
    Ok(())
}

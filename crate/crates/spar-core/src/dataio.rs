//! Data ingest and synthetic data generation.
//!
//! Input series files are comma-separated UTF-8 with a mandatory header
//! `timestamp,member,<site>,...`. Timestamps are ISO-8601
//! (`YYYY-MM-DDTHH:MM:SS` or `YYYY-MM-DD`) and must be strictly increasing
//! within each member. Missing values are the token `NA` or an empty field
//! and become explicit gaps.
//!
//! Weekly block maxima are taken over consecutive non-overlapping 7-day
//! blocks anchored at the window start, per member and site, then
//! concatenated member-wise. A block with less than 80% of its expected
//! records present (per the member's native cadence) is dropped.

use chrono::{NaiveDate, NaiveDateTime};
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Result, SparError};
use crate::gpd::{gpd_quantile, GpdParams};
use crate::matrix::Matrix;

/// Fraction of a block's expected records that must be present for the
/// block maximum to be kept.
const BLOCK_COVERAGE_MIN: f64 = 0.8;

/// One time window of multivariate block maxima: strictly positive values,
/// site labels, and the member id of each row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationMatrix {
    values: Matrix,
    site_names: Vec<String>,
    window_label: String,
    /// Unique member ids in file order.
    members: Vec<String>,
    /// Index into `members` for each row.
    member_rows: Vec<usize>,
}

impl ObservationMatrix {
    /// Validating constructor. `member_rows` pairs each row with a member id;
    /// pass `None` for single-member or synthetic data.
    pub fn new(
        values: Matrix,
        site_names: Vec<String>,
        window_label: String,
        members: Option<(Vec<String>, Vec<usize>)>,
    ) -> Result<Self> {
        let (n, d) = (values.nrows(), values.ncols());
        if n == 0 {
            return Err(SparError::InsufficientData { context: "ObservationMatrix", needed: 1, got: 0 });
        }
        if d < 2 {
            return Err(SparError::ParamDomain(format!("ObservationMatrix needs d >= 2, got {d}")));
        }
        if site_names.len() != d {
            return Err(SparError::ShapeMismatch { expected: d, got: site_names.len() });
        }
        for i in 0..n {
            for (j, &v) in values.row(i).iter().enumerate() {
                if !(v.is_finite() && v > 0.0) {
                    return Err(SparError::NonPositiveData { row: i, column: j, value: v });
                }
            }
        }
        let (members, member_rows) = match members {
            Some((m, rows)) => {
                if rows.len() != n {
                    return Err(SparError::ShapeMismatch { expected: n, got: rows.len() });
                }
                if let Some(&bad) = rows.iter().find(|&&k| k >= m.len()) {
                    return Err(SparError::ParamDomain(format!("member index {bad} out of range")));
                }
                (m, rows)
            }
            None => (vec!["all".to_string()], vec![0; n]),
        };
        Ok(Self { values, site_names, window_label, members, member_rows })
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn site_names(&self) -> &[String] {
        &self.site_names
    }

    pub fn window_label(&self) -> &str {
        &self.window_label
    }

    pub fn members(&self) -> &[String] {
        &self.members
    }

    pub fn member_rows(&self) -> &[usize] {
        &self.member_rows
    }

    /// New matrix with the given rows (used by bootstrap resampling).
    pub fn resample_rows(&self, indices: &[usize]) -> Result<Self> {
        let values = self.values.select_rows(indices);
        let member_rows = indices.iter().map(|&i| self.member_rows[i]).collect();
        Self::new(values, self.site_names.clone(), self.window_label.clone(), Some((self.members.clone(), member_rows)))
    }
}

/// Keep only rows belonging to the first `k` member ids in file order.
pub fn subsample_members(data: &ObservationMatrix, k: usize) -> Result<ObservationMatrix> {
    if k == 0 || k > data.members.len() {
        return Err(SparError::ParamDomain(format!(
            "subsample k={k} out of range 1..={}",
            data.members.len()
        )));
    }
    let keep: Vec<usize> =
        (0..data.nrows()).filter(|&i| data.member_rows[i] < k).collect();
    if keep.is_empty() {
        return Err(SparError::InsufficientData { context: "subsample_members", needed: 1, got: 0 });
    }
    let values = data.values.select_rows(&keep);
    let member_rows = keep.iter().map(|&i| data.member_rows[i]).collect();
    ObservationMatrix::new(
        values,
        data.site_names.clone(),
        data.window_label.clone(),
        Some((data.members[..k].to_vec(), member_rows)),
    )
}

/// One record of a raw series file; `None` marks an explicit gap.
#[derive(Debug, Clone)]
pub struct SeriesRecord {
    pub timestamp: NaiveDateTime,
    pub member: String,
    pub values: Vec<Option<f64>>,
}

/// Parsed multi-site, multi-member time series.
#[derive(Debug, Clone)]
pub struct SeriesTable {
    pub site_names: Vec<String>,
    pub records: Vec<SeriesRecord>,
    /// Unique member ids in file order.
    pub members: Vec<String>,
}

fn parse_timestamp(s: &str, line: usize) -> Result<NaiveDateTime> {
    if let Ok(dt) = NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S") {
        return Ok(dt);
    }
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return Ok(d.and_hms_opt(0, 0, 0).unwrap());
    }
    Err(SparError::Parse { line, msg: format!("invalid ISO-8601 timestamp '{s}'") })
}

/// Read and validate a raw series file (schema in the module docs).
pub fn read_series_csv(path: &std::path::Path) -> Result<SeriesTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| SparError::Parse { line: 0, msg: e.to_string() })?;
    let headers = reader
        .headers()
        .map_err(|e| SparError::Parse { line: 1, msg: e.to_string() })?
        .clone();
    if headers.len() < 4 || &headers[0] != "timestamp" || &headers[1] != "member" {
        return Err(SparError::Parse {
            line: 1,
            msg: "header must be 'timestamp,member,<site>,...' with at least two sites".into(),
        });
    }
    let site_names: Vec<String> = headers.iter().skip(2).map(str::to_string).collect();

    let mut records = Vec::new();
    let mut members: Vec<String> = Vec::new();
    let mut last_per_member: std::collections::HashMap<String, NaiveDateTime> =
        std::collections::HashMap::new();
    for (idx, row) in reader.records().enumerate() {
        let line = idx + 2; // 1-based, after header
        let row = row.map_err(|e| SparError::Parse { line, msg: e.to_string() })?;
        if row.len() != headers.len() {
            return Err(SparError::Parse {
                line,
                msg: format!("expected {} fields, got {}", headers.len(), row.len()),
            });
        }
        let timestamp = parse_timestamp(&row[0], line)?;
        let member = row[1].to_string();
        if member.is_empty() {
            return Err(SparError::Parse { line, msg: "empty member id".into() });
        }
        if let Some(prev) = last_per_member.get(&member) {
            if timestamp <= *prev {
                return Err(SparError::Parse {
                    line,
                    msg: format!("non-monotone timestamp for member '{member}'"),
                });
            }
        }
        last_per_member.insert(member.clone(), timestamp);
        if !members.contains(&member) {
            members.push(member.clone());
        }
        let mut values = Vec::with_capacity(site_names.len());
        for (j, field) in row.iter().skip(2).enumerate() {
            let field = field.trim();
            if field.is_empty() || field == "NA" {
                values.push(None);
            } else {
                let v: f64 = field.parse().map_err(|_| SparError::Parse {
                    line,
                    msg: format!("invalid number '{field}' in column {}", site_names[j]),
                })?;
                values.push(Some(v));
            }
        }
        records.push(SeriesRecord { timestamp, member, values });
    }
    if records.is_empty() {
        return Err(SparError::Parse { line: 1, msg: "file contains no data rows".into() });
    }
    Ok(SeriesTable { site_names, records, members })
}

/// Inclusive year window, e.g. `(1980, 2009)`.
pub type Window = (i32, i32);

/// 7-day block maxima over `window`, per member and site, concatenated
/// member-wise. Trailing partial blocks are dropped.
pub fn weekly_maxima(series: &SeriesTable, window: Window) -> Result<ObservationMatrix> {
    let (start_year, end_year) = window;
    let start = NaiveDate::from_ymd_opt(start_year, 1, 1)
        .ok_or_else(|| SparError::ParamDomain(format!("bad year {start_year}")))?
        .and_hms_opt(0, 0, 0)
        .unwrap();
    let end = NaiveDate::from_ymd_opt(end_year + 1, 1, 1)
        .ok_or_else(|| SparError::ParamDomain(format!("bad year {end_year}")))?
        .and_hms_opt(0, 0, 0)
        .unwrap();
    let window_days = (end - start).num_days();
    let n_blocks = (window_days / 7) as usize;
    if n_blocks == 0 {
        return Err(SparError::InsufficientData { context: "weekly_maxima", needed: 7, got: 0 });
    }
    let d = series.site_names.len();
    let label = format!("{start_year}-{end_year}");

    let mut values = Matrix::zeros(0, 0);
    let mut member_rows = Vec::new();
    let mut kept_members = Vec::new();
    for (m_idx, member) in series.members.iter().enumerate() {
        let recs: Vec<&SeriesRecord> = series
            .records
            .iter()
            .filter(|r| r.member == *member && r.timestamp >= start && r.timestamp < end)
            .collect();
        if recs.is_empty() {
            continue;
        }
        // Native cadence from the median step; used for block coverage.
        let mut steps: Vec<i64> = recs
            .windows(2)
            .map(|w| (w[1].timestamp - w[0].timestamp).num_seconds())
            .filter(|&s| s > 0)
            .collect();
        steps.sort_unstable();
        let cadence_secs = if steps.is_empty() { 7 * 86_400 } else { steps[steps.len() / 2] };
        let expected_per_block = ((7 * 86_400) as f64 / cadence_secs as f64).round().max(1.0);

        let mut block_max: Vec<Vec<f64>> = vec![vec![f64::NEG_INFINITY; d]; n_blocks];
        let mut block_count: Vec<Vec<usize>> = vec![vec![0; d]; n_blocks];
        for r in &recs {
            let day = (r.timestamp - start).num_days();
            let b = (day / 7) as usize;
            if b >= n_blocks {
                continue; // trailing partial block
            }
            for (j, v) in r.values.iter().enumerate() {
                if let Some(v) = v {
                    block_count[b][j] += 1;
                    if *v > block_max[b][j] {
                        block_max[b][j] = *v;
                    }
                }
            }
        }
        let mut member_kept = 0usize;
        for b in 0..n_blocks {
            let coverage_ok = (0..d).all(|j| {
                block_count[b][j] as f64 >= BLOCK_COVERAGE_MIN * expected_per_block
            });
            if !coverage_ok {
                if block_count[b].iter().any(|&c| c > 0) {
                    log::debug!("dropping block {b} of member {member}: coverage below {BLOCK_COVERAGE_MIN}");
                }
                continue;
            }
            values.push_row(&block_max[b])?;
            member_rows.push(kept_members.len());
            member_kept += 1;
        }
        if member_kept > 0 {
            kept_members.push(member.clone());
        }
        let _ = m_idx;
    }
    if values.nrows() == 0 {
        return Err(SparError::InsufficientData { context: "weekly_maxima", needed: 1, got: 0 });
    }
    ObservationMatrix::new(values, series.site_names.clone(), label, Some((kept_members, member_rows)))
}

/// Marginal distribution for synthetic data with analytically known
/// quantiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MarginSpec {
    /// `exp(mu + sigma Z)`, `Z` standard normal.
    LogNormal { mu: f64, sigma: f64 },
    /// Lognormal body spliced with a GPD upper tail above the body's
    /// `threshold_q` quantile.
    GpdTailed { body_mu: f64, body_sigma: f64, threshold_q: f64, gpd_sigma: f64, gpd_xi: f64 },
}

impl MarginSpec {
    /// Quantile function; exact for both variants.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(0.0..1.0).contains(&p) {
            return Err(SparError::ParamDomain(format!("quantile level {p} outside [0,1)")));
        }
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        match self {
            MarginSpec::LogNormal { mu, sigma } => {
                if p == 0.0 {
                    return Ok(0.0);
                }
                Ok((mu + sigma * normal.inverse_cdf(p)).exp())
            }
            MarginSpec::GpdTailed { body_mu, body_sigma, threshold_q, gpd_sigma, gpd_xi } => {
                if !(0.0 < *threshold_q && *threshold_q < 1.0) {
                    return Err(SparError::ParamDomain("threshold_q must lie in (0,1)".into()));
                }
                if p <= *threshold_q {
                    if p == 0.0 {
                        return Ok(0.0);
                    }
                    Ok((body_mu + body_sigma * normal.inverse_cdf(p)).exp())
                } else {
                    let t0 = (body_mu + body_sigma * normal.inverse_cdf(*threshold_q)).exp();
                    let params = GpdParams::new(*gpd_sigma, *gpd_xi)?;
                    Ok(t0 + gpd_quantile((p - threshold_q) / (1.0 - threshold_q), &params)?)
                }
            }
        }
    }
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix
/// given as flat row-major `d × d`.
fn cholesky(corr: &[f64], d: usize) -> Result<Vec<f64>> {
    if corr.len() != d * d {
        return Err(SparError::ShapeMismatch { expected: d * d, got: corr.len() });
    }
    for i in 0..d {
        for j in 0..d {
            if (corr[i * d + j] - corr[j * d + i]).abs() > 1e-12 {
                return Err(SparError::NotPositiveDefinite);
            }
        }
    }
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut sum = corr[i * d + j];
            for k in 0..j {
                sum -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if sum <= 0.0 {
                    return Err(SparError::NotPositiveDefinite);
                }
                l[i * d + i] = sum.sqrt();
            } else {
                l[i * d + j] = sum / l[j * d + j];
            }
        }
    }
    Ok(l)
}

/// Gaussian-copula sample with the given margins; the oracle data generator
/// for tests and the `synth` command. `correlation` is flat row-major
/// `d × d`.
pub fn synth_gaussian_copula<R: Rng + ?Sized>(
    n: usize,
    d: usize,
    correlation: &[f64],
    margins: &[MarginSpec],
    rng: &mut R,
) -> Result<ObservationMatrix> {
    if margins.len() != d {
        return Err(SparError::ShapeMismatch { expected: d, got: margins.len() });
    }
    if n == 0 {
        return Err(SparError::InsufficientData { context: "synth_gaussian_copula", needed: 1, got: 0 });
    }
    let l = cholesky(correlation, d)?;
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut values = Matrix::zeros(n, d);
    let mut z = vec![0.0; d];
    for i in 0..n {
        for zj in z.iter_mut() {
            *zj = rng.sample(rand_distr::StandardNormal);
        }
        for j in 0..d {
            let mut corr_z = 0.0;
            for k in 0..=j {
                corr_z += l[j * d + k] * z[k];
            }
            // clamp the copula level away from {0,1} so quantiles stay finite
            let u = normal.cdf(corr_z).clamp(1e-15, 1.0 - 1e-15);
            values.row_mut(i)[j] = margins[j].quantile(u)?;
        }
    }
    let site_names = (0..d).map(|j| format!("site{}", j + 1)).collect();
    ObservationMatrix::new(values, site_names, "synthetic".into(), None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::io::Write;

    fn write_csv(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn observation_matrix_validation() {
        let ok = Matrix::from_rows(&[&[1.0, 2.0]]).unwrap();
        assert!(ObservationMatrix::new(ok.clone(), vec!["a".into(), "b".into()], "w".into(), None).is_ok());
        // d = 1 rejected
        let one = Matrix::from_rows(&[&[1.0]]).unwrap();
        assert!(ObservationMatrix::new(one, vec!["a".into()], "w".into(), None).is_err());
        // non-positive value rejected
        let bad = Matrix::from_rows(&[&[1.0, 0.0]]).unwrap();
        assert!(ObservationMatrix::new(bad, vec!["a".into(), "b".into()], "w".into(), None).is_err());
    }

    #[test]
    fn read_valid_two_rows() {
        let f = write_csv(
            "timestamp,member,a,b\n2000-01-01T00:00:00,m1,1.0,2.0\n2000-01-02T00:00:00,m1,3.0,4.0\n",
        );
        let t = read_series_csv(f.path()).unwrap();
        assert_eq!(t.records.len(), 2);
        assert_eq!(t.site_names, vec!["a", "b"]);
        assert_eq!(t.members, vec!["m1"]);
        assert_eq!(t.records[1].values[1], Some(4.0));
    }

    #[test]
    fn read_rejects_shuffled_timestamps() {
        let f = write_csv(
            "timestamp,member,a,b\n2000-01-02T00:00:00,m1,1.0,2.0\n2000-01-01T00:00:00,m1,3.0,4.0\n",
        );
        match read_series_csv(f.path()) {
            Err(SparError::Parse { line: 3, .. }) => {}
            other => panic!("expected parse error at line 3, got {other:?}"),
        }
    }

    #[test]
    fn read_records_gaps() {
        let f = write_csv("timestamp,member,a,b\n2000-01-01,m1,NA,2.0\n2000-01-02,m1,1.5,\n");
        let t = read_series_csv(f.path()).unwrap();
        assert_eq!(t.records[0].values[0], None);
        assert_eq!(t.records[1].values[1], None);
    }

    #[test]
    fn read_write_round_trip_f64() {
        let vals = [1.234_567_890_123_456_7e2, 3.0e-7, 987.654_321];
        let mut content = String::from("timestamp,member,a,b\n");
        for (i, v) in vals.iter().enumerate() {
            content.push_str(&format!("2000-01-0{}T00:00:00,m1,{:?},1.0\n", i + 1, v));
        }
        let f = write_csv(&content);
        let t = read_series_csv(f.path()).unwrap();
        for (i, v) in vals.iter().enumerate() {
            assert_eq!(t.records[i].values[0], Some(*v));
        }
    }

    fn daily_series(days: usize, value: impl Fn(usize) -> f64) -> SeriesTable {
        let start = NaiveDate::from_ymd_opt(2000, 1, 1).unwrap();
        let records = (0..days)
            .map(|k| SeriesRecord {
                timestamp: (start + chrono::Days::new(k as u64)).and_hms_opt(0, 0, 0).unwrap(),
                member: "m1".into(),
                values: vec![Some(value(k)), Some(1.0)],
            })
            .collect();
        SeriesTable { site_names: vec!["a".into(), "b".into()], records, members: vec!["m1".into()] }
    }

    #[test]
    fn weekly_maxima_counts_and_values() {
        // 14 days → 2 blocks; constant series keeps the constant
        let s = daily_series(14, |_| 5.0);
        let m = weekly_maxima(&s, (2000, 2000)).unwrap();
        assert_eq!(m.nrows(), 2);
        assert!(m.values().rows_iter().all(|r| r[0] == 5.0));
    }

    #[test]
    fn weekly_maxima_spike_lands_in_second_block() {
        let s = daily_series(14, |k| if k == 9 { 99.0 } else { 1.0 });
        let m = weekly_maxima(&s, (2000, 2000)).unwrap();
        assert_eq!(m.values().row(0)[0], 1.0);
        assert_eq!(m.values().row(1)[0], 99.0);
    }

    #[test]
    fn weekly_maxima_drops_low_coverage_block() {
        // second week has only 2 of 7 days present
        let start = NaiveDate::from_ymd_opt(2000, 1, 1).unwrap();
        let mut records = Vec::new();
        for k in 0..9usize {
            if k >= 7 && k % 2 == 0 {
                continue;
            }
            records.push(SeriesRecord {
                timestamp: (start + chrono::Days::new(k as u64)).and_hms_opt(0, 0, 0).unwrap(),
                member: "m1".into(),
                values: vec![Some(1.0), Some(1.0)],
            });
        }
        let s = SeriesTable { site_names: vec!["a".into(), "b".into()], records, members: vec!["m1".into()] };
        let m = weekly_maxima(&s, (2000, 2000)).unwrap();
        assert_eq!(m.nrows(), 1);
    }

    #[test]
    fn block_count_identity() {
        // rows per member = floor(window_days / 7); 2000 is a leap year
        let s = daily_series(366, |_| 2.0);
        let m = weekly_maxima(&s, (2000, 2000)).unwrap();
        assert_eq!(m.nrows(), 366 / 7);
    }

    fn multi_member_data() -> ObservationMatrix {
        let mut values = Matrix::zeros(0, 0);
        let mut member_rows = Vec::new();
        let members: Vec<String> = (0..5).map(|k| format!("m{k}")).collect();
        for m in 0..5usize {
            for b in 0..4usize {
                values.push_row(&[1.0 + m as f64, 2.0 + b as f64]).unwrap();
                member_rows.push(m);
            }
        }
        ObservationMatrix::new(values, vec!["a".into(), "b".into()], "w".into(), Some((members, member_rows)))
            .unwrap()
    }

    #[test]
    fn subsample_members_basic() {
        let data = multi_member_data();
        let all = subsample_members(&data, 5).unwrap();
        assert_eq!(all.nrows(), data.nrows());
        let one = subsample_members(&data, 1).unwrap();
        assert_eq!(one.nrows(), 4);
        assert!(subsample_members(&data, 6).is_err());
        // nesting: k=2 rows are a prefix-subset of k=4 rows
        let two = subsample_members(&data, 2).unwrap();
        let four = subsample_members(&data, 4).unwrap();
        for i in 0..two.nrows() {
            assert_eq!(two.values().row(i), four.values().row(i));
        }
    }

    #[test]
    fn synth_identity_correlation_near_zero_rank_corr() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let margins = vec![
            MarginSpec::LogNormal { mu: 0.0, sigma: 1.0 },
            MarginSpec::LogNormal { mu: 0.5, sigma: 0.5 },
        ];
        let data =
            synth_gaussian_copula(20_000, 2, &[1.0, 0.0, 0.0, 1.0], &margins, &mut rng).unwrap();
        let x = data.values().column(0);
        let y = data.values().column(1);
        // Pearson on ranks ≈ Spearman; 3 SE ≈ 3/√n
        let n = x.len();
        let rank = |v: &[f64]| {
            let mut idx: Vec<usize> = (0..v.len()).collect();
            idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
            let mut r = vec![0.0; v.len()];
            for (pos, &i) in idx.iter().enumerate() {
                r[i] = pos as f64;
            }
            r
        };
        let rx = rank(&x);
        let ry = rank(&y);
        let mean = (n as f64 - 1.0) / 2.0;
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..n {
            num += (rx[i] - mean) * (ry[i] - mean);
            den += (rx[i] - mean) * (rx[i] - mean);
        }
        let corr = num / den;
        assert!(corr.abs() < 3.0 / (n as f64).sqrt(), "rank corr {corr}");
    }

    #[test]
    fn synth_comonotone_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let margins = vec![
            MarginSpec::LogNormal { mu: 0.0, sigma: 1.0 },
            MarginSpec::LogNormal { mu: 0.0, sigma: 1.0 },
        ];
        let data =
            synth_gaussian_copula(500, 2, &[1.0, 1.0 - 1e-12, 1.0 - 1e-12, 1.0], &margins, &mut rng)
                .unwrap();
        for row in data.values().rows_iter() {
            assert_relative_eq!(row[0], row[1], max_relative = 1e-5);
        }
    }

    #[test]
    fn synth_lognormal_quantile() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let margins = vec![
            MarginSpec::LogNormal { mu: 0.0, sigma: 1.0 },
            MarginSpec::LogNormal { mu: 0.0, sigma: 1.0 },
        ];
        let data =
            synth_gaussian_copula(200_000, 2, &[1.0, 0.3, 0.3, 1.0], &margins, &mut rng).unwrap();
        let mut x = data.values().column(0);
        x.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let q99 = x[(0.99 * x.len() as f64) as usize];
        assert_relative_eq!(q99, (2.326_347_874_040_841f64).exp(), max_relative = 0.03);
    }

    #[test]
    fn synth_rejects_bad_correlation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let margins = vec![
            MarginSpec::LogNormal { mu: 0.0, sigma: 1.0 },
            MarginSpec::LogNormal { mu: 0.0, sigma: 1.0 },
        ];
        // not symmetric
        assert!(synth_gaussian_copula(10, 2, &[1.0, 0.5, 0.2, 1.0], &margins, &mut rng).is_err());
        // not positive definite
        assert!(synth_gaussian_copula(10, 2, &[1.0, 1.5, 1.5, 1.0], &margins, &mut rng).is_err());
    }

    #[test]
    fn gpd_tailed_margin_quantile_continuous() {
        let m = MarginSpec::GpdTailed {
            body_mu: 0.0,
            body_sigma: 1.0,
            threshold_q: 0.85,
            gpd_sigma: 2.0,
            gpd_xi: 0.2,
        };
        let below = m.quantile(0.849999).unwrap();
        let at = m.quantile(0.85).unwrap();
        let above = m.quantile(0.850001).unwrap();
        assert!(below <= at && at <= above);
        assert!((above - below).abs() < 1e-3);
        // far tail is GPD-shaped: quantile grows without bound
        assert!(m.quantile(0.9999).unwrap() > m.quantile(0.99).unwrap());
    }
}

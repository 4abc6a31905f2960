//! Dataset model and ingestion.
//!
//! A [`RegimeDataset`] holds `Q` regimes of raw time-series segments over the
//! same `d` variables. Windowing with lag depth `p` turns each raw segment of
//! length `T` into `T - p` samples of width `(p+1)d`, laid out
//! `[Y_t | Y_{t-1} | ... | Y_{t-p}]` to match the unrolled node indices.
//! Segments are windowed independently so no sample straddles a regime or
//! segment boundary.

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Window a raw `T x d` series into `(T-p) x (p+1)d` samples.
pub fn window(series: &Array2<f64>, p: usize) -> Result<Array2<f64>> {
    let (t, d) = series.dim();
    if t <= p {
        return Err(Error::Data(format!("series of length {t} cannot be windowed with p={p}")));
    }
    let mut out = Array2::zeros((t - p, (p + 1) * d));
    for row in 0..t - p {
        for k in 0..=p {
            out.slice_mut(s![row, k * d..(k + 1) * d])
                .assign(&series.row(row + p - k));
        }
    }
    Ok(out)
}

/// One regime: raw segments plus their windowed samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Regime {
    pub observational: bool,
    segments: Vec<Array2<f64>>,
    samples: Array2<f64>,
}

impl Regime {
    fn new(observational: bool, segments: Vec<Array2<f64>>, d: usize, p: usize) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::Data("regime has no segments".into()));
        }
        let mut windows = Vec::new();
        for seg in &segments {
            if seg.ncols() != d {
                return Err(Error::Data(format!(
                    "segment has {} columns, expected {d}",
                    seg.ncols()
                )));
            }
            windows.push(window(seg, p)?);
        }
        let n: usize = windows.iter().map(|w| w.nrows()).sum();
        let mut samples = Array2::zeros((n, (p + 1) * d));
        let mut at = 0;
        for w in windows {
            samples.slice_mut(s![at..at + w.nrows(), ..]).assign(&w);
            at += w.nrows();
        }
        Ok(Regime { observational, segments, samples })
    }

    /// Windowed samples, `N x (p+1)d`.
    pub fn samples(&self) -> &Array2<f64> {
        &self.samples
    }

    /// Raw (pre-windowing) segments, each `T_s x d`.
    pub fn segments(&self) -> &[Array2<f64>] {
        &self.segments
    }
}

/// Multi-regime dataset; regime 0 is always the observational one.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimeDataset {
    d: usize,
    p: usize,
    variable_names: Vec<String>,
    regimes: Vec<Regime>,
}

impl RegimeDataset {
    /// Build from raw segments; `regimes[q]` is `(observational, segments)`.
    pub fn from_segments(
        d: usize,
        p: usize,
        variable_names: Vec<String>,
        regimes: Vec<(bool, Vec<Array2<f64>>)>,
    ) -> Result<Self> {
        if variable_names.len() != d {
            return Err(Error::Data(format!(
                "{} variable names for d={d}",
                variable_names.len()
            )));
        }
        if regimes.is_empty() {
            return Err(Error::Data("dataset needs at least one regime".into()));
        }
        if !regimes[0].0 {
            return Err(Error::Data("regime 0 must be observational".into()));
        }
        let regimes = regimes
            .into_iter()
            .map(|(obs, segs)| Regime::new(obs, segs, d, p))
            .collect::<Result<Vec<_>>>()?;
        Ok(RegimeDataset { d, p, variable_names, regimes })
    }

    /// Single-segment convenience constructor.
    pub fn from_series(
        d: usize,
        p: usize,
        variable_names: Vec<String>,
        series: Vec<Array2<f64>>,
    ) -> Result<Self> {
        let regimes = series
            .into_iter()
            .enumerate()
            .map(|(q, s)| (q == 0, vec![s]))
            .collect();
        Self::from_segments(d, p, variable_names, regimes)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Sample width `(p+1)d`.
    pub fn width(&self) -> usize {
        (self.p + 1) * self.d
    }

    pub fn n_regimes(&self) -> usize {
        self.regimes.len()
    }

    pub fn variable_names(&self) -> &[String] {
        &self.variable_names
    }

    pub fn regime(&self, q: usize) -> &Regime {
        &self.regimes[q]
    }

    pub fn regimes(&self) -> &[Regime] {
        &self.regimes
    }

    /// Z-score every variable and its lagged copies.
    ///
    /// Statistics are pooled over the contemporaneous columns of all regimes
    /// by default (`per_regime = false`), which preserves cross-regime mean
    /// shifts inside each regime's samples only up to the shared transform;
    /// per-regime statistics are available behind the flag.
    pub fn normalize(&self, per_regime: bool) -> Result<(Self, Vec<NormStats>)> {
        if per_regime {
            let mut stats = Vec::new();
            let mut regimes = Vec::new();
            for r in &self.regimes {
                let st = stats_of(std::slice::from_ref(r), self.d, &self.variable_names)?;
                regimes.push((r.observational, apply_stats(r.segments(), &st)));
                stats.push(st);
            }
            let ds = Self::from_segments(self.d, self.p, self.variable_names.clone(), regimes)?;
            Ok((ds, stats))
        } else {
            let st = stats_of(&self.regimes, self.d, &self.variable_names)?;
            let regimes = self
                .regimes
                .iter()
                .map(|r| (r.observational, apply_stats(r.segments(), &st)))
                .collect();
            let ds = Self::from_segments(self.d, self.p, self.variable_names.clone(), regimes)?;
            Ok((ds, vec![st]))
        }
    }
}

/// Per-variable mean/std used by `normalize`; kept for the inverse transform.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NormStats {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

fn stats_of(regimes: &[Regime], d: usize, names: &[String]) -> Result<NormStats> {
    let mut means = vec![0.0; d];
    let mut count = 0usize;
    for r in regimes {
        let samples = r.samples();
        for row in samples.rows() {
            for v in 0..d {
                means[v] += row[v];
            }
        }
        count += samples.nrows();
    }
    for m in &mut means {
        *m /= count as f64;
    }
    let mut vars = vec![0.0; d];
    for r in regimes {
        for row in r.samples().rows() {
            for v in 0..d {
                let e = row[v] - means[v];
                vars[v] += e * e;
            }
        }
    }
    let mut stds = vec![0.0; d];
    for v in 0..d {
        stds[v] = (vars[v] / count as f64).sqrt();
        if stds[v] <= 0.0 {
            return Err(Error::Data(format!(
                "variable {} has zero variance; cannot normalize",
                names[v]
            )));
        }
    }
    Ok(NormStats { means, stds })
}

fn apply_stats(segments: &[Array2<f64>], st: &NormStats) -> Vec<Array2<f64>> {
    segments
        .iter()
        .map(|seg| {
            let mut out = seg.clone();
            for mut row in out.rows_mut() {
                for (v, x) in row.iter_mut().enumerate() {
                    *x = (*x - st.means[v]) / st.stds[v];
                }
            }
            out
        })
        .collect()
}

/// How the reference mean/std for anomaly detection is obtained.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceStats {
    /// Use the entire input series.
    #[default]
    FullSeries,
    /// Use the first `n` rows.
    LeadingSpan(usize),
}

/// Configuration for n-sigma anomaly segmentation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentationConfig {
    pub n_sigma: f64,
    /// Samples per anomaly regime (e.g. 120 for 20 minutes at 10s cadence).
    pub window_len: usize,
    /// Lag depth used to window the resulting regimes.
    pub p: usize,
    #[serde(default)]
    pub reference: ReferenceStats,
    /// Pool all anomaly events into a single interventional regime.
    #[serde(default)]
    pub merge_events: bool,
}

impl SegmentationConfig {
    fn validate(&self) -> Result<()> {
        if self.n_sigma <= 0.0 {
            return Err(Error::Config("n_sigma must be positive".into()));
        }
        if self.window_len < self.p + 1 {
            return Err(Error::Config(format!(
                "window_len {} too small for p={} (need at least p+1)",
                self.window_len, self.p
            )));
        }
        Ok(())
    }
}

/// Split raw telemetry into an observational regime and one interventional
/// regime per anomaly event.
///
/// A time point is anomalous when any variable deviates more than
/// `n_sigma * sigma` from its reference mean. Anomalous points within
/// `window_len` of an event onset belong to that event; each event
/// contributes the `window_len` rows starting at its onset. Remaining
/// anomaly-free spans form regime 0.
pub fn segment_anomalies(
    series: &Array2<f64>,
    variable_names: Vec<String>,
    cfg: &SegmentationConfig,
) -> Result<RegimeDataset> {
    cfg.validate()?;
    let (t, d) = series.dim();
    if variable_names.len() != d {
        return Err(Error::Data(format!(
            "{} variable names for d={d}",
            variable_names.len()
        )));
    }
    let ref_rows = match cfg.reference {
        ReferenceStats::FullSeries => t,
        ReferenceStats::LeadingSpan(nr) => {
            if nr == 0 || nr > t {
                return Err(Error::Config(format!("reference span {nr} out of range 1..={t}")));
            }
            nr
        }
    };
    let mut means = vec![0.0; d];
    for row in series.slice(s![0..ref_rows, ..]).rows() {
        for v in 0..d {
            means[v] += row[v];
        }
    }
    for m in &mut means {
        *m /= ref_rows as f64;
    }
    let mut stds = vec![0.0; d];
    for row in series.slice(s![0..ref_rows, ..]).rows() {
        for v in 0..d {
            let e = row[v] - means[v];
            stds[v] += e * e;
        }
    }
    for st in &mut stds {
        *st = (*st / ref_rows as f64).sqrt();
    }

    let is_anomalous = |row: usize| -> bool {
        (0..d).any(|v| stds[v] > 0.0 && (series[[row, v]] - means[v]).abs() > cfg.n_sigma * stds[v])
    };

    // event onsets: anomalous points, merged within window_len of the onset
    let mut onsets = Vec::new();
    let mut row = 0;
    while row < t {
        if is_anomalous(row) {
            onsets.push(row);
            row += cfg.window_len;
        } else {
            row += 1;
        }
    }

    // event windows, truncated at the end of the series
    let mut events = Vec::new();
    for &onset in &onsets {
        let end = (onset + cfg.window_len).min(t);
        if end - onset < cfg.p + 1 {
            return Err(Error::Data(format!(
                "anomaly at t={onset} leaves only {} rows, need at least p+1={}",
                end - onset,
                cfg.p + 1
            )));
        }
        events.push((onset, end));
    }

    // anomaly-free spans between event windows form regime 0
    let mut clean_spans = Vec::new();
    let mut at = 0;
    for &(start, end) in &events {
        if start > at {
            clean_spans.push((at, start));
        }
        at = end;
    }
    if at < t {
        clean_spans.push((at, t));
    }
    let usable: Vec<Array2<f64>> = clean_spans
        .iter()
        .filter(|&&(a, b)| b - a >= cfg.p + 1)
        .map(|&(a, b)| series.slice(s![a..b, ..]).to_owned())
        .collect();
    if usable.is_empty() {
        return Err(Error::Data(
            "no anomaly-free span long enough to form the observational regime".into(),
        ));
    }

    let mut regimes: Vec<(bool, Vec<Array2<f64>>)> = vec![(true, usable)];
    if cfg.merge_events {
        if !events.is_empty() {
            let segs = events
                .iter()
                .map(|&(a, b)| series.slice(s![a..b, ..]).to_owned())
                .collect();
            regimes.push((false, segs));
        }
    } else {
        for &(a, b) in &events {
            regimes.push((false, vec![series.slice(s![a..b, ..]).to_owned()]));
        }
    }
    RegimeDataset::from_segments(d, cfg.p, variable_names, regimes)
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestJson {
    schema: u32,
    d: usize,
    p: usize,
    variables: Vec<String>,
    regimes: Vec<ManifestRegime>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRegime {
    file: String,
    observational: bool,
    /// Raw row counts per segment when a regime holds more than one
    /// (segments are windowed independently on load).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    segments: Option<Vec<usize>>,
}

/// Write `dataset.json` plus one raw CSV per regime next to it.
pub fn save_manifest(ds: &RegimeDataset, manifest_path: &Path) -> Result<()> {
    let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut regimes = Vec::new();
    for (q, regime) in ds.regimes().iter().enumerate() {
        let file = format!("regime_{q}.csv");
        let mut wtr = csv::Writer::from_path(dir.join(&file))?;
        wtr.write_record(ds.variable_names())
            .map_err(|e| Error::Data(e.to_string()))?;
        for seg in regime.segments() {
            for row in seg.rows() {
                let rec: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
                wtr.write_record(&rec).map_err(|e| Error::Data(e.to_string()))?;
            }
        }
        wtr.flush()?;
        let segments = if regime.segments().len() > 1 {
            Some(regime.segments().iter().map(|s| s.nrows()).collect())
        } else {
            None
        };
        regimes.push(ManifestRegime { file, observational: regime.observational, segments });
    }
    let manifest = ManifestJson {
        schema: 1,
        d: ds.d(),
        p: ds.p(),
        variables: ds.variable_names().to_vec(),
        regimes,
    };
    std::fs::write(manifest_path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

/// Load a dataset manifest, windowing each regime with the manifest's `p`.
pub fn load_manifest(manifest_path: &Path) -> Result<RegimeDataset> {
    let text = std::fs::read_to_string(manifest_path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", manifest_path.display())))?;
    let manifest: ManifestJson =
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("bad manifest: {e}")))?;
    if manifest.schema != 1 {
        return Err(Error::Data(format!("unknown manifest schema version {}", manifest.schema)));
    }
    if manifest.variables.len() != manifest.d {
        return Err(Error::Data(format!(
            "manifest lists {} variables for d={}",
            manifest.variables.len(),
            manifest.d
        )));
    }
    let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut regimes = Vec::new();
    for entry in &manifest.regimes {
        let path: PathBuf = dir.join(&entry.file);
        let raw = read_csv(&path, manifest.d)?;
        let segments = match &entry.segments {
            None => vec![raw],
            Some(lens) => {
                let total: usize = lens.iter().sum();
                if total != raw.nrows() {
                    return Err(Error::Data(format!(
                        "{}: segment lengths sum to {total}, file has {} rows",
                        entry.file,
                        raw.nrows()
                    )));
                }
                let mut segs = Vec::new();
                let mut at = 0;
                for &len in lens {
                    segs.push(raw.slice(s![at..at + len, ..]).to_owned());
                    at += len;
                }
                segs
            }
        };
        regimes.push((entry.observational, segments));
    }
    RegimeDataset::from_segments(manifest.d, manifest.p, manifest.variables, regimes)
}

fn read_csv(path: &Path, d: usize) -> Result<Array2<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    let mut rows: Vec<f64> = Vec::new();
    let mut count = 0usize;
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        if record.len() != d {
            return Err(Error::Data(format!(
                "{}: row {} has {} columns, expected {d}",
                path.display(),
                count + 1,
                record.len()
            )));
        }
        for field in record.iter() {
            rows.push(
                field
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Data(format!("{}: bad value {field:?}: {e}", path.display())))?,
            );
        }
        count += 1;
    }
    Array2::from_shape_vec((count, d), rows)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn window_layout() {
        let series = array![[1.0], [2.0], [3.0]];
        let w = window(&series, 1).unwrap();
        assert_eq!(w, array![[2.0, 1.0], [3.0, 2.0]]);
    }

    #[test]
    fn window_p0_is_identity() {
        let series = array![[1.0, 2.0], [3.0, 4.0]];
        assert_eq!(window(&series, 0).unwrap(), series);
    }

    #[test]
    fn window_two_vars() {
        let series = array![[1.0, 2.0], [3.0, 4.0]];
        let w = window(&series, 1).unwrap();
        assert_eq!(w, array![[3.0, 4.0, 1.0, 2.0]]);
    }

    #[test]
    fn window_rejects_short_series() {
        let series = array![[1.0], [2.0]];
        assert!(window(&series, 2).is_err());
    }

    fn names(d: usize) -> Vec<String> {
        (0..d).map(|i| format!("x{i}")).collect()
    }

    #[test]
    fn normalize_is_idempotent() {
        let series = array![[1.0], [5.0], [2.0], [-3.0], [0.5]];
        let ds = RegimeDataset::from_series(1, 0, names(1), vec![series]).unwrap();
        let (once, _) = ds.normalize(false).unwrap();
        let (twice, _) = once.normalize(false).unwrap();
        for (a, b) in once.regime(0).samples().iter().zip(twice.regime(0).samples().iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn normalize_translation_invariant() {
        let base = array![[1.0], [5.0], [2.0], [-3.0], [0.5]];
        let shifted = base.mapv(|v| v + 42.0);
        let a = RegimeDataset::from_series(1, 0, names(1), vec![base]).unwrap();
        let b = RegimeDataset::from_series(1, 0, names(1), vec![shifted]).unwrap();
        let (na, _) = a.normalize(false).unwrap();
        let (nb, _) = b.normalize(false).unwrap();
        for (x, y) in na.regime(0).samples().iter().zip(nb.regime(0).samples().iter()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn normalize_shares_stats_with_lagged_columns() {
        let series = array![[1.0, 10.0], [5.0, -4.0], [2.0, 7.0], [-3.0, 3.0]];
        let ds = RegimeDataset::from_series(2, 1, names(2), vec![series]).unwrap();
        let (n, stats) = ds.normalize(false).unwrap();
        let s = n.regime(0).samples();
        // lagged column j+d of row t equals contemporaneous column j of row t-1
        for t in 1..s.nrows() {
            for j in 0..2 {
                assert!((s[[t, j + 2]] - s[[t - 1, j]]).abs() < 1e-12);
            }
        }
        assert_eq!(stats.len(), 1);
    }

    #[test]
    fn normalize_rejects_constant_variable() {
        let series = array![[1.0, 3.0], [1.0, 4.0], [1.0, 5.0]];
        let ds = RegimeDataset::from_series(2, 0, names(2), vec![series]).unwrap();
        let err = ds.normalize(false).unwrap_err();
        assert!(err.to_string().contains("x0"), "{err}");
    }

    fn seg_cfg(n_sigma: f64, window_len: usize) -> SegmentationConfig {
        SegmentationConfig {
            n_sigma,
            window_len,
            p: 1,
            reference: ReferenceStats::FullSeries,
            merge_events: false,
        }
    }

    #[test]
    fn segment_constant_noise_is_single_regime() {
        // alternating small values: no point deviates beyond 3 sigma
        let series =
            Array2::from_shape_fn((100, 1), |(i, _)| if i % 2 == 0 { 1.0 } else { -1.0 });
        let ds = segment_anomalies(&series, names(1), &seg_cfg(3.0, 10)).unwrap();
        assert_eq!(ds.n_regimes(), 1);
    }

    #[test]
    fn segment_detects_single_spike() {
        let mut series =
            Array2::from_shape_fn((200, 1), |(i, _)| if i % 2 == 0 { 1.0 } else { -1.0 });
        series[[90, 0]] = 30.0;
        let ds = segment_anomalies(&series, names(1), &seg_cfg(3.0, 10)).unwrap();
        assert_eq!(ds.n_regimes(), 2);
        assert_eq!(ds.regime(1).segments()[0].nrows(), 10);
        assert_eq!(ds.regime(1).segments()[0][[0, 0]], 30.0);
    }

    #[test]
    fn segment_threshold_is_monotone() {
        let mut series =
            Array2::from_shape_fn((300, 1), |(i, _)| if i % 2 == 0 { 1.0 } else { -1.0 });
        series[[50, 0]] = 5.0;
        series[[150, 0]] = 30.0;
        let loose = segment_anomalies(&series, names(1), &seg_cfg(3.0, 10)).unwrap();
        let strict = segment_anomalies(&series, names(1), &seg_cfg(5.0, 10)).unwrap();
        assert!(strict.n_regimes() <= loose.n_regimes());
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let series0 = array![[1.0, 2.5], [3.25, 4.0], [0.125, -1.5], [2.0, 0.0]];
        let series1 = array![[9.0, 8.0], [7.0, 6.0], [5.0, 4.0]];
        let ds = RegimeDataset::from_series(2, 1, names(2), vec![series0, series1]).unwrap();
        let path = dir.path().join("dataset.json");
        save_manifest(&ds, &path).unwrap();
        let back = load_manifest(&path).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn manifest_round_trip_multi_segment() {
        let dir = tempfile::tempdir().unwrap();
        let ds = RegimeDataset::from_segments(
            1,
            1,
            names(1),
            vec![(true, vec![array![[1.0], [2.0], [3.0]], array![[7.0], [8.0]]])],
        )
        .unwrap();
        let path = dir.path().join("dataset.json");
        save_manifest(&ds, &path).unwrap();
        let back = load_manifest(&path).unwrap();
        assert_eq!(ds, back);
        assert_eq!(back.regime(0).segments().len(), 2);
        // windowing never straddles the segment boundary
        assert_eq!(back.regime(0).samples().nrows(), 3);
    }

    #[test]
    fn manifest_missing_file_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dataset.json");
        std::fs::write(
            &path,
            r#"{"schema":1,"d":1,"p":0,"variables":["x0"],"regimes":[{"file":"gone.csv","observational":true}]}"#,
        )
        .unwrap();
        let err = load_manifest(&path).unwrap_err();
        assert!(err.to_string().contains("gone.csv"), "{err}");
    }

    #[test]
    fn manifest_wrong_column_count() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dataset.json");
        std::fs::write(
            &path,
            r#"{"schema":1,"d":2,"p":0,"variables":["a","b"],"regimes":[{"file":"r.csv","observational":true}]}"#,
        )
        .unwrap();
        std::fs::write(dir.path().join("r.csv"), "a,b\n1.0\n").unwrap();
        let err = load_manifest(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("expected 2") && msg.contains("1 columns"), "{msg}");
    }

    #[test]
    fn manifest_unknown_schema() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dataset.json");
        std::fs::write(&path, r#"{"schema":9,"d":1,"p":0,"variables":["x"],"regimes":[]}"#).unwrap();
        assert!(load_manifest(&path).unwrap_err().to_string().contains("schema"));
    }
}

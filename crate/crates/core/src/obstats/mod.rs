//! Observer agreement statistics: Bland-Altman analysis, paired t-tests,
//! intra-/interobserver variability, and comparisons against a reference
//! modality, all over long-form measurement tables.

pub mod dist;
mod svg;
mod table;

pub use svg::bland_altman_svg;
pub use table::{
    read_reference_csv, write_reference_csv, Measurement, MeasurementTable, Modality,
    MEASUREMENT_CSV_HEADER,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatsConfig {
    pub alpha: f64,
    pub loa_multiplier: f64,
}

impl Default for StatsConfig {
    fn default() -> Self {
        StatsConfig { alpha: 0.05, loa_multiplier: 1.96 }
    }
}

impl StatsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must be in (0, 1), got {}", self.alpha)));
        }
        if !(self.loa_multiplier > 0.0) {
            return Err(Error::Config(format!(
                "limit-of-agreement multiplier must be positive, got {}",
                self.loa_multiplier
            )));
        }
        Ok(())
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (n - 1 denominator).
pub fn sample_sd(values: &[f64]) -> f64 {
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    (ss / (values.len() as f64 - 1.0)).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlandAltmanResult {
    /// Mean difference a - b, ml.
    pub bias: f64,
    /// Sample SD of the differences, ml.
    pub sd: f64,
    pub loa_low: f64,
    pub loa_high: f64,
    /// (mean of pair, difference) per pair, for plotting.
    pub points: Vec<(f64, f64)>,
}

/// Bland-Altman agreement between paired measurements.
pub fn bland_altman(pairs: &[(f64, f64)], cfg: &StatsConfig) -> Result<BlandAltmanResult> {
    cfg.validate()?;
    if pairs.len() < 2 {
        return Err(Error::InsufficientData { needed: 2, got: pairs.len() });
    }
    let diffs: Vec<f64> = pairs.iter().map(|(a, b)| a - b).collect();
    let bias = mean(&diffs);
    let sd = sample_sd(&diffs);
    let points = pairs.iter().map(|(a, b)| ((a + b) / 2.0, a - b)).collect();
    Ok(BlandAltmanResult {
        bias,
        sd,
        loa_low: bias - cfg.loa_multiplier * sd,
        loa_high: bias + cfg.loa_multiplier * sd,
        points,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTestResult {
    pub t: f64,
    pub df: usize,
    pub p: f64,
    pub significant: bool,
    /// Set when sd of the differences is exactly zero.
    pub degenerate: bool,
}

/// Two-sided paired t-test of x against y.
pub fn paired_t_test(x: &[f64], y: &[f64], cfg: &StatsConfig) -> Result<TTestResult> {
    cfg.validate()?;
    if x.len() != y.len() {
        return Err(Error::Shape {
            expected: format!("{} paired values", x.len()),
            actual: format!("{}", y.len()),
        });
    }
    if x.len() < 2 {
        return Err(Error::InsufficientData { needed: 2, got: x.len() });
    }
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let n = d.len() as f64;
    let md = mean(&d);
    let sd = sample_sd(&d);
    let df = d.len() - 1;
    if sd == 0.0 {
        // All differences identical: zero mean is perfect agreement, any
        // other mean is an exact disagreement.
        return Ok(if md == 0.0 {
            TTestResult { t: 0.0, df, p: 1.0, significant: false, degenerate: true }
        } else {
            TTestResult {
                t: if md > 0.0 { f64::INFINITY } else { f64::NEG_INFINITY },
                df,
                p: 0.0,
                significant: true,
                degenerate: true,
            }
        });
    }
    let t = md / (sd / n.sqrt());
    let p = dist::student_t_two_sided_p(t, df as f64);
    Ok(TTestResult { t, df, p, significant: p < cfg.alpha, degenerate: false })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariabilityMethod {
    /// 100 * (max - min) / mean over a subject's repeats.
    RangeRatio,
    /// 100 * sd / mean (coefficient of variation).
    Cv,
}

impl std::fmt::Display for VariabilityMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            VariabilityMethod::RangeRatio => write!(f, "range_ratio"),
            VariabilityMethod::Cv => write!(f, "cv"),
        }
    }
}

impl std::str::FromStr for VariabilityMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "range_ratio" => Ok(VariabilityMethod::RangeRatio),
            "cv" => Ok(VariabilityMethod::Cv),
            other => Err(Error::Config(format!("unknown variability method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariabilityResult {
    pub method: VariabilityMethod,
    /// (subject id, variability percent).
    pub per_subject: Vec<(String, f64)>,
    pub mean_pct: f64,
    pub sd_pct: f64,
}

/// Repeat-to-repeat variability per subject, aggregated as mean ± SD percent.
///
/// Input is one repeat set per subject (at least two values each). The
/// method used is recorded in the result.
pub fn intraobserver_variability(
    per_subject: &[(String, Vec<f64>)],
    method: VariabilityMethod,
) -> Result<VariabilityResult> {
    if per_subject.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let mut rows = Vec::with_capacity(per_subject.len());
    for (subject, repeats) in per_subject {
        if repeats.len() < 2 {
            return Err(Error::InsufficientData { needed: 2, got: repeats.len() });
        }
        let m = mean(repeats);
        if m == 0.0 {
            return Err(Error::Domain(format!("subject {subject}: repeat mean is zero")));
        }
        let pct = match method {
            VariabilityMethod::RangeRatio => {
                let max = repeats.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let min = repeats.iter().cloned().fold(f64::INFINITY, f64::min);
                100.0 * (max - min) / m
            }
            VariabilityMethod::Cv => 100.0 * sample_sd(repeats) / m,
        };
        rows.push((subject.clone(), pct));
    }
    let values: Vec<f64> = rows.iter().map(|(_, p)| *p).collect();
    let mean_pct = mean(&values);
    let sd_pct = if values.len() >= 2 { sample_sd(&values) } else { 0.0 };
    Ok(VariabilityResult { method, per_subject: rows, mean_pct, sd_pct })
}

/// The observer pairs reported in an interobserver comparison.
pub const OBSERVER_PAIRS: [(u32, u32); 3] = [(1, 2), (1, 3), (2, 3)];

#[derive(Debug, Clone, PartialEq)]
pub struct PairComparison {
    pub pair: (u32, u32),
    pub n: usize,
    pub agreement: BlandAltmanResult,
    pub t_test: TTestResult,
}

/// Interobserver comparison for each observer pair, using each subject's
/// first repeat of the given modality.
pub fn interobserver_table(
    table: &MeasurementTable,
    modality: Modality,
    cfg: &StatsConfig,
) -> Result<Vec<PairComparison>> {
    let subjects = table.subjects();
    let mut out = Vec::with_capacity(OBSERVER_PAIRS.len());
    for (a, b) in OBSERVER_PAIRS {
        let mut xs = Vec::with_capacity(subjects.len());
        let mut ys = Vec::with_capacity(subjects.len());
        let mut missing = Vec::new();
        for subject in &subjects {
            match (
                table.volume(subject, a, 1, modality),
                table.volume(subject, b, 1, modality),
            ) {
                (Some(x), Some(y)) => {
                    xs.push(x);
                    ys.push(y);
                }
                (x, y) => {
                    if x.is_none() {
                        missing.push(format!("({subject}, observer {a})"));
                    }
                    if y.is_none() {
                        missing.push(format!("({subject}, observer {b})"));
                    }
                }
            }
        }
        if !missing.is_empty() {
            return Err(Error::MissingData(format!(
                "first-repeat {modality} volumes absent for {}",
                missing.join(", ")
            )));
        }
        let pairs: Vec<(f64, f64)> = xs.iter().cloned().zip(ys.iter().cloned()).collect();
        out.push(PairComparison {
            pair: (a, b),
            n: pairs.len(),
            agreement: bland_altman(&pairs, cfg)?,
            t_test: paired_t_test(&xs, &ys, cfg)?,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceComparison {
    pub observer: u32,
    pub n: usize,
    /// Mean ± SD of the observer's first-repeat volumes, ml.
    pub observer_mean: f64,
    pub observer_sd: f64,
    pub agreement: BlandAltmanResult,
    pub t_test: TTestResult,
}

/// Per-observer paired t-tests of first-repeat volumes against reference
/// volumes (one per subject).
pub fn compare_to_reference(
    table: &MeasurementTable,
    modality: Modality,
    reference: &[(String, f64)],
    cfg: &StatsConfig,
) -> Result<Vec<ReferenceComparison>> {
    let subjects = table.subjects();
    let observers = table.observers();
    let mut out = Vec::with_capacity(observers.len());
    for observer in observers {
        let mut obs = Vec::new();
        let mut refs = Vec::new();
        let mut missing = Vec::new();
        for subject in &subjects {
            let r = reference.iter().find(|(s, _)| s == subject).map(|(_, v)| *v);
            match (table.volume(subject, observer, 1, modality), r) {
                (Some(x), Some(y)) => {
                    obs.push(x);
                    refs.push(y);
                }
                (x, r) => {
                    if x.is_none() {
                        missing.push(format!("({subject}, observer {observer})"));
                    }
                    if r.is_none() {
                        missing.push(format!("({subject}, reference)"));
                    }
                }
            }
        }
        if !missing.is_empty() {
            return Err(Error::MissingData(format!(
                "{modality} reference comparison is missing {}",
                missing.join(", ")
            )));
        }
        let pairs: Vec<(f64, f64)> = obs.iter().cloned().zip(refs.iter().cloned()).collect();
        out.push(ReferenceComparison {
            observer,
            n: obs.len(),
            observer_mean: mean(&obs),
            observer_sd: if obs.len() >= 2 { sample_sd(&obs) } else { 0.0 },
            agreement: bland_altman(&pairs, cfg)?,
            t_test: paired_t_test(&obs, &refs, cfg)?,
        });
    }
    Ok(out)
}

/// One row of the results CSV:
/// `comparison,n,bias,sd,loa_low,loa_high,t,df,p,significant`.
#[derive(Debug, Clone, PartialEq)]
pub struct StatsRow {
    pub comparison: String,
    pub n: usize,
    pub agreement: BlandAltmanResult,
    pub t_test: TTestResult,
}

pub const STATS_CSV_HEADER: &str = "comparison,n,bias,sd,loa_low,loa_high,t,df,p,significant";

impl StatsRow {
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{},{:.6},{}",
            self.comparison,
            self.n,
            self.agreement.bias,
            self.agreement.sd,
            self.agreement.loa_low,
            self.agreement.loa_high,
            self.t_test.t,
            self.t_test.df,
            self.t_test.p,
            self.t_test.significant
        )
    }
}

/// The full comparison battery over a study table:
/// per-observer 2D-vs-3D agreement (repeat means), interobserver pairs for
/// both modalities, and per-observer comparisons against the reference.
pub fn study_battery(
    table: &MeasurementTable,
    reference: &[(String, f64)],
    cfg: &StatsConfig,
) -> Result<Vec<StatsRow>> {
    let subjects = table.subjects();
    let mut rows = Vec::new();

    for observer in table.observers() {
        let mut m2d = Vec::new();
        let mut m3d = Vec::new();
        for subject in &subjects {
            let r2 = table.repeat_volumes(subject, observer, Modality::Us2d);
            let r3 = table.repeat_volumes(subject, observer, Modality::Us3d);
            if r2.is_empty() || r3.is_empty() {
                return Err(Error::MissingData(format!(
                    "subject {subject} has no repeats for observer {observer}"
                )));
            }
            m2d.push(mean(&r2));
            m3d.push(mean(&r3));
        }
        let pairs: Vec<(f64, f64)> = m2d.iter().cloned().zip(m3d.iter().cloned()).collect();
        rows.push(StatsRow {
            comparison: format!("intra_md{observer}_us2d_vs_us3d"),
            n: pairs.len(),
            agreement: bland_altman(&pairs, cfg)?,
            t_test: paired_t_test(&m2d, &m3d, cfg)?,
        });
    }

    for modality in [Modality::Us2d, Modality::Us3d] {
        for cmp in interobserver_table(table, modality, cfg)? {
            rows.push(StatsRow {
                comparison: format!("interobs_{modality}_md{}_vs_md{}", cmp.pair.0, cmp.pair.1),
                n: cmp.n,
                agreement: cmp.agreement,
                t_test: cmp.t_test,
            });
        }
    }

    for modality in [Modality::Us2d, Modality::Us3d] {
        for cmp in compare_to_reference(table, modality, reference, cfg)? {
            rows.push(StatsRow {
                comparison: format!("vs_reference_{modality}_md{}", cmp.observer),
                n: cmp.n,
                agreement: cmp.agreement,
                t_test: cmp.t_test,
            });
        }
    }

    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn cfg() -> StatsConfig {
        StatsConfig::default()
    }

    #[test]
    fn bland_altman_equal_pairs() {
        let r = bland_altman(&[(5.0, 5.0), (7.0, 7.0)], &cfg()).unwrap();
        assert_eq!(r.bias, 0.0);
        assert_eq!(r.sd, 0.0);
        assert_eq!((r.loa_low, r.loa_high), (0.0, 0.0));
    }

    #[test]
    fn bland_altman_worked_example() {
        // d = (1, 0, -2): bias -1/3, sd 1.527525...
        let r = bland_altman(&[(5.0, 4.0), (6.0, 6.0), (7.0, 9.0)], &cfg()).unwrap();
        assert_relative_eq!(r.bias, -1.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(r.sd, 1.5275252316519468, epsilon = 1e-12);
        assert_relative_eq!(r.loa_low, -1.0 / 3.0 - 1.96 * 1.5275252316519468, epsilon = 1e-12);
        assert_relative_eq!(r.loa_high, -1.0 / 3.0 + 1.96 * 1.5275252316519468, epsilon = 1e-12);
        assert!((r.loa_low - (-3.327)).abs() < 1e-3);
        assert!((r.loa_high - 2.661).abs() < 1e-3);
        assert_eq!(r.points.len(), 3);
        assert_relative_eq!(r.points[0].0, 4.5, epsilon = 1e-15);
        assert_relative_eq!(r.points[0].1, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn bland_altman_antisymmetric_under_swap() {
        let pairs = [(5.0, 4.0), (6.0, 6.5), (7.0, 9.0), (5.5, 5.0)];
        let swapped: Vec<(f64, f64)> = pairs.iter().map(|&(a, b)| (b, a)).collect();
        let r = bland_altman(&pairs, &cfg()).unwrap();
        let s = bland_altman(&swapped, &cfg()).unwrap();
        assert_relative_eq!(s.bias, -r.bias, epsilon = 1e-12);
        assert_relative_eq!(s.loa_low, -r.loa_high, epsilon = 1e-12);
        assert_relative_eq!(s.loa_high, -r.loa_low, epsilon = 1e-12);
    }

    #[test]
    fn bland_altman_requires_two_pairs() {
        assert!(matches!(
            bland_altman(&[(1.0, 1.0)], &cfg()),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn t_test_identical_samples() {
        let x = [4.0, 5.0, 6.0];
        let r = paired_t_test(&x, &x, &cfg()).unwrap();
        assert_eq!(r.t, 0.0);
        assert_eq!(r.p, 1.0);
        assert!(!r.significant);
        assert!(r.degenerate);
    }

    #[test]
    fn t_test_worked_example() {
        // d = (1..5): mean 3, sd 1.5811, t = 4.2426, df 4, p = 0.0132.
        let x = [2.0, 4.0, 6.0, 8.0, 10.0];
        let y = [1.0, 2.0, 3.0, 4.0, 5.0];
        let r = paired_t_test(&x, &y, &cfg()).unwrap();
        assert_relative_eq!(r.t, 3.0 / (2.5f64.sqrt() / 5.0f64.sqrt()), epsilon = 1e-12);
        assert!((r.t - 4.2426).abs() < 1e-4);
        assert_eq!(r.df, 4);
        assert!((r.p - 0.0132).abs() < 1e-3, "p = {}", r.p);
        assert!(r.significant);
    }

    #[test]
    fn t_test_antisymmetric() {
        let x = [5.1, 6.3, 7.0, 4.2];
        let y = [5.0, 6.0, 7.5, 4.0];
        let a = paired_t_test(&x, &y, &cfg()).unwrap();
        let b = paired_t_test(&y, &x, &cfg()).unwrap();
        assert_relative_eq!(a.t, -b.t, epsilon = 1e-12);
        assert_relative_eq!(a.p, b.p, epsilon = 1e-12);
    }

    #[test]
    fn t_test_determinism() {
        let mut rng = crate::rng::stream(5150, &[]);
        let x: Vec<f64> = (0..30).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = vec![0.0; 30];
        let a = paired_t_test(&x, &y, &cfg()).unwrap();
        let b = paired_t_test(&x, &y, &cfg()).unwrap();
        assert_eq!(a.p.to_bits(), b.p.to_bits());
    }

    #[test]
    fn t_test_degenerate_nonzero_shift() {
        let x = [2.0, 3.0, 4.0];
        let y = [1.0, 2.0, 3.0];
        let r = paired_t_test(&x, &y, &cfg()).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.p, 0.0);
        assert!(r.significant);
    }

    #[test]
    fn variability_examples() {
        let rows = vec![("s1".to_string(), vec![10.0, 10.0, 10.0])];
        let r = intraobserver_variability(&rows, VariabilityMethod::RangeRatio).unwrap();
        assert_eq!(r.per_subject[0].1, 0.0);

        let rows = vec![("s1".to_string(), vec![9.0, 10.0, 11.0])];
        let r = intraobserver_variability(&rows, VariabilityMethod::RangeRatio).unwrap();
        assert_relative_eq!(r.per_subject[0].1, 20.0, epsilon = 1e-12);

        let r = intraobserver_variability(&rows, VariabilityMethod::Cv).unwrap();
        assert_relative_eq!(r.per_subject[0].1, 10.0, epsilon = 1e-12);

        let short = vec![("s1".to_string(), vec![9.0])];
        assert!(matches!(
            intraobserver_variability(&short, VariabilityMethod::Cv),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn variability_scale_invariant() {
        let mut rng = crate::rng::stream(8, &[1]);
        let rows: Vec<(String, Vec<f64>)> = (0..10)
            .map(|i| {
                let base: f64 = rng.random_range(4.0..12.0);
                (
                    format!("s{i}"),
                    (0..3).map(|_| base * rng.random_range(0.9..1.1)).collect(),
                )
            })
            .collect();
        let scaled: Vec<(String, Vec<f64>)> = rows
            .iter()
            .map(|(s, v)| (s.clone(), v.iter().map(|x| x * 3.7).collect()))
            .collect();
        for method in [VariabilityMethod::RangeRatio, VariabilityMethod::Cv] {
            let a = intraobserver_variability(&rows, method).unwrap();
            let b = intraobserver_variability(&scaled, method).unwrap();
            assert_relative_eq!(a.mean_pct, b.mean_pct, epsilon = 1e-9);
            assert_relative_eq!(a.sd_pct, b.sd_pct, epsilon = 1e-9);
        }
    }

    fn fixture_table(shift3: f64, noise: f64) -> (MeasurementTable, Vec<(String, f64)>) {
        let mut rng = crate::rng::stream(314, &[7]);
        let mut records = Vec::new();
        let mut reference = Vec::new();
        for i in 0..8 {
            let subject = format!("s{i}");
            let truth: f64 = 5.0 + i as f64 * 0.8;
            reference.push((subject.clone(), truth));
            for observer in 1..=3u32 {
                for repeat in 1..=3u32 {
                    let jitter: f64 = rng.random_range(-1.0..1.0) * noise;
                    let shift = if observer == 3 { shift3 } else { 0.0 };
                    for modality in [Modality::Us2d, Modality::Us3d] {
                        records.push(Measurement {
                            subject: subject.clone(),
                            observer,
                            repeat,
                            modality,
                            volume_ml: truth + shift + jitter,
                        });
                    }
                }
            }
        }
        (MeasurementTable::new(records).unwrap(), reference)
    }

    #[test]
    fn interobserver_identical_measurements() {
        let (table, _) = fixture_table(0.0, 0.0);
        let rows = interobserver_table(&table, Modality::Us2d, &cfg()).unwrap();
        assert_eq!(rows.len(), 3);
        for row in rows {
            assert_eq!(row.agreement.bias, 0.0);
            assert_eq!(row.t_test.p, 1.0);
        }
    }

    /// Observer 3 adds a constant shift; per-subject noise on that shift is
    /// balanced (±0.05, even count) so the bias stays exact while the
    /// difference variance stays nonzero.
    fn shifted_table(shift3: f64) -> MeasurementTable {
        let mut records = Vec::new();
        for i in 0..8 {
            let subject = format!("s{i}");
            let truth = 5.0 + i as f64 * 0.8;
            let e = if i % 2 == 0 { 0.05 } else { -0.05 };
            for observer in 1..=3u32 {
                let shift = if observer == 3 { shift3 + e } else { 0.0 };
                for modality in [Modality::Us2d, Modality::Us3d] {
                    records.push(Measurement {
                        subject: subject.clone(),
                        observer,
                        repeat: 1,
                        modality,
                        volume_ml: truth + shift,
                    });
                }
            }
        }
        MeasurementTable::new(records).unwrap()
    }

    #[test]
    fn interobserver_detects_constant_shift() {
        let table = shifted_table(2.0);
        let rows = interobserver_table(&table, Modality::Us3d, &cfg()).unwrap();
        let r13 = rows.iter().find(|r| r.pair == (1, 3)).unwrap();
        assert_relative_eq!(r13.agreement.bias, -2.0, epsilon = 1e-12);
        assert!(r13.t_test.p < 0.05, "p = {}", r13.t_test.p);
        let r12 = rows.iter().find(|r| r.pair == (1, 2)).unwrap();
        assert_eq!(r12.agreement.bias, 0.0);
    }

    #[test]
    fn pair_order_convention() {
        let table = shifted_table(1.5);
        let rows = interobserver_table(&table, Modality::Us2d, &cfg()).unwrap();
        let r13 = rows.iter().find(|r| r.pair == (1, 3)).unwrap();
        // Reversing the pair negates the bias.
        let swapped: Vec<(f64, f64)> = table
            .subjects()
            .iter()
            .map(|s| {
                (
                    table.volume(s, 3, 1, Modality::Us2d).unwrap(),
                    table.volume(s, 1, 1, Modality::Us2d).unwrap(),
                )
            })
            .collect();
        let r31 = bland_altman(&swapped, &cfg()).unwrap();
        assert_relative_eq!(r13.agreement.bias, -r31.bias, epsilon = 1e-12);
    }

    #[test]
    fn reference_comparison_fixtures() {
        let (table, reference) = fixture_table(0.0, 0.0);
        let rows = compare_to_reference(&table, Modality::Us3d, &reference, &cfg()).unwrap();
        assert_eq!(rows.len(), 3);
        for row in &rows {
            assert_eq!(row.t_test.p, 1.0);
        }

        // Constant +1 ml offset with small jitter: strong significance.
        let (table, reference) = {
            let mut rng = crate::rng::stream(12, &[3]);
            let mut records = Vec::new();
            let mut reference = Vec::new();
            for i in 0..10 {
                let subject = format!("s{i}");
                let truth = 6.0 + i as f64 * 0.5;
                reference.push((subject.clone(), truth));
                for observer in 1..=3u32 {
                    let jitter: f64 = rng.random_range(-0.05..0.05);
                    records.push(Measurement {
                        subject: subject.clone(),
                        observer,
                        repeat: 1,
                        modality: Modality::Us3d,
                        volume_ml: truth + 1.0 + jitter,
                    });
                }
            }
            (MeasurementTable::new(records).unwrap(), reference)
        };
        let rows = compare_to_reference(&table, Modality::Us3d, &reference, &cfg()).unwrap();
        for row in &rows {
            assert!(row.t_test.p < 0.001, "p = {}", row.t_test.p);
            assert_relative_eq!(row.agreement.bias, 1.0, epsilon = 0.06);
        }
    }

    #[test]
    fn missing_cells_reported() {
        let records = vec![
            Measurement { subject: "a".into(), observer: 1, repeat: 1, modality: Modality::Us2d, volume_ml: 5.0 },
            Measurement { subject: "a".into(), observer: 2, repeat: 1, modality: Modality::Us2d, volume_ml: 5.0 },
            Measurement { subject: "b".into(), observer: 1, repeat: 1, modality: Modality::Us2d, volume_ml: 6.0 },
        ];
        let table = MeasurementTable::new(records).unwrap();
        let err = interobserver_table(&table, Modality::Us2d, &cfg()).unwrap_err();
        assert!(matches!(err, Error::MissingData(_)));
        assert!(err.to_string().contains('b'), "got: {err}");
    }

    #[test]
    fn bias_equals_mean_difference_directly() {
        let mut rng = crate::rng::stream(2024, &[]);
        for _ in 0..50 {
            let n = rng.random_range(2..40);
            let pairs: Vec<(f64, f64)> = (0..n)
                .map(|_| (rng.random_range(1.0..20.0), rng.random_range(1.0..20.0)))
                .collect();
            let r = bland_altman(&pairs, &cfg()).unwrap();
            let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            assert!((r.bias - (mean(&xs) - mean(&ys))).abs() <= 1e-12);
        }
    }

    #[test]
    fn scaling_volumes_scales_agreement() {
        let pairs = [(5.0, 4.5), (6.0, 6.2), (7.0, 8.0), (9.0, 8.1)];
        let scaled: Vec<(f64, f64)> = pairs.iter().map(|&(a, b)| (a * 2.5, b * 2.5)).collect();
        let r = bland_altman(&pairs, &cfg()).unwrap();
        let s = bland_altman(&scaled, &cfg()).unwrap();
        assert_relative_eq!(s.bias, 2.5 * r.bias, epsilon = 1e-12);
        assert_relative_eq!(s.loa_low, 2.5 * r.loa_low, epsilon = 1e-12);
        assert_relative_eq!(s.loa_high, 2.5 * r.loa_high, epsilon = 1e-12);
    }
}

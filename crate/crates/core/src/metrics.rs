//! Profit, stability, sample-efficiency, fairness and competitiveness
//! statistics over evaluation results.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("Jain's index is undefined for negative entry {value} at index {index}")]
    NegativeEntry { index: usize, value: f64 },
    #[error("need at least {needed} time steps, got {found}")]
    TooShort { needed: usize, found: usize },
    #[error("row {row} has {found} agents, expected {expected}")]
    Ragged { row: usize, expected: usize, found: usize },
    #[error("episode indices must be strictly increasing (index {0})")]
    NonIncreasing(usize),
    #[error("smoothing window must be at least 1")]
    ZeroWindow,
}

/// `(sum x)^2 / (n * sum x^2)`. `None` for an empty or all-zero vector.
pub fn jain_index(x: &[f64]) -> Result<Option<f64>, MetricError> {
    if let Some(index) = x.iter().position(|&v| v < 0.0) {
        return Err(MetricError::NegativeEntry { index, value: x[index] });
    }
    let sum: f64 = x.iter().sum();
    let sum_sq: f64 = x.iter().map(|v| v * v).sum();
    if x.is_empty() || sum_sq == 0.0 {
        return Ok(None);
    }
    Ok(Some(sum * sum / (x.len() as f64 * sum_sq)))
}

/// Mean-normalized pairwise Gini, `sum_ij |x_i - x_j| / (2 n^2 mean)`.
///
/// The sign of the mean is kept, so vectors dominated by losses give a
/// negative coefficient. `None` when the mean is zero.
pub fn gini(x: &[f64]) -> Option<f64> {
    if x.is_empty() {
        return None;
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return None;
    }
    let pairwise: f64 = x.iter().map(|a| x.iter().map(|b| (a - b).abs()).sum::<f64>()).sum();
    Some(pairwise / (2.0 * n * n * mean))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AverageProfit {
    pub value: f64,
    /// Fewer than five evaluations were available.
    pub short: bool,
}

/// Mean of the last five evaluation means (all of them if fewer, flagged).
pub fn average_profit(eval_means: &[f64]) -> Option<AverageProfit> {
    if eval_means.is_empty() {
        return None;
    }
    let tail = &eval_means[eval_means.len().saturating_sub(5)..];
    Some(AverageProfit {
        value: tail.iter().sum::<f64>() / tail.len() as f64,
        short: eval_means.len() < 5,
    })
}

/// Sample standard deviation (n - 1). `None` below two values.
pub fn stability(per_seed: &[f64]) -> Option<f64> {
    sample_std(per_seed)
}

pub fn sample_std(x: &[f64]) -> Option<f64> {
    if x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    Some((x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

fn population_std(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Trailing moving average; the first `window - 1` points average the
/// available prefix.
pub fn smooth(values: &[f64], window: usize) -> Result<Vec<f64>, MetricError> {
    if window == 0 {
        return Err(MetricError::ZeroWindow);
    }
    let mut out = Vec::with_capacity(values.len());
    let mut running = 0.0;
    for (i, &v) in values.iter().enumerate() {
        running += v;
        if i >= window {
            running -= values[i - window];
        }
        let count = (i + 1).min(window);
        out.push(running / count as f64);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub episode: usize,
    pub mean_profit: f64,
    pub per_agent: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    points: Vec<CurvePoint>,
}

impl LearningCurve {
    pub fn new(points: Vec<CurvePoint>) -> Result<Self, MetricError> {
        if let Some(i) = points.windows(2).position(|w| w[0].episode >= w[1].episode) {
            return Err(MetricError::NonIncreasing(i + 1));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[CurvePoint] {
        &self.points
    }

    pub fn means(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.mean_profit).collect()
    }

    pub fn episodes(&self) -> Vec<usize> {
        self.points.iter().map(|p| p.episode).collect()
    }

    pub fn smoothed(&self, window: usize) -> Result<Vec<f64>, MetricError> {
        smooth(&self.means(), window)
    }
}

/// Episode index of the first value at or above `threshold`.
pub fn first_crossing(episodes: &[usize], values: &[f64], threshold: f64) -> Option<usize> {
    episodes
        .iter()
        .zip(values)
        .find(|(_, &v)| v >= threshold)
        .map(|(&e, _)| e)
}

/// Episodes until the window-5 smoothed curve reaches 80% of the baseline's
/// asymptotic profit.
pub fn sample_efficiency(curve: &LearningCurve, baseline_asymptote: f64) -> Option<usize> {
    let smoothed = curve.smoothed(5).ok()?;
    first_crossing(&curve.episodes(), &smoothed, 0.8 * baseline_asymptote)
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some(sab / (saa * sbb).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Competitiveness {
    /// Per-agent population std of price over time.
    pub volatility: Vec<f64>,
    /// Per-agent fraction of steps strictly below every rival's price.
    pub undercut_frequency: Vec<f64>,
    /// Mean pairwise Pearson correlation over pairs with non-zero variance.
    pub mean_price_correlation: Option<f64>,
    /// Mean total-variation distance between consecutive share vectors.
    pub churn: f64,
}

/// Price and share series are indexed `[t][agent]`.
pub fn competitiveness(prices: &[Vec<f64>], shares: &[Vec<f64>]) -> Result<Competitiveness, MetricError> {
    let steps = prices.len();
    if steps < 2 {
        return Err(MetricError::TooShort {
            needed: 2,
            found: steps,
        });
    }
    if shares.len() != steps {
        return Err(MetricError::TooShort {
            needed: steps,
            found: shares.len(),
        });
    }
    let n = prices[0].len();
    for (row, (p, s)) in prices.iter().zip(shares).enumerate() {
        for len in [p.len(), s.len()] {
            if len != n {
                return Err(MetricError::Ragged {
                    row,
                    expected: n,
                    found: len,
                });
            }
        }
    }

    let series: Vec<Vec<f64>> = (0..n).map(|i| prices.iter().map(|row| row[i]).collect()).collect();
    let volatility = series.iter().map(|s| population_std(s)).collect();

    let undercut_frequency = (0..n)
        .map(|i| {
            let hits = prices
                .iter()
                .filter(|row| {
                    let rival_min = row
                        .iter()
                        .enumerate()
                        .filter(|&(j, _)| j != i)
                        .map(|(_, &p)| p)
                        .fold(f64::INFINITY, f64::min);
                    row[i] < rival_min
                })
                .count();
            hits as f64 / steps as f64
        })
        .collect();

    let mut corrs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if let Some(c) = pearson(&series[i], &series[j]) {
                corrs.push(c);
            }
        }
    }
    let mean_price_correlation = (!corrs.is_empty()).then(|| corrs.iter().sum::<f64>() / corrs.len() as f64);

    let churn = shares
        .windows(2)
        .map(|w| w[0].iter().zip(&w[1]).map(|(a, b)| (a - b).abs()).sum::<f64>() / 2.0)
        .sum::<f64>()
        / (steps - 1) as f64;

    Ok(Competitiveness {
        volatility,
        undercut_frequency,
        mean_price_correlation,
        churn,
    })
}

/// Per-algorithm summary, one row of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub algorithm: String,
    pub seeds: usize,
    pub average_profit: Option<f64>,
    pub average_profit_short: bool,
    pub stability_std: Option<f64>,
    pub sample_efficiency_episodes: Option<usize>,
    pub jain: Option<f64>,
    pub gini: Option<f64>,
    /// Mean final-evaluation profit per agent, pooled over seeds.
    pub per_agent_profit: Vec<f64>,
    pub price_volatility: Vec<f64>,
    pub undercut_frequency: Vec<f64>,
    pub mean_price_correlation: Option<f64>,
    pub market_share_churn: Option<f64>,
    /// The environment's softmax intensity, echoed.
    pub competitive_intensity: f64,
}

fn fmt_opt(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.prec$}"))
}

fn fmt_vec(v: &[f64], prec: usize) -> String {
    if v.is_empty() {
        return "-".into();
    }
    v.iter().map(|x| format!("{x:.prec$}")).collect::<Vec<_>>().join("/")
}

/// Aligned plain-text comparison table. The sample-efficiency column is
/// left out entirely when no row has a value (no baseline present).
pub fn render_table(reports: &[EvalReport]) -> String {
    let with_eff = reports.iter().any(|r| r.sample_efficiency_episodes.is_some());
    let mut header = vec![
        "Algorithm",
        "Average Profit",
        "Stability (std)",
        "Jain's Index",
        "Gini Coeff",
    ];
    if with_eff {
        header.push("Sample Eff.");
    }
    header.extend(["Volatility", "Undercut", "Price Corr", "Churn", "Beta"]);

    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            let mut row = vec![
                r.algorithm.to_uppercase(),
                fmt_opt(r.average_profit, 2) + if r.average_profit_short { "*" } else { "" },
                fmt_opt(r.stability_std, 2),
                fmt_opt(r.jain, 3),
                fmt_opt(r.gini, 3),
            ];
            if with_eff {
                row.push(r.sample_efficiency_episodes.map_or("-".into(), |e| e.to_string()));
            }
            row.extend([
                fmt_vec(&r.price_volatility, 3),
                fmt_vec(&r.undercut_frequency, 2),
                fmt_opt(r.mean_price_correlation, 3),
                fmt_opt(r.market_share_churn, 4),
                format!("{}", r.competitive_intensity),
            ]);
            row
        })
        .collect();

    let widths: Vec<usize> = (0..header.len())
        .map(|c| rows.iter().map(|r| r[c].len()).chain([header[c].len()]).max().unwrap())
        .collect();
    let line = |cells: Vec<&str>| {
        cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (s, w))| if c == 0 { format!("{s:<w$}") } else { format!("{s:>w$}") })
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut out = line(header.clone()) + "\n";
    out += &widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  ");
    out += "\n";
    for r in &rows {
        out += &line(r.iter().map(String::as_str).collect());
        out += "\n";
    }
    if reports.iter().any(|r| r.average_profit_short) {
        out += "* fewer than five evaluations available\n";
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn jain_examples() {
        assert_eq!(jain_index(&[1.0, 1.0, 1.0]).unwrap(), Some(1.0));
        assert!((jain_index(&[1.0, 0.0, 0.0]).unwrap().unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!((jain_index(&[3.0, 2.0, 1.0]).unwrap().unwrap() - 36.0 / 42.0).abs() < 1e-15);
        assert_eq!(jain_index(&[0.0, 0.0]).unwrap(), None);
        assert!(matches!(
            jain_index(&[1.0, -2.0]),
            Err(MetricError::NegativeEntry { index: 1, .. })
        ));
    }

    #[test]
    fn gini_examples() {
        assert_eq!(gini(&[4.0, 4.0, 4.0]), Some(0.0));
        assert_eq!(gini(&[0.0, 1.0]), Some(0.5));
        // pairwise sum 2 * (1.75 + 1.75) = 7, mean = -1/3, n = 3 -> 7 / (18 * -1/3)
        let g = gini(&[-1.5, 0.25, 0.25]).unwrap();
        assert!(g < 0.0);
        assert!((g - (-7.0 / 6.0)).abs() < 1e-12);
        assert_eq!(gini(&[-1.0, 1.0]), None);
    }

    #[test]
    fn average_profit_examples() {
        assert_eq!(average_profit(&[2.5; 8]).unwrap().value, 2.5);
        let ap = average_profit(&[9.0, 9.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(
            ap,
            AverageProfit {
                value: 3.0,
                short: false
            }
        );
        let ap = average_profit(&[1.0, 2.0, 6.0]).unwrap();
        assert_eq!(
            ap,
            AverageProfit {
                value: 3.0,
                short: true
            }
        );
        assert_eq!(average_profit(&[]), None);
    }

    #[test]
    fn stability_examples() {
        assert_eq!(stability(&[3.0, 3.0, 3.0]), Some(0.0));
        assert!((stability(&[0.0, 2.0]).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(stability(&[1.0, 5.0, 2.0]), stability(&[5.0, 2.0, 1.0]));
        assert_eq!(stability(&[1.0]), None);
    }

    #[test]
    fn smoothing_examples() {
        let x = [1.0, 5.0, -2.0, 7.0];
        assert_eq!(smooth(&x, 1).unwrap(), x.to_vec());
        assert_eq!(smooth(&[3.0; 6], 5).unwrap(), vec![3.0; 6]);
        assert_eq!(*smooth(&[0.0, 0.0, 0.0, 0.0, 5.0], 5).unwrap().last().unwrap(), 1.0);
        assert_eq!(smooth(&[2.0, 4.0], 5).unwrap(), vec![2.0, 3.0]);
        assert_eq!(smooth(&x, 0), Err(MetricError::ZeroWindow));
    }

    #[test]
    fn crossing_examples() {
        assert_eq!(first_crossing(&[0, 20, 40], &[0.5, 0.9, 1.0], 0.8), Some(20));
        assert_eq!(first_crossing(&[0, 20, 40], &[0.5, 0.6, 0.7], 0.8), None);
        assert_eq!(first_crossing(&[0, 20, 40], &[0.5, 0.6, 0.7], 0.5), Some(0));

        let curve = LearningCurve::new(
            [0.0, 0.0, 10.0, 10.0, 10.0, 10.0]
                .iter()
                .enumerate()
                .map(|(i, &m)| CurvePoint {
                    episode: i * 20,
                    mean_profit: m,
                    per_agent: vec![m],
                })
                .collect(),
        )
        .unwrap();
        // smoothed: 0, 0, 3.33, 5, 6, 8 -> first >= 0.8 * 7.5 = 6 at index 4
        assert_eq!(sample_efficiency(&curve, 7.5), Some(80));
        assert_eq!(sample_efficiency(&curve, 100.0), None);
    }

    #[test]
    fn curve_requires_increasing_episodes() {
        let p = |e| CurvePoint {
            episode: e,
            mean_profit: 0.0,
            per_agent: vec![],
        };
        assert_eq!(LearningCurve::new(vec![p(0), p(0)]), Err(MetricError::NonIncreasing(1)));
    }

    #[test]
    fn frozen_market() {
        let prices = vec![vec![5.0; 3]; 4];
        let shares = vec![vec![1.0 / 3.0; 3]; 4];
        let c = competitiveness(&prices, &shares).unwrap();
        assert_eq!(c.volatility, vec![0.0; 3]);
        assert_eq!(c.undercut_frequency, vec![0.0; 3]);
        assert_eq!(c.churn, 0.0);
        assert_eq!(c.mean_price_correlation, None);
    }

    #[test]
    fn cheapest_agent_undercuts_every_step() {
        let prices = vec![vec![1.0, 2.0, 3.0], vec![1.5, 2.0, 1.6], vec![0.7, 0.8, 0.8]];
        let shares = vec![vec![1.0 / 3.0; 3]; 3];
        let c = competitiveness(&prices, &shares).unwrap();
        assert_eq!(c.undercut_frequency, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn churn_example() {
        let prices = vec![vec![1.0; 3]; 2];
        let shares = vec![vec![1.0 / 3.0; 3], vec![0.5, 0.3, 0.2]];
        let c = competitiveness(&prices, &shares).unwrap();
        let expected = ((0.5 - 1.0 / 3.0) + (1.0 / 3.0 - 0.3) + (1.0 / 3.0 - 0.2)) / 2.0;
        assert!((c.churn - expected).abs() < 1e-15);
        assert!((c.churn - 0.1667).abs() < 1e-4);
    }

    #[test]
    fn competitiveness_needs_two_steps() {
        assert!(competitiveness(&[vec![1.0, 2.0]], &[vec![0.5, 0.5]]).is_err());
    }

    #[test]
    fn correlated_prices() {
        let prices = vec![vec![1.0, 2.0], vec![2.0, 4.0], vec![3.0, 6.0]];
        let shares = vec![vec![0.5, 0.5]; 3];
        let c = competitiveness(&prices, &shares).unwrap();
        assert!((c.mean_price_correlation.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn table_drops_efficiency_column_without_baseline() {
        let r = EvalReport {
            algorithm: "mappo".into(),
            seeds: 1,
            average_profit: Some(1.0),
            average_profit_short: true,
            stability_std: None,
            sample_efficiency_episodes: None,
            jain: Some(1.0),
            gini: Some(0.0),
            per_agent_profit: vec![1.0, 1.0],
            price_volatility: vec![0.0, 0.0],
            undercut_frequency: vec![0.0, 0.0],
            mean_price_correlation: None,
            market_share_churn: Some(0.0),
            competitive_intensity: 10.0,
        };
        let t = render_table(&[r]);
        assert!(!t.contains("Sample Eff."));
        assert!(t.contains("MAPPO"));
        assert!(t.contains("Stability (std)"));
    }

    fn vec_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..100.0, 1..8)
    }

    proptest! {
        #[test]
        fn jain_bounds(x in vec_strategy()) {
            if let Some(j) = jain_index(&x).unwrap() {
                let n = x.len() as f64;
                prop_assert!(j >= 1.0 / n - 1e-12 && j <= 1.0 + 1e-12);
            }
        }

        #[test]
        fn fairness_is_scale_invariant(x in vec_strategy(), c in 0.01f64..100.0) {
            let scaled: Vec<f64> = x.iter().map(|v| v * c).collect();
            if let (Some(a), Some(b)) = (jain_index(&x).unwrap(), jain_index(&scaled).unwrap()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
            if let (Some(a), Some(b)) = (gini(&x), gini(&scaled)) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn gini_of_nonnegative_in_unit_interval(x in vec_strategy()) {
            if let Some(g) = gini(&x) {
                prop_assert!((0.0..1.0).contains(&g));
            }
        }

        #[test]
        fn smoothing_commutes_with_shift(x in prop::collection::vec(-50.0f64..50.0, 0..30), c in -10.0f64..10.0, w in 1usize..8) {
            let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
            let a = smooth(&shifted, w).unwrap();
            let b = smooth(&x, w).unwrap();
            for (p, q) in a.iter().zip(&b) {
                prop_assert!((p - (q + c)).abs() < 1e-9);
            }
        }

        #[test]
        fn churn_in_unit_interval_and_permutation_equivariant(
            raw in prop::collection::vec(prop::collection::vec(0.01f64..1.0, 3), 2..10),
            prices in prop::collection::vec(prop::collection::vec(0.7f64..1.3, 3), 2..10),
        ) {
            let t = raw.len().min(prices.len());
            let shares: Vec<Vec<f64>> = raw[..t].iter().map(|r| {
                let s: f64 = r.iter().sum();
                r.iter().map(|v| v / s).collect()
            }).collect();
            let prices = &prices[..t];
            let c = competitiveness(prices, &shares).unwrap();
            prop_assert!(c.churn >= 0.0 && c.churn <= 1.0 + 1e-12);

            let perm = [2usize, 0, 1];
            let pp: Vec<Vec<f64>> = prices.iter().map(|r| perm.iter().map(|&k| r[k]).collect()).collect();
            let ps: Vec<Vec<f64>> = shares.iter().map(|r| perm.iter().map(|&k| r[k]).collect()).collect();
            let cp = competitiveness(&pp, &ps).unwrap();
            for (i, &k) in perm.iter().enumerate() {
                prop_assert!((cp.volatility[i] - c.volatility[k]).abs() < 1e-12);
                prop_assert_eq!(cp.undercut_frequency[i], c.undercut_frequency[k]);
            }
            prop_assert!((cp.churn - c.churn).abs() < 1e-12);
            match (cp.mean_price_correlation, c.mean_price_correlation) {
                (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-9),
                (a, b) => prop_assert_eq!(a.is_some(), b.is_some()),
            }
        }
    }
}

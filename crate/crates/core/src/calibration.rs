//! Demand-model calibration from retail transaction logs.
//!
//! Pipeline: [`load_and_clean`] -> [`aggregate_periods`] (monthly, per SKU)
//! -> [`chronological_split`] -> [`fit_demand`] -> [`evaluate_fit`].
//!
//! The fitted law is constant elasticity,
//! `q = base * (p / p_ref)^(-elasticity)`, estimated by ordinary least
//! squares in log-log space with `p_ref` the median training price. Residual
//! noise is measured in raw demand units.
//!
//! Input CSV header (UCI Online Retail naming; extra columns are ignored):
//! `InvoiceNo,StockCode,Description,Quantity,InvoiceDate,UnitPrice,CustomerID,Country`.
//! Dates are accepted as `M/D/YYYY H:MM` or `YYYY-MM-DD HH:MM[:SS]`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use chrono::{Datelike, NaiveDateTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("header row is missing required column '{0}'")]
    MissingColumn(&'static str),
    #[error("row {row}: {message}")]
    MalformedRow { row: u64, message: String },
    #[error("no records to aggregate")]
    EmptyInput,
    #[error("series has {0} points; at least 5 are needed to fit and validate")]
    TooShort(usize),
    #[error("series is not in strictly increasing period order at index {0}")]
    Unsorted(usize),
    #[error("train fraction {0} must lie in (0, 1)")]
    BadFraction(f64),
    #[error("need at least 4 training points, got {0}")]
    TooFewTrainingPoints(usize),
    #[error("all training prices are identical ({0}); elasticity is unidentifiable")]
    ConstantPrice(f64),
    #[error("non-positive {what} {value} at point {index}")]
    NonPositive {
        what: &'static str,
        value: f64,
        index: usize,
    },
    #[error("validation set is empty")]
    EmptyValidation,
    #[error("demand model file: {0}")]
    ModelFile(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransactionRecord {
    pub invoice: String,
    pub sku: String,
    pub quantity: i64,
    pub unit_price: f64,
    pub timestamp: NaiveDateTime,
    pub customer_id: Option<String>,
}

impl TransactionRecord {
    pub fn is_cancellation(&self) -> bool {
        self.invoice.starts_with('C') || self.invoice.starts_with('c')
    }
}

/// Rows dropped by cleaning, each attributed to the first rule it fails.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct DropCounts {
    pub cancelled: usize,
    pub non_positive_quantity: usize,
    pub non_positive_price: usize,
    pub missing_customer: usize,
}

impl DropCounts {
    pub fn total(&self) -> usize {
        self.cancelled + self.non_positive_quantity + self.non_positive_price + self.missing_customer
    }
}

#[derive(Debug, Deserialize)]
struct RawRow {
    #[serde(rename = "InvoiceNo")]
    invoice: String,
    #[serde(rename = "StockCode")]
    sku: String,
    #[serde(rename = "Quantity")]
    quantity: String,
    #[serde(rename = "InvoiceDate")]
    date: String,
    #[serde(rename = "UnitPrice")]
    price: String,
    #[serde(rename = "CustomerID")]
    customer: String,
}

const REQUIRED_COLUMNS: [&str; 6] = [
    "InvoiceNo",
    "StockCode",
    "Quantity",
    "InvoiceDate",
    "UnitPrice",
    "CustomerID",
];

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    const FORMATS: [&str; 4] = [
        "%m/%d/%Y %H:%M",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%d %H:%M",
        "%m/%d/%Y %H:%M:%S",
    ];
    FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s.trim(), f).ok())
}

/// Parses a transaction CSV without filtering anything.
pub fn read_transactions(path: &Path) -> Result<Vec<TransactionRecord>, CalibrationError> {
    let text = std::fs::read_to_string(path).map_err(|source| CalibrationError::Io {
        path: path.display().to_string(),
        source,
    })?;
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| CalibrationError::MalformedRow {
            row: 1,
            message: e.to_string(),
        })?
        .clone();
    for col in REQUIRED_COLUMNS {
        if !headers.iter().any(|h| h.trim() == col) {
            return Err(CalibrationError::MissingColumn(col));
        }
    }

    let mut out = Vec::new();
    for result in reader.records() {
        let row_err = |row: u64, message: String| CalibrationError::MalformedRow { row, message };
        let record = result.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            row_err(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let raw: RawRow = record
            .deserialize(Some(&headers))
            .map_err(|e| row_err(line, e.to_string()))?;
        let quantity = raw
            .quantity
            .trim()
            .parse::<i64>()
            .map_err(|_| row_err(line, format!("bad Quantity '{}'", raw.quantity)))?;
        let unit_price = raw
            .price
            .trim()
            .parse::<f64>()
            .map_err(|_| row_err(line, format!("bad UnitPrice '{}'", raw.price)))?;
        let timestamp =
            parse_timestamp(&raw.date).ok_or_else(|| row_err(line, format!("bad InvoiceDate '{}'", raw.date)))?;
        let customer = raw.customer.trim();
        out.push(TransactionRecord {
            invoice: raw.invoice.trim().to_string(),
            sku: raw.sku.trim().to_string(),
            quantity,
            unit_price,
            timestamp,
            customer_id: (!customer.is_empty()).then(|| customer.to_string()),
        });
    }
    Ok(out)
}

/// Drops cancelled invoices, non-positive quantities or prices, and rows
/// without a customer id.
pub fn clean(records: Vec<TransactionRecord>) -> (Vec<TransactionRecord>, DropCounts) {
    let mut drops = DropCounts::default();
    let kept = records
        .into_iter()
        .filter(|r| {
            if r.is_cancellation() {
                drops.cancelled += 1;
            } else if r.quantity <= 0 {
                drops.non_positive_quantity += 1;
            } else if !(r.unit_price > 0.0) {
                drops.non_positive_price += 1;
            } else if r.customer_id.is_none() {
                drops.missing_customer += 1;
            } else {
                return true;
            }
            false
        })
        .collect();
    (kept, drops)
}

pub fn load_and_clean(path: &Path) -> Result<(Vec<TransactionRecord>, DropCounts), CalibrationError> {
    Ok(clean(read_transactions(path)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct YearMonth {
    pub year: i32,
    pub month: u32,
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeriodPoint {
    pub period: YearMonth,
    /// Quantity-weighted mean unit price.
    pub mean_price: f64,
    pub quantity: f64,
}

/// One time-sorted monthly series per SKU.
pub fn aggregate_periods(
    records: &[TransactionRecord],
) -> Result<BTreeMap<String, Vec<PeriodPoint>>, CalibrationError> {
    if records.is_empty() {
        return Err(CalibrationError::EmptyInput);
    }
    // (revenue, quantity) per sku and month
    let mut acc: BTreeMap<String, BTreeMap<YearMonth, (f64, f64)>> = BTreeMap::new();
    for r in records {
        let ym = YearMonth {
            year: r.timestamp.year(),
            month: r.timestamp.month(),
        };
        let q = r.quantity as f64;
        let slot = acc.entry(r.sku.clone()).or_default().entry(ym).or_insert((0.0, 0.0));
        slot.0 += q * r.unit_price;
        slot.1 += q;
    }
    Ok(acc
        .into_iter()
        .map(|(sku, months)| {
            let series = months
                .into_iter()
                .map(|(period, (revenue, quantity))| PeriodPoint {
                    period,
                    mean_price: revenue / quantity,
                    quantity,
                })
                .collect();
            (sku, series)
        })
        .collect())
}

/// First `ceil(train_fraction * len)` points train, the rest validate.
pub fn chronological_split(
    series: &[PeriodPoint],
    train_fraction: f64,
) -> Result<(Vec<PeriodPoint>, Vec<PeriodPoint>), CalibrationError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(CalibrationError::BadFraction(train_fraction));
    }
    if series.len() < 5 {
        return Err(CalibrationError::TooShort(series.len()));
    }
    if let Some(i) = series.windows(2).position(|w| w[0].period >= w[1].period) {
        return Err(CalibrationError::Unsorted(i + 1));
    }
    // the epsilon keeps exact products such as 0.8 * 200 from rounding up
    let n_train = ((train_fraction * series.len() as f64) - 1e-9).ceil() as usize;
    let n_train = n_train.clamp(1, series.len() - 1);
    Ok((series[..n_train].to_vec(), series[n_train..].to_vec()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitQuality {
    pub r2: f64,
    pub rmse: f64,
    /// Absent when every validation quantity is zero.
    pub mape: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandModel {
    pub sku: String,
    pub base_demand: f64,
    pub elasticity: f64,
    pub reference_price: f64,
    pub residual_sigma: f64,
    #[serde(flatten)]
    pub fit_quality: Option<FitQuality>,
}

impl DemandModel {
    /// Noise-free demand at `price_ratio = p / p_ref`.
    pub fn expected_demand(&self, price_ratio: f64) -> f64 {
        self.base_demand * price_ratio.powf(-self.elasticity)
    }

    pub fn predict_at_price(&self, price: f64) -> f64 {
        self.expected_demand(price / self.reference_price)
    }

    pub fn validate(&self) -> Result<(), CalibrationError> {
        let bad = |what, value| CalibrationError::ModelFile(format!("{what} = {value} for sku '{}'", self.sku));
        if !(self.base_demand > 0.0) || !self.base_demand.is_finite() {
            return Err(bad("base_demand", self.base_demand));
        }
        if !(self.reference_price > 0.0) || !self.reference_price.is_finite() {
            return Err(bad("reference_price", self.reference_price));
        }
        if !(self.residual_sigma >= 0.0) || !self.residual_sigma.is_finite() {
            return Err(bad("residual_sigma", self.residual_sigma));
        }
        if !(self.elasticity >= 0.0) || !self.elasticity.is_finite() {
            return Err(bad("elasticity", self.elasticity));
        }
        Ok(())
    }

    /// Parameter-wise average across SKUs (fit quality dropped).
    pub fn pooled(models: &[DemandModel]) -> Option<DemandModel> {
        if models.is_empty() {
            return None;
        }
        let n = models.len() as f64;
        let avg = |f: fn(&DemandModel) -> f64| models.iter().map(f).sum::<f64>() / n;
        Some(DemandModel {
            sku: "pooled".into(),
            base_demand: avg(|m| m.base_demand),
            elasticity: avg(|m| m.elasticity),
            reference_price: avg(|m| m.reference_price),
            residual_sigma: avg(|m| m.residual_sigma),
            fit_quality: None,
        })
    }
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Log-log least squares: `ln q = ln base - elasticity * ln(p / p_ref)`.
pub fn fit_demand(sku: &str, train: &[PeriodPoint]) -> Result<DemandModel, CalibrationError> {
    if train.len() < 4 {
        return Err(CalibrationError::TooFewTrainingPoints(train.len()));
    }
    for (index, p) in train.iter().enumerate() {
        if !(p.mean_price > 0.0) {
            return Err(CalibrationError::NonPositive {
                what: "price",
                value: p.mean_price,
                index,
            });
        }
        if !(p.quantity > 0.0) {
            return Err(CalibrationError::NonPositive {
                what: "quantity",
                value: p.quantity,
                index,
            });
        }
    }
    let prices: Vec<f64> = train.iter().map(|p| p.mean_price).collect();
    let p_ref = median(&prices);
    let xs: Vec<f64> = prices.iter().map(|p| (p / p_ref).ln()).collect();
    let ys: Vec<f64> = train.iter().map(|p| p.quantity.ln()).collect();
    let n = xs.len() as f64;
    let x_mean = xs.iter().sum::<f64>() / n;
    let y_mean = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - x_mean).powi(2)).sum();
    if sxx <= 1e-24 {
        return Err(CalibrationError::ConstantPrice(prices[0]));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - x_mean) * (y - y_mean)).sum();
    let slope = sxy / sxx;
    let elasticity = (-slope).clamp(0.0, 10.0);
    // intercept re-solved for the (possibly clamped) slope
    let base_demand = (y_mean + elasticity * x_mean).exp();

    let mut model = DemandModel {
        sku: sku.to_string(),
        base_demand,
        elasticity,
        reference_price: p_ref,
        residual_sigma: 0.0,
        fit_quality: None,
    };
    let residuals: Vec<f64> = train
        .iter()
        .map(|p| p.quantity - model.predict_at_price(p.mean_price))
        .collect();
    let r_mean = residuals.iter().sum::<f64>() / n;
    model.residual_sigma = (residuals.iter().map(|r| (r - r_mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    Ok(model)
}

/// R^2, RMSE and MAPE of the model's predictions on `validation`.
///
/// Points with zero actual quantity are left out of MAPE. A validation set
/// with zero variance gets R^2 = 1 for a perfect fit and 0 otherwise.
pub fn evaluate_fit(model: &DemandModel, validation: &[PeriodPoint]) -> Result<FitQuality, CalibrationError> {
    let preds: Vec<f64> = validation
        .iter()
        .map(|p| model.predict_at_price(p.mean_price))
        .collect();
    let actual: Vec<f64> = validation.iter().map(|p| p.quantity).collect();
    fit_quality(&actual, &preds)
}

pub fn fit_quality(actual: &[f64], predicted: &[f64]) -> Result<FitQuality, CalibrationError> {
    if actual.is_empty() {
        return Err(CalibrationError::EmptyValidation);
    }
    let n = actual.len() as f64;
    let mean = actual.iter().sum::<f64>() / n;
    let sse: f64 = actual.iter().zip(predicted).map(|(a, p)| (a - p).powi(2)).sum();
    let sst: f64 = actual.iter().map(|a| (a - mean).powi(2)).sum();
    let r2 = if sst > 0.0 {
        1.0 - sse / sst
    } else if sse == 0.0 {
        1.0
    } else {
        0.0
    };
    let rmse = (sse / n).sqrt();
    let mut skipped = 0;
    let ape: Vec<f64> = actual
        .iter()
        .zip(predicted)
        .filter_map(|(a, p)| {
            if *a == 0.0 {
                skipped += 1;
                None
            } else {
                Some(((a - p) / a).abs())
            }
        })
        .collect();
    if skipped > 0 {
        log::warn!("{skipped} validation point(s) with zero quantity excluded from MAPE");
    }
    let mape = (!ape.is_empty()).then(|| ape.iter().sum::<f64>() / ape.len() as f64);
    Ok(FitQuality { r2, rmse, mape })
}

/// Structured demand-model file consumed by the market simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandModelFile {
    pub models: Vec<DemandModel>,
}

impl DemandModelFile {
    pub fn load(path: &Path) -> Result<Self, CalibrationError> {
        let text = std::fs::read_to_string(path).map_err(|source| CalibrationError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, CalibrationError> {
        let file: Self = serde_json::from_str(text).map_err(|e| CalibrationError::ModelFile(e.to_string()))?;
        if file.models.is_empty() {
            return Err(CalibrationError::ModelFile("no models".into()));
        }
        for m in &file.models {
            m.validate()?;
        }
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<(), CalibrationError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| CalibrationError::ModelFile(e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|source| CalibrationError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// The named SKU, or the parameter average over all SKUs.
    pub fn select(&self, sku: Option<&str>) -> Result<DemandModel, CalibrationError> {
        match sku {
            Some(s) => self
                .models
                .iter()
                .find(|m| m.sku == s)
                .cloned()
                .ok_or_else(|| CalibrationError::ModelFile(format!("no model for sku '{s}'"))),
            None => Ok(DemandModel::pooled(&self.models).expect("validated non-empty")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CalibrationSummary {
    pub models: Vec<DemandModel>,
    pub drops: DropCounts,
    pub kept_rows: usize,
    /// SKUs whose series could not be fitted, with the reason.
    pub skipped: Vec<(String, String)>,
}

/// Whole pipeline: clean, aggregate monthly, 80/20 chronological split,
/// fit on train and score on validation for every SKU.
pub fn calibrate(path: &Path) -> Result<CalibrationSummary, CalibrationError> {
    let (records, drops) = load_and_clean(path)?;
    let kept_rows = records.len();
    let series = aggregate_periods(&records)?;
    let mut models = Vec::new();
    let mut skipped = Vec::new();
    for (sku, points) in series {
        let fitted = chronological_split(&points, 0.8).and_then(|(train, valid)| {
            let mut model = fit_demand(&sku, &train)?;
            model.fit_quality = Some(evaluate_fit(&model, &valid)?);
            Ok(model)
        });
        match fitted {
            Ok(m) => models.push(m),
            Err(e) => skipped.push((sku, e.to_string())),
        }
    }
    Ok(CalibrationSummary {
        models,
        drops,
        kept_rows,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    const HEADER: &str = "InvoiceNo,StockCode,Description,Quantity,InvoiceDate,UnitPrice,CustomerID,Country\n";

    fn write_csv(body: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(body.as_bytes()).unwrap();
        f
    }

    fn point(year: i32, month: u32, price: f64, q: f64) -> PeriodPoint {
        PeriodPoint {
            period: YearMonth { year, month },
            mean_price: price,
            quantity: q,
        }
    }

    fn monthly(prices_and_q: &[(f64, f64)]) -> Vec<PeriodPoint> {
        prices_and_q
            .iter()
            .enumerate()
            .map(|(i, &(p, q))| point(2000 + (i / 12) as i32, (i % 12) as u32 + 1, p, q))
            .collect()
    }

    #[test]
    fn negative_quantity_row_is_dropped() {
        let f = write_csv(&format!(
            "{HEADER}1,A,x,-3,12/1/2010 8:26,2.5,17850,UK\n2,A,x,4,12/1/2010 8:26,2.5,17850,UK\n"
        ));
        let (recs, drops) = load_and_clean(f.path()).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].quantity, 4);
        assert_eq!(drops.non_positive_quantity, 1);
    }

    #[test]
    fn empty_file_yields_nothing() {
        let f = write_csv("");
        let (recs, drops) = load_and_clean(f.path()).unwrap();
        assert!(recs.is_empty());
        assert_eq!(drops.total(), 0);
    }

    #[test]
    fn five_clean_two_cancelled() {
        let mut body = HEADER.to_string();
        for i in 0..5 {
            body += &format!("{},A,x,{},1/{}/2011 9:00,1.5,1234{i},UK\n", 100 + i, i + 1, i + 1);
        }
        body += "C200,A,x,-2,1/9/2011 9:00,1.5,12345,UK\n";
        body += "C201,A,x,-1,1/9/2011 9:00,1.5,12345,UK\n";
        let f = write_csv(&body);
        let (recs, drops) = load_and_clean(f.path()).unwrap();
        assert_eq!(recs.len(), 5);
        assert_eq!(drops.total(), 2);
        assert_eq!(drops.cancelled, 2);
    }

    #[test]
    fn malformed_row_names_the_row() {
        let f = write_csv(&format!(
            "{HEADER}1,A,x,3,12/1/2010 8:26,2.5,17850,UK\n2,A,x,lots,12/1/2010 8:26,2.5,17850,UK\n"
        ));
        let err = load_and_clean(f.path()).unwrap_err();
        assert!(matches!(err, CalibrationError::MalformedRow { row: 3, .. }), "{err}");
    }

    #[test]
    fn missing_column_is_reported() {
        let f = write_csv("InvoiceNo,StockCode,Quantity\n1,A,3\n");
        assert!(matches!(
            load_and_clean(f.path()).unwrap_err(),
            CalibrationError::MissingColumn("InvoiceDate")
        ));
    }

    #[test]
    fn cleaning_is_idempotent_on_fixture() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/online_retail_sample.csv");
        let (once, drops) = load_and_clean(&path).unwrap();
        assert!(drops.total() > 0);
        let (twice, again) = clean(once.clone());
        assert_eq!(once, twice);
        assert_eq!(again.total(), 0);
    }

    fn record(sku: &str, q: i64, price: f64, date: &str) -> TransactionRecord {
        TransactionRecord {
            invoice: "1".into(),
            sku: sku.into(),
            quantity: q,
            unit_price: price,
            timestamp: parse_timestamp(date).unwrap(),
            customer_id: Some("1".into()),
        }
    }

    #[test]
    fn monthly_price_is_quantity_weighted() {
        let recs = vec![
            record("A", 2, 5.0, "3/1/2011 10:00"),
            record("A", 3, 10.0, "3/20/2011 10:00"),
        ];
        let s = aggregate_periods(&recs).unwrap();
        let a = &s["A"];
        assert_eq!(a.len(), 1);
        assert_eq!(a[0].quantity, 5.0);
        assert!((a[0].mean_price - 8.0).abs() < 1e-12);
    }

    #[test]
    fn singleton_and_grouping() {
        let s = aggregate_periods(&[record("A", 7, 2.0, "2011-05-04 10:00:00")]).unwrap();
        assert_eq!(s["A"], vec![point(2011, 5, 2.0, 7.0)]);

        let s = aggregate_periods(&[
            record("A", 1, 2.0, "5/4/2011 10:00"),
            record("B", 4, 3.0, "5/4/2011 10:00"),
            record("B", 4, 3.0, "6/4/2011 10:00"),
        ])
        .unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s["A"].len(), 1);
        assert_eq!(s["B"].len(), 2);
        assert!(matches!(aggregate_periods(&[]), Err(CalibrationError::EmptyInput)));
    }

    #[test]
    fn split_sizes() {
        let s200 = monthly(&[(1.0, 1.0); 200]);
        let (t, v) = chronological_split(&s200, 0.8).unwrap();
        assert_eq!((t.len(), v.len()), (160, 40));
        let s10 = monthly(&[(1.0, 1.0); 10]);
        let (t, v) = chronological_split(&s10, 0.8).unwrap();
        assert_eq!((t.len(), v.len()), (8, 2));
        assert_eq!(t.last().unwrap().period, s10[7].period);
        assert_eq!(v[0].period, s10[8].period);
    }

    #[test]
    fn split_rejects_unsorted_and_short() {
        let mut s = monthly(&[(1.0, 1.0); 6]);
        s.swap(2, 3);
        assert!(matches!(
            chronological_split(&s, 0.8),
            Err(CalibrationError::Unsorted(_))
        ));
        let s = monthly(&[(1.0, 1.0); 4]);
        assert!(matches!(
            chronological_split(&s, 0.8),
            Err(CalibrationError::TooShort(4))
        ));
    }

    #[test]
    fn noiseless_round_trip() {
        let prices = [8.0, 9.0, 10.0, 11.0, 12.0, 9.5, 10.5];
        let data: Vec<(f64, f64)> = prices.iter().map(|&p| (p, 1000.0 * (p / 10.0f64).powf(-2.0))).collect();
        let m = fit_demand("A", &monthly(&data)).unwrap();
        assert!((m.reference_price - 10.0).abs() < 1e-12);
        assert!((m.base_demand / 1000.0 - 1.0).abs() < 1e-6);
        assert!((m.elasticity / 2.0 - 1.0).abs() < 1e-6);
        assert!(m.residual_sigma < 1e-6);
    }

    #[test]
    fn flat_demand_has_zero_elasticity() {
        let data: Vec<(f64, f64)> = [4.0, 5.0, 6.0, 7.0].iter().map(|&p| (p, 300.0)).collect();
        let m = fit_demand("A", &monthly(&data)).unwrap();
        assert!(m.elasticity.abs() < 1e-12);
        assert!((m.base_demand - 300.0).abs() < 1e-9);
    }

    #[test]
    fn identical_prices_are_rejected() {
        let data = vec![(5.0, 100.0), (5.0, 120.0), (5.0, 90.0), (5.0, 110.0)];
        assert!(matches!(
            fit_demand("A", &monthly(&data)),
            Err(CalibrationError::ConstantPrice(_))
        ));
    }

    #[test]
    fn elasticity_is_clamped_to_non_negative() {
        // demand rising with price
        let data: Vec<(f64, f64)> = [4.0, 5.0, 6.0, 7.0].iter().map(|&p| (p, 50.0 * p)).collect();
        let m = fit_demand("A", &monthly(&data)).unwrap();
        assert_eq!(m.elasticity, 0.0);
    }

    #[test]
    fn fit_metrics() {
        let q = fit_quality(&[100.0, 200.0], &[110.0, 190.0]).unwrap();
        assert!((q.rmse - 10.0).abs() < 1e-12);
        assert!((q.mape.unwrap() - 0.075).abs() < 1e-12);

        let q = fit_quality(&[3.0, 5.0, 7.0], &[3.0, 5.0, 7.0]).unwrap();
        assert_eq!((q.r2, q.rmse, q.mape), (1.0, 0.0, Some(0.0)));

        let q = fit_quality(&[3.0, 5.0, 7.0], &[5.0, 5.0, 5.0]).unwrap();
        assert!(q.r2.abs() < 1e-12);

        let q = fit_quality(&[0.0, 4.0], &[1.0, 2.0]).unwrap();
        assert!((q.mape.unwrap() - 0.5).abs() < 1e-12);

        assert!(matches!(fit_quality(&[], &[]), Err(CalibrationError::EmptyValidation)));
    }

    #[test]
    fn least_squares_beats_constant_mean_on_train() {
        let prices = [1.8, 2.1, 2.5, 2.9, 3.1, 2.2, 2.7, 2.0];
        let data: Vec<(f64, f64)> = prices
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                (
                    p,
                    500.0 * (p / 2.5f64).powf(-1.3) * (1.0 + 0.05 * ((i * 7 % 5) as f64 - 2.0)),
                )
            })
            .collect();
        let train = monthly(&data);
        let m = fit_demand("A", &train).unwrap();
        let q = evaluate_fit(&m, &train).unwrap();
        assert!(q.r2 >= 0.0);
    }

    #[test]
    fn model_file_select() {
        let mk = |sku: &str, base: f64| DemandModel {
            sku: sku.into(),
            base_demand: base,
            elasticity: 1.0,
            reference_price: 2.0,
            residual_sigma: 10.0,
            fit_quality: Some(FitQuality {
                r2: 0.5,
                rmse: 3.0,
                mape: None,
            }),
        };
        let file = DemandModelFile {
            models: vec![mk("A", 100.0), mk("B", 300.0)],
        };
        let json = serde_json::to_string(&file).unwrap();
        assert!(json.contains("\"r2\":0.5"));
        let back = DemandModelFile::from_json(&json).unwrap();
        assert_eq!(back, file);
        assert_eq!(back.select(Some("B")).unwrap().base_demand, 300.0);
        assert_eq!(back.select(None).unwrap().base_demand, 200.0);
        assert!(back.select(Some("Z")).is_err());
    }
}

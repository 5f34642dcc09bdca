//! Metric records, their CSV/JSON encodings, and figure-data summaries.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::write_atomic;
use crate::network::{EpochMetrics, NormProfile};

/// Column order of the metrics CSV.
pub const METRICS_COLUMNS: [&str; 7] = [
    "run_id",
    "seed",
    "epoch",
    "train_acc",
    "val_acc",
    "train_loss",
    "val_loss",
];

/// One row of the metrics CSV. Epoch `-1` is the evaluation before any training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub run_id: String,
    pub seed: u64,
    pub epoch: i64,
    pub train_acc: Option<f64>,
    pub val_acc: Option<f64>,
    pub train_loss: Option<f64>,
    pub val_loss: Option<f64>,
}

impl MetricsRecord {
    pub fn from_epoch(run_id: &str, seed: u64, m: &EpochMetrics) -> Self {
        Self {
            run_id: run_id.to_string(),
            seed,
            epoch: m.epoch,
            train_acc: Some(m.train_acc),
            val_acc: Some(m.val_acc),
            train_loss: Some(m.train_loss),
            val_loss: Some(m.val_loss),
        }
    }
}

pub fn encode_metrics_csv(rows: &[MetricsRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)
            .map_err(|e| Error::InvalidInput(format!("metrics row: {e}")))?;
    }
    if rows.is_empty() {
        w.write_record(METRICS_COLUMNS)
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::InvalidInput(e.to_string()))
}

pub fn decode_metrics_csv(path: &Path, bytes: &[u8]) -> Result<Vec<MetricsRecord>> {
    let mut rd = csv::Reader::from_reader(bytes);
    let headers = rd
        .headers()
        .map_err(|e| Error::format(path, e.to_string()))?
        .clone();
    if headers.iter().ne(METRICS_COLUMNS) {
        return Err(Error::format(
            path,
            format!("columns {:?} differ from {:?}", headers, METRICS_COLUMNS),
        ));
    }
    rd.deserialize()
        .map(|r| r.map_err(|e| Error::format(path, e.to_string())))
        .collect()
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRecord]) -> Result<()> {
    write_atomic(path, &encode_metrics_csv(rows)?)
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRecord>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_metrics_csv(path, &bytes)
}

/// Per-layer norm profile attached to one metrics row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormRecord {
    pub run_id: String,
    pub seed: u64,
    pub epoch: i64,
    pub profile: NormProfile,
}

/// JSON sidecar path for a metrics CSV: `metrics.csv` → `metrics.norms.json`.
pub fn norms_sidecar_path(csv_path: &Path) -> std::path::PathBuf {
    csv_path.with_extension("norms.json")
}

pub fn write_norms(path: &Path, records: &[NormRecord]) -> Result<()> {
    let json = serde_json::to_vec_pretty(records).expect("norm records serialize");
    write_atomic(path, &json)
}

pub fn read_norms(path: &Path) -> Result<Vec<NormRecord>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))
}

/// Five-number summary. Quartiles are medians of the lower and upper halves,
/// excluding the overall median when the count is odd (exclusive method);
/// a single value yields all five equal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub count: usize,
}

fn median_sorted(v: &[f64]) -> f64 {
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

pub fn box_stats(values: &[f64]) -> Option<BoxStats> {
    if values.is_empty() || values.iter().any(|v| v.is_nan()) {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let k = v.len();
    let median = median_sorted(&v);
    let (q1, q3) = if k == 1 {
        (v[0], v[0])
    } else {
        let half = k / 2;
        let lower = &v[..half];
        let upper = &v[k - half..];
        (median_sorted(lower), median_sorted(upper))
    };
    Some(BoxStats {
        min: v[0],
        q1,
        median,
        q3,
        max: v[k - 1],
        count: k,
    })
}

/// Per-(run_id, epoch, metric) box statistics across seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct Fig5Row {
    pub run_id: String,
    pub epoch: i64,
    pub metric: &'static str,
    pub stats: BoxStats,
}

/// Zero-shot (epoch −1) and first-epoch (epoch 0) statistics over seeds.
pub fn fig5_rows(rows: &[MetricsRecord]) -> Vec<Fig5Row> {
    let mut groups: BTreeMap<(String, i64), Vec<&MetricsRecord>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.epoch == -1 || r.epoch == 0) {
        groups.entry((r.run_id.clone(), r.epoch)).or_default().push(r);
    }
    let mut out = Vec::new();
    for ((run_id, epoch), recs) in groups {
        let metrics: [(&'static str, fn(&MetricsRecord) -> Option<f64>); 4] = [
            ("train_acc", |r| r.train_acc),
            ("val_acc", |r| r.val_acc),
            ("train_loss", |r| r.train_loss),
            ("val_loss", |r| r.val_loss),
        ];
        for (name, get) in metrics {
            let vals: Vec<f64> = recs.iter().filter_map(|r| get(r)).collect();
            if let Some(stats) = box_stats(&vals) {
                out.push(Fig5Row {
                    run_id: run_id.clone(),
                    epoch,
                    metric: name,
                    stats,
                });
            }
        }
    }
    out
}

pub fn fig5_csv(rows: &[Fig5Row]) -> String {
    let mut s = String::from("run_id,epoch,metric,count,min,q1,median,q3,max\n");
    for r in rows {
        let b = r.stats;
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.run_id, r.epoch, r.metric, b.count, b.min, b.q1, b.median, b.q3, b.max
        ));
    }
    s
}

/// Accuracy and loss against epoch, one row per metrics record.
pub fn fig4_csv(rows: &[MetricsRecord]) -> String {
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut s = String::from("run_id,seed,epoch,train_acc,val_acc,train_loss,val_loss\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.run_id,
            r.seed,
            r.epoch,
            fmt(r.train_acc),
            fmt(r.val_acc),
            fmt(r.train_loss),
            fmt(r.val_loss)
        ));
    }
    s
}

/// Per-layer norms of the latest recorded epoch for each `(run_id, seed)`:
/// exactly `depth` rows per network.
pub fn fig3_csv(records: &[NormRecord]) -> String {
    let mut latest: BTreeMap<(String, u64), &NormRecord> = BTreeMap::new();
    for r in records {
        let key = (r.run_id.clone(), r.seed);
        match latest.get(&key) {
            Some(prev) if prev.epoch >= r.epoch => {}
            _ => {
                latest.insert(key, r);
            }
        }
    }
    let mut s = String::from("run_id,seed,epoch,layer,mean_norm_post_tanh,mean_norm_pre_tanh\n");
    for ((run_id, seed), r) in latest {
        for (l, (post, pre)) in r
            .profile
            .post_tanh
            .iter()
            .zip(&r.profile.pre_tanh)
            .enumerate()
        {
            s.push_str(&format!("{run_id},{seed},{},{l},{post},{pre}\n", r.epoch));
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quartiles_of_four_points() {
        let b = box_stats(&[3.0, 1.0, 4.0, 2.0]).unwrap();
        assert_eq!((b.min, b.q1, b.median, b.q3, b.max), (1.0, 1.5, 2.5, 3.5, 4.0));
    }

    #[test]
    fn single_point_stats_collapse() {
        let b = box_stats(&[0.42]).unwrap();
        assert_eq!(b.min, b.max);
        assert_eq!(b.median, b.min);
        assert_eq!(b.q1, b.q3);
    }

    #[test]
    fn odd_count_excludes_median() {
        let b = box_stats(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!((b.q1, b.median, b.q3), (1.5, 3.0, 4.5));
    }

    #[test]
    fn csv_header_is_fixed() {
        let bytes = encode_metrics_csv(&[]).unwrap();
        assert_eq!(
            String::from_utf8(bytes).unwrap().trim(),
            "run_id,seed,epoch,train_acc,val_acc,train_loss,val_loss"
        );
    }

    #[test]
    fn wrong_columns_rejected() {
        let err = decode_metrics_csv(Path::new("m.csv"), b"a,b\n1,2\n");
        assert!(matches!(err, Err(Error::Format { .. })));
    }
}

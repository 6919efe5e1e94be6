use serde::{Deserialize, Serialize};

/// One row of `metrics.csv`. Wall-clock time lives in `timing.csv` so this
/// table is a pure function of (config, seed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    /// 1-based.
    pub epoch: usize,
    pub class_loss: f64,
    pub jigsaw_loss: f64,
    pub val_accuracy: f64,
    pub target_accuracy: f64,
    pub jigsaw_accuracy: f64,
    /// `None` when no cue-conflict prediction matched either label.
    pub shape_bias: Option<f64>,
    pub shape_fraction: f64,
    pub texture_fraction: f64,
    pub lr: f64,
    pub rho: f64,
    pub shuffled: usize,
    pub diversified: usize,
}

pub const METRICS_HEADER: &str = "epoch,class_loss,jigsaw_loss,val_accuracy,target_accuracy,jigsaw_accuracy,\
shape_bias,shape_fraction,texture_fraction,lr,rho,shuffled,diversified";

impl MetricsRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.class_loss,
            self.jigsaw_loss,
            self.val_accuracy,
            self.target_accuracy,
            self.jigsaw_accuracy,
            self.shape_bias.map(|s| s.to_string()).unwrap_or_default(),
            self.shape_fraction,
            self.texture_fraction,
            self.lr,
            self.rho,
            self.shuffled,
            self.diversified
        )
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv_line());
        s.push('\n');
    }
    s
}

/// Parses a metrics table written by [`metrics_csv`].
pub fn parse_metrics_csv(text: &str) -> crate::Result<Vec<MetricsRow>> {
    let bad = |m: String| crate::Error::format("metrics.csv", m);
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(bad("unexpected header".into()));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 13 {
                return Err(bad(format!("row {}: expected 13 fields", i + 1)));
            }
            let num = |k: usize| f[k].parse::<f64>().map_err(|e| bad(format!("row {}: {e}", i + 1)));
            let int = |k: usize| f[k].parse::<usize>().map_err(|e| bad(format!("row {}: {e}", i + 1)));
            Ok(MetricsRow {
                epoch: int(0)?,
                class_loss: num(1)?,
                jigsaw_loss: num(2)?,
                val_accuracy: num(3)?,
                target_accuracy: num(4)?,
                jigsaw_accuracy: num(5)?,
                shape_bias: if f[6].is_empty() { None } else { Some(num(6)?) },
                shape_fraction: num(7)?,
                texture_fraction: num(8)?,
                lr: num(9)?,
                rho: num(10)?,
                shuffled: int(11)?,
                diversified: int(12)?,
            })
        })
        .collect()
}

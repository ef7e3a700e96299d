//! KITTI-style 3D and bird's-eye-view detection evaluation.

mod ap;
mod iou;
mod label;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

pub use ap::{average_precision, precision_recall, Interpolation, Metric, PrCurve, PrPoint};
pub use iou::{bev_iou, clip_convex, footprint_intersection, iou_3d, overlap_of_first, signed_area};
pub use label::{
    classify_difficulty, observation_angle, parse_detections, parse_ground_truth,
    parse_kitti_label, wrap_angle, write_detections, write_ground_truth, Box3D, Detection,
    Difficulty, GtObject, Label, ObjectClass,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("line {line}: expected 15 or 16 fields, got {got}")]
    FieldCount { line: usize, got: usize },
    #[error("line {line}: field {field} is not a valid number")]
    BadNumber { line: usize, field: usize },
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("class `{0}` cannot be evaluated")]
    UnknownClass(String),
    #[error("ground-truth and detection frames differ: {0}")]
    FrameMismatch(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub classes: Vec<ObjectClass>,
    pub iou_thresholds: Vec<f64>,
    pub metrics: Vec<Metric>,
    pub interpolation: Interpolation,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            classes: vec![ObjectClass::Car],
            iou_thresholds: vec![0.5, 0.7],
            metrics: vec![Metric::Bev, Metric::ThreeD],
            interpolation: Interpolation::Interp11,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApEntry {
    pub class: ObjectClass,
    pub difficulty: Difficulty,
    pub metric: Metric,
    pub iou_threshold: f64,
    /// Percent, in `[0, 100]`.
    pub ap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub interpolation: Interpolation,
    pub frames: usize,
    pub entries: Vec<ApEntry>,
}

impl EvalReport {
    pub fn get(
        &self,
        class: &ObjectClass,
        difficulty: Difficulty,
        metric: Metric,
        iou_threshold: f64,
    ) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| {
                &e.class == class
                    && e.difficulty == difficulty
                    && e.metric == metric
                    && e.iou_threshold == iou_threshold
            })
            .map(|e| e.ap)
    }

    /// `class difficulty metric iou ap`, tab separated, with a header.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("class\tdifficulty\tmetric\tiou\tap\n");
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{:.2}",
                e.class,
                e.difficulty,
                e.metric.name(),
                e.iou_threshold,
                e.ap
            );
        }
        out
    }

    /// Grid with one row per (class, metric, IoU) and Easy / Moderate / Hard
    /// columns.
    pub fn to_table(&self) -> String {
        let mut keys: Vec<(ObjectClass, Metric, u64)> = Vec::new();
        for e in &self.entries {
            let k = (e.class.clone(), e.metric, e.iou_threshold.to_bits());
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        let mut out = format!(
            "{:<12} {:<7} {:>5} {:>8} {:>8} {:>8}\n",
            "class", "metric", "iou", "easy", "moderate", "hard"
        );
        for (class, metric, iou_bits) in keys {
            let iou = f64::from_bits(iou_bits);
            let cell = |d| {
                self.get(&class, d, metric, iou)
                    .map_or_else(|| "-".to_string(), |v| format!("{v:.2}"))
            };
            let _ = writeln!(
                out,
                "{:<12} {:<7} {:>5} {:>8} {:>8} {:>8}",
                class.to_string(),
                metric.name(),
                iou,
                cell(Difficulty::Easy),
                cell(Difficulty::Moderate),
                cell(Difficulty::Hard)
            );
        }
        out
    }
}

/// Evaluates every configured class × metric × IoU threshold × difficulty.
/// Both maps must have exactly the same frame ids.
pub fn evaluate(
    gts: &BTreeMap<String, Vec<GtObject>>,
    dets: &BTreeMap<String, Vec<Detection>>,
    config: &EvalConfig,
) -> Result<EvalReport, EvalError> {
    if let Some(k) = gts.keys().find(|k| !dets.contains_key(*k)) {
        return Err(EvalError::FrameMismatch(format!("no detections for frame {k}")));
    }
    if let Some(k) = dets.keys().find(|k| !gts.contains_key(*k)) {
        return Err(EvalError::FrameMismatch(format!("no ground truth for frame {k}")));
    }
    let gt_frames: Vec<Vec<GtObject>> = gts.values().cloned().collect();
    let det_frames: Vec<Vec<Detection>> = dets.values().cloned().collect();

    let mut entries = Vec::new();
    for class in &config.classes {
        for &metric in &config.metrics {
            for &thr in &config.iou_thresholds {
                for difficulty in Difficulty::LEVELS {
                    let ap = average_precision(
                        &gt_frames,
                        &det_frames,
                        class,
                        difficulty,
                        |a, b| metric.iou(a, b),
                        thr,
                        config.interpolation,
                    )?;
                    entries.push(ApEntry {
                        class: class.clone(),
                        difficulty,
                        metric,
                        iou_threshold: thr,
                        ap,
                    });
                }
            }
        }
    }
    Ok(EvalReport {
        interpolation: config.interpolation,
        frames: gts.len(),
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn frame(n: usize) -> Vec<GtObject> {
        (0..n)
            .map(|i| {
                let b = Box3D::new(Vector3::new(i as f64 * 5.0, 1.6, 15.0), [1.5, 1.6, 3.9], 0.1)
                    .unwrap();
                GtObject::new(ObjectClass::Car, b, [0.0, 0.0, 50.0, 80.0])
            })
            .collect()
    }

    fn perfect(gts: &[GtObject]) -> Vec<Detection> {
        gts.iter()
            .map(|g| Detection::new(g.class.clone(), g.box3d.unwrap(), 0.9))
            .collect()
    }

    #[test]
    fn perfect_frame_is_all_hundred() {
        let gts = BTreeMap::from([("000000".to_string(), frame(3))]);
        let dets = BTreeMap::from([("000000".to_string(), perfect(&gts["000000"]))]);
        let rep = evaluate(&gts, &dets, &EvalConfig::default()).unwrap();
        assert_eq!(rep.entries.len(), 12);
        assert!(rep.entries.iter().all(|e| e.ap == 100.0));
        assert!(rep.to_tsv().contains("Car\teasy\tAP_BEV\t0.5\t100.00"));
        assert_eq!(rep.to_table().lines().count(), 5);
    }

    #[test]
    fn empty_detections_are_zero() {
        let gts = BTreeMap::from([("000000".to_string(), frame(2))]);
        let dets = BTreeMap::from([("000000".to_string(), vec![])]);
        let rep = evaluate(&gts, &dets, &EvalConfig::default()).unwrap();
        assert!(rep.entries.iter().all(|e| e.ap == 0.0));
    }

    #[test]
    fn frame_sets_must_match() {
        let gts = BTreeMap::from([("000000".to_string(), frame(1))]);
        let dets = BTreeMap::from([("000001".to_string(), vec![])]);
        assert!(matches!(
            evaluate(&gts, &dets, &EvalConfig::default()),
            Err(EvalError::FrameMismatch(_))
        ));
    }
}

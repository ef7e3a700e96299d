//! Matching detections to ground truth and interpolated average precision.

use serde::Serialize;

use super::iou::{bev_iou, iou_3d, overlap_of_first};
use super::label::{classify_difficulty, Box3D, Detection, Difficulty, GtObject, ObjectClass};
use super::EvalError;

/// Detections covering more than this fraction of their image box with a
/// `DontCare` region are not counted as false positives.
const DONT_CARE_OVERLAP: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Metric {
    #[serde(rename = "AP_3D")]
    ThreeD,
    #[serde(rename = "AP_BEV")]
    Bev,
}

impl Metric {
    pub fn iou(self, a: &Box3D, b: &Box3D) -> f64 {
        match self {
            Metric::ThreeD => iou_3d(a, b),
            Metric::Bev => bev_iou(a, b),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::ThreeD => "AP_3D",
            Metric::Bev => "AP_BEV",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize)]
pub enum Interpolation {
    /// Recall levels 0, 0.1, ..., 1.
    #[default]
    Interp11,
    /// Recall levels 1/40, 2/40, ..., 1.
    Interp40,
}

impl Interpolation {
    fn levels(self) -> Vec<f64> {
        match self {
            Interpolation::Interp11 => (0..=10).map(|k| k as f64 / 10.0).collect(),
            Interpolation::Interp40 => (1..=40).map(|k| k as f64 / 40.0).collect(),
        }
    }
}

impl std::str::FromStr for Interpolation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "11" => Ok(Interpolation::Interp11),
            "40" => Ok(Interpolation::Interp40),
            _ => Err(format!("interpolation must be 11 or 40, got `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum GtRole {
    /// Counts toward recall.
    Counted,
    /// May absorb a detection but is never a miss.
    Ignored,
    Irrelevant,
}

fn gt_role(gt: &GtObject, class: &ObjectClass, difficulty: Difficulty) -> GtRole {
    if gt.box3d.is_none() {
        return GtRole::Irrelevant;
    }
    if &gt.class == class {
        let tier = classify_difficulty(gt);
        if tier != Difficulty::Ignored && tier <= difficulty {
            GtRole::Counted
        } else {
            GtRole::Ignored
        }
    } else if class.neighbours().contains(&gt.class) {
        GtRole::Ignored
    } else {
        GtRole::Irrelevant
    }
}

/// One point of the precision/recall sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrPoint {
    pub score: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    pub positives: usize,
    pub true_positives: usize,
    pub false_positives: usize,
}

impl PrCurve {
    /// Interpolated AP in percent: mean over the recall levels of the best
    /// precision reached at or beyond each level.
    pub fn average_precision(&self, mode: Interpolation) -> f64 {
        if self.positives == 0 {
            return 0.0;
        }
        let levels = mode.levels();
        let sum: f64 = levels
            .iter()
            .map(|&r| {
                self.points
                    .iter()
                    .filter(|p| p.recall >= r - 1e-12)
                    .map(|p| p.precision)
                    .fold(0.0, f64::max)
            })
            .sum();
        100.0 * sum / levels.len() as f64
    }
}

/// Greedy matching in descending score order (ties keep input order, frame
/// by frame). Each detection takes the unmatched counted ground truth of
/// highest IoU at or above `threshold`; failing that, an ignored one (which
/// makes the detection neutral). Unmatched detections are false positives
/// unless they are below the tier's height floor or sit inside a `DontCare`
/// region.
pub fn precision_recall<F>(
    gts: &[Vec<GtObject>],
    dets: &[Vec<Detection>],
    class: &ObjectClass,
    difficulty: Difficulty,
    iou: F,
    threshold: f64,
) -> Result<PrCurve, EvalError>
where
    F: Fn(&Box3D, &Box3D) -> f64,
{
    if !class.is_evaluable() || difficulty == Difficulty::Ignored {
        return Err(EvalError::UnknownClass(class.to_string()));
    }
    if gts.len() != dets.len() {
        return Err(EvalError::FrameMismatch(format!(
            "{} ground-truth frames vs {} detection frames",
            gts.len(),
            dets.len()
        )));
    }
    let min_height = difficulty.thresholds().unwrap().0;

    let roles: Vec<Vec<GtRole>> = gts
        .iter()
        .map(|f| f.iter().map(|g| gt_role(g, class, difficulty)).collect())
        .collect();
    let mut positives: usize = roles
        .iter()
        .flatten()
        .filter(|r| **r == GtRole::Counted)
        .count();

    let mut order: Vec<(usize, usize)> = dets
        .iter()
        .enumerate()
        .flat_map(|(f, ds)| {
            ds.iter()
                .enumerate()
                .filter(|(_, d)| &d.class == class)
                .map(move |(i, _)| (f, i))
        })
        .collect();
    // stable: equal scores keep frame/input order
    order.sort_by(|a, b| dets[b.0][b.1].score.total_cmp(&dets[a.0][a.1].score));

    let mut matched: Vec<Vec<bool>> = gts.iter().map(|f| vec![false; f.len()]).collect();
    let mut events: Vec<(f64, bool)> = Vec::with_capacity(order.len());

    for (f, i) in order {
        let det = &dets[f][i];
        let too_small = det
            .bbox2d
            .is_some_and(|b| b[3] - b[1] < min_height);

        let best = |role: GtRole, matched: &[bool]| {
            gts[f]
                .iter()
                .enumerate()
                .filter(|(j, _)| roles[f][*j] == role && !matched[*j])
                .filter_map(|(j, g)| g.box3d.as_ref().map(|b| (j, iou(&det.box3d, b))))
                .filter(|(_, o)| *o >= threshold)
                .fold(None, |acc: Option<(usize, f64)>, (j, o)| match acc {
                    Some((_, bo)) if bo >= o => acc,
                    _ => Some((j, o)),
                })
        };

        if let Some((j, _)) = best(GtRole::Counted, &matched[f]) {
            matched[f][j] = true;
            if too_small {
                // the object is found, just not by a detection this tier scores
                positives -= 1;
            } else {
                events.push((det.score, true));
            }
            continue;
        }
        if let Some((j, _)) = best(GtRole::Ignored, &matched[f]) {
            matched[f][j] = true;
            continue;
        }
        if too_small {
            continue;
        }
        let in_dont_care = det.bbox2d.is_some_and(|db| {
            gts[f]
                .iter()
                .filter(|g| g.is_dont_care())
                .any(|g| overlap_of_first(&db, &g.bbox2d) > DONT_CARE_OVERLAP)
        });
        if !in_dont_care {
            events.push((det.score, false));
        }
    }

    let mut curve = PrCurve {
        positives,
        ..Default::default()
    };
    for (score, tp) in events {
        if tp {
            curve.true_positives += 1;
        } else {
            curve.false_positives += 1;
        }
        let (t, fp) = (curve.true_positives as f64, curve.false_positives as f64);
        curve.points.push(PrPoint {
            score,
            precision: t / (t + fp),
            recall: if positives == 0 { 0.0 } else { t / positives as f64 },
        });
    }
    Ok(curve)
}

/// AP in percent for one class, difficulty, overlap measure and threshold.
pub fn average_precision<F>(
    gts: &[Vec<GtObject>],
    dets: &[Vec<Detection>],
    class: &ObjectClass,
    difficulty: Difficulty,
    iou: F,
    threshold: f64,
    mode: Interpolation,
) -> Result<f64, EvalError>
where
    F: Fn(&Box3D, &Box3D) -> f64,
{
    Ok(precision_recall(gts, dets, class, difficulty, iou, threshold)?.average_precision(mode))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn car_at(x: f64) -> Box3D {
        Box3D::new(Vector3::new(x, 1.6, 20.0), [1.5, 1.6, 3.9], 0.0).unwrap()
    }

    fn gt(x: f64) -> GtObject {
        GtObject::new(ObjectClass::Car, car_at(x), [100.0, 100.0, 200.0, 160.0])
    }

    fn det(x: f64, score: f64) -> Detection {
        Detection::new(ObjectClass::Car, car_at(x), score)
    }

    fn ap(gts: Vec<GtObject>, dets: Vec<Detection>, mode: Interpolation) -> f64 {
        average_precision(
            &[gts],
            &[dets],
            &ObjectClass::Car,
            Difficulty::Moderate,
            |a, b| Metric::ThreeD.iou(a, b),
            0.7,
            mode,
        )
        .unwrap()
    }

    #[test]
    fn perfect_detector() {
        for mode in [Interpolation::Interp11, Interpolation::Interp40] {
            assert_eq!(ap(vec![gt(0.0)], vec![det(0.0, 0.9)], mode), 100.0);
        }
    }

    #[test]
    fn staircase() {
        let got = ap(
            vec![gt(0.0), gt(10.0)],
            vec![det(0.0, 0.9), det(-20.0, 0.8), det(10.0, 0.7)],
            Interpolation::Interp11,
        );
        assert!((got - 100.0 * 28.0 / 33.0).abs() < 1e-9, "{got}");
        // 40-point: 20 levels at precision 1, 20 at 2/3
        let got = ap(
            vec![gt(0.0), gt(10.0)],
            vec![det(0.0, 0.9), det(-20.0, 0.8), det(10.0, 0.7)],
            Interpolation::Interp40,
        );
        assert!((got - 100.0 * (20.0 + 20.0 * 2.0 / 3.0) / 40.0).abs() < 1e-9);
    }

    #[test]
    fn no_detections() {
        assert_eq!(ap(vec![gt(0.0)], vec![], Interpolation::Interp11), 0.0);
    }

    #[test]
    fn duplicate_detection_is_false_positive() {
        let curve = precision_recall(
            &[vec![gt(0.0)]],
            &[vec![det(0.0, 0.9), det(0.0, 0.8)]],
            &ObjectClass::Car,
            Difficulty::Hard,
            iou_3d,
            0.7,
        )
        .unwrap();
        assert_eq!((curve.true_positives, curve.false_positives), (1, 1));
    }

    #[test]
    fn harder_objects_are_neutral_for_easy() {
        let mut hard = gt(0.0);
        hard.occlusion = 2;
        let curve = precision_recall(
            &[vec![hard.clone()]],
            &[vec![det(0.0, 0.9)]],
            &ObjectClass::Car,
            Difficulty::Easy,
            iou_3d,
            0.7,
        )
        .unwrap();
        assert_eq!(
            (curve.positives, curve.true_positives, curve.false_positives),
            (0, 0, 0)
        );
        // the same object counts at the hard tier
        let hard_ap = average_precision(
            &[vec![hard]],
            &[vec![det(0.0, 0.9)]],
            &ObjectClass::Car,
            Difficulty::Hard,
            iou_3d,
            0.7,
            Interpolation::Interp11,
        )
        .unwrap();
        assert_eq!(hard_ap, 100.0);
    }

    #[test]
    fn vans_do_not_penalize_cars() {
        let van = GtObject::new(ObjectClass::Van, car_at(0.0), [0.0, 0.0, 10.0, 60.0]);
        let curve = precision_recall(
            &[vec![van]],
            &[vec![det(0.0, 0.9)]],
            &ObjectClass::Car,
            Difficulty::Moderate,
            iou_3d,
            0.7,
        )
        .unwrap();
        assert_eq!(curve.false_positives, 0);
    }

    #[test]
    fn dont_care_suppresses_false_positive() {
        let dc = GtObject::dont_care([0.0, 0.0, 100.0, 100.0]);
        let d = det(30.0, 0.5).with_bbox2d([10.0, 10.0, 60.0, 60.0]);
        let curve = precision_recall(
            &[vec![gt(0.0), dc]],
            &[vec![d]],
            &ObjectClass::Car,
            Difficulty::Moderate,
            iou_3d,
            0.7,
        )
        .unwrap();
        assert_eq!((curve.positives, curve.false_positives), (1, 0));
    }

    #[test]
    fn small_detections_are_ignored() {
        let d = det(30.0, 0.5).with_bbox2d([10.0, 10.0, 60.0, 20.0]);
        let curve = precision_recall(
            &[vec![gt(0.0)]],
            &[vec![d]],
            &ObjectClass::Car,
            Difficulty::Moderate,
            iou_3d,
            0.7,
        )
        .unwrap();
        assert_eq!(curve.false_positives, 0);
    }

    #[test]
    fn unknown_class_rejected() {
        assert_eq!(
            precision_recall(&[], &[], &ObjectClass::DontCare, Difficulty::Easy, iou_3d, 0.5)
                .unwrap_err(),
            EvalError::UnknownClass("DontCare".into())
        );
    }
}

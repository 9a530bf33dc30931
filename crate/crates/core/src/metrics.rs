//! Segmentation and detection metrics: Dice overlap, center-in-box
//! detection matching, precision/recall/F1 and dataset-level reports.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::postprocess::{
    canonical_order, label_components, postprocess_mask, threshold, BBox, BinaryMask, PostProcessConfig,
};
use crate::tensor::Tensor;

/// `2|X∩Y| / (|X|+|Y|)`, with two empty masks scoring 1.
pub fn dice(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    let inter = pred.intersection_count(gt)?;
    let total = pred.count() + gt.count();
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl std::ops::AddAssign for DetectionCounts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

/// Center-in-box matching.
///
/// Predictions are visited largest first (ties by position); each one takes
/// the first ground-truth box, in the given order, that contains its center
/// and has not been taken yet. Edges count as inside.
pub fn match_detections(pred: &[BBox], gt: &[BBox]) -> DetectionCounts {
    let mut order = pred.to_vec();
    canonical_order(&mut order);
    let mut used = vec![false; gt.len()];
    let mut c = DetectionCounts::default();
    for p in &order {
        let (cx, cy) = p.center();
        match (0..gt.len()).find(|&g| !used[g] && gt[g].contains_point(cx, cy)) {
            Some(g) => {
                used[g] = true;
                c.tp += 1;
            }
            None => c.fp += 1,
        }
    }
    c.fn_ = used.iter().filter(|&&u| !u).count();
    c
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Harmonic mean of precision and recall, 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// `(precision, recall, f1)` with 0/0 taken as 0.
pub fn prf1(c: DetectionCounts) -> (f64, f64, f64) {
    let p = ratio(c.tp, c.tp + c.fp);
    let r = ratio(c.tp, c.tp + c.fn_);
    (p, r, f1_score(p, r))
}

/// Dataset-level scores. All rates are fractions in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dice: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl EvalReport {
    pub fn new(dice: f64, counts: DetectionCounts) -> Self {
        let (precision, recall, f1) = prf1(counts);
        EvalReport {
            dice,
            tp: counts.tp,
            fp: counts.fp,
            fn_: counts.fn_,
            precision,
            recall,
            f1,
        }
    }

    pub fn counts(&self) -> DetectionCounts {
        DetectionCounts {
            tp: self.tp,
            fp: self.fp,
            fn_: self.fn_,
        }
    }
}

impl fmt::Display for EvalReport {
    /// `key: value` lines.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "dice: {:.6}", self.dice)?;
        writeln!(f, "tp: {}", self.tp)?;
        writeln!(f, "fp: {}", self.fp)?;
        writeln!(f, "fn: {}", self.fn_)?;
        writeln!(f, "precision: {:.6}", self.precision)?;
        writeln!(f, "recall: {:.6}", self.recall)?;
        write!(f, "f1: {:.6}", self.f1)
    }
}

/// Scores of one image. Dice always uses the plain thresholded mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageScore {
    pub dice: f64,
    pub counts: DetectionCounts,
    pub pred_boxes: Vec<BBox>,
    pub gt_boxes: Vec<BBox>,
}

/// Ground-truth boxes: one per connected component of the mask.
pub fn gt_boxes(gt: &BinaryMask) -> Vec<BBox> {
    label_components(gt).iter().map(|c| c.bbox).collect()
}

pub fn score_image(prob: &Tensor, gt: &BinaryMask, cfg: &PostProcessConfig) -> Result<ImageScore> {
    let raw = threshold(prob, cfg.threshold)?;
    let dice = dice(&raw, gt)?;
    let pred_boxes = postprocess_mask(&raw, cfg)?.boxes;
    let gt_boxes = gt_boxes(gt);
    Ok(ImageScore {
        dice,
        counts: match_detections(&pred_boxes, &gt_boxes),
        pred_boxes,
        gt_boxes,
    })
}

/// Mean per-image Dice and detection counts summed over the dataset.
pub fn evaluate_dataset(pairs: &[(Tensor, BinaryMask)], cfg: &PostProcessConfig) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate an empty dataset".into()));
    }
    let mut dice_sum = 0.0;
    let mut counts = DetectionCounts::default();
    for (i, (prob, gt)) in pairs.iter().enumerate() {
        let s = prob.shape();
        if (s.h, s.w) != gt.dims() {
            return Err(Error::shape(
                "evaluate",
                format!("pair {i}: prediction {}x{} vs mask {}x{}", s.h, s.w, gt.height(), gt.width()),
            ));
        }
        let sc = score_image(prob, gt, cfg)?;
        dice_sum += sc.dice;
        counts += sc.counts;
    }
    Ok(EvalReport::new(dice_sum / pairs.len() as f64, counts))
}

/// Detection scores with the full post-processing chain and with the
/// threshold alone. Dice is identical in both.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedReport {
    pub with_postprocess: EvalReport,
    pub without_postprocess: EvalReport,
}

impl PairedReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Data(format!("bad report json: {e}")))
    }
}

impl fmt::Display for PairedReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "[with_postprocess]")?;
        writeln!(f, "{}", self.with_postprocess)?;
        writeln!(f, "[without_postprocess]")?;
        writeln!(f, "{}", self.without_postprocess)
    }
}

pub fn evaluate_paired(pairs: &[(Tensor, BinaryMask)], cfg: &PostProcessConfig) -> Result<PairedReport> {
    let raw = PostProcessConfig {
        threshold: cfg.threshold,
        ..PostProcessConfig::disabled()
    };
    Ok(PairedReport {
        with_postprocess: evaluate_dataset(pairs, cfg)?,
        without_postprocess: evaluate_dataset(pairs, &raw)?,
    })
}

use polypseg::postprocess::BinaryMask;
use polypseg::tensor::{Shape, Tensor};

/// Probability map that is `on` over the mask and 0 elsewhere.
pub fn prob_from(mask: &BinaryMask, on: f32) -> Tensor {
    let (h, w) = mask.dims();
    let data = mask.bits().iter().map(|&b| if b { on } else { 0.0 }).collect();
    Tensor::from_vec(Shape::new(1, 1, h, w), data).unwrap()
}

/// Perfect predictions of 20x20 blobs with single-pixel false alarms
/// planted around them. Every blob is a TP and every speckle an FP before
/// post-processing. Returns the pairs, the blob count and the speckle count.
pub fn planted_noise() -> (Vec<(Tensor, BinaryMask)>, usize, usize) {
    let mut pairs = Vec::new();
    let (mut blobs, mut planted) = (0, 0);
    for i in 0..6 {
        let mut gt = BinaryMask::empty(64, 64);
        let n = 1 + i % 2;
        for b in 0..n {
            let x0 = 6 + b * 30;
            for y in 20..40 {
                for x in x0..x0 + 20 {
                    gt.set(y, x, true);
                }
            }
        }
        blobs += n;
        let mut pred = gt.clone();
        for k in 0..(i + 1) {
            pred.set(3 + 2 * k, 60 - 3 * k, true);
            planted += 1;
        }
        pairs.push((prob_from(&pred, 0.9), gt));
    }
    (pairs, blobs, planted)
}

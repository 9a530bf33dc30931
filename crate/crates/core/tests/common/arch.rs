use polypseg::model::{Mode, Model, ModelConfig, Stage};
use polypseg::tensor::{Shape, Tensor};
use polypseg::autodiff::Tape;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One-block-per-stage variant of the default model, small enough to
/// backpropagate through quickly.
pub fn probe_config(stride: usize, dilation: usize) -> ModelConfig {
    ModelConfig {
        stage_blocks: [1, 1, 1, 1],
        width_scale: 16,
        stage5_stride: stride,
        stage5_dilation: dilation,
        ..ModelConfig::default()
    }
}

/// Row and column extent of the input pixels that receive gradient from
/// the centre R5 position (all channels seeded with one).
pub fn r5_footprint(config: ModelConfig, side: usize) -> (usize, usize) {
    let model = Model::new(config, 7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let s = Shape::new(1, 3, side, side);
    let x = Tensor::from_vec(s, (0..s.numel()).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
    let mut tape = Tape::new();
    let xv = tape.input_with_grad(x);
    let stages = model.encode(&mut tape, xv, Mode::Eval).unwrap();
    let r5 = stages[Stage::R5.index()];
    let os = tape.value(r5).shape();
    let (cy, cx) = (os.h / 2, os.w / 2);
    let mut seed = vec![0.0f32; os.numel()];
    for c in 0..os.c {
        seed[(c * os.h + cy) * os.w + cx] = 1.0;
    }
    let mut store = model.params().clone();
    tape.backward_with_grad(r5, &seed, &mut store).unwrap();
    let g = tape.grad(xv).unwrap();
    let (mut y0, mut y1, mut x0, mut x1) = (usize::MAX, 0, usize::MAX, 0);
    for c in 0..3 {
        for y in 0..side {
            for x in 0..side {
                if g[(c * side + y) * side + x] != 0.0 {
                    (y0, y1, x0, x1) = (y0.min(y), y1.max(y), x0.min(x), x1.max(x));
                }
            }
        }
    }
    assert!(y0 <= y1, "no gradient reached the input");
    (y1 - y0 + 1, x1 - x0 + 1)
}

/// Shapes of one eval forward pass: stage sizes, concat width, logits.
pub struct ShapeReport {
    pub stages: Vec<Shape>,
    pub concat: Option<Shape>,
    pub logits: Shape,
}

pub fn shapes(config: ModelConfig, h: usize, w: usize) -> ShapeReport {
    let model = Model::new(config, 0).unwrap();
    let mut tape = Tape::new();
    let x = tape.input(Tensor::zeros(Shape::new(1, 3, h, w)));
    let out = model.forward_tape(&mut tape, x, Mode::Eval).unwrap();
    ShapeReport {
        stages: out.stages.iter().map(|&v| tape.value(v).shape()).collect(),
        concat: out.concat.map(|v| tape.value(v).shape()),
        logits: tape.value(out.logits).shape(),
    }
}

//! Shared scenario setup for the criterion benchmarks: a conv stack watching
//! a synthetic fixed-camera clip with a moving object.

use delta_infer_core::synth;
use delta_infer_core::tensor::{FeatureTensor, Shape};
use delta_infer_core::ModelGraph;

pub struct Scenario {
    pub graph: ModelGraph,
    pub frames: Vec<FeatureTensor>,
}

/// 64x64 input, `depth` conv+relu pairs at `channels` width, 8x8 moving
/// object on a static background.
pub fn moving_object(depth: usize, channels: usize, frames: usize, epsilon: f32) -> Scenario {
    let shape = Shape::new(1, 64, 64, 3);
    let mut graph = synth::conv_stack(61, shape, channels, depth, 0.3, 1, epsilon);
    graph.set_poison(false);
    Scenario { graph, frames: synth::moving_square_video(shape, frames, 8, 2.0) }
}

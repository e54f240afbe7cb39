//! Front-to-back auto-tuning of per-layer truncation thresholds under a
//! total loss-increase budget.
//!
//! Thresholds are tuned one truncation layer at a time in execution order:
//! all later layers held at zero, earlier layers frozen at their tuned
//! values. A layer's threshold grows geometrically from `start_epsilon` while
//! the measured loss increase stays within its equal share of the total
//! budget (and the loss does not *decrease* beyond `accuracy_gain_cap`,
//! which would be overfitting to the calibration clips), with one bisection
//! refinement between the last passing and first failing value. The input
//! layer's threshold and dilation radius are set manually and never tuned.

use crate::error::{EngineError, Result};
use crate::graph::ModelGraph;
use crate::metrics::mean_relative_deviation;
use crate::oracle::dense_run_frame;
use crate::tensor::FeatureTensor;

/// Loss over one frame: (engine output, dense reference output) -> scalar.
/// Label-based losses can capture their labels in the closure.
pub type LossFn<'a> = dyn Fn(&FeatureTensor, &FeatureTensor) -> f64 + 'a;

#[derive(Debug, Clone)]
pub struct TuneConfig {
    /// Total allowed loss increase across all truncation layers, in absolute
    /// loss units. With the default deviation loss, 0.03 caps the mean
    /// relative deviation from the dense reference at 3%.
    pub total_budget: f64,
    pub start_epsilon: f32,
    /// Multiplicative growth per accepted step.
    pub step_factor: f32,
    pub max_epsilon: f32,
    /// Largest tolerated loss *decrease* during a layer's search.
    pub accuracy_gain_cap: f64,
}

impl Default for TuneConfig {
    fn default() -> Self {
        Self {
            total_budget: 0.03,
            start_epsilon: 1e-4,
            step_factor: 2.0,
            max_epsilon: 256.0,
            accuracy_gain_cap: 0.01,
        }
    }
}

impl TuneConfig {
    fn validate(&self) -> Result<()> {
        if !self.total_budget.is_finite() || self.total_budget < 0.0 {
            return Err(EngineError::Tuning(format!("total budget {} must be >= 0", self.total_budget)));
        }
        if !(self.step_factor.is_finite() && self.step_factor > 1.0) {
            return Err(EngineError::Tuning(format!("step factor {} must be > 1", self.step_factor)));
        }
        let eps_ok = self.start_epsilon.is_finite()
            && self.start_epsilon > 0.0
            && self.max_epsilon >= self.start_epsilon;
        if !eps_ok {
            return Err(EngineError::Tuning(
                "start_epsilon must be positive and max_epsilon no smaller".into(),
            ));
        }
        Ok(())
    }
}

/// The default tuning loss: mean relative deviation of the engine output from
/// the dense-reference output.
pub fn deviation_loss(engine: &FeatureTensor, reference: &FeatureTensor) -> f64 {
    mean_relative_deviation(engine, reference)
}

/// One candidate evaluation on the loss trajectory of a layer.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TunePoint {
    pub epsilon: f32,
    pub loss: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct LayerTuneReport {
    /// Graph layer index of the truncation layer.
    pub layer: usize,
    /// Loss of the configuration before this layer's search started.
    pub reference_loss: f64,
    pub trajectory: Vec<TunePoint>,
    pub chosen_epsilon: f32,
    /// Mean output-mask density of this layer over the calibration clips
    /// under the final configuration.
    pub active_pixel_density: f64,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TuneOutcome {
    /// (graph layer index, tuned epsilon), in execution order.
    pub epsilons: Vec<(usize, f32)>,
    /// Calibration loss with every tunable threshold at zero.
    pub baseline_loss: f64,
    /// Calibration loss of the final configuration.
    pub final_loss: f64,
    pub budget_share: f64,
    pub layers: Vec<LayerTuneReport>,
}

/// Runs the calibration clips through the engine (resetting state first) and
/// averages the loss against cached dense-reference outputs over all frames.
fn evaluate(
    graph: &mut ModelGraph,
    calibration: &[Vec<FeatureTensor>],
    references: &[Vec<FeatureTensor>],
    loss: &LossFn,
) -> Result<f64> {
    let mut total = 0.0;
    let mut frames = 0usize;
    for (clip, refs) in calibration.iter().zip(references) {
        graph.reset_buffers();
        for (frame, reference) in clip.iter().zip(refs) {
            let (out, _) = graph.run_frame(frame)?;
            let l = loss(&out, reference);
            if !l.is_finite() {
                return Err(EngineError::Tuning(format!("loss is not finite ({l})")));
            }
            total += l;
            frames += 1;
        }
    }
    Ok(total / frames.max(1) as f64)
}

/// Tunes every truncation layer of the graph in place and reports the search.
/// The tuned thresholds are left applied to the graph.
pub fn tune(
    graph: &mut ModelGraph,
    calibration: &[Vec<FeatureTensor>],
    config: &TuneConfig,
    loss: &LossFn,
) -> Result<TuneOutcome> {
    config.validate()?;
    if calibration.is_empty() || calibration.iter().all(|c| c.is_empty()) {
        return Err(EngineError::Tuning("calibration sequences are empty".into()));
    }

    // Dense references never change during the search; compute them once.
    let references: Vec<Vec<FeatureTensor>> = calibration
        .iter()
        .map(|clip| clip.iter().map(|f| dense_run_frame(graph, f)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;

    let layers = graph.truncation_layers();
    for &li in &layers {
        graph.set_epsilon(li, 0.0)?;
    }
    let baseline_loss = evaluate(graph, calibration, &references, loss)?;
    let budget_share = config.total_budget / layers.len().max(1) as f64;

    let mut reports = Vec::with_capacity(layers.len());
    for (pos, &li) in layers.iter().enumerate() {
        // Loss before touching this layer: earlier layers frozen, this one
        // and all later ones at zero.
        let reference_loss =
            if pos == 0 { baseline_loss } else { evaluate(graph, calibration, &references, loss)? };
        let passes = |l: f64| {
            l - reference_loss <= budget_share && reference_loss - l <= config.accuracy_gain_cap
        };

        let mut trajectory = Vec::new();
        let mut last_pass: Option<f32> = None;
        let mut first_fail: Option<f32> = None;
        let mut eps = config.start_epsilon;
        loop {
            graph.set_epsilon(li, eps)?;
            let l = evaluate(graph, calibration, &references, loss)?;
            let ok = passes(l);
            trajectory.push(TunePoint { epsilon: eps, loss: l, accepted: ok });
            if ok {
                last_pass = Some(eps);
                if eps >= config.max_epsilon {
                    break;
                }
                eps = (eps * config.step_factor).min(config.max_epsilon);
            } else {
                first_fail = Some(eps);
                break;
            }
        }
        // One bisection refinement between the bracketing candidates.
        if let (Some(p), Some(f)) = (last_pass, first_fail) {
            let mid = ((p as f64) * (f as f64)).sqrt() as f32;
            if mid > p && mid < f {
                graph.set_epsilon(li, mid)?;
                let l = evaluate(graph, calibration, &references, loss)?;
                let ok = passes(l);
                trajectory.push(TunePoint { epsilon: mid, loss: l, accepted: ok });
                if ok {
                    last_pass = Some(mid);
                }
            }
        }
        let chosen = last_pass.unwrap_or(0.0);
        graph.set_epsilon(li, chosen)?;
        reports.push(LayerTuneReport {
            layer: li,
            reference_loss,
            trajectory,
            chosen_epsilon: chosen,
            active_pixel_density: 0.0,
        });
    }

    let final_loss = evaluate(graph, calibration, &references, loss)?;

    // Per-layer output mask density under the final configuration.
    let mut density_sums = vec![0.0f64; graph.layers().len()];
    let mut density_frames = 0usize;
    for clip in calibration {
        graph.reset_buffers();
        for frame in clip {
            let (_, _, masks) = graph.run_frame_traced(frame)?;
            for (i, m) in masks.iter().enumerate() {
                density_sums[i] += m.density();
            }
            density_frames += 1;
        }
    }
    for report in &mut reports {
        report.active_pixel_density = density_sums[report.layer] / density_frames.max(1) as f64;
    }

    graph.reset_buffers();
    Ok(TuneOutcome {
        epsilons: reports.iter().map(|r| (r.layer, r.chosen_epsilon)).collect(),
        baseline_loss,
        final_loss,
        budget_share,
        layers: reports,
    })
}

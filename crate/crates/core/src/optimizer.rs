//! NI-FGSM patch training with stall diagnostics and checkpointing.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{hash_text, save_patch, PatchMeta};
use crate::dataset::{validate_for_training, Sample};
use crate::detector::{DetectionSeed, DetectionTap, Detector};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalConfig};
use crate::geometry::BBox;
use crate::image::Image;
use crate::loss::{bfp_loss, dpatch_loss, maxloss_objective, Direction, LossConfig, LossVariant};
use crate::par::{self, Exec};
use crate::patch::{Patch, PatchApplier, Placement};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchInit {
    #[default]
    Uniform,
    Gray,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    pub theta_d: f64,
    pub theta_t: f64,
    pub theta_f: f64,
    pub alpha: f64,
    pub step_size: f64,
    /// Momentum decay.
    pub momentum: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub loss: LossVariant,
    /// Overrides the loss variant's default direction.
    pub direction: Option<Direction>,
    pub patch_width: usize,
    pub patch_height: usize,
    pub channels: usize,
    pub init: PatchInit,
    /// Checkpoint every this many iterations; 0 disables intermediate ones.
    pub checkpoint_every: usize,
    pub tap: DetectionTap,
    pub placement: Placement,
    /// Evaluate the gradient at the Nesterov look-ahead point.
    pub lookahead: bool,
    /// Warn once a run of all-zero steps reaches this length.
    pub stall_warn_after: usize,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            theta_d: 0.5,
            theta_t: 0.6,
            theta_f: 0.3,
            alpha: 5.58,
            step_size: 2.0 / 255.0,
            momentum: 1.0,
            iterations: 200,
            batch_size: 16,
            seed: 0,
            loss: LossVariant::Bfp,
            direction: None,
            patch_width: 64,
            patch_height: 64,
            channels: 1,
            init: PatchInit::Uniform,
            checkpoint_every: 50,
            tap: DetectionTap::PostNms,
            placement: Placement::default(),
            lookahead: true,
            stall_warn_after: 20,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss_config()?;
        if !(self.step_size > 0.0) {
            return Err(Error::config("step_size must be positive"));
        }
        if !(self.momentum >= 0.0) {
            return Err(Error::config("momentum decay must be non-negative"));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::config("alpha must be positive"));
        }
        if self.batch_size == 0 || self.patch_width == 0 || self.patch_height == 0 || self.channels == 0 {
            return Err(Error::config("batch size, patch size and channels must be >= 1"));
        }
        Ok(())
    }

    pub fn loss_config(&self) -> Result<LossConfig> {
        LossConfig::new(self.theta_t, self.theta_d, self.theta_f, self.loss)
    }

    pub fn direction(&self) -> Direction {
        self.direction.unwrap_or(self.loss.default_direction())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        hash_text(&self.to_toml())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryEntry {
    pub iteration: usize,
    /// Mean objective over the batch.
    pub loss: f64,
    /// Borderline detections summed over the batch (images with a nonzero
    /// objective for the detector-loss variants).
    pub active_count: usize,
    pub tp: Option<usize>,
    pub fp: Option<usize>,
    pub zero_gradient: bool,
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub patch: Patch,
    pub momentum: Image,
    pub iteration: usize,
    pub history: Vec<HistoryEntry>,
    pub rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(cfg: &AttackConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let (w, h, c) = (cfg.patch_width, cfg.patch_height, cfg.channels);
        let patch = match cfg.init {
            PatchInit::Uniform => Patch::uniform(w, h, c, &mut rng),
            PatchInit::Gray => Patch::gray(w, h, c),
        };
        Self {
            patch,
            momentum: Image::new(w, h, c),
            iteration: 0,
            history: Vec::new(),
            rng,
        }
    }

    /// Point at which the next gradient is taken: `patch + step * decay *
    /// momentum`, unclipped. Equal to the patch when look-ahead is off.
    pub fn lookahead(&self, cfg: &AttackConfig) -> Image {
        let mut out = self.patch.pixels().clone();
        if cfg.lookahead {
            let k = cfg.step_size * cfg.momentum;
            for (p, m) in out.as_mut_slice().iter_mut().zip(self.momentum.as_slice()) {
                *p += k * m;
            }
        }
        out
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// One update with `grad` already oriented so that moving along it is the
/// desired direction. Returns whether the gradient was all zero.
pub fn nifgsm_step(state: &mut TrainState, grad: &Image, cfg: &AttackConfig) -> Result<bool> {
    grad.ensure_dims(state.patch.pixels().dims())?;
    let l1: f64 = grad.as_slice().iter().map(|g| g.abs()).sum();
    let zero = l1 == 0.0;
    for (m, g) in state.momentum.as_mut_slice().iter_mut().zip(grad.as_slice()) {
        *m = cfg.momentum * *m + if zero { 0.0 } else { g / l1 };
    }
    let mut next = state.patch.pixels().clone();
    for (p, m) in next.as_mut_slice().iter_mut().zip(state.momentum.as_slice()) {
        *p += cfg.step_size * sign(*m);
    }
    state.patch = Patch::from_clamped(next)?;
    state.iteration += 1;
    Ok(zero)
}

/// Box of the first whole tile cell, or of the single fixed copy.
fn dpatch_target(placement: Placement, sw: usize, sh: usize) -> Result<BBox> {
    let (left, top) = match placement {
        Placement::Tiled { phase } => (((sw - phase.0 % sw) % sw) as f64, ((sh - phase.1 % sh) % sh) as f64),
        Placement::Fixed { x, y } => (x as f64, y as f64),
    };
    BBox::from_corners(left, top, left + sw as f64, top + sh as f64)
}

struct ImageGrad {
    loss: f64,
    active: usize,
    grad: Image,
}

fn image_gradient(
    sample: &Sample,
    point: &Image,
    detector: &dyn Detector,
    cfg: &AttackConfig,
    applier: &PatchApplier,
    loss_cfg: &LossConfig,
) -> Result<ImageGrad> {
    let applied = applier.apply(&sample.image, &sample.gt, point, &sample.mask)?;
    let (loss, active, grad_img) = match cfg.loss {
        LossVariant::Bfp => {
            let gd = detector.detect_with_gradients(&applied.image, cfg.tap)?;
            let lv = bfp_loss(&sample.gt, &gd.detections, loss_cfg)?;
            let seeds: Vec<DetectionSeed> = lv
                .confidence_grad
                .iter()
                .map(|&c| DetectionSeed {
                    confidence: c,
                    ..DetectionSeed::default()
                })
                .collect();
            let grad = if lv.active_count == 0 {
                Image::new(applied.image.width(), applied.image.height(), applied.image.channels())
            } else {
                gd.context.backward(&seeds)?
            };
            (lv.value, lv.active_count, grad)
        }
        LossVariant::Dpatch => {
            let target = dpatch_target(cfg.placement, applied.scaled_w, applied.scaled_h)?;
            let (v, g) = dpatch_loss(detector, &applied.image, target)?;
            (v, usize::from(v != 0.0), g)
        }
        LossVariant::Maxloss => {
            let (v, g) = maxloss_objective(detector, &applied.image, &sample.gt)?;
            (v, usize::from(v != 0.0), g)
        }
    };
    let grad = applier.backward(&applied, &sample.mask, (cfg.patch_width, cfg.patch_height), &grad_img);
    Ok(ImageGrad { loss, active, grad })
}

/// Mean objective, summed active count and mean patch gradient over a batch,
/// reduced in batch order.
pub fn batch_gradient(
    samples: &[Sample],
    batch: &[usize],
    point: &Image,
    detector: &dyn Detector,
    cfg: &AttackConfig,
    exec: Exec,
) -> Result<(f64, usize, Image)> {
    let applier = PatchApplier::new(cfg.alpha, cfg.placement)?;
    let loss_cfg = cfg.loss_config()?;
    let (parts, failed) = par::try_map_ordered(exec, batch, |&i| {
        image_gradient(&samples[i], point, detector, cfg, &applier, &loss_cfg)
    });
    if !failed.is_empty() {
        return Err(Error::Dataset(
            failed
                .into_iter()
                .map(|(k, e)| format!("{}: {e}", samples[batch[k]].id))
                .collect(),
        ));
    }
    let n = parts.len() as f64;
    let mut grad = Image::new(cfg.patch_width, cfg.patch_height, cfg.channels);
    let (mut loss, mut active) = (0.0, 0);
    for part in &parts {
        loss += part.loss;
        active += part.active;
        for (a, b) in grad.as_mut_slice().iter_mut().zip(part.grad.as_slice()) {
            *a += b;
        }
    }
    grad.as_mut_slice().iter_mut().for_each(|g| *g /= n);
    Ok((loss / n, active, grad))
}

/// Where intermediate and final patches go, plus an optional validation set
/// used for the TP/FP history columns and best-patch tracking.
#[derive(Default)]
pub struct TrainOptions<'a> {
    pub validation: Option<&'a [Sample]>,
    pub out_dir: Option<PathBuf>,
    pub exec: Exec,
}

#[derive(Debug, Clone)]
pub struct BestPatch {
    pub iteration: usize,
    pub tp: usize,
    pub patch: Patch,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub patch: Patch,
    pub history: Vec<HistoryEntry>,
    pub best: Option<BestPatch>,
}

/// Epoch-wise shuffled batches drawn from the state's RNG.
struct BatchSampler {
    order: Vec<usize>,
    cursor: usize,
}

impl BatchSampler {
    fn new(n: usize) -> Self {
        Self {
            order: (0..n).collect(),
            cursor: n,
        }
    }

    fn next(&mut self, size: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let size = size.min(self.order.len());
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.cursor == self.order.len() {
                self.order.shuffle(rng);
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }
}

pub fn train(
    samples: &[Sample],
    detector: &dyn Detector,
    cfg: &AttackConfig,
    opts: &TrainOptions<'_>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    validate_for_training(samples)?;
    if let Some(v) = opts.validation {
        validate_for_training(v)?;
    }
    let mut state = TrainState::new(cfg);
    let mut sampler = BatchSampler::new(samples.len());
    let sign = match cfg.direction() {
        Direction::Ascend => 1.0,
        Direction::Descend => -1.0,
    };
    let eval_cfg = EvalConfig {
        theta_d: cfg.theta_d,
        alpha: cfg.alpha,
        placement: cfg.placement,
    };
    let hash = cfg.hash();
    let mut best: Option<BestPatch> = None;
    let mut zero_streak = 0;

    for _ in 0..cfg.iterations {
        let batch = sampler.next(cfg.batch_size, &mut state.rng);
        let point = state.lookahead(cfg);
        let (loss, active, mut grad) = batch_gradient(samples, &batch, &point, detector, cfg, opts.exec)?;
        grad.as_mut_slice().iter_mut().for_each(|g| *g *= sign);
        let zero = nifgsm_step(&mut state, &grad, cfg)?;

        if active == 0 {
            zero_streak += 1;
            if zero_streak == cfg.stall_warn_after {
                log::warn!(
                    "no active detections for {zero_streak} consecutive steps (iteration {})",
                    state.iteration
                );
            }
        } else {
            zero_streak = 0;
        }

        let mut entry = HistoryEntry {
            iteration: state.iteration,
            loss,
            active_count: active,
            tp: None,
            fp: None,
            zero_gradient: zero,
        };
        let at_checkpoint = cfg.checkpoint_every > 0 && state.iteration.is_multiple_of(cfg.checkpoint_every);
        if at_checkpoint || state.iteration == cfg.iterations {
            if let Some(v) = opts.validation {
                let r = evaluate(v, Some(&state.patch), detector, &eval_cfg, opts.exec)?;
                entry.tp = Some(r.tp_count);
                entry.fp = Some(r.fp_count);
                if best.as_ref().is_none_or(|b| r.tp_count < b.tp) {
                    best = Some(BestPatch {
                        iteration: state.iteration,
                        tp: r.tp_count,
                        patch: state.patch.clone(),
                    });
                }
            }
            if at_checkpoint {
                if let Some(dir) = &opts.out_dir {
                    let path = dir.join("checkpoints").join(format!("patch_{:06}.png", state.iteration));
                    save_patch(&path, &state.patch, &meta(cfg, &hash, Some(state.iteration)))?;
                }
            }
        }
        log::debug!("iteration {} loss {loss} active {active}", state.iteration);
        state.history.push(entry);
    }

    if let Some(dir) = &opts.out_dir {
        save_patch(&dir.join("patch.png"), &state.patch, &meta(cfg, &hash, Some(state.iteration)))?;
        if let Some(b) = &best {
            save_patch(&dir.join("best.png"), &b.patch, &meta(cfg, &hash, Some(b.iteration)))?;
        }
        write_history_csv(&dir.join("history.csv"), &state.history)?;
        let cfg_path = dir.join("config.toml");
        fs::write(&cfg_path, cfg.to_toml()).map_err(|e| Error::io(&cfg_path, e))?;
    }
    Ok(TrainOutcome {
        patch: state.patch,
        history: state.history,
        best,
    })
}

fn meta(cfg: &AttackConfig, hash: &str, iteration: Option<usize>) -> PatchMeta {
    PatchMeta {
        w_p: cfg.patch_width,
        h_p: cfg.patch_height,
        alpha: cfg.alpha,
        config_hash: hash.to_string(),
        iteration,
    }
}

/// `iteration,loss,active_count,tp,fp`; the last two are empty off
/// checkpoints.
pub fn history_csv(history: &[HistoryEntry]) -> String {
    let mut out = String::from("iteration,loss,active_count,tp,fp\n");
    let opt = |v: Option<usize>| v.map(|v| v.to_string()).unwrap_or_default();
    for h in history {
        let _ = writeln!(out, "{},{},{},{},{}", h.iteration, h.loss, h.active_count, opt(h.tp), opt(h.fp));
    }
    out
}

pub fn write_history_csv(path: &Path, history: &[HistoryEntry]) -> Result<()> {
    fs::write(path, history_csv(history)).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StallReport {
    /// Share of steps with no active detections.
    pub zero_fraction: f64,
    pub longest_zero_streak: usize,
    /// Iteration of the first step with a nonzero loss, if any.
    pub first_nonzero_iteration: Option<usize>,
}

pub fn stall_report(history: &[HistoryEntry]) -> Result<StallReport> {
    if history.is_empty() {
        return Err(Error::domain("stall report needs a non-empty history"));
    }
    let mut zeros = 0;
    let (mut streak, mut longest) = (0, 0);
    for h in history {
        if h.active_count == 0 {
            zeros += 1;
            streak += 1;
            longest = longest.max(streak);
        } else {
            streak = 0;
        }
    }
    Ok(StallReport {
        zero_fraction: zeros as f64 / history.len() as f64,
        longest_zero_streak: longest,
        first_nonzero_iteration: history.iter().find(|h| h.loss != 0.0).map(|h| h.iteration),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::ToyDetector;
    use crate::synth::{self, SceneSpec};
    use proptest::prelude::*;

    fn cfg(w: usize, h: usize) -> AttackConfig {
        AttackConfig {
            patch_width: w,
            patch_height: h,
            step_size: 0.1,
            ..AttackConfig::default()
        }
    }

    fn state_with(patch: Vec<f64>, momentum: Vec<f64>, w: usize, h: usize) -> TrainState {
        let mut s = TrainState::new(&cfg(w, h));
        s.patch = Patch::new(Image::from_vec(w, h, 1, patch).unwrap()).unwrap();
        s.momentum = Image::from_vec(w, h, 1, momentum).unwrap();
        s
    }

    #[test]
    fn zero_gradient_zero_momentum_is_a_no_op() {
        let c = cfg(2, 2);
        let mut s = state_with(vec![0.1, 0.2, 0.3, 0.4], vec![0.0; 4], 2, 2);
        let before = s.patch.clone();
        assert!(nifgsm_step(&mut s, &Image::new(2, 2, 1), &c).unwrap());
        assert_eq!(s.patch, before);
        assert_eq!(s.iteration, 1);
    }

    #[test]
    fn uniform_gradient_moves_every_pixel_by_one_step() {
        let c = cfg(2, 2);
        let mut s = state_with(vec![0.1, 0.2, 0.3, 0.95], vec![0.0; 4], 2, 2);
        nifgsm_step(&mut s, &Image::filled(2, 2, 1, 3.0), &c).unwrap();
        let p = s.patch.pixels().as_slice();
        for (a, b) in p.iter().zip([0.2, 0.3, 0.4, 1.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(s.momentum.as_slice(), &[0.25; 4]);
    }

    #[test]
    fn saturated_pixel_stays_put() {
        let c = cfg(1, 1);
        let mut s = state_with(vec![1.0], vec![0.0], 1, 1);
        nifgsm_step(&mut s, &Image::filled(1, 1, 1, 1.0), &c).unwrap();
        assert_eq!(s.patch.pixels().as_slice(), &[1.0]);
    }

    #[test]
    fn stalled_step_follows_old_momentum() {
        let c = AttackConfig {
            momentum: 0.5,
            ..cfg(2, 1)
        };
        let mut s = state_with(vec![0.5, 0.5], vec![0.4, -0.2], 2, 1);
        nifgsm_step(&mut s, &Image::new(2, 1, 1), &c).unwrap();
        assert_eq!(s.momentum.as_slice(), &[0.2, -0.1]);
        assert!((s.patch.pixels().as_slice()[0] - 0.6).abs() < 1e-12);
        assert!((s.patch.pixels().as_slice()[1] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn lookahead_point() {
        let c = AttackConfig {
            momentum: 0.5,
            ..cfg(2, 1)
        };
        let s = state_with(vec![0.5, 0.95], vec![1.0, 2.0], 2, 1);
        let p = s.lookahead(&c);
        assert!((p.as_slice()[0] - 0.55).abs() < 1e-12);
        // Look-ahead is not clipped.
        assert!((p.as_slice()[1] - 1.05).abs() < 1e-12);
        let plain = AttackConfig { lookahead: false, ..c };
        assert_eq!(s.lookahead(&plain), *s.patch.pixels());
    }

    proptest! {
        #[test]
        fn no_decay_is_plain_fgsm(
            patch in proptest::collection::vec(0.0..=1.0f64, 6),
            mom in proptest::collection::vec(-1.0..1.0f64, 6),
            grad in proptest::collection::vec(-1.0..1.0f64, 6),
        ) {
            let c = AttackConfig { momentum: 0.0, lookahead: false, ..cfg(3, 2) };
            let mut s = state_with(patch.clone(), mom, 3, 2);
            let point = s.lookahead(&c);
            prop_assert_eq!(point.as_slice(), patch.as_slice());
            nifgsm_step(&mut s, &Image::from_vec(3, 2, 1, grad.clone()).unwrap(), &c).unwrap();
            for ((a, p), g) in s.patch.pixels().as_slice().iter().zip(&patch).zip(&grad) {
                let expect = (p + 0.1 * sign(*g)).clamp(0.0, 1.0);
                prop_assert_eq!(*a, expect);
            }
        }

        #[test]
        fn step_bounded_and_in_range(
            patch in proptest::collection::vec(0.0..=1.0f64, 6),
            mom in proptest::collection::vec(-5.0..5.0f64, 6),
            grad in proptest::collection::vec(-5.0..5.0f64, 6),
            decay in 0.0..2.0f64,
        ) {
            let c = AttackConfig { momentum: decay, ..cfg(3, 2) };
            let mut s = state_with(patch.clone(), mom, 3, 2);
            nifgsm_step(&mut s, &Image::from_vec(3, 2, 1, grad).unwrap(), &c).unwrap();
            for (a, p) in s.patch.pixels().as_slice().iter().zip(&patch) {
                prop_assert!((0.0..=1.0).contains(a));
                prop_assert!((a - p).abs() <= 0.1 + 1e-15);
            }
        }
    }

    #[test]
    fn gradient_shape_is_checked() {
        let mut s = TrainState::new(&cfg(2, 2));
        assert!(matches!(
            nifgsm_step(&mut s, &Image::new(3, 2, 1), &cfg(2, 2)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    fn entry(i: usize, active: usize) -> HistoryEntry {
        HistoryEntry {
            iteration: i,
            loss: if active > 0 { 0.5 } else { 0.0 },
            active_count: active,
            tp: None,
            fp: None,
            zero_gradient: active == 0,
        }
    }

    #[test]
    fn stall_report_examples() {
        let all_zero: Vec<_> = (1..=10).map(|i| entry(i, 0)).collect();
        let r = stall_report(&all_zero).unwrap();
        assert_eq!((r.zero_fraction, r.longest_zero_streak, r.first_nonzero_iteration), (1.0, 10, None));

        let alternating: Vec<_> = (1..=10).map(|i| entry(i, i % 2)).collect();
        let r = stall_report(&alternating).unwrap();
        assert_eq!((r.zero_fraction, r.longest_zero_streak, r.first_nonzero_iteration), (0.5, 1, Some(1)));

        assert!(stall_report(&[]).is_err());
    }

    #[test]
    fn config_validation_and_toml() {
        assert!(AttackConfig::default().validate().is_ok());
        let bad = AttackConfig {
            theta_t: 0.4,
            ..AttackConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(AttackConfig { step_size: 0.0, ..AttackConfig::default() }.validate().is_err());

        let c = AttackConfig {
            loss: LossVariant::Dpatch,
            placement: Placement::Fixed { x: 3, y: -2 },
            direction: Some(Direction::Ascend),
            ..AttackConfig::default()
        };
        assert_eq!(AttackConfig::from_toml(&c.to_toml()).unwrap(), c);
        let partial = AttackConfig::from_toml("iterations = 7\nloss = \"maxloss\"\n").unwrap();
        assert_eq!(partial.iterations, 7);
        assert_eq!(partial.direction(), Direction::Descend);
        assert_eq!(AttackConfig::default().direction(), Direction::Ascend);
        assert!(AttackConfig::from_toml("iteratons = 7").is_err());
        assert_ne!(c.hash(), AttackConfig::default().hash());
    }

    #[test]
    fn batches_cover_each_epoch() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = BatchSampler::new(10);
        let mut short = BatchSampler::new(3);
        let mut seen: Vec<usize> = (0..5).flat_map(|_| s.next(2, &mut rng)).collect();
        seen.sort();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
        assert_eq!(short.next(8, &mut rng).len(), 3);
    }

    #[test]
    fn dpatch_target_is_a_whole_cell() {
        let b = dpatch_target(Placement::default(), 6, 4).unwrap();
        assert_eq!(b.corners(), [0.0, 0.0, 6.0, 4.0]);
        let b = dpatch_target(Placement::Tiled { phase: (2, 1) }, 6, 4).unwrap();
        assert_eq!(b.corners(), [4.0, 3.0, 10.0, 7.0]);
        let b = dpatch_target(Placement::Fixed { x: -1, y: 2 }, 6, 4).unwrap();
        assert_eq!(b.corners(), [-1.0, 2.0, 5.0, 6.0]);
    }

    fn small_set() -> Vec<Sample> {
        let det = ToyDetector::default();
        let raw = synth::generate(&SceneSpec::default(), 12, 3).unwrap();
        synth::label_with_detector(raw, &det, Exec::Parallel).unwrap().0
    }

    #[test]
    fn zero_iterations_return_the_initial_patch() {
        let c = AttackConfig {
            iterations: 0,
            patch_width: 8,
            patch_height: 8,
            ..AttackConfig::default()
        };
        let out = train(&small_set(), &ToyDetector::default(), &c, &TrainOptions::default()).unwrap();
        assert_eq!(out.patch, TrainState::new(&c).patch);
        assert!(out.history.is_empty());
    }

    #[test]
    fn training_rejects_unlabelled_images() {
        let mut set = small_set();
        set[2].gt.boxes.clear();
        let r = train(&set, &ToyDetector::default(), &AttackConfig::default(), &TrainOptions::default());
        assert!(matches!(r, Err(Error::Dataset(ref v)) if v.len() == 1));
    }

    #[test]
    fn every_variant_runs_and_is_deterministic() {
        let set = small_set();
        let det = ToyDetector::default();
        for loss in [LossVariant::Bfp, LossVariant::Dpatch, LossVariant::Maxloss] {
            let c = AttackConfig {
                iterations: 3,
                batch_size: 4,
                patch_width: 8,
                patch_height: 8,
                checkpoint_every: 2,
                tap: DetectionTap::PreNms,
                loss,
                ..AttackConfig::default()
            };
            let opts = TrainOptions {
                validation: Some(&set[..4]),
                ..TrainOptions::default()
            };
            let a = train(&set, &det, &c, &opts).unwrap();
            let b = train(
                &set,
                &det,
                &c,
                &TrainOptions {
                    exec: Exec::Sequential,
                    ..opts
                },
            )
            .unwrap();
            assert_eq!(a.patch, b.patch, "{loss:?}");
            assert_eq!(a.history, b.history);
            assert_eq!(a.history.len(), 3);
            assert!(a.history[1].tp.is_some() && a.history[2].tp.is_some());
            assert!(a.history[0].tp.is_none());
            assert!(a.best.is_some());
        }
    }
}

//! One training step: forward the training image and its pool, align the
//! pool onto the training canvas, label the averaged pool, and
//! backpropagate the NLL of the averaged maps into the part layer.
//!
//! Pseudo labels and placements are constants of the step; the gradient
//! flows through the masked average, the bilinear warps and the softmax.

use alloc::vec;
use alloc::vec::Vec;

use crate::alignment::{align_pair, AlignParams, Placement, WarpPlan};
use crate::config::{MatchSource, TrainConfig};
use crate::part_layer::{nll_loss, ForwardPass, PartLayer};
use crate::pseudo_gt::{average_aligned, generate_pseudo_gt, PseudoGT};
use crate::tensor::{FeatureMap, Real};
use crate::{derive_seed, Error, Result};

impl From<&TrainConfig> for AlignParams {
    fn from(cfg: &TrainConfig) -> Self {
        AlignParams {
            family: cfg.transform_family,
            threshold: cfg.cosine_threshold,
            iterations: cfg.ransac_iterations,
            inlier_tol: cfg.inlier_tol,
            min_inliers: cfg.min_inliers,
        }
    }
}

/// A pool member ready to be averaged onto the training canvas.
#[derive(Debug, Clone)]
pub struct AlignedMember {
    pub forward: ForwardPass,
    pub placement: Placement,
    pub plan: WarpPlan,
}

/// What a training step produced.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub loss: f64,
    /// `∂L/∂W`, same layout as the layer weights.
    pub weight_grad: Vec<f64>,
    pub labels: PseudoGT,
    pub placements: Vec<Placement>,
}

/// Seed for aligning pool member `member` of image `image` in `epoch`.
pub fn alignment_seed(base: u64, epoch: usize, image: usize, member: usize) -> u64 {
    derive_seed(base, &[epoch as u64, image as u64, member as u64])
}

/// Estimates the placement of one pool member on the training canvas.
pub fn align_member<T: Real>(
    train_backbone: &FeatureMap<T>,
    train_forward: &ForwardPass,
    member_backbone: &FeatureMap<T>,
    member_forward: ForwardPass,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<AlignedMember> {
    let params = AlignParams::from(cfg);
    let placement = match cfg.match_on {
        MatchSource::Part => align_pair(
            &train_forward.probs().spatial_max_normalize()?,
            &member_forward.probs().spatial_max_normalize()?,
            &params,
            seed,
        )?,
        MatchSource::Backbone => {
            let dst = train_backbone.cast::<f64>();
            let src = member_backbone.cast::<f64>();
            align_pair(&rectified(&dst)?, &rectified(&src)?, &params, seed)?
        }
    };
    let (src_h, src_w) = (member_backbone.height(), member_backbone.width());
    let plan = placement.plan(src_h, src_w, train_backbone.height(), train_backbone.width())?;
    Ok(AlignedMember {
        forward: member_forward,
        placement,
        plan,
    })
}

/// Max-normalized copy of a backbone map with negative activations clamped
/// to zero. Shifting instead would add a shared offset to every vector and
/// inflate all cosines.
fn rectified(m: &FeatureMap<f64>) -> Result<FeatureMap<f64>> {
    let (h, w, c) = m.shape();
    FeatureMap::new(h, w, c, m.data().iter().map(|v| v.max(0.0)).collect())?.spatial_max_normalize()
}

/// Averaged pool map the pseudo labels are read from.
///
/// The training map only contributes when `include_self` is set, but it
/// always fills cells that no pool member covers.
pub fn pseudo_label_input(
    train: &ForwardPass,
    pool: &[AlignedMember],
    include_self: bool,
) -> Result<FeatureMap<f64>> {
    if pool.is_empty() {
        return Ok(train.probs().clone());
    }
    let warped = warp_members(pool)?;
    let cells = train.probs().cells();
    let self_mask = vec![include_self; cells];
    let mut maps: Vec<&FeatureMap<f64>> = vec![train.probs()];
    maps.extend(warped.iter());
    let mut masks: Vec<&[bool]> = vec![&self_mask];
    masks.extend(pool.iter().map(|m| m.plan.validity()));
    average_aligned(&maps, &masks)
}

fn warp_members(pool: &[AlignedMember]) -> Result<Vec<FeatureMap<f64>>> {
    pool.iter().map(|m| m.plan.apply(m.forward.probs())).collect()
}

/// Loss of the averaged training + pool maps against fixed `labels`, with
/// the weight gradient when `want_grad` is set.
pub fn averaged_loss(
    layer: &PartLayer,
    train: &ForwardPass,
    pool: &[(&ForwardPass, &WarpPlan)],
    labels: &PseudoGT,
    want_grad: bool,
) -> Result<(f64, Option<Vec<f64>>)> {
    let probs = train.probs();
    let (h, w, c) = probs.shape();
    let cells = h * w;
    let warped = pool
        .iter()
        .map(|(f, plan)| plan.apply(f.probs()))
        .collect::<Result<Vec<_>>>()?;
    let all_true = vec![true; cells];
    let mut maps: Vec<&FeatureMap<f64>> = vec![probs];
    maps.extend(warped.iter());
    let mut masks: Vec<&[bool]> = vec![&all_true];
    masks.extend(pool.iter().map(|(_, plan)| plan.validity()));
    let mean = average_aligned(&maps, &masks)?;
    let (loss, grad_mean) = nll_loss(&mean, labels)?;
    if !want_grad {
        return Ok((loss, None));
    }

    // ∂mean/∂map = 1 / (valid contributors) on valid cells
    let mut inv_count = vec![0.0; cells];
    for (cell, ic) in inv_count.iter_mut().enumerate() {
        let n = masks.iter().filter(|m| m[cell]).count();
        *ic = 1.0 / n as f64;
    }
    let scaled: Vec<f64> = grad_mean
        .iter()
        .enumerate()
        .map(|(i, g)| g * inv_count[i / c])
        .collect();

    let mut weight_grad = vec![0.0; layer.weights().len()];
    train.backward(&scaled, layer, &mut weight_grad);
    for (f, plan) in pool {
        let (sh, sw) = plan.src_shape();
        let mut grad_src = vec![0.0; sh * sw * c];
        plan.accumulate_transpose(&scaled, &mut grad_src, c);
        f.backward(&grad_src, layer, &mut weight_grad);
    }
    Ok((loss, Some(weight_grad)))
}

/// Labels and gradient for one training image given its aligned pool.
pub fn assemble_step(
    layer: &PartLayer,
    train: &ForwardPass,
    pool: Vec<AlignedMember>,
    cfg: &TrainConfig,
) -> Result<StepOutcome> {
    let label_input = pseudo_label_input(train, &pool, cfg.include_self_in_pseudo_gt)?;
    let labels = generate_pseudo_gt(&label_input, cfg.max_per_channel, cfg.suppress_radius)?;
    let refs: Vec<(&ForwardPass, &WarpPlan)> = pool.iter().map(|m| (&m.forward, &m.plan)).collect();
    let (loss, grad) = averaged_loss(layer, train, &refs, &labels, true)?;
    Ok(StepOutcome {
        loss,
        weight_grad: grad.ok_or(Error::Insufficient("gradient was not computed".into()))?,
        labels,
        placements: pool.into_iter().map(|m| m.placement).collect(),
    })
}

/// Sequential step: forward, align each pool member, label, differentiate.
pub fn run_step<T: Real>(
    layer: &PartLayer,
    train_backbone: &FeatureMap<T>,
    pool_backbones: &[&FeatureMap<T>],
    cfg: &TrainConfig,
    epoch: usize,
    image: usize,
) -> Result<StepOutcome> {
    let train = ForwardPass::run(train_backbone, layer)?;
    let pool = pool_backbones
        .iter()
        .enumerate()
        .map(|(j, bb)| {
            let fwd = ForwardPass::run(*bb, layer)?;
            align_member(
                train_backbone,
                &train,
                bb,
                fwd,
                cfg,
                alignment_seed(cfg.seed, epoch, image, j),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    assemble_step(layer, &train, pool, cfg)
}

/// A step with placements and labels frozen, re-evaluable at any weights.
/// Used for finite-difference checks of [`averaged_loss`].
#[derive(Debug, Clone)]
pub struct FrozenStep<'a, T: Real> {
    pub train: &'a FeatureMap<T>,
    pub pool: Vec<(&'a FeatureMap<T>, WarpPlan)>,
    pub labels: PseudoGT,
}

impl<T: Real> FrozenStep<'_, T> {
    pub fn loss(&self, layer: &PartLayer) -> Result<f64> {
        Ok(self.evaluate(layer, false)?.0)
    }

    pub fn loss_and_grad(&self, layer: &PartLayer) -> Result<(f64, Vec<f64>)> {
        let (l, g) = self.evaluate(layer, true)?;
        Ok((l, g.expect("gradient requested")))
    }

    fn evaluate(&self, layer: &PartLayer, want_grad: bool) -> Result<(f64, Option<Vec<f64>>)> {
        let train = ForwardPass::run(self.train, layer)?;
        let pool_fwd = self
            .pool
            .iter()
            .map(|(bb, _)| ForwardPass::run(*bb, layer))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<(&ForwardPass, &WarpPlan)> = pool_fwd.iter().zip(&self.pool).map(|(f, (_, p))| (f, p)).collect();
        averaged_loss(layer, &train, &refs, &self.labels, want_grad)
    }
}

//! Finite-difference verification of the analytic gradients.
//!
//! Every trainable parameter is perturbed by ±h and the loss recomputed; the
//! replay reuses the cached forward prefix of the parameter's stage, so the
//! cost per parameter is only the suffix of the network behind it.
//!
//! Dropout is disabled during the check: a dropout mask pins activations to
//! exact zeros, which puts max-pool windows on argmax ties where the
//! index-passing unpooling makes the loss genuinely non-differentiable (the
//! scatter position jumps). At a dropout-free point the loss is smooth in
//! almost every parameter and central differences are valid; dropout itself
//! is a fixed linear scaling whose gradient path is exercised by the
//! training tests.

use rayon::prelude::*;

use crate::error::Result;
use crate::neuralseg::loss::{edge_map, loss_and_grad, LossConfig};
use crate::neuralseg::net::{DropoutPlan, QuickNatLite};
use crate::neuralseg::tensor::Tensor4;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    /// Parameters whose ±h interval straddled a ReLU or pool-argmax kink at
    /// the primary step and were confirmed with the refined step instead.
    pub refined: usize,
}

/// Relative error with an absolute floor: gradients smaller than the floor
/// cannot be resolved by central differences at this h.
fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Checks d(loss)/d(theta) for every parameter against central finite
/// differences with step `h`.
pub fn finite_difference_check(
    net: &QuickNatLite,
    image: &Tensor4,
    target: &[u8],
    loss_cfg: &LossConfig,
    h: f64,
    floor: f64,
) -> Result<GradCheckReport> {
    finite_difference_check_strided(net, image, target, loss_cfg, h, floor, 1)
}

/// As [`finite_difference_check`] but probing every `stride`-th parameter of
/// each segment (stride 1 checks everything).
pub fn finite_difference_check_strided(
    net: &QuickNatLite,
    image: &Tensor4,
    target: &[u8],
    loss_cfg: &LossConfig,
    h: f64,
    floor: f64,
    stride: usize,
) -> Result<GradCheckReport> {
    let edges = edge_map(target, image.h, image.w);
    let plan = DropoutPlan::disabled(net, image.n, image.h, image.w);

    let (probs, tape) = net.forward_train_traced(image, &plan)?;
    let (_, d_probs) = loss_and_grad(&probs, target, &edges, loss_cfg)?;
    let analytic = net.backward(&tape, &plan, &d_probs);

    let segments = net.segments().to_vec();
    let base = net.params();

    // The loss has genuine kinks (ReLU) and discontinuities (pool-argmax
    // switches move the unpooling scatter target), so a central difference
    // whose ±h interval straddles one does not estimate the derivative at
    // all. A parameter that fails at the primary step is re-probed at
    // progressively smaller steps where straddling is ~100x less likely per
    // level; a wrong analytic gradient fails at every step, so sensitivity
    // is preserved. The floor rises at the finest level because the finite
    // difference's own rounding noise (~eps·|L|/h) grows as h shrinks.
    let ladder = [(h * 1e-2, floor), (h * 1e-4, floor.max(1e-5))];

    // One task per segment; workers clone the parameter vector once and
    // restore each perturbed entry afterwards.
    let per_segment: Vec<Result<(f64, usize, f64, f64, usize)>> = segments
        .par_iter()
        .map(|seg| {
            let mut params = base.to_vec();
            let mut worst = (0.0f64, seg.offset, 0.0f64, 0.0f64);
            let mut refined = 0usize;
            let probe = |params: &mut Vec<f64>, i: usize, step: f64| -> Result<f64> {
                let orig = params[i];
                params[i] = orig + step;
                let probs_p = net.replay_from_stage(seg.stage, params, &tape, &plan);
                let (lp, _) = loss_and_grad(&probs_p, target, &edges, loss_cfg)?;
                params[i] = orig - step;
                let probs_m = net.replay_from_stage(seg.stage, params, &tape, &plan);
                let (lm, _) = loss_and_grad(&probs_m, target, &edges, loss_cfg)?;
                params[i] = orig;
                Ok((lp.total - lm.total) / (2.0 * step))
            };
            for i in (seg.offset..seg.offset + seg.len).step_by(stride) {
                let numeric = probe(&mut params, i, h)?;
                let mut err = rel_err(analytic[i], numeric, floor);
                let mut reported = numeric;
                if err > 1e-3 {
                    refined += 1;
                    for &(step, lvl_floor) in &ladder {
                        let refined_numeric = probe(&mut params, i, step)?;
                        err = rel_err(analytic[i], refined_numeric, lvl_floor);
                        reported = refined_numeric;
                        if err <= 1e-3 {
                            break;
                        }
                    }
                }
                if err > worst.0 {
                    worst = (err, i, analytic[i], reported);
                }
            }
            Ok((worst.0, worst.1, worst.2, worst.3, refined))
        })
        .collect();

    let mut report = GradCheckReport {
        checked: base.len().div_ceil(stride),
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        refined: 0,
    };
    for (seg, res) in segments.iter().zip(per_segment) {
        let (err, idx, a, n, refined) = res?;
        report.refined += refined;
        if err > report.max_rel_err {
            report.max_rel_err = err;
            report.worst_param = format!("{}[{}]", seg.name, idx - seg.offset);
            report.worst_analytic = a;
            report.worst_numeric = n;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuralseg::net::ArchitectureSpec;
    use rand::Rng;

    /// Full-architecture check at reduced width so it stays fast; the
    /// acceptance suite runs the 16-channel version.
    ///
    /// Every parameter gets a small random offset first: the fresh-init
    /// zero betas propagate exact zeros into ReLU kinks (the 16x16 input
    /// shrinks the bottleneck to 1x1 where batch norm emits its beta
    /// verbatim), and finite differences are only valid at points where the
    /// loss is differentiable.
    #[test]
    fn gradients_match_finite_differences_small_net() {
        let mut net = QuickNatLite::new(
            ArchitectureSpec { channels: 3, input_size: 16, ..ArchitectureSpec::default() },
            17,
        )
        .unwrap();
        let mut prng = crate::rng::stream(25, &[]);
        for p in net.params_mut() {
            *p += prng.random_range(-0.05..0.05);
        }
        let net = net;
        let mut rng = crate::rng::stream(18, &[]);
        let data: Vec<f64> = (0..16 * 16).map(|_| rng.random_range(0.05..0.95)).collect();
        let image = Tensor4::from_vec(1, 1, 16, 16, data).unwrap();
        let mut target = vec![0u8; 16 * 16];
        for y in 4..12 {
            for x in 5..11 {
                target[y * 16 + x] = 1;
            }
        }
        let report = finite_difference_check(
            &net,
            &image,
            &target,
            &LossConfig::default(),
            1e-5,
            1e-6,
        )
        .unwrap();
        assert_eq!(report.checked, net.param_count());
        assert!(
            report.max_rel_err <= 1e-3,
            "max rel err {} at {} (analytic {}, numeric {})",
            report.max_rel_err,
            report.worst_param,
            report.worst_analytic,
            report.worst_numeric
        );
    }
}

//! Reference implementation (value + analytic gradient) of the TP-branch
//! loss: three parts focal, one part dice, over soft one-hot targets.

use crate::field::ChannelField;
use crate::util::KahanSum;
use crate::{from_f64, Real};
use thiserror::Error;

/// Probabilities are clamped into [PROB_CLAMP_MIN, 1 - PROB_CLAMP_MIN]
/// before any logarithm or division.
pub const PROB_CLAMP_MIN: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("field shapes differ: {0}×{1}×{2} vs {3}×{4}×{5}")]
    ShapeMismatch(usize, usize, usize, usize, usize, usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

fn check_shapes<F: Real>(p: &ChannelField<F>, y: &ChannelField<F>) -> Result<(), LossError> {
    if p.dims() != y.dims() {
        let (a, b, c) = p.dims();
        let (d, e, f) = y.dims();
        return Err(LossError::ShapeMismatch(a, b, c, d, e, f));
    }
    Ok(())
}

/// Loss value with its elementwise derivative with respect to the
/// predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue<F> {
    pub value: F,
    pub grad: ChannelField<F>,
}

/// Focal loss over soft targets, mean over all elements:
/// `-mean(y * (1-p)^gamma * ln(p))`. `gamma = 0` reduces to soft-target
/// cross-entropy.
pub fn focal_loss<F: Real>(
    p: &ChannelField<F>,
    y: &ChannelField<F>,
    gamma: F,
) -> Result<LossValue<F>, LossError> {
    check_shapes(p, y)?;
    if gamma < F::zero() {
        return Err(LossError::InvalidParameter(format!(
            "gamma must be non-negative, got {gamma:?}"
        )));
    }
    let n = from_f64::<F>(p.data().len() as f64);
    let pmin = from_f64::<F>(PROB_CLAMP_MIN);
    let pmax = F::one() - pmin;
    let mut grad = ChannelField::filled(p.height(), p.width(), p.channels(), F::zero());
    let mut total = KahanSum::<F>::new();
    for (i, (&pe, &ye)) in p.data().iter().zip(y.data()).enumerate() {
        let pc = pe.max(pmin).min(pmax);
        let one_minus = F::one() - pc;
        let focal_weight = one_minus.powf(gamma);
        let ln_p = pc.ln();
        total.add(-(ye * focal_weight * ln_p));
        // d/dp [-y (1-p)^g ln p] = -y [-g (1-p)^(g-1) ln p + (1-p)^g / p]
        let term = -gamma * one_minus.powf(gamma - F::one()) * ln_p + focal_weight / pc;
        grad.data_mut()[i] = -(ye * term) / n;
    }
    Ok(LossValue {
        value: total.value() / n,
        grad,
    })
}

/// Denominator of the dice ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DiceVariant {
    /// `sum(p^2) + sum(y^2)`; smooth gradients near binary targets.
    #[default]
    SquaredDenominator,
    /// `sum(p) + sum(y)`.
    LinearDenominator,
}

/// Scope of the dice sums.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DiceReduction {
    /// One ratio over every element of the field.
    #[default]
    Joint,
    /// One ratio per channel, averaged.
    PerChannel,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiceOptions<F> {
    pub eps: F,
    pub variant: DiceVariant,
    pub reduction: DiceReduction,
}

impl<F: Real> Default for DiceOptions<F> {
    fn default() -> Self {
        Self {
            eps: from_f64(1e-3),
            variant: DiceVariant::default(),
            reduction: DiceReduction::default(),
        }
    }
}

struct DiceSums<F> {
    overlap: F, // sum(p*y)
    p_mass: F,  // sum(p^2) or sum(p)
    y_mass: F,  // sum(y^2) or sum(y)
}

fn dice_ratio_grad<F: Real>(
    p_iter: impl Iterator<Item = (usize, F, F)>,
    sums: &DiceSums<F>,
    opts: &DiceOptions<F>,
    scale: F,
    grad: &mut [F],
) -> F {
    let two = from_f64::<F>(2.0);
    let numer = two * sums.overlap + opts.eps;
    let denom = sums.p_mass + sums.y_mass + opts.eps;
    // value = 1 - numer/denom; d(numer)/dp = 2y; d(denom)/dp = 2p or 1
    for (i, pe, ye) in p_iter {
        let ddenom = match opts.variant {
            DiceVariant::SquaredDenominator => two * pe,
            DiceVariant::LinearDenominator => F::one(),
        };
        let g = -(two * ye * denom - numer * ddenom) / (denom * denom);
        grad[i] = grad[i] + g * scale;
    }
    F::one() - numer / denom
}

/// Dice loss `1 - (2 sum(p y) + eps) / (mass(p) + mass(y) + eps)` with the
/// configured denominator and reduction.
pub fn dice_loss<F: Real>(
    p: &ChannelField<F>,
    y: &ChannelField<F>,
    opts: &DiceOptions<F>,
) -> Result<LossValue<F>, LossError> {
    check_shapes(p, y)?;
    if opts.eps <= F::zero() {
        return Err(LossError::InvalidParameter(format!(
            "eps must be positive, got {:?}",
            opts.eps
        )));
    }
    let channels = p.channels().max(1);
    let mut grad = ChannelField::filled(p.height(), p.width(), p.channels(), F::zero());
    let mass = |v: F| match opts.variant {
        DiceVariant::SquaredDenominator => v * v,
        DiceVariant::LinearDenominator => v,
    };
    let value = match opts.reduction {
        DiceReduction::Joint => {
            let mut overlap = KahanSum::<F>::new();
            let mut p_mass = KahanSum::<F>::new();
            let mut y_mass = KahanSum::<F>::new();
            for (&pe, &ye) in p.data().iter().zip(y.data()) {
                overlap.add(pe * ye);
                p_mass.add(mass(pe));
                y_mass.add(mass(ye));
            }
            let sums = DiceSums {
                overlap: overlap.value(),
                p_mass: p_mass.value(),
                y_mass: y_mass.value(),
            };
            dice_ratio_grad(
                p.data()
                    .iter()
                    .zip(y.data())
                    .enumerate()
                    .map(|(i, (&pe, &ye))| (i, pe, ye)),
                &sums,
                opts,
                F::one(),
                grad.data_mut(),
            )
        }
        DiceReduction::PerChannel => {
            let mut acc = KahanSum::<F>::new();
            let scale = from_f64::<F>(1.0 / channels as f64);
            for ch in 0..channels {
                let mut overlap = KahanSum::<F>::new();
                let mut p_mass = KahanSum::<F>::new();
                let mut y_mass = KahanSum::<F>::new();
                for (i, (&pe, &ye)) in p.data().iter().zip(y.data()).enumerate() {
                    if i % channels == ch {
                        overlap.add(pe * ye);
                        p_mass.add(mass(pe));
                        y_mass.add(mass(ye));
                    }
                }
                let sums = DiceSums {
                    overlap: overlap.value(),
                    p_mass: p_mass.value(),
                    y_mass: y_mass.value(),
                };
                let v = dice_ratio_grad(
                    p.data()
                        .iter()
                        .zip(y.data())
                        .enumerate()
                        .filter(|(i, _)| i % channels == ch)
                        .map(|(i, (&pe, &ye))| (i, pe, ye)),
                    &sums,
                    opts,
                    scale,
                    grad.data_mut(),
                );
                acc.add(v * scale);
            }
            acc.value()
        }
    };
    Ok(LossValue { value, grad })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TpLossParams<F> {
    pub gamma: F,
    pub dice: DiceOptions<F>,
}

impl<F: Real> Default for TpLossParams<F> {
    fn default() -> Self {
        Self {
            gamma: from_f64(2.0),
            dice: DiceOptions::default(),
        }
    }
}

/// Combined TP-branch loss with its components.
#[derive(Debug, Clone, PartialEq)]
pub struct TpLossValue<F> {
    pub value: F,
    pub focal: F,
    pub dice: F,
    pub grad: ChannelField<F>,
}

/// `loss_tp = 3*focal + dice`, gradients combined the same way.
pub fn tp_branch_loss<F: Real>(
    p: &ChannelField<F>,
    y: &ChannelField<F>,
    params: &TpLossParams<F>,
) -> Result<TpLossValue<F>, LossError> {
    let focal = focal_loss(p, y, params.gamma)?;
    let dice = dice_loss(p, y, &params.dice)?;
    let three = from_f64::<F>(3.0);
    let mut grad = focal.grad;
    for (g, &d) in grad.data_mut().iter_mut().zip(dice.grad.data()) {
        *g = three * *g + d;
    }
    Ok(TpLossValue {
        value: three * focal.value + dice.value,
        focal: focal.value,
        dice: dice.value,
        grad,
    })
}

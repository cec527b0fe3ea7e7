//! Gap restoration with Burg linear prediction.
//!
//! A damaged span is rebuilt by fitting one autoregressive model to the audio
//! before the gap and one to the time-reversed audio after it, running each
//! predictor across the gap, and crossfading the two extrapolations.

use thiserror::Error;

pub const DEFAULT_ORDER: usize = 32;
/// Context samples used on each side of a gap, at most.
pub const DEFAULT_MAX_CONTEXT: usize = 8192;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RestoreError {
    #[error("model order must be at least 1")]
    ZeroOrder,
    #[error("need more than {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("sample {0} is not finite")]
    NonFinite(usize),
    #[error("gap [{start}, {end}) exceeds the signal length {len}")]
    GapOutOfRange { start: usize, end: usize, len: usize },
    #[error("{side} context has {got} samples, need at least {needed}")]
    InsufficientContext {
        side: &'static str,
        needed: usize,
        got: usize,
    },
}

/// Autoregressive model `x[n] ~ sum_i coefficients[i] * x[n - 1 - i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArModel {
    pub coefficients: Vec<f64>,
    pub reflection: Vec<f64>,
    /// Prediction-error power after each stage; `errors[0]` is the signal power.
    pub errors: Vec<f64>,
}

impl ArModel {
    pub fn order(&self) -> usize {
        self.coefficients.len()
    }

    pub fn final_error(&self) -> f64 {
        *self.errors.last().expect("errors always holds stage 0")
    }

    /// Continues `history` by `count` samples, feeding predictions back in.
    /// The last `order` samples of `history` seed the filter.
    pub fn extrapolate(&self, history: &[f64], count: usize) -> Vec<f64> {
        let p = self.order();
        let mut window: Vec<f64> = history[history.len().saturating_sub(p)..].to_vec();
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let n = window.len();
            let next: f64 = self
                .coefficients
                .iter()
                .zip(window.iter().rev())
                .map(|(a, x)| a * x)
                .sum();
            out.push(next);
            window.push(next);
            if n + 1 > p {
                window.remove(0);
            }
        }
        out
    }
}

/// Estimates an order-`order` model with Burg's recursion, which picks each
/// reflection coefficient to minimise the summed forward and backward
/// prediction error directly on the samples.
pub fn burg_coefficients(samples: &[f64], order: usize) -> Result<ArModel, RestoreError> {
    if order == 0 {
        return Err(RestoreError::ZeroOrder);
    }
    if samples.len() <= 2 * order {
        return Err(RestoreError::TooShort {
            needed: 2 * order,
            got: samples.len(),
        });
    }
    if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
        return Err(RestoreError::NonFinite(i));
    }

    let n = samples.len();
    let mut forward = samples.to_vec();
    let mut backward = samples.to_vec();
    // prediction-error filter 1 + sum a_i z^-i
    let mut poly = vec![1.0];
    let mut reflection = Vec::with_capacity(order);
    let power = samples.iter().map(|x| x * x).sum::<f64>() / n as f64;
    let mut errors = vec![power];

    for m in 0..order {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in m + 1..n {
            let f = forward[i];
            let b = backward[i - 1];
            num += f * b;
            den += f * f + b * b;
        }
        let k = if den > 0.0 { (-2.0 * num / den).clamp(-1.0, 1.0) } else { 0.0 };

        // walk downwards so backward[i - 1] is still the previous stage's value
        for i in (m + 1..n).rev() {
            let f = forward[i];
            let b = backward[i - 1];
            forward[i] = f + k * b;
            backward[i] = b + k * f;
        }

        poly.push(0.0);
        let prev = poly.clone();
        for i in 1..=m + 1 {
            poly[i] = prev[i] + k * prev[m + 1 - i];
        }
        reflection.push(k);
        let last = *errors.last().expect("non-empty");
        errors.push(last * (1.0 - k * k));
    }

    Ok(ArModel {
        coefficients: poly[1..].iter().map(|a| -a).collect(),
        reflection,
        errors,
    })
}

/// Options for [`gap_fill_with`].
#[derive(Debug, Clone, Copy)]
pub struct GapFillOptions {
    pub order: usize,
    pub max_context: usize,
}

impl Default for GapFillOptions {
    fn default() -> Self {
        Self {
            order: DEFAULT_ORDER,
            max_context: DEFAULT_MAX_CONTEXT,
        }
    }
}

pub fn gap_fill(samples: &[f64], gap_start: usize, gap_len: usize, order: usize) -> Result<Vec<f64>, RestoreError> {
    gap_fill_with(
        samples,
        gap_start,
        gap_len,
        GapFillOptions {
            order,
            ..GapFillOptions::default()
        },
    )
}

/// Rebuilds `samples[gap_start..gap_start + gap_len]`; everything outside
/// the gap is copied unchanged.
pub fn gap_fill_with(
    samples: &[f64],
    gap_start: usize,
    gap_len: usize,
    opts: GapFillOptions,
) -> Result<Vec<f64>, RestoreError> {
    let gap_end = gap_start
        .checked_add(gap_len)
        .filter(|&end| end <= samples.len())
        .ok_or(RestoreError::GapOutOfRange {
            start: gap_start,
            end: gap_start.saturating_add(gap_len),
            len: samples.len(),
        })?;
    let mut out = samples.to_vec();
    if gap_len == 0 {
        return Ok(out);
    }
    if opts.order == 0 {
        return Err(RestoreError::ZeroOrder);
    }

    let needed = 2 * opts.order + 1;
    let context = opts.max_context.max(needed);
    let before = &samples[gap_start.saturating_sub(context)..gap_start];
    let after = &samples[gap_end..(gap_end + context).min(samples.len())];
    if before.len() < needed {
        return Err(RestoreError::InsufficientContext {
            side: "leading",
            needed,
            got: before.len(),
        });
    }
    if after.len() < needed {
        return Err(RestoreError::InsufficientContext {
            side: "trailing",
            needed,
            got: after.len(),
        });
    }

    let forward_model = burg_coefficients(before, opts.order)?;
    let forward = forward_model.extrapolate(before, gap_len);

    let reversed: Vec<f64> = after.iter().rev().copied().collect();
    let backward_model = burg_coefficients(&reversed, opts.order)?;
    let mut backward = backward_model.extrapolate(&reversed, gap_len);
    backward.reverse();

    // weight of the forward prediction falls linearly from ~1 to ~0; the ramp
    // is symmetric so the result does not depend on the direction of time
    let denom = (gap_len + 1) as f64;
    for (i, slot) in out[gap_start..gap_end].iter_mut().enumerate() {
        let w = 1.0 - (i + 1) as f64 / denom;
        *slot = w * forward[i] + (1.0 - w) * backward[i];
    }
    Ok(out)
}

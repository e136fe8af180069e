//! Central finite-difference verification of backprop.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::network::Network;
use super::Tensor;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)` over all checked coordinates.
    pub relative_error: f64,
    /// Worst single-coordinate absolute difference.
    pub max_abs_error: f64,
    pub checked: usize,
}

/// Compares backprop against central differences of `loss`.
///
/// `loss` maps a network output to `(value, dValue/dOutput)`. At most
/// `per_slice` randomly chosen coordinates of each weight or bias slice are
/// perturbed; pass `usize::MAX` to check everything.
pub fn gradient_check<L>(
    network: &Network,
    input: &Tensor,
    loss: L,
    eps: f64,
    per_slice: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    L: Fn(&Tensor) -> (f64, Tensor),
{
    let trace = network.forward_trace(input)?;
    let (_, grad_out) = loss(trace.last().expect("trace is never empty"));
    let analytic = network.backward(&trace, grad_out);
    let analytic = analytic.slices();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = network.clone();
    let slice_lens: Vec<usize> = network.param_slices().iter().map(|s| s.len()).collect();
    let (mut diff2, mut a2, mut n2, mut max_abs) = (0.0, 0.0, 0.0, 0.0f64);
    let mut checked = 0;
    for (slice, &len) in slice_lens.iter().enumerate() {
        let coords: Vec<usize> = if per_slice >= len {
            (0..len).collect()
        } else {
            sample(&mut rng, len, per_slice).into_vec()
        };
        for i in coords {
            let original = probe.param_slices_mut()[slice][i];
            probe.param_slices_mut()[slice][i] = original + eps;
            let hi = loss(&probe.forward(input)?).0;
            probe.param_slices_mut()[slice][i] = original - eps;
            let lo = loss(&probe.forward(input)?).0;
            probe.param_slices_mut()[slice][i] = original;

            let numeric = (hi - lo) / (2.0 * eps);
            let a = analytic[slice][i];
            diff2 += (a - numeric).powi(2);
            a2 += a * a;
            n2 += numeric * numeric;
            max_abs = max_abs.max((a - numeric).abs());
            checked += 1;
        }
    }
    let scale = a2.sqrt().max(n2.sqrt());
    let relative_error = if scale == 0.0 { 0.0 } else { diff2.sqrt() / scale };
    Ok(GradCheckReport {
        relative_error,
        max_abs_error: max_abs,
        checked,
    })
}

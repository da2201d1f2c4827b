//! Central-difference validation of backpropagated gradients.
//!
//! For each parameter leaf a seeded subset of elements is perturbed by
//! `±step` and the finite-difference slope is compared against the
//! backpropagated gradient. Comparison is relative except near zero, where an
//! absolute floor avoids dividing rounding noise by rounding noise. All ops
//! in this crate are smooth (softplus and exact-erf GELU have no kinks), so
//! central differences are trustworthy everywhere at step sizes around 1e-5.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DiffTensor, Result};

/// Gradients whose backprop and finite-difference values are both below this
/// magnitude are compared absolutely instead of relatively.
const ZERO_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone)]
pub struct LeafReport {
    pub leaf: usize,
    pub elements_checked: usize,
    pub max_rel_err: f64,
    /// Element index attaining the maximum, for debugging.
    pub argmax: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub leaves: Vec<LeafReport>,
    pub max_rel_err: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Compare backprop against central differences for a scalar-valued function.
///
/// `f` is invoked with the given leaves first (for backprop), then with
/// perturbed copies; it must be a pure function of its inputs. At most
/// `samples_per_leaf` elements are probed per leaf, drawn without
/// replacement from a ChaCha8 stream seeded by `seed`.
pub fn grad_check<F>(
    f: F,
    leaves: &[DiffTensor],
    step: f64,
    samples_per_leaf: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&[DiffTensor]) -> Result<DiffTensor>,
{
    for leaf in leaves {
        leaf.zero_grad();
    }
    let out = f(leaves)?;
    out.backward()?;
    let grads: Vec<Vec<f64>> = leaves
        .iter()
        .map(|l| l.grad().unwrap_or_else(|| vec![0.0; l.numel()]))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = Vec::with_capacity(leaves.len());
    let mut global_max = 0.0f64;

    for (li, leaf) in leaves.iter().enumerate() {
        let n = leaf.numel();
        let picks: Vec<usize> = if n <= samples_per_leaf {
            (0..n).collect()
        } else {
            sample(&mut rng, n, samples_per_leaf).into_vec()
        };
        let mut max_rel = 0.0f64;
        let mut argmax = 0usize;
        for &idx in &picks {
            let fd = central_difference(&f, leaves, li, idx, step)?;
            let bp = grads[li][idx];
            let denom = bp.abs().max(fd.abs());
            let rel = if denom < ZERO_FLOOR {
                0.0
            } else {
                (bp - fd).abs() / denom
            };
            if rel > max_rel {
                max_rel = rel;
                argmax = idx;
            }
        }
        global_max = global_max.max(max_rel);
        reports.push(LeafReport {
            leaf: li,
            elements_checked: picks.len(),
            max_rel_err: max_rel,
            argmax,
        });
    }
    Ok(GradCheckReport {
        leaves: reports,
        max_rel_err: global_max,
    })
}

fn central_difference<F>(
    f: &F,
    leaves: &[DiffTensor],
    leaf_idx: usize,
    elem_idx: usize,
    step: f64,
) -> Result<f64>
where
    F: Fn(&[DiffTensor]) -> Result<DiffTensor>,
{
    let eval = |delta: f64| -> Result<f64> {
        let mut perturbed: Vec<DiffTensor> = Vec::with_capacity(leaves.len());
        for (i, leaf) in leaves.iter().enumerate() {
            if i == leaf_idx {
                let mut vals = leaf.values().to_vec();
                vals[elem_idx] += delta;
                perturbed.push(DiffTensor::param(leaf.shape(), vals)?);
            } else {
                perturbed.push(leaf.clone());
            }
        }
        Ok(f(&perturbed)?.values()[0])
    };
    Ok((eval(step)? - eval(-step)?) / (2.0 * step))
}

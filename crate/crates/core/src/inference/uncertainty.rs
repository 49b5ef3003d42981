use crate::mechanics::{mode_bracket, DEFAULT_DEPTH_UNCERTAINTY};
use crate::nv_core::StrainModel;
use crate::spectra::{NvSite, DEFAULT_PHASE_UNCERTAINTY};

/// What a measurement point's error budget depends on.
#[derive(Debug, Clone, Copy)]
pub struct UncertaintyContext<'a> {
    pub site: &'a NvSite,
    pub model: &'a StrainModel,
    /// Half-width of the strobe phase uncertainty (rad).
    pub phase_uncertainty: f64,
    /// One-sigma NV depth uncertainty (m).
    pub depth_uncertainty: f64,
}

impl<'a> UncertaintyContext<'a> {
    pub fn new(site: &'a NvSite, model: &'a StrainModel) -> Self {
        Self {
            site,
            model,
            phase_uncertainty: DEFAULT_PHASE_UNCERTAINTY,
            depth_uncertainty: DEFAULT_DEPTH_UNCERTAINTY,
        }
    }
}

const PHASE_SAMPLES: usize = 64;

/// (σ_f, σ_ε) for each signed tip deflection.
///
/// σ_f is the largest shift of either transition when the true sampling
/// phase sits anywhere within ±phase_uncertainty of the antinode, which
/// shrinks the effective deflection to x·cos δ. σ_ε is the strain change
/// from a one-sigma shift of the NV depth.
pub fn propagate_uncertainties(ctx: &UncertaintyContext, deflections: &[f64]) -> Vec<(f64, f64)> {
    let g = &ctx.site.geometry;
    let l2 = g.length * g.length;
    let d_eps_d_depth = -1.875f64.powi(2) * mode_bracket(g.nv_axial / g.length) / (2.0 * l2);
    deflections
        .iter()
        .map(|&x| {
            let nominal = ctx.site.transitions_at(ctx.model, x);
            let mut sigma_f: f64 = 0.0;
            for k in 1..=PHASE_SAMPLES {
                let delta = ctx.phase_uncertainty * k as f64 / PHASE_SAMPLES as f64;
                let t = ctx.site.transitions_at(ctx.model, x * delta.cos());
                sigma_f = sigma_f
                    .max((t.plus - nominal.plus).abs())
                    .max((t.minus - nominal.minus).abs());
            }
            let sigma_eps = (d_eps_d_depth * x * ctx.depth_uncertainty).abs();
            (sigma_f, sigma_eps)
        })
        .collect()
}

use super::attention::{mhca_forward, radial_mean, rasa_forward, tasa_forward};
use super::weights::DecoderWeights;
use crate::error::{invalid, Result};
use crate::grid::{LocalViewDescriptor, PolarGrid};

/// Decodes a polar grid into a local-view descriptor: RASA stack, mean over
/// the radial axis, row-wise MLP, row normalization.
pub fn decode_local_view(polar: &PolarGrid, w: &DecoderWeights) -> Result<LocalViewDescriptor> {
    let cfg = &w.config;
    let (t, r, c) = polar.data().dim();
    if (t, r, c) != (cfg.angular_bins, cfg.radial_bins, cfg.channels) {
        return invalid(format!(
            "polar grid {t}x{r}x{c} does not match decoder {}x{}x{}",
            cfg.angular_bins, cfg.radial_bins, cfg.channels
        ));
    }
    let emb = cfg.radial_embedding()?;
    let mut x = polar.clone();
    for layer in &w.rasa {
        x = rasa_forward(&x, layer, &emb)?;
    }
    let collapsed = radial_mean(&x);
    LocalViewDescriptor::normalized(w.mlp.apply(&collapsed))
}

/// Interaction rounds `(ds, dp) ← MHCA(TASA(ds), TASA(dp))`, followed by row
/// normalization of both outputs.
pub fn interact(
    ds: &LocalViewDescriptor,
    dp: &LocalViewDescriptor,
    w: &DecoderWeights,
) -> Result<(LocalViewDescriptor, LocalViewDescriptor)> {
    if ds.data().dim() != dp.data().dim() {
        return invalid(format!("descriptor shapes differ: {:?} vs {:?}", ds.data().dim(), dp.data().dim()));
    }
    if ds.channels() != w.config.channels {
        return invalid(format!("descriptor has {} channels, decoder expects {}", ds.channels(), w.config.channels));
    }
    let emb = w.config.angular_embedding()?;
    let mut a = ds.clone();
    let mut b = dp.clone();
    for (tasa, mhca) in w.tasa.iter().zip(&w.mhca) {
        let ta = tasa_forward(&a, tasa, &emb)?;
        let tb = tasa_forward(&b, tasa, &emb)?;
        (a, b) = mhca_forward(&ta, &tb, mhca)?;
    }
    Ok((
        LocalViewDescriptor::normalized(a.into_data())?,
        LocalViewDescriptor::normalized(b.into_data())?,
    ))
}

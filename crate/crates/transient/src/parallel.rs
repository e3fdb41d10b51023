//! Multi-threaded drivers for the sweep and the Monte-Carlo renderer.
//!
//! Both split work into units whose randomness depends only on their
//! index, so results match the sequential core functions exactly.

use rayon::prelude::*;
use transient_core::render::{DepthMapRender, DepthMapRenderer};
use transient_core::sweep::{CellResult, SweepConfig, SweepReport};
use transient_core::{DepthMapScene, RenderSettings, SensorConfig};

/// Parallel counterpart of [`transient_core::sweep::run_sweep`].
pub fn run_sweep(sweep: &SweepConfig) -> transient_core::Result<SweepReport> {
    transient_core::sweep::validate(sweep)?;
    let cells: Vec<CellResult> = (0..sweep.n_cells())
        .into_par_iter()
        .map(|c| {
            let (zi, ti) = sweep.cell_position(c);
            sweep.evaluate_cell(zi, ti)
        })
        .collect();
    Ok(SweepReport::from_cells(sweep, cells))
}

/// Parallel counterpart of [`transient_core::render::render_depth_map`].
pub fn render_depth_map(
    scene: &DepthMapScene,
    config: &SensorConfig,
    settings: &RenderSettings,
) -> transient_core::Result<DepthMapRender> {
    let renderer = DepthMapRenderer::new(scene, config, settings)?;
    let tallies = (0..renderer.n_chunks())
        .into_par_iter()
        .map(|c| renderer.render_chunk(c))
        .collect::<transient_core::Result<Vec<_>>>()?;
    renderer.finish(tallies)
}

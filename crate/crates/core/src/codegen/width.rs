//! Largest channel width that fits the budgets.

use rayon::prelude::*;

use super::{assemble, count_resources, CodegenError, MacroConfig, NetworkGraph, ResourceCount};
use crate::dsl::Block;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WidthSearch {
    pub width: i64,
    pub resources: ResourceCount,
    /// Every width tried, with its count when it assembled.
    pub evaluated: Vec<(i64, Option<ResourceCount>)>,
    /// The chosen width is the grid maximum, so larger widths were not examined.
    pub capped: bool,
}

fn evaluate(cell: &Block, stem: &Block, downsample: &Block, config: &MacroConfig, width: i64) -> (Option<ResourceCount>, bool) {
    match assemble(cell, stem, downsample, config, width) {
        Ok(net) => {
            let r = count_resources(&net);
            (Some(r), r.params <= config.max_params && r.macs <= config.max_macs)
        }
        Err(e) => {
            log::debug!("width {width} does not assemble: {e}");
            (None, false)
        }
    }
}

/// Scans the grid for the largest feasible width `g`, then tries every width strictly
/// between `g` and the next grid point and keeps the largest feasible one. Widths that fail
/// to assemble count as infeasible.
pub fn search_width(cell: &Block, stem: &Block, downsample: &Block, config: &MacroConfig) -> Result<WidthSearch, CodegenError> {
    config.check()?;
    let grid = config.grid;
    let points: Vec<i64> = (0..).map(|i| grid.start + i * grid.step).take_while(|w| *w <= grid.max).collect();
    let scan = |widths: &[i64]| -> Vec<(i64, Option<ResourceCount>, bool)> {
        widths
            .par_iter()
            .map(|&w| {
                let (r, ok) = evaluate(cell, stem, downsample, config, w);
                (w, r, ok)
            })
            .collect()
    };
    let coarse = scan(&points);
    let mut evaluated: Vec<(i64, Option<ResourceCount>)> = coarse.iter().map(|(w, r, _)| (*w, *r)).collect();
    let Some(&(g, gr, _)) = coarse.iter().rev().find(|(_, _, ok)| *ok) else {
        return Err(CodegenError::Infeasible(format!(
            "{} params / {} MACs over widths {}..={}",
            config.max_params, config.max_macs, grid.start, grid.max
        )));
    };
    let capped = g == *points.last().expect("grid is non-empty");
    let fine: Vec<i64> = if capped { Vec::new() } else { (g + 1..g + grid.step).collect() };
    let refined = scan(&fine);
    evaluated.extend(refined.iter().map(|(w, r, _)| (*w, *r)));
    let (width, resources) = refined
        .iter()
        .rev()
        .find(|(_, _, ok)| *ok)
        .map_or((g, gr.expect("feasible widths assemble")), |(w, r, _)| (*w, r.expect("feasible widths assemble")));
    Ok(WidthSearch { width, resources, evaluated, capped })
}

/// Assembles at the searched width.
pub fn assemble_at_best(cell: &Block, stem: &Block, downsample: &Block, config: &MacroConfig) -> Result<(NetworkGraph, WidthSearch), CodegenError> {
    let search = search_width(cell, stem, downsample, config)?;
    let net = assemble(cell, stem, downsample, config, search.width)?;
    Ok((net, search))
}

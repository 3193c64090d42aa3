use std::collections::{BTreeMap, BTreeSet, HashSet};

use super::{Coord, DataError};

/// Discretized position used by the sparse positional embedding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct GridPos {
    pub u: u32,
    pub v: u32,
}

/// Maps raw patch coordinates of all WSIs of one patient into a compact
/// integer grid, returned in input order.
///
/// Within a WSI, `u` and `v` are the dense ranks of the distinct `x` and `y`
/// values. WSIs are laid out left to right in index order; each one starts
/// two columns past the previous WSI's largest `u`.
pub fn discretize_coordinates(coords: &[Coord]) -> Result<Vec<GridPos>, DataError> {
    let mut seen = HashSet::with_capacity(coords.len());
    for c in coords {
        if !seen.insert(*c) {
            return Err(DataError::DuplicateCoordinate { wsi: c.wsi, x: c.x, y: c.y });
        }
    }
    let mut per_wsi: BTreeMap<u32, (BTreeSet<u32>, BTreeSet<u32>)> = BTreeMap::new();
    for c in coords {
        let e = per_wsi.entry(c.wsi).or_default();
        e.0.insert(c.x);
        e.1.insert(c.y);
    }
    let mut ranks: BTreeMap<u32, (u32, BTreeMap<u32, u32>, BTreeMap<u32, u32>)> = BTreeMap::new();
    let mut offset = 0u32;
    for (wsi, (xs, ys)) in per_wsi {
        let xr: BTreeMap<u32, u32> = xs.iter().enumerate().map(|(i, &x)| (x, i as u32)).collect();
        let yr: BTreeMap<u32, u32> = ys.iter().enumerate().map(|(i, &y)| (y, i as u32)).collect();
        let width = xr.len() as u32;
        ranks.insert(wsi, (offset, xr, yr));
        offset += width - 1 + 2;
    }
    Ok(coords
        .iter()
        .map(|c| {
            let (off, xr, yr) = &ranks[&c.wsi];
            GridPos { u: off + xr[&c.x], v: yr[&c.y] }
        })
        .collect())
}

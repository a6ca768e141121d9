//! Grid partition of sensor positions into numbered sectors.

use std::collections::BTreeMap;

/// Splits the bounding box of `positions` into a grid of `k` cells and
/// returns each sensor's sector (1-based, row-major from the southernmost
/// row). The grid is `r x (k / r)` with `r` the largest divisor of `k` not
/// above `sqrt(k)`; the longer side of the box gets the larger count. Points
/// on a cell boundary belong to the lower-numbered cell.
pub fn assign_sectors(positions: &[(String, f64, f64)], k: u32) -> BTreeMap<String, u32> {
    assert!(k >= 1, "need at least one sector");
    let r = (1..=k)
        .filter(|d| k.is_multiple_of(*d) && d * d <= k)
        .max()
        .unwrap_or(1);
    let bounds = |f: fn(&(String, f64, f64)) -> f64| {
        positions
            .iter()
            .map(f)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
                (lo.min(x), hi.max(x))
            })
    };
    let (lat_lo, lat_hi) = bounds(|p| p.1);
    let (lon_lo, lon_hi) = bounds(|p| p.2);
    let (rows, cols) = if lon_hi - lon_lo >= lat_hi - lat_lo {
        (r, k / r)
    } else {
        (k / r, r)
    };
    let cell = |x: f64, lo: f64, hi: f64, n: u32| -> u32 {
        let span = hi - lo;
        if span <= 0.0 {
            return 0;
        }
        let idx = ((x - lo) / span * n as f64).ceil() as i64 - 1;
        idx.clamp(0, n as i64 - 1) as u32
    };
    positions
        .iter()
        .map(|(id, lat, lon)| {
            let row = cell(*lat, lat_lo, lat_hi, rows);
            let col = cell(*lon, lon_lo, lon_hi, cols);
            (id.clone(), row * cols + col + 1)
        })
        .collect()
}

/// Number of sensors per sector.
pub fn sector_sizes(assignment: &BTreeMap<String, u32>) -> BTreeMap<u32, usize> {
    let mut sizes = BTreeMap::new();
    for s in assignment.values() {
        *sizes.entry(*s).or_insert(0) += 1;
    }
    sizes
}

//! Tile-grid arithmetic: coordinate-to-tile translation, shifted-tiling
//! server selection, subscription splitting, and exact segment/rectangle
//! intersection. Everything here is key-free and works on plain integers;
//! the same intersection routine doubles as the plaintext correctness
//! oracle and the backend's query predicate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::SystemParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Point {
    pub x: u64,
    pub y: u64,
}

impl Point {
    pub fn new(x: u64, y: u64) -> Self {
        Point { x, y }
    }

    pub fn in_bounds(&self, params: &SystemParams) -> bool {
        self.x < params.map_w() && self.y < params.map_h()
    }
}

/// A tile number plus tile-local coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileCoord {
    pub num: u64,
    pub dx: u64,
    pub dy: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub p0: Point,
    pub p1: Point,
}

impl Segment {
    pub fn new(p0: Point, p1: Point) -> Self {
        Segment { p0, p1 }
    }
}

/// Axis-aligned closed rectangle; both corners inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub sw: Point,
    pub ne: Point,
}

impl Rect {
    pub fn new(sw: Point, ne: Point) -> Result<Self> {
        if sw.x > ne.x || sw.y > ne.y {
            return Err(Error::Validation(format!(
                "rectangle corners not ordered: sw=({},{}) ne=({},{})",
                sw.x, sw.y, ne.x, ne.y
            )));
        }
        Ok(Rect { sw, ne })
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.sw.x && p.x <= self.ne.x && p.y >= self.sw.y && p.y <= self.ne.y
    }
}

/// Translate a point into (tile number, tile-local coordinates) under the
/// tiling shifted by `z`. The offset subtraction wraps modulo the map
/// extent, so shifted tilings stay total over the whole map.
pub fn coordinates_on_tile(p: Point, z: u64, params: &SystemParams) -> Result<TileCoord> {
    if !p.in_bounds(params) {
        return Err(Error::OutOfBounds(p.x, p.y));
    }
    let t = params.tile_len;
    let xs = (p.x + params.map_w() - z) % params.map_w();
    let ys = (p.y + params.map_h() - z) % params.map_h();
    Ok(TileCoord {
        num: xs / t + (ys / t) * params.n_x,
        dx: xs % t,
        dy: ys % t,
    })
}

/// Inverse of `coordinates_on_tile`: map a tile-local position back to map
/// coordinates.
pub fn tile_to_map(num: u64, dx: u64, dy: u64, z: u64, params: &SystemParams) -> Point {
    let t = params.tile_len;
    let xs = (num % params.n_x) * t + dx;
    let ys = (num / params.n_x) * t + dy;
    Point::new((xs + z) % params.map_w(), (ys + z) % params.map_h())
}

/// Index of the first tiling (0, 1 or 2) in which both segment endpoints
/// fall on the same tile, or `None` if no tiling fits. Every movement
/// shorter than tile_len/3 per axis fits at least one tiling.
pub fn choose_server(seg: &Segment, params: &SystemParams) -> Result<Option<usize>> {
    for (i, &z) in params.offsets.iter().enumerate() {
        let a = coordinates_on_tile(seg.p0, z, params)?;
        let b = coordinates_on_tile(seg.p1, z, params)?;
        if a.num == b.num {
            return Ok(Some(i));
        }
    }
    Ok(None)
}

/// One contiguous span of an axis interval inside a single tile row/column.
struct AxisSpan {
    tile: u64,
    local_lo: u64,
    local_hi: u64,
}

fn axis_spans(lo: u64, hi: u64, z: u64, tile_len: u64, n_tiles: u64) -> Vec<AxisSpan> {
    let ext = tile_len * n_tiles;
    let mut spans = Vec::new();
    let mut cur = lo;
    loop {
        let shifted = (cur + ext - z) % ext;
        let tile = shifted / tile_len;
        let local_lo = shifted % tile_len;
        let room = tile_len - 1 - local_lo;
        let end = std::cmp::min(hi, cur + room);
        spans.push(AxisSpan { tile, local_lo, local_hi: local_lo + (end - cur) });
        if end == hi {
            break;
        }
        cur = end + 1;
    }
    spans
}

/// Split a rectangle along the tile boundaries of the tiling shifted by
/// `z`. Returns (tile number, tile-local sub-rectangle) pairs whose union
/// is the input and whose interiors are pairwise disjoint.
pub fn split_rect(r: &Rect, z: u64, params: &SystemParams) -> Result<Vec<(u64, Rect)>> {
    if !r.sw.in_bounds(params) || !r.ne.in_bounds(params) {
        return Err(Error::OutOfBounds(r.ne.x, r.ne.y));
    }
    let xs = axis_spans(r.sw.x, r.ne.x, z, params.tile_len, params.n_x);
    let ys = axis_spans(r.sw.y, r.ne.y, z, params.tile_len, params.n_y);
    let mut parts = Vec::with_capacity(xs.len() * ys.len());
    for sy in &ys {
        for sx in &xs {
            let num = sx.tile + sy.tile * params.n_x;
            let local = Rect {
                sw: Point::new(sx.local_lo, sy.local_lo),
                ne: Point::new(sx.local_hi, sy.local_hi),
            };
            parts.push((num, local));
        }
    }
    Ok(parts)
}

/// Exact closed-segment vs closed-box intersection over raw integer
/// coordinates, valid in any coordinate space (plaintext or encrypted).
/// Separating-axis test: the box and segment overlap iff their bounding
/// intervals overlap on both axes and the four box corners do not all lie
/// strictly on one side of the segment's supporting line.
pub fn segment_intersects_box(p0: (u64, u64), p1: (u64, u64), lo: (u64, u64), hi: (u64, u64)) -> bool {
    if std::cmp::max(p0.0, p1.0) < lo.0
        || std::cmp::min(p0.0, p1.0) > hi.0
        || std::cmp::max(p0.1, p1.1) < lo.1
        || std::cmp::min(p0.1, p1.1) > hi.1
    {
        return false;
    }
    let dx = p1.0 as i128 - p0.0 as i128;
    let dy = p1.1 as i128 - p0.1 as i128;
    let side = |cx: u64, cy: u64| -> i128 {
        let sx = cx as i128 - p0.0 as i128;
        let sy = cy as i128 - p0.1 as i128;
        dx * sy - dy * sx
    };
    let corners = [
        side(lo.0, lo.1),
        side(hi.0, lo.1),
        side(lo.0, hi.1),
        side(hi.0, hi.1),
    ];
    !(corners.iter().all(|&c| c > 0) || corners.iter().all(|&c| c < 0))
}

/// `segment_intersects_box` over the plaintext domain types.
pub fn segment_intersects_rect(seg: &Segment, r: &Rect) -> bool {
    segment_intersects_box(
        (seg.p0.x, seg.p0.y),
        (seg.p1.x, seg.p1.y),
        (r.sw.x, r.sw.y),
        (r.ne.x, r.ne.y),
    )
}

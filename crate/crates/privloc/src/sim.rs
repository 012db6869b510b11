//! Deterministic, seedable workload generation: per-step random-angle,
//! random-length node mobility and uniformly placed square subscriptions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::gateway::{MovementReport, Subscription};
use crate::geometry::{Point, Rect};
use crate::params::SystemParams;

/// Per-node mobility state: current position plus the step distributions
/// (length uniform over [0, max_move], heading uniform over [0, 360)).
#[derive(Debug, Clone)]
pub struct MobilityModel {
    pub pos: Point,
    max_move: u64,
    map_w: u64,
    map_h: u64,
}

impl MobilityModel {
    pub fn new<R: Rng>(rng: &mut R, params: &SystemParams) -> Self {
        MobilityModel {
            pos: Point::new(rng.gen_range(0..params.map_w()), rng.gen_range(0..params.map_h())),
            max_move: params.max_move,
            map_w: params.map_w(),
            map_h: params.map_h(),
        }
    }

    pub fn at(pos: Point, params: &SystemParams) -> Self {
        MobilityModel { pos, max_move: params.max_move, map_w: params.map_w(), map_h: params.map_h() }
    }

    /// Draw the next position. Steps that would leave the map are re-drawn
    /// (fresh heading and length), which keeps the length distribution
    /// intact for the accepted steps.
    pub fn step<R: Rng>(&mut self, rng: &mut R) -> Point {
        self.step_len(rng, None)
    }

    fn step_len<R: Rng>(&mut self, rng: &mut R, fixed_len: Option<f64>) -> Point {
        loop {
            let angle = rng.gen_range(0.0..360.0f64).to_radians();
            let len = fixed_len.unwrap_or_else(|| rng.gen_range(0.0..=self.max_move as f64));
            let dx = (len * angle.cos()).round() as i64;
            let dy = (len * angle.sin()).round() as i64;
            let nx = self.pos.x as i64 + dx;
            let ny = self.pos.y as i64 + dy;
            if nx < 0 || ny < 0 || nx >= self.map_w as i64 || ny >= self.map_h as i64 {
                continue;
            }
            // Rounding may push the magnitude just past the bound.
            if (dx * dx + dy * dy) as u64 > self.max_move * self.max_move {
                continue;
            }
            self.pos = Point::new(nx as u64, ny as u64);
            return self.pos;
        }
    }
}

/// A reproducible chain of movement reports for one node: the end of each
/// report is the start of the next.
pub fn gen_path(node_id: &str, steps: usize, seed: u64, params: &SystemParams) -> Vec<MovementReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = MobilityModel::new(&mut rng, params);
    let mut reports = Vec::with_capacity(steps);
    for ts in 0..steps as u64 {
        let start = model.pos;
        let end = model.step(&mut rng);
        reports.push(MovementReport { node_id: node_id.to_string(), start, end, ts });
    }
    reports
}

/// Like `gen_path` but with every step of the same length (random heading
/// only), e.g. 20 reports each 30% of the tile width.
pub fn gen_path_fixed_len(
    node_id: &str,
    steps: usize,
    len: u64,
    seed: u64,
    params: &SystemParams,
) -> Vec<MovementReport> {
    assert!(len <= params.max_move);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = MobilityModel::new(&mut rng, params);
    let mut reports = Vec::with_capacity(steps);
    for ts in 0..steps as u64 {
        let start = model.pos;
        let end = model.step_len(&mut rng, Some(len as f64));
        reports.push(MovementReport { node_id: node_id.to_string(), start, end, ts });
    }
    reports
}

/// Uniformly placed axis-aligned squares with the given side length
/// (corner-to-corner extent, ne = sw + side).
pub fn gen_subscriptions(count: usize, side: u64, seed: u64, params: &SystemParams) -> Vec<Subscription> {
    assert!(side <= params.tile_len, "subscription side exceeds tile side");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let x = rng.gen_range(0..params.map_w() - side);
            let y = rng.gen_range(0..params.map_h() - side);
            Subscription {
                sub_id: format!("sub-{}", i),
                area: Rect::new(Point::new(x, y), Point::new(x + side, y + side)).unwrap(),
                callback: "sink".into(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    Publish(MovementReport),
    Subscribe(Subscription),
}

/// Interleaved publish/subscribe stream honoring `reports:subscriptions`
/// in expectation. Publishes round-robin over `n_clients` mobile nodes.
pub fn gen_mixed_workload(
    n_clients: usize,
    events: usize,
    ratio: (u64, u64),
    sub_side: u64,
    seed: u64,
    params: &SystemParams,
) -> Vec<Event> {
    assert!(n_clients >= 1 && ratio.0 > 0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut models: Vec<MobilityModel> =
        (0..n_clients).map(|_| MobilityModel::new(&mut rng, params)).collect();
    let p_sub = ratio.1 as f64 / (ratio.0 + ratio.1) as f64;
    let mut out = Vec::with_capacity(events);
    let mut next_sub = 0usize;
    for ts in 0..events as u64 {
        if rng.gen_bool(p_sub) {
            let side = if sub_side > 0 { rng.gen_range(1..=sub_side) } else { 1 };
            let x = rng.gen_range(0..params.map_w() - side);
            let y = rng.gen_range(0..params.map_h() - side);
            out.push(Event::Subscribe(Subscription {
                sub_id: format!("sub-{}", next_sub),
                area: Rect::new(Point::new(x, y), Point::new(x + side, y + side)).unwrap(),
                callback: "sink".into(),
            }));
            next_sub += 1;
        } else {
            let c = ts as usize % n_clients;
            let start = models[c].pos;
            let end = models[c].step(&mut rng);
            out.push(Event::Publish(MovementReport {
                node_id: format!("node-{}", c),
                start,
                end,
                ts,
            }));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paths_deterministic_and_chained() {
        let p = SystemParams::default();
        let a = gen_path("n", 50, 42, &p);
        let b = gen_path("n", 50, 42, &p);
        assert_eq!(a, b);
        for w in a.windows(2) {
            assert_eq!(w[0].end, w[1].start);
        }
    }

    #[test]
    fn step_lengths_bounded_and_in_bounds() {
        let p = SystemParams::default();
        for r in gen_path("n", 2000, 7, &p) {
            assert!(r.start.in_bounds(&p) && r.end.in_bounds(&p));
            let dx = r.start.x.abs_diff(r.end.x);
            let dy = r.start.y.abs_diff(r.end.y);
            assert!(dx * dx + dy * dy <= p.max_move * p.max_move);
        }
    }

    #[test]
    fn headings_roughly_uniform() {
        // Chi-square over 36 ten-degree bins; 99th percentile of chi2(35)
        // is 57.3. Zero-length steps have no heading and are skipped.
        let p = SystemParams::new(1000, 100, 100);
        let reports = gen_path("n", 50_000, 3, &p);
        let mut bins = [0f64; 36];
        let mut n = 0f64;
        for r in &reports {
            let dx = r.end.x as f64 - r.start.x as f64;
            let dy = r.end.y as f64 - r.start.y as f64;
            if dx == 0.0 && dy == 0.0 {
                continue;
            }
            let deg = dy.atan2(dx).to_degrees().rem_euclid(360.0);
            bins[(deg / 10.0) as usize % 36] += 1.0;
            n += 1.0;
        }
        let expect = n / 36.0;
        let chi2: f64 = bins.iter().map(|b| (b - expect).powi(2) / expect).sum();
        assert!(chi2 < 57.3, "chi2 = {}", chi2);
    }

    #[test]
    fn fixed_length_paths() {
        // 20 reports, each 30% of the tile width.
        let p = SystemParams::default();
        let reports = gen_path_fixed_len("n", 20, 30, 4, &p);
        assert_eq!(reports.len(), 20);
        for r in &reports {
            let dx = r.start.x.abs_diff(r.end.x) as f64;
            let dy = r.start.y.abs_diff(r.end.y) as f64;
            let len = (dx * dx + dy * dy).sqrt();
            assert!((len - 30.0).abs() <= 1.0, "length {}", len);
        }
    }

    #[test]
    fn subscription_generation() {
        let p = SystemParams::default();
        let subs = gen_subscriptions(500, 50, 9, &p);
        assert_eq!(subs, gen_subscriptions(500, 50, 9, &p));
        for s in &subs {
            assert_eq!(s.area.ne.x - s.area.sw.x, 50);
            assert_eq!(s.area.ne.y - s.area.sw.y, 50);
            assert!(s.area.ne.in_bounds(&p));
        }
    }

    #[test]
    fn mixed_workload_ratio() {
        let p = SystemParams::default();
        let events = gen_mixed_workload(16, 100_000, (19, 1), 50, 5, &p);
        let subs = events.iter().filter(|e| matches!(e, Event::Subscribe(_))).count();
        let frac = subs as f64 / events.len() as f64;
        assert!((frac - 0.05).abs() < 0.005, "subscription fraction {}", frac);

        // 1:1 ratio supported.
        let events = gen_mixed_workload(1, 10_000, (1, 1), 50, 5, &p);
        let subs = events.iter().filter(|e| matches!(e, Event::Subscribe(_))).count();
        assert!((subs as f64 / 10_000.0 - 0.5).abs() < 0.05);
    }

    #[test]
    fn workload_serializes_to_json_lines() {
        let p = SystemParams::default();
        let events = gen_mixed_workload(2, 20, (19, 1), 50, 1, &p);
        for e in &events {
            let line = serde_json::to_string(e).unwrap();
            let back: Event = serde_json::from_str(&line).unwrap();
            assert_eq!(&back, e);
        }
    }
}

//! Canny edges and branchless contour extraction.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Point;
use crate::raster::{gaussian_blur, Raster};

/// 8-neighborhood offsets in clockwise order starting north.
const RING: [(isize, isize); 8] = [
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeMap {
    width: usize,
    height: usize,
    on: Vec<bool>,
}

impl EdgeMap {
    pub fn new(width: usize, height: usize) -> Self {
        EdgeMap {
            width,
            height,
            on: vec![false; width * height],
        }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: &[(usize, usize)]) -> Self {
        let mut map = EdgeMap::new(width, height);
        for &(x, y) in pixels {
            map.set(x, y, true);
        }
        map
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.on[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.on[y * self.width + x] = v;
    }

    /// Out-of-bounds coordinates read as off.
    #[inline]
    fn at(&self, x: isize, y: isize) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.on[y as usize * self.width + x as usize]
    }

    pub fn count(&self) -> usize {
        self.on.iter().filter(|&&v| v).count()
    }

    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.on
            .iter()
            .enumerate()
            .filter(|(_, &v)| v)
            .map(move |(i, _)| (i % self.width, i / self.width))
    }

    /// Number of on-pixels among the 8 neighbors.
    pub fn neighbor_count(&self, x: usize, y: usize) -> usize {
        RING.iter()
            .filter(|(dx, dy)| self.at(x as isize + dx, y as isize + dy))
            .count()
    }

    /// Renders on-pixels white on black.
    pub fn to_raster(&self) -> Raster {
        let data = self.on.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();
        Raster::from_vec(self.width, self.height, 1, data).expect("sizes agree")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CannyParams {
    /// Weak threshold as a fraction of the image's maximum gradient magnitude.
    pub t_low: f64,
    /// Strong threshold, same units.
    pub t_high: f64,
    pub sigma: f64,
}

impl Default for CannyParams {
    fn default() -> Self {
        CannyParams {
            t_low: 0.2,
            t_high: 0.2,
            sigma: 1.0,
        }
    }
}

/// Canny edge detector: Gaussian smoothing, Sobel gradients, non-maximum
/// suppression along four quantized directions, then hysteresis with
/// thresholds relative to the strongest gradient in the image.
pub fn canny(img: &Raster, params: &CannyParams) -> Result<EdgeMap> {
    if img.channels() != 1 {
        return Err(Error::ChannelMismatch {
            expected: 1,
            found: img.channels(),
        });
    }
    let CannyParams { t_low, t_high, sigma } = *params;
    if !(0.0 <= t_low && t_low <= t_high && t_high <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "thresholds must satisfy 0 <= t_low <= t_high <= 1, got {t_low}, {t_high}"
        )));
    }
    let (w, h) = (img.width(), img.height());
    let mut edges = EdgeMap::new(w, h);
    if w < 3 || h < 3 {
        return Ok(edges);
    }
    let smooth = gaussian_blur(img, sigma)?;
    let s = smooth.data();
    let at = |x: usize, y: usize| s[y * w + x];

    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    let mut mag = vec![0.0; w * h];
    for y in 0..h {
        let ym = y.saturating_sub(1);
        let yp = (y + 1).min(h - 1);
        for x in 0..w {
            let xm = x.saturating_sub(1);
            let xp = (x + 1).min(w - 1);
            let dx = (at(xp, ym) + 2.0 * at(xp, y) + at(xp, yp)) - (at(xm, ym) + 2.0 * at(xm, y) + at(xm, yp));
            let dy = (at(xm, yp) + 2.0 * at(x, yp) + at(xp, yp)) - (at(xm, ym) + 2.0 * at(x, ym) + at(xp, ym));
            let i = y * w + x;
            gx[i] = dx;
            gy[i] = dy;
            mag[i] = dx.hypot(dy);
        }
    }
    let max_mag = mag.iter().cloned().fold(0.0, f64::max);
    if max_mag <= 1e-12 {
        return Ok(edges);
    }

    // non-maximum suppression; ties resolve toward the second neighbor so a
    // symmetric ridge keeps exactly one pixel
    let mut thin = vec![0.0; w * h];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let i = y * w + x;
            let m = mag[i];
            if m == 0.0 {
                continue;
            }
            let angle = gy[i].atan2(gx[i]).to_degrees().rem_euclid(180.0);
            let (dx, dy): (isize, isize) = if !(22.5..157.5).contains(&angle) {
                (1, 0)
            } else if angle < 67.5 {
                (1, 1)
            } else if angle < 112.5 {
                (0, 1)
            } else {
                (-1, 1)
            };
            let before = mag[((y as isize - dy) as usize) * w + (x as isize - dx) as usize];
            let after = mag[((y as isize + dy) as usize) * w + (x as isize + dx) as usize];
            if m >= before && m > after {
                thin[i] = m;
            }
        }
    }

    let low = t_low * max_mag;
    let high = t_high * max_mag;
    let mut queue = VecDeque::new();
    for (i, &m) in thin.iter().enumerate() {
        if m >= high && m > 0.0 {
            edges.on[i] = true;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for (dx, dy) in RING {
            let (nx, ny) = (x + dx, y + dy);
            if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                continue;
            }
            let j = ny as usize * w + nx as usize;
            if !edges.on[j] && thin[j] >= low && thin[j] > 0.0 {
                edges.on[j] = true;
                queue.push_back(j);
            }
        }
    }
    Ok(edges)
}

/// Number of 8-connected groups among the on-neighbors of a pixel.
fn neighbor_groups(n: &[bool; 8]) -> usize {
    let mut label = [usize::MAX; 8];
    let mut groups = 0;
    for start in 0..8 {
        if !n[start] || label[start] != usize::MAX {
            continue;
        }
        let mut stack = vec![start];
        label[start] = groups;
        while let Some(k) = stack.pop() {
            for j in 0..8 {
                let d = (RING[k].0 - RING[j].0).abs().max((RING[k].1 - RING[j].1).abs());
                if n[j] && label[j] == usize::MAX && d == 1 {
                    label[j] = groups;
                    stack.push(j);
                }
            }
        }
        groups += 1;
    }
    groups
}

/// Zhang–Suen thinning, iterated to a fixed point, then removal of the
/// staircase corners it leaves on diagonals: a pixel goes when its
/// on-neighbors stay connected without it.
pub fn thin(edges: &EdgeMap) -> EdgeMap {
    let mut map = zhang_suen(edges);
    loop {
        let mut changed = false;
        let pixels: Vec<_> = map.pixels().collect();
        for (x, y) in pixels {
            let (xi, yi) = (x as isize, y as isize);
            let n: [bool; 8] = std::array::from_fn(|k| map.at(xi + RING[k].0, yi + RING[k].1));
            if n.iter().filter(|&&v| v).count() >= 2 && neighbor_groups(&n) == 1 {
                map.set(x, y, false);
                changed = true;
            }
        }
        if !changed {
            return map;
        }
    }
}

fn zhang_suen(edges: &EdgeMap) -> EdgeMap {
    let mut map = edges.clone();
    let mut to_clear = Vec::new();
    loop {
        let mut changed = false;
        for pass in 0..2 {
            to_clear.clear();
            for (x, y) in map.pixels() {
                let (xi, yi) = (x as isize, y as isize);
                let n: [bool; 8] = std::array::from_fn(|k| map.at(xi + RING[k].0, yi + RING[k].1));
                let b = n.iter().filter(|&&v| v).count();
                if !(2..=6).contains(&b) {
                    continue;
                }
                let a = (0..8).filter(|&k| !n[k] && n[(k + 1) % 8]).count();
                if a != 1 {
                    continue;
                }
                // n[0]=N, n[2]=E, n[4]=S, n[6]=W
                let keep = if pass == 0 {
                    (n[0] && n[2] && n[4]) || (n[2] && n[4] && n[6])
                } else {
                    (n[0] && n[2] && n[6]) || (n[0] && n[4] && n[6])
                };
                if !keep {
                    to_clear.push((x, y));
                }
            }
            for &(x, y) in &to_clear {
                map.set(x, y, false);
            }
            changed |= !to_clear.is_empty();
        }
        if !changed {
            return map;
        }
    }
}

/// Thinning, junction removal (pixels with three or more on-neighbors) and
/// isolated-pixel removal, repeated until nothing changes. Every surviving
/// pixel has one or two on-neighbors.
pub fn cleanup(edges: &EdgeMap) -> EdgeMap {
    let mut map = edges.clone();
    loop {
        let mut next = thin(&map);
        let junctions: Vec<_> = next
            .pixels()
            .filter(|&(x, y)| next.neighbor_count(x, y) >= 3)
            .collect();
        for (x, y) in junctions {
            next.set(x, y, false);
        }
        let isolated: Vec<_> = next
            .pixels()
            .filter(|&(x, y)| next.neighbor_count(x, y) == 0)
            .collect();
        for (x, y) in isolated {
            next.set(x, y, false);
        }
        if next == map {
            return map;
        }
        map = next;
    }
}

/// An ordered chain of 8-connected pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeContour {
    pub points: Vec<(usize, usize)>,
}

impl EdgeContour {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn to_points(&self) -> Vec<Point> {
        self.points
            .iter()
            .map(|&(x, y)| Point::new(x as f64, y as f64))
            .collect()
    }
}

/// Splits a cleaned edge map into contours. Chains with free ends are walked
/// end to end first; whatever remains is loops, each opened at its smallest
/// (y, x) pixel and walked the same way.
pub fn trace_contours(edges: &EdgeMap) -> Vec<EdgeContour> {
    let (w, h) = (edges.width, edges.height);
    let mut visited = vec![false; w * h];
    let mut contours = Vec::new();

    let walk = |start: (usize, usize), visited: &mut Vec<bool>| -> EdgeContour {
        let mut points = vec![start];
        visited[start.1 * w + start.0] = true;
        let mut cur = start;
        loop {
            let next = RING.iter().find_map(|(dx, dy)| {
                let nx = cur.0 as isize + dx;
                let ny = cur.1 as isize + dy;
                (edges.at(nx, ny) && !visited[ny as usize * w + nx as usize])
                    .then_some((nx as usize, ny as usize))
            });
            match next {
                Some(p) => {
                    visited[p.1 * w + p.0] = true;
                    points.push(p);
                    cur = p;
                }
                None => break,
            }
        }
        EdgeContour { points }
    };

    for y in 0..h {
        for x in 0..w {
            if edges.get(x, y) && !visited[y * w + x] && edges.neighbor_count(x, y) <= 1 {
                contours.push(walk((x, y), &mut visited));
            }
        }
    }
    for y in 0..h {
        for x in 0..w {
            if edges.get(x, y) && !visited[y * w + x] {
                contours.push(walk((x, y), &mut visited));
            }
        }
    }
    contours
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map_from_ascii(rows: &[&str]) -> EdgeMap {
        let h = rows.len();
        let w = rows[0].len();
        let mut m = EdgeMap::new(w, h);
        for (y, row) in rows.iter().enumerate() {
            for (x, c) in row.chars().enumerate() {
                m.set(x, y, c == '#');
            }
        }
        m
    }

    #[test]
    fn canny_constant_image_is_empty() {
        let img = Raster::filled(32, 32, &[0.5]);
        assert_eq!(canny(&img, &CannyParams::default()).unwrap().count(), 0);
    }

    #[test]
    fn canny_vertical_step_gives_single_line() {
        let (w, h) = (40, 30);
        let mut img = Raster::new(w, h, 1);
        for y in 0..h {
            for x in w / 2..w {
                img.set(x, y, 0, 1.0);
            }
        }
        let e = canny(&img, &CannyParams::default()).unwrap();
        for y in 1..h - 1 {
            let cols: Vec<usize> = (0..w).filter(|&x| e.get(x, y)).collect();
            assert_eq!(cols.len(), 1, "row {y}: {cols:?}");
            assert!(cols[0] == w / 2 - 1 || cols[0] == w / 2);
        }
    }

    #[test]
    fn canny_rejects_bad_thresholds() {
        let img = Raster::new(8, 8, 1);
        let p = CannyParams {
            t_low: 0.5,
            t_high: 0.2,
            sigma: 1.0,
        };
        assert!(canny(&img, &p).is_err());
    }

    #[test]
    fn cleanup_removes_cross() {
        let m = map_from_ascii(&[".....", "..#..", ".###.", "..#..", "....."]);
        assert_eq!(cleanup(&m).count(), 0);
    }

    #[test]
    fn cleanup_keeps_straight_line() {
        let pixels: Vec<_> = (2..12).map(|x| (x, 3)).collect();
        let m = EdgeMap::from_pixels(15, 7, &pixels);
        assert_eq!(cleanup(&m), m);
    }

    #[test]
    fn cleanup_thins_thick_line() {
        let mut pixels: Vec<_> = (2..14).map(|x| (x, 3)).collect();
        pixels.extend((2..14).map(|x| (x, 4)));
        let m = EdgeMap::from_pixels(16, 8, &pixels);
        let c = cleanup(&m);
        assert!(c.count() > 0);
        for x in 0..16 {
            let col = (0..8).filter(|&y| c.get(x, y)).count();
            assert!(col <= 1, "column {x} has {col} pixels");
        }
        for (x, y) in c.pixels() {
            assert!((1..=2).contains(&c.neighbor_count(x, y)));
        }
    }

    #[test]
    fn trace_line_endpoints() {
        let pixels: Vec<_> = (3..8).map(|x| (x, 2)).collect();
        let m = EdgeMap::from_pixels(10, 5, &pixels);
        let cs = trace_contours(&m);
        assert_eq!(cs.len(), 1);
        assert_eq!(cs[0].points.len(), 5);
        let ends = [cs[0].points[0], *cs[0].points.last().unwrap()];
        assert!(ends.contains(&(3, 2)) && ends.contains(&(7, 2)));
    }

    #[test]
    fn trace_ring_is_cut_open() {
        let m = map_from_ascii(&[
            ".......",
            "..###..",
            ".#...#.",
            ".#...#.",
            "..###..",
            ".......",
        ]);
        let cs = trace_contours(&m);
        assert_eq!(cs.len(), 1);
        let c = &cs[0];
        assert_eq!(c.len(), m.count());
        // loop opened at the smallest (y, x) pixel
        assert_eq!(c.points[0], (2, 1));
        let (a, b) = (c.points[0], *c.points.last().unwrap());
        assert!(a.0.abs_diff(b.0) <= 1 && a.1.abs_diff(b.1) <= 1);
    }

    #[test]
    fn trace_two_lines_partition() {
        let mut pixels: Vec<_> = (1..6).map(|x| (x, 1)).collect();
        pixels.extend((1..8).map(|x| (x, 5)));
        let m = EdgeMap::from_pixels(10, 8, &pixels);
        let cs = trace_contours(&m);
        assert_eq!(cs.len(), 2);
        let mut all: Vec<_> = cs.iter().flat_map(|c| c.points.clone()).collect();
        all.sort();
        let mut expected = pixels.clone();
        expected.sort();
        assert_eq!(all, expected);
    }
}

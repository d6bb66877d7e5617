//! Marching-squares iso-lines on a rectilinear grid.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::Serialize;

/// Values sampled on a tensor grid; `values[j * xs.len() + i]` sits at `(xs[i], ys[j])`.
#[derive(Debug, Clone)]
pub struct ScalarGrid {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub values: Vec<f64>,
}

fn linspace(r: [f64; 2], n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| r[0] + (r[1] - r[0]) * i as f64 / (n - 1) as f64)
        .collect()
}

impl ScalarGrid {
    pub fn sample<F>(x_range: [f64; 2], y_range: [f64; 2], nx: usize, ny: usize, f: F) -> Self
    where
        F: Fn(f64, f64) -> f64 + Sync,
    {
        assert!(nx >= 2 && ny >= 2);
        let xs = linspace(x_range, nx);
        let ys = linspace(y_range, ny);
        let values = (0..nx * ny)
            .into_par_iter()
            .map(|idx| f(xs[idx % nx], ys[idx / nx]))
            .collect();
        Self { xs, ys, values }
    }

    /// Grid of a separable function `a(x) + b(y)`.
    pub fn separable(xs: Vec<f64>, ys: Vec<f64>, a: &[f64], b: &[f64]) -> Self {
        let mut values = Vec::with_capacity(xs.len() * ys.len());
        for bj in b {
            values.extend(a.iter().map(|ai| ai + bj));
        }
        Self { xs, ys, values }
    }

    pub fn linspace(r: [f64; 2], n: usize) -> Vec<f64> {
        linspace(r, n)
    }

    pub fn nx(&self) -> usize {
        self.xs.len()
    }

    pub fn ny(&self) -> usize {
        self.ys.len()
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.nx() + i]
    }

    /// Index of the grid node nearest to `p`.
    pub fn nearest(&self, p: [f64; 2]) -> (usize, usize) {
        let pick = |axis: &[f64], v: f64| {
            axis.iter()
                .enumerate()
                .min_by(|a, b| (a.1 - v).abs().total_cmp(&(b.1 - v).abs()))
                .map(|(i, _)| i)
                .unwrap_or(0)
        };
        (pick(&self.xs, p[0]), pick(&self.ys, p[1]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Polyline {
    pub points: Vec<[f64; 2]>,
    pub closed: bool,
}

impl Polyline {
    pub fn length(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]))
            .sum()
    }

    /// Shoelace area (signed).
    pub fn signed_area(&self) -> f64 {
        let n = self.points.len();
        if n < 3 {
            return 0.0;
        }
        let mut a = 0.0;
        for i in 0..n {
            let p = self.points[i];
            let q = self.points[(i + 1) % n];
            a += p[0] * q[1] - q[0] * p[1];
        }
        0.5 * a
    }

    /// Even-odd point-in-polygon test; only meaningful for closed curves.
    pub fn contains(&self, p: [f64; 2]) -> bool {
        let pts = &self.points;
        let n = pts.len();
        let mut inside = false;
        let mut j = n.wrapping_sub(1);
        for i in 0..n {
            let (a, b) = (pts[i], pts[j]);
            if (a[1] > p[1]) != (b[1] > p[1]) && p[0] < (b[0] - a[0]) * (p[1] - a[1]) / (b[1] - a[1]) + a[0] {
                inside = !inside;
            }
            j = i;
        }
        inside
    }

    /// `n` points spaced evenly by arc length.
    pub fn resample(&self, n: usize) -> Vec<[f64; 2]> {
        let mut pts = self.points.clone();
        if self.closed && pts.first() != pts.last() {
            pts.push(pts[0]);
        }
        if n == 0 || pts.is_empty() {
            return Vec::new();
        }
        let total: f64 = pts.windows(2).map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1])).sum();
        if total == 0.0 {
            return vec![pts[0]; n];
        }
        let denom = if self.closed { n } else { (n - 1).max(1) } as f64;
        let mut out = Vec::with_capacity(n);
        let mut seg = 0;
        let mut acc = 0.0;
        for s in 0..n {
            let target = total * s as f64 / denom;
            loop {
                let a = pts[seg];
                let b = pts[(seg + 1).min(pts.len() - 1)];
                let len = (b[0] - a[0]).hypot(b[1] - a[1]);
                if acc + len >= target || seg + 2 >= pts.len() {
                    let t = if len > 0.0 { ((target - acc) / len).clamp(0.0, 1.0) } else { 0.0 };
                    out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
                    break;
                }
                acc += len;
                seg += 1;
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Edge {
    // between (i, j) and (i + 1, j)
    H(usize, usize),
    // between (i, j) and (i, j + 1)
    V(usize, usize),
}

/// Iso-lines `value = level`; nodes with NaN count as above the level.
pub fn contours(grid: &ScalarGrid, level: f64) -> Vec<Polyline> {
    let (nx, ny) = (grid.nx(), grid.ny());
    let below = |i: usize, j: usize| grid.at(i, j) < level;
    let mut segments: Vec<(Edge, Edge)> = Vec::new();
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            let s = [below(i, j), below(i + 1, j), below(i + 1, j + 1), below(i, j + 1)];
            let edges = [Edge::H(i, j), Edge::V(i + 1, j), Edge::H(i, j + 1), Edge::V(i, j)];
            // edge e joins corner e and corner e + 1
            let crossing: Vec<usize> = (0..4).filter(|&e| s[e] != s[(e + 1) % 4]).collect();
            match crossing.len() {
                2 => segments.push((edges[crossing[0]], edges[crossing[1]])),
                4 => {
                    let center = 0.25 * (grid.at(i, j) + grid.at(i + 1, j) + grid.at(i + 1, j + 1) + grid.at(i, j + 1));
                    if (center < level) == s[0] {
                        segments.push((edges[0], edges[1]));
                        segments.push((edges[2], edges[3]));
                    } else {
                        segments.push((edges[3], edges[0]));
                        segments.push((edges[1], edges[2]));
                    }
                }
                _ => {}
            }
        }
    }

    let point = |e: Edge| -> [f64; 2] {
        let ((i0, j0), (i1, j1)) = match e {
            Edge::H(i, j) => ((i, j), (i + 1, j)),
            Edge::V(i, j) => ((i, j), (i, j + 1)),
        };
        let (v0, v1) = (grid.at(i0, j0), grid.at(i1, j1));
        let t = if v0.is_finite() && v1.is_finite() && v1 != v0 {
            ((level - v0) / (v1 - v0)).clamp(0.0, 1.0)
        } else {
            0.5
        };
        let p0 = [grid.xs[i0], grid.ys[j0]];
        let p1 = [grid.xs[i1], grid.ys[j1]];
        [p0[0] + t * (p1[0] - p0[0]), p0[1] + t * (p1[1] - p0[1])]
    };

    let mut by_edge: HashMap<Edge, Vec<usize>> = HashMap::new();
    for (k, (a, b)) in segments.iter().enumerate() {
        by_edge.entry(*a).or_default().push(k);
        by_edge.entry(*b).or_default().push(k);
    }
    let mut used = vec![false; segments.len()];
    let next_from = |edge: Edge, used: &[bool]| -> Option<usize> {
        by_edge.get(&edge)?.iter().copied().find(|&k| !used[k])
    };

    let mut lines = Vec::new();
    for start in 0..segments.len() {
        if used[start] {
            continue;
        }
        used[start] = true;
        let (a, b) = segments[start];
        let mut chain = vec![a, b];
        // forward
        while let Some(k) = next_from(*chain.last().unwrap(), &used) {
            used[k] = true;
            let (p, q) = segments[k];
            chain.push(if p == *chain.last().unwrap() { q } else { p });
        }
        // backward
        let mut head = Vec::new();
        let mut front = chain[0];
        while let Some(k) = next_from(front, &used) {
            used[k] = true;
            let (p, q) = segments[k];
            front = if p == front { q } else { p };
            head.push(front);
        }
        head.reverse();
        head.extend(chain);
        let closed = head.len() > 2 && head.first() == head.last();
        if closed {
            head.pop();
        }
        lines.push(Polyline {
            points: head.into_iter().map(point).collect(),
            closed,
        });
    }
    lines
}

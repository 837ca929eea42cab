//! Uniform time and space grids.

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::Result;

/// Uniform partition of a time interval `[t0, t_end]` into `n_steps` steps.
///
/// Node `0` is exactly `t0` and node `n_steps` is exactly `t_end`; interior
/// nodes are computed by convex combination so they stay inside the interval
/// regardless of rounding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t0: f64,
    t_end: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, t_end: f64, n_steps: usize) -> Result<Self> {
        if !t0.is_finite() || !t_end.is_finite() {
            return Err(Error::invalid("time grid endpoints must be finite"));
        }
        if t0 < 0.0 {
            return Err(Error::invalid(format!("t0 must be >= 0, got {t0}")));
        }
        if t_end <= t0 {
            return Err(Error::invalid(format!(
                "t_end must exceed t0, got [{t0}, {t_end}]"
            )));
        }
        if n_steps == 0 {
            return Err(Error::invalid("time grid needs at least one step"));
        }
        Ok(TimeGrid { t0, t_end, n_steps })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }

    pub fn dt(&self) -> f64 {
        (self.t_end - self.t0) / self.n_steps as f64
    }

    pub fn span(&self) -> f64 {
        self.t_end - self.t0
    }

    /// The i-th node; exact at both endpoints.
    pub fn node(&self, i: usize) -> f64 {
        debug_assert!(i <= self.n_steps);
        if i == 0 {
            self.t0
        } else if i == self.n_steps {
            self.t_end
        } else {
            let w = i as f64 / self.n_steps as f64;
            self.t0 * (1.0 - w) + self.t_end * w
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.n_steps).map(move |i| self.node(i))
    }

    /// Index of the node equal to `t` up to a relative tolerance of 1e-9 dt.
    pub fn node_index(&self, t: f64) -> Option<usize> {
        let dt = self.dt();
        let raw = (t - self.t0) / dt;
        let i = raw.round();
        if i < 0.0 || i > self.n_steps as f64 {
            return None;
        }
        if (raw - i).abs() <= 1e-9 * (1.0 + raw.abs()) {
            Some(i as usize)
        } else {
            None
        }
    }

    /// Sub-grid on `[node(i), node(j)]` with the same nodes.
    pub fn window(&self, i: usize, j: usize) -> Result<TimeGrid> {
        if i >= j || j > self.n_steps {
            return Err(Error::invalid(format!(
                "bad window [{i}, {j}] on a grid of {} steps",
                self.n_steps
            )));
        }
        TimeGrid::new(self.node(i), self.node(j), j - i)
    }
}

/// Uniform spatial grid with an odd number of points.
///
/// Oddness keeps the midpoint of a symmetric interval on the grid, so
/// symmetric problems stay exactly symmetric after discretization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpaceGrid {
    x_min: f64,
    x_max: f64,
    n_points: usize,
}

impl SpaceGrid {
    pub fn new(x_min: f64, x_max: f64, n_points: usize) -> Result<Self> {
        if !x_min.is_finite() || !x_max.is_finite() {
            return Err(Error::invalid("space grid bounds must be finite"));
        }
        if x_min >= x_max {
            return Err(Error::invalid(format!(
                "x_min must be below x_max, got [{x_min}, {x_max}]"
            )));
        }
        if n_points < 3 || n_points % 2 == 0 {
            return Err(Error::invalid(format!(
                "n_points must be an odd integer >= 3, got {n_points}"
            )));
        }
        Ok(SpaceGrid {
            x_min,
            x_max,
            n_points,
        })
    }

    /// Symmetric grid `[-half_width, half_width]`, containing 0 as a node.
    pub fn symmetric(half_width: f64, n_points: usize) -> Result<Self> {
        SpaceGrid::new(-half_width, half_width, n_points)
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.n_points - 1) as f64
    }

    pub fn node(&self, j: usize) -> f64 {
        debug_assert!(j < self.n_points);
        if j == 0 {
            self.x_min
        } else if j == self.n_points - 1 {
            self.x_max
        } else {
            let w = j as f64 / (self.n_points - 1) as f64;
            self.x_min * (1.0 - w) + self.x_max * w
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_points).map(move |j| self.node(j))
    }

    /// Largest index j with node(j) <= x, clamped to [0, n_points - 2].
    pub fn cell_of(&self, x: f64) -> usize {
        let raw = (x - self.x_min) / self.dx();
        let j = raw.floor();
        if j < 0.0 {
            0
        } else {
            (j as usize).min(self.n_points - 2)
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.x_min && x <= self.x_max
    }
}

//! Square-lattice geometry with open boundaries and the Hilbert-curve
//! linearization that places lattice sites on the leaves of the tree.
//!
//! Sites are addressed either by a grid [`Coord`] or by the canonical
//! row-major index `y * width + x`. The leaf order of the tree network is a
//! separate permutation, carried by [`SiteOrdering`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Coord {
    pub x: usize,
    pub y: usize,
}

impl Coord {
    pub const fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }

    pub fn manhattan(self, other: Coord) -> usize {
        self.x.abs_diff(other.x) + self.y.abs_diff(other.y)
    }
}

/// A `width x height` square lattice with nearest-neighbor bonds and open
/// boundaries. Both sides are powers of two, at least 2.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LatticeGeometry {
    width: usize,
    height: usize,
    // canonical site pairs (a, b) with a < b
    bonds: Vec<(usize, usize)>,
}

impl LatticeGeometry {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        for side in [width, height] {
            if side < 2 {
                return Err(Error::InvalidLattice {
                    width,
                    height,
                    reason: "sides must be at least 2",
                });
            }
            if !side.is_power_of_two() {
                return Err(Error::InvalidLattice {
                    width,
                    height,
                    reason: "sides must be powers of two",
                });
            }
        }
        let mut bonds = Vec::with_capacity(width * (height - 1) + height * (width - 1));
        for y in 0..height {
            for x in 0..width {
                let s = y * width + x;
                if x + 1 < width {
                    bonds.push((s, s + 1));
                }
                if y + 1 < height {
                    bonds.push((s, s + width));
                }
            }
        }
        Ok(Self { width, height, bonds })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn num_sites(&self) -> usize {
        self.width * self.height
    }

    pub fn num_bonds(&self) -> usize {
        self.bonds.len()
    }

    pub fn bonds(&self) -> &[(usize, usize)] {
        &self.bonds
    }

    pub fn is_square(&self) -> bool {
        self.width == self.height
    }

    pub fn index(&self, c: Coord) -> usize {
        debug_assert!(self.contains(c));
        c.y * self.width + c.x
    }

    pub fn coord(&self, site: usize) -> Coord {
        Coord::new(site % self.width, site / self.width)
    }

    pub fn contains(&self, c: Coord) -> bool {
        c.x < self.width && c.y < self.height
    }

    pub fn check(&self, x: i64, y: i64) -> Result<Coord> {
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
            return Err(Error::SiteOutOfRange {
                x,
                y,
                width: self.width,
                height: self.height,
            });
        }
        Ok(Coord::new(x as usize, y as usize))
    }

    /// Nearest neighbors of `site` under open boundaries (2 to 4 of them).
    pub fn neighbors(&self, site: Coord) -> Result<Vec<Coord>> {
        self.check(site.x as i64, site.y as i64)?;
        Ok(self.neighbors_unchecked(site).collect())
    }

    pub(crate) fn neighbors_unchecked(&self, c: Coord) -> impl Iterator<Item = Coord> + '_ {
        const STEPS: [(i64, i64); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];
        STEPS.iter().filter_map(move |&(dx, dy)| {
            let x = c.x as i64 + dx;
            let y = c.y as i64 + dy;
            (x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height)
                .then(|| Coord::new(x as usize, y as usize))
        })
    }

    /// Rotates a coordinate by 90 degrees counter-clockwise about the lattice
    /// center. Only defined for square lattices.
    pub fn rotate90(&self, c: Coord) -> Coord {
        debug_assert!(self.is_square());
        Coord::new(self.width - 1 - c.y, c.x)
    }
}

/// Bijection between grid sites and tree leaves.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SiteOrdering {
    width: usize,
    height: usize,
    // leaf -> grid coordinate
    to_grid: Vec<Coord>,
    // canonical site index -> leaf
    to_leaf: Vec<usize>,
}

impl SiteOrdering {
    fn from_leaf_order(width: usize, height: usize, to_grid: Vec<Coord>) -> Self {
        let mut to_leaf = vec![usize::MAX; width * height];
        for (leaf, c) in to_grid.iter().enumerate() {
            to_leaf[c.y * width + c.x] = leaf;
        }
        Self {
            width,
            height,
            to_grid,
            to_leaf,
        }
    }

    /// Row-major ordering; usable for rectangular lattices where no Hilbert
    /// curve exists. Not used for tree states.
    pub fn row_major(geometry: &LatticeGeometry) -> Self {
        let grid = (0..geometry.num_sites()).map(|s| geometry.coord(s)).collect();
        Self::from_leaf_order(geometry.width(), geometry.height(), grid)
    }

    pub fn num_sites(&self) -> usize {
        self.to_grid.len()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn to_grid(&self, leaf: usize) -> Coord {
        self.to_grid[leaf]
    }

    pub fn to_linear(&self, c: Coord) -> usize {
        self.to_leaf[c.y * self.width + c.x]
    }

    /// Canonical (row-major) site index of a leaf.
    pub fn site_of_leaf(&self, leaf: usize) -> usize {
        let c = self.to_grid[leaf];
        c.y * self.width + c.x
    }

    pub fn leaf_of_site(&self, site: usize) -> usize {
        self.to_leaf[site]
    }

    pub fn geometry(&self) -> LatticeGeometry {
        LatticeGeometry::new(self.width, self.height).expect("ordering built from a valid lattice")
    }
}

/// Hilbert-curve ordering of a square power-of-two lattice.
///
/// Orientation: the curve starts at (0, 0), first steps along +y and ends at
/// (side - 1, 0). For a 2x2 lattice the visiting order is (0,0), (0,1), (1,1),
/// (1,0).
pub fn hilbert_ordering(geometry: &LatticeGeometry) -> Result<SiteOrdering> {
    if !geometry.is_square() {
        return Err(Error::InvalidLattice {
            width: geometry.width(),
            height: geometry.height(),
            reason: "Hilbert ordering needs a square lattice",
        });
    }
    let side = geometry.width();
    let grid = (0..side * side).map(|d| hilbert_d2xy(side, d)).collect();
    Ok(SiteOrdering::from_leaf_order(side, side, grid))
}

fn hilbert_d2xy(side: usize, d: usize) -> Coord {
    let (mut x, mut y) = (0usize, 0usize);
    let mut t = d;
    let mut s = 1;
    while s < side {
        let rx = 1 & (t / 2);
        let ry = 1 & (t ^ rx);
        if ry == 0 {
            if rx == 1 {
                x = s - 1 - x;
                y = s - 1 - y;
            }
            std::mem::swap(&mut x, &mut y);
        }
        x += s * rx;
        y += s * ry;
        t /= 4;
        s *= 2;
    }
    Coord::new(x, y)
}

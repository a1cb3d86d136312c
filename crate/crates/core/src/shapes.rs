//! Spin-down domains (bubbles) on the lattice: construction, perimeters,
//! bounding patch and the perimeter-conserving corner-flip moves.

use std::collections::{HashSet, VecDeque};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Coord, LatticeGeometry};

/// Occupancy grid of the true-vacuum domain; `true` marks a spin-down site.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct ShapeMask {
    width: usize,
    height: usize,
    cells: Vec<bool>,
}

impl fmt::Debug for ShapeMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ShapeMask {}x{}", self.width, self.height)?;
        f.write_str(&self.to_ascii())
    }
}

/// Minimal axis-aligned rectangle containing the occupied sites.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Patch {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

impl Patch {
    pub fn contains(&self, c: Coord) -> bool {
        c.x >= self.x0 && c.x < self.x0 + self.width && c.y >= self.y0 && c.y < self.y0 + self.height
    }

    pub fn area(&self) -> usize {
        self.width * self.height
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapeStats {
    pub area: usize,
    #[serde(rename = "P_b")]
    pub bond_perimeter: usize,
    #[serde(rename = "P_s")]
    pub site_perimeter: usize,
    pub patch: Option<Patch>,
}

/// Closure of a mask under corner moves.
#[derive(Clone, Debug)]
pub struct ReachableSet {
    pub masks: Vec<ShapeMask>,
    /// Set when the exploration stopped at the state cap.
    pub truncated: bool,
}

impl ShapeMask {
    pub fn empty(geometry: &LatticeGeometry) -> Self {
        Self {
            width: geometry.width(),
            height: geometry.height(),
            cells: vec![false; geometry.num_sites()],
        }
    }

    pub fn full(geometry: &LatticeGeometry) -> Self {
        let mut m = Self::empty(geometry);
        m.cells.fill(true);
        m
    }

    pub fn from_sites(geometry: &LatticeGeometry, sites: impl IntoIterator<Item = Coord>) -> Result<Self> {
        let mut m = Self::empty(geometry);
        for c in sites {
            geometry.check(c.x as i64, c.y as i64)?;
            m.set(c, true);
        }
        Ok(m)
    }

    /// Builds a mask from row-major occupancy (`cells[y * width + x]`).
    pub fn from_cells(geometry: &LatticeGeometry, cells: Vec<bool>) -> Result<Self> {
        if cells.len() != geometry.num_sites() {
            return Err(Error::InvalidShape(format!(
                "{} cells for a lattice of {} sites",
                cells.len(),
                geometry.num_sites()
            )));
        }
        Ok(Self {
            width: geometry.width(),
            height: geometry.height(),
            cells,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn geometry(&self) -> LatticeGeometry {
        LatticeGeometry::new(self.width, self.height).expect("mask dimensions come from a lattice")
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn get(&self, c: Coord) -> bool {
        self.cells[c.y * self.width + c.x]
    }

    pub fn is_set(&self, site: usize) -> bool {
        self.cells[site]
    }

    pub fn set(&mut self, c: Coord, value: bool) {
        self.cells[c.y * self.width + c.x] = value;
    }

    pub fn occupied(&self) -> impl Iterator<Item = Coord> + '_ {
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, &v)| v)
            .map(move |(i, _)| Coord::new(i % self.width, i / self.width))
    }

    pub fn area(&self) -> usize {
        self.cells.iter().filter(|&&v| v).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.cells.iter().any(|&v| v)
    }

    pub fn complement(&self) -> Self {
        Self {
            cells: self.cells.iter().map(|v| !v).collect(),
            ..self.clone()
        }
    }

    fn neighbor_sites(&self, c: Coord) -> impl Iterator<Item = Coord> {
        let (w, h) = (self.width as i64, self.height as i64);
        [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)].into_iter().filter_map(move |(dx, dy)| {
            let (x, y) = (c.x as i64 + dx, c.y as i64 + dy);
            (x >= 0 && y >= 0 && x < w && y < h).then(|| Coord::new(x as usize, y as usize))
        })
    }

    // (occupied, total) lattice neighbors
    fn neighbor_counts(&self, c: Coord) -> (usize, usize) {
        self.neighbor_sites(c).fold((0, 0), |(occ, tot), n| (occ + self.get(n) as usize, tot + 1))
    }

    /// Number of lattice bonds with exactly one occupied endpoint.
    pub fn bond_perimeter(&self) -> usize {
        self.occupied()
            .map(|c| {
                let (occ, tot) = self.neighbor_counts(c);
                tot - occ
            })
            .sum()
    }

    /// Number of occupied sites with at least one unoccupied lattice neighbor.
    pub fn site_perimeter(&self) -> usize {
        self.occupied()
            .filter(|&c| {
                let (occ, tot) = self.neighbor_counts(c);
                occ < tot
            })
            .count()
    }

    pub fn bounding_patch(&self) -> Result<Patch> {
        let mut it = self.occupied();
        let first = it.next().ok_or(Error::EmptyMask)?;
        let (mut x0, mut x1, mut y0, mut y1) = (first.x, first.x, first.y, first.y);
        for c in it {
            x0 = x0.min(c.x);
            x1 = x1.max(c.x);
            y0 = y0.min(c.y);
            y1 = y1.max(c.y);
        }
        Ok(Patch {
            x0,
            y0,
            width: x1 - x0 + 1,
            height: y1 - y0 + 1,
        })
    }

    pub fn stats(&self) -> ShapeStats {
        ShapeStats {
            area: self.area(),
            bond_perimeter: self.bond_perimeter(),
            site_perimeter: self.site_perimeter(),
            patch: self.bounding_patch().ok(),
        }
    }

    pub fn touches_boundary(&self) -> bool {
        self.occupied()
            .any(|c| c.x == 0 || c.y == 0 || c.x + 1 == self.width || c.y + 1 == self.height)
    }

    /// Sites whose flip leaves the bond perimeter unchanged: as many occupied
    /// as unoccupied lattice neighbors. In the bulk this is exactly two
    /// occupied neighbors.
    fn corner_sites(&self) -> impl Iterator<Item = Coord> + '_ {
        (0..self.cells.len()).filter_map(move |i| {
            let c = Coord::new(i % self.width, i / self.width);
            let (occ, tot) = self.neighbor_counts(c);
            (2 * occ == tot).then_some(c)
        })
    }

    /// All masks one P_b-conserving flip away.
    pub fn corner_moves(&self) -> Vec<ShapeMask> {
        if self.is_empty() {
            return Vec::new();
        }
        self.corner_sites()
            .map(|c| {
                let mut m = self.clone();
                m.set(c, !self.get(c));
                m
            })
            .filter(|m| !m.is_empty())
            .collect()
    }

    /// Breadth-first closure under [`Self::corner_moves`], including `self`.
    pub fn corner_reachable_set(&self, max_states: usize) -> ReachableSet {
        let mut seen: HashSet<ShapeMask> = HashSet::new();
        let mut order = Vec::new();
        let mut queue = VecDeque::new();
        seen.insert(self.clone());
        order.push(self.clone());
        queue.push_back(self.clone());
        let mut truncated = false;
        'bfs: while let Some(m) = queue.pop_front() {
            for next in m.corner_moves() {
                if seen.contains(&next) {
                    continue;
                }
                if order.len() >= max_states {
                    truncated = true;
                    break 'bfs;
                }
                seen.insert(next.clone());
                order.push(next.clone());
                queue.push_back(next);
            }
        }
        ReachableSet {
            masks: order,
            truncated,
        }
    }

    /// 90-degree counter-clockwise rotation about the lattice center.
    pub fn rotate90(&self) -> Self {
        assert_eq!(self.width, self.height, "rotation needs a square lattice");
        let n = self.width;
        let mut out = vec![false; self.cells.len()];
        for c in self.occupied() {
            out[c.x * n + (n - 1 - c.y)] = true;
        }
        Self {
            cells: out,
            ..self.clone()
        }
    }

    /// Reflection `x -> width - 1 - x`.
    pub fn reflect_x(&self) -> Self {
        let mut out = vec![false; self.cells.len()];
        for c in self.occupied() {
            out[c.y * self.width + (self.width - 1 - c.x)] = true;
        }
        Self {
            cells: out,
            ..self.clone()
        }
    }

    /// `#` occupied, `.` empty; one line per row starting at y = 0.
    pub fn to_ascii(&self) -> String {
        let mut s = String::with_capacity((self.width + 1) * self.height);
        for row in self.cells.chunks(self.width) {
            s.extend(row.iter().map(|&v| if v { '#' } else { '.' }));
            s.push('\n');
        }
        s
    }
}

/// Parses the ASCII mask format into `(width, height, cells)`.
pub fn parse_ascii_mask(text: &str) -> std::result::Result<(usize, usize, Vec<bool>), String> {
    let rows: Vec<&str> = text
        .lines()
        .map(str::trim_end)
        .filter(|l| !l.is_empty())
        .collect();
    let width = rows.first().map(|r| r.chars().count()).ok_or("no rows")?;
    let mut cells = Vec::with_capacity(width * rows.len());
    for (y, row) in rows.iter().enumerate() {
        if row.chars().count() != width {
            return Err(format!("row {y} has {} columns, expected {width}", row.chars().count()));
        }
        for (x, ch) in row.chars().enumerate() {
            cells.push(match ch {
                '#' => true,
                '.' => false,
                other => return Err(format!("unexpected character {other:?} at ({x}, {y})")),
            });
        }
    }
    Ok((width, rows.len(), cells))
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    #[default]
    Empty,
    Square,
    Rectangle,
    Diamond,
    Cross,
    Custom,
}

/// Parameterized bubble description, as it appears in the `[shape]` section of
/// a run configuration.
///
/// Extents along an axis follow one convention: a run of length `n` centered
/// at `c` covers `c - n/2 .. c - n/2 + n`. The default center is
/// `(width/2, height/2)`, so even-sided squares sit exactly in the middle of
/// the lattice.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeSpec {
    pub kind: ShapeKind,
    /// Square side.
    #[serde(rename = "L", default, skip_serializing_if = "Option::is_none")]
    pub side: Option<usize>,
    /// Rectangle extents.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lx: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ly: Option<usize>,
    /// Diamond radius (taxicab).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<usize>,
    /// Cross arm length and bar thickness.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arm: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thickness: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center_x: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center_y: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_file: Option<PathBuf>,
}

impl ShapeSpec {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn square(side: usize) -> Self {
        Self {
            kind: ShapeKind::Square,
            side: Some(side),
            ..Self::default()
        }
    }

    pub fn rectangle(lx: usize, ly: usize) -> Self {
        Self {
            kind: ShapeKind::Rectangle,
            lx: Some(lx),
            ly: Some(ly),
            ..Self::default()
        }
    }

    pub fn diamond(r: usize) -> Self {
        Self {
            kind: ShapeKind::Diamond,
            r: Some(r),
            ..Self::default()
        }
    }

    pub fn cross(arm: usize, thickness: usize) -> Self {
        Self {
            kind: ShapeKind::Cross,
            arm: Some(arm),
            thickness: Some(thickness),
            ..Self::default()
        }
    }

    pub fn custom(path: impl Into<PathBuf>) -> Self {
        Self {
            kind: ShapeKind::Custom,
            mask_file: Some(path.into()),
            ..Self::default()
        }
    }

    pub fn centered_at(mut self, x: i64, y: i64) -> Self {
        self.center_x = Some(x);
        self.center_y = Some(y);
        self
    }

    /// Short identifier such as `square_L4` or `diamond_r2`.
    pub fn label(&self) -> String {
        let base = match self.kind {
            ShapeKind::Empty => "empty".to_string(),
            ShapeKind::Square => format!("square_L{}", self.side.unwrap_or(0)),
            ShapeKind::Rectangle => format!("rect_{}x{}", self.lx.unwrap_or(0), self.ly.unwrap_or(0)),
            ShapeKind::Diamond => format!("diamond_r{}", self.r.unwrap_or(0)),
            ShapeKind::Cross => format!("cross_{}x{}", self.arm.unwrap_or(0), self.thickness.unwrap_or(0)),
            ShapeKind::Custom => {
                let stem = self
                    .mask_file
                    .as_deref()
                    .and_then(Path::file_stem)
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                format!("custom_{stem}")
            }
        };
        match (self.center_x, self.center_y) {
            (Some(x), Some(y)) => format!("{base}@{x},{y}"),
            _ => base,
        }
    }

    /// Parameters as a JSON object, for catalog records.
    pub fn params(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("shape spec serializes");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("kind");
        }
        v
    }
}

fn required(v: Option<usize>, name: &str, kind: ShapeKind) -> Result<usize> {
    match v {
        Some(0) => Err(Error::InvalidShape(format!("{kind:?}: {name} must be positive"))),
        Some(v) => Ok(v),
        None => Err(Error::InvalidShape(format!("{kind:?}: missing parameter {name}"))),
    }
}

// Inclusive-exclusive span of a length-n run centered at c, checked to fit.
fn span(c: i64, n: usize, limit: usize, what: &str) -> Result<(usize, usize)> {
    let start = c - (n / 2) as i64;
    let end = start + n as i64;
    if start < 0 || end > limit as i64 {
        return Err(Error::InvalidShape(format!(
            "{what} of extent {n} centered at {c} does not fit in 0..{limit}"
        )));
    }
    Ok((start as usize, end as usize))
}

/// Builds the mask described by `spec` on `geometry`.
pub fn make_shape(spec: &ShapeSpec, geometry: &LatticeGeometry) -> Result<ShapeMask> {
    let (w, h) = (geometry.width(), geometry.height());
    let cx = spec.center_x.unwrap_or((w / 2) as i64);
    let cy = spec.center_y.unwrap_or((h / 2) as i64);
    let mut mask = ShapeMask::empty(geometry);
    let fill_rect = |lx: usize, ly: usize, mask: &mut ShapeMask| -> Result<()> {
        let (x0, x1) = span(cx, lx, w, "width")?;
        let (y0, y1) = span(cy, ly, h, "height")?;
        for y in y0..y1 {
            for x in x0..x1 {
                mask.set(Coord::new(x, y), true);
            }
        }
        Ok(())
    };
    match spec.kind {
        ShapeKind::Empty => {}
        ShapeKind::Square => {
            let l = required(spec.side, "L", spec.kind)?;
            fill_rect(l, l, &mut mask)?;
        }
        ShapeKind::Rectangle => {
            let lx = required(spec.lx, "lx", spec.kind)?;
            let ly = required(spec.ly, "ly", spec.kind)?;
            fill_rect(lx, ly, &mut mask)?;
        }
        ShapeKind::Cross => {
            let arm = required(spec.arm, "arm", spec.kind)?;
            let t = required(spec.thickness, "thickness", spec.kind)?;
            if t > arm {
                return Err(Error::InvalidShape("cross thickness exceeds arm length".into()));
            }
            fill_rect(arm, t, &mut mask)?;
            fill_rect(t, arm, &mut mask)?;
        }
        ShapeKind::Diamond => {
            let r = spec
                .r
                .ok_or_else(|| Error::InvalidShape("Diamond: missing parameter r".into()))?;
            let ri = r as i64;
            if cx - ri < 0 || cy - ri < 0 || cx + ri >= w as i64 || cy + ri >= h as i64 {
                return Err(Error::InvalidShape(format!(
                    "diamond of radius {r} centered at ({cx}, {cy}) does not fit in {w}x{h}"
                )));
            }
            for y in (cy - ri)..=(cy + ri) {
                for x in (cx - ri)..=(cx + ri) {
                    if (x - cx).abs() + (y - cy).abs() <= ri {
                        mask.set(Coord::new(x as usize, y as usize), true);
                    }
                }
            }
        }
        ShapeKind::Custom => {
            let path = spec
                .mask_file
                .as_ref()
                .ok_or_else(|| Error::InvalidShape("custom shape needs mask_file".into()))?;
            mask = read_mask_file(path, geometry, (cx, cy))?;
        }
    }
    Ok(mask)
}

/// Reads an ASCII mask. A mask of the lattice's size is used as is; a
/// smaller one is placed with its center at `center`.
pub fn read_mask_file(path: &Path, geometry: &LatticeGeometry, center: (i64, i64)) -> Result<ShapeMask> {
    let text = std::fs::read_to_string(path)?;
    let (mw, mh, cells) = parse_ascii_mask(&text).map_err(|reason| Error::MaskFormat {
        path: path.to_path_buf(),
        reason,
    })?;
    if (mw, mh) == (geometry.width(), geometry.height()) {
        return ShapeMask::from_cells(geometry, cells);
    }
    let (x0, _) = span(center.0, mw, geometry.width(), "mask width")?;
    let (y0, _) = span(center.1, mh, geometry.height(), "mask height")?;
    let mut mask = ShapeMask::empty(geometry);
    for y in 0..mh {
        for x in 0..mw {
            if cells[y * mw + x] {
                mask.set(Coord::new(x0 + x, y0 + y), true);
            }
        }
    }
    Ok(mask)
}

pub fn write_mask_file(path: &Path, mask: &ShapeMask) -> Result<()> {
    std::fs::write(path, mask.to_ascii())?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub id: String,
    pub spec: ShapeSpec,
}

/// One line of the emitted shape catalog.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CatalogRecord {
    pub id: String,
    pub kind: ShapeKind,
    pub params: serde_json::Value,
    pub area: usize,
    #[serde(rename = "P_b")]
    pub bond_perimeter: usize,
    #[serde(rename = "P_s")]
    pub site_perimeter: usize,
    pub patch: Option<Patch>,
}

impl CatalogRecord {
    pub fn new(entry: &CatalogEntry, geometry: &LatticeGeometry) -> Result<Self> {
        let mask = make_shape(&entry.spec, geometry)?;
        if mask.touches_boundary() {
            log::warn!("catalog shape {} touches the lattice boundary", entry.id);
        }
        let stats = mask.stats();
        Ok(Self {
            id: entry.id.clone(),
            kind: entry.spec.kind,
            params: entry.spec.params(),
            area: stats.area,
            bond_perimeter: stats.bond_perimeter,
            site_perimeter: stats.site_perimeter,
            patch: stats.patch,
        })
    }
}

/// Regular shapes (squares, rectangles, diamonds, crosses) that fit in the
/// interior of `geometry` with at least one free row/column on every side.
pub fn default_catalog(geometry: &LatticeGeometry) -> Vec<CatalogEntry> {
    let inner = geometry.width().min(geometry.height()).saturating_sub(2);
    let mut specs = Vec::new();
    for l in 1..=inner {
        specs.push(ShapeSpec::square(l));
    }
    for lx in 2..=inner {
        for ly in 1..lx {
            if lx - ly <= 2 || ly == 1 {
                specs.push(ShapeSpec::rectangle(lx, ly));
            }
        }
    }
    for r in 1..=inner.saturating_sub(1) / 2 {
        specs.push(ShapeSpec::diamond(r));
    }
    for arm in (3..=inner).step_by(2) {
        for t in (1..arm).step_by(2) {
            specs.push(ShapeSpec::cross(arm, t));
        }
    }
    specs
        .into_iter()
        .filter(|s| {
            make_shape(s, geometry)
                .map(|m| !m.touches_boundary())
                .unwrap_or(false)
        })
        .map(|spec| CatalogEntry {
            id: spec.label(),
            spec,
        })
        .collect()
}

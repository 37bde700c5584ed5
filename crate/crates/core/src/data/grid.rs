//! Grid images: each cell is empty or holds one colored shape.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::vocab::{COLORS, SHAPES};
use crate::error::{Error, Result};
use crate::model::PixelGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
    Purple,
}

impl Color {
    pub const ALL: [Color; 5] = [Self::Red, Self::Green, Self::Blue, Self::Yellow, Self::Purple];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn word(self) -> &'static str {
        COLORS[self.index()]
    }

    pub fn from_word(w: &str) -> Option<Self> {
        COLORS.iter().position(|&c| c == w).map(|i| Self::ALL[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Circle,
    Square,
    Triangle,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Self::Circle, Self::Square, Self::Triangle];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn word(self) -> &'static str {
        SHAPES[self.index()]
    }

    pub fn from_word(w: &str) -> Option<Self> {
        SHAPES.iter().position(|&s| s == w).map(|i| Self::ALL[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub color: Color,
    pub shape: Shape,
}

/// Width of one rendered cell: one-hot color followed by one-hot shape.
/// Largest supported grid side.
pub const MAX_SIDE: usize = 4;

/// One patch: color one-hot, shape one-hot, row one-hot, column one-hot.
pub const PATCH_DIM: usize = 5 + 3 + 2 * MAX_SIDE;

/// Row-major grid of optional cells. Serialized as an array of rows.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<Option<Cell>>>", into = "Vec<Vec<Option<Cell>>>")]
pub struct GridImage {
    rows: usize,
    cols: usize,
    cells: Vec<Option<Cell>>,
}

impl TryFrom<Vec<Vec<Option<Cell>>>> for GridImage {
    type Error = Error;

    fn try_from(rows: Vec<Vec<Option<Cell>>>) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || cols == 0 || rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidImage(format!(
                "ragged or empty grid with {} rows",
                rows.len()
            )));
        }
        if rows.len() > MAX_SIDE || cols > MAX_SIDE {
            return Err(Error::InvalidImage(format!(
                "{}x{cols} grid exceeds {MAX_SIDE}x{MAX_SIDE}",
                rows.len()
            )));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            cells: rows.into_iter().flatten().collect(),
        })
    }
}

impl From<GridImage> for Vec<Vec<Option<Cell>>> {
    fn from(g: GridImage) -> Self {
        g.cells.chunks(g.cols).map(<[_]>::to_vec).collect()
    }
}

impl GridImage {
    /// # Panics
    /// If either side is zero or exceeds [`MAX_SIDE`].
    pub fn empty(rows: usize, cols: usize) -> Self {
        assert!((1..=MAX_SIDE).contains(&rows) && (1..=MAX_SIDE).contains(&cols));
        Self {
            rows,
            cols,
            cells: vec![None; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> Option<Cell> {
        self.cells[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, cell: Option<Cell>) {
        self.cells[row * self.cols + col] = cell;
    }

    /// `(row, col, cell)` for every occupied cell in row-major order.
    pub fn objects(&self) -> impl Iterator<Item = (usize, usize, Cell)> + '_ {
        self.cells
            .iter()
            .enumerate()
            .filter_map(|(i, c)| c.map(|c| (i / self.cols, i % self.cols, c)))
    }

    pub fn count_color(&self, color: Color) -> usize {
        self.objects().filter(|(_, _, c)| c.color == color).count()
    }

    pub fn has_color(&self, color: Color) -> bool {
        self.count_color(color) > 0
    }

    /// One patch per cell: one-hot color then one-hot shape; empty cells are
    /// all-zero.
    pub fn render(&self) -> PixelGrid {
        let mut px = PixelGrid::zeros(self.cells.len(), PATCH_DIM);
        let pos = Color::ALL.len() + Shape::ALL.len();
        for (i, c) in self.cells.iter().enumerate() {
            let patch = &mut px.data[i * PATCH_DIM..(i + 1) * PATCH_DIM];
            if let Some(c) = c {
                patch[c.color.index()] = 1.0;
                patch[Color::ALL.len() + c.shape.index()] = 1.0;
            }
            patch[pos + i / self.cols] = 1.0;
            patch[pos + MAX_SIDE + i % self.cols] = 1.0;
        }
        px
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridConfig {
    pub rows: usize,
    pub cols: usize,
    pub min_objects: usize,
    pub max_objects: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            rows: 3,
            cols: 3,
            min_objects: 1,
            max_objects: 4,
        }
    }
}

impl GridConfig {
    pub fn n_cells(&self) -> usize {
        self.rows * self.cols
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 || self.rows > MAX_SIDE || self.cols > MAX_SIDE {
            return Err(Error::InvalidConfig(format!("grid {}x{} unsupported", self.rows, self.cols)));
        }
        // at least one color must stay absent, and counts must fit one digit
        if self.min_objects == 0
            || self.min_objects > self.max_objects
            || self.max_objects >= Color::ALL.len()
            || self.max_objects > self.n_cells()
        {
            return Err(Error::InvalidConfig(format!(
                "object range {}..={} unsupported",
                self.min_objects, self.max_objects
            )));
        }
        Ok(())
    }

    pub fn random_grid<R: Rng>(&self, rng: &mut R) -> GridImage {
        let mut g = GridImage::empty(self.rows, self.cols);
        let n = rng.gen_range(self.min_objects..=self.max_objects);
        let mut slots: Vec<usize> = (0..self.n_cells()).collect();
        slots.shuffle(rng);
        for &s in &slots[..n] {
            let cell = Cell {
                color: Color::ALL[rng.gen_range(0..Color::ALL.len())],
                shape: Shape::ALL[rng.gen_range(0..Shape::ALL.len())],
            };
            g.cells[s] = Some(cell);
        }
        g
    }
}

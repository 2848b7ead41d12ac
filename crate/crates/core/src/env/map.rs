//! Text map format.
//!
//! One character per cell, one line per row, origin top-left with x
//! rightward and y downward:
//!
//! | char | meaning                    |
//! |------|----------------------------|
//! | `#`  | wall                       |
//! | `.`  | empty                      |
//! | `B`  | agent start cell           |
//! | `g`  | ★ spawn region             |
//! | `r`  | ▲ spawn region             |
//! | `b`  | spawn region for both      |
//!
//! The grid is split into four quadrants Γ (top-left), Δ (top-right),
//! Θ (bottom-left) and Λ (bottom-right). For odd sizes the middle
//! row/column belongs to the top/left quadrants, so a 25-wide map splits
//! at column 12|13.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_MAP: &str = include_str!("../../maps/default.txt");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Cell {
    Wall,
    Empty,
    Start,
    SpawnStar,
    SpawnTriangle,
    SpawnBoth,
}

impl Cell {
    pub fn from_char(c: char) -> Option<Self> {
        Some(match c {
            '#' => Cell::Wall,
            '.' => Cell::Empty,
            'B' => Cell::Start,
            'g' => Cell::SpawnStar,
            'r' => Cell::SpawnTriangle,
            'b' => Cell::SpawnBoth,
            _ => return None,
        })
    }

    pub fn to_char(self) -> char {
        match self {
            Cell::Wall => '#',
            Cell::Empty => '.',
            Cell::Start => 'B',
            Cell::SpawnStar => 'g',
            Cell::SpawnTriangle => 'r',
            Cell::SpawnBoth => 'b',
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectKind {
    Star,
    Triangle,
}

impl ObjectKind {
    pub const ALL: [ObjectKind; 2] = [ObjectKind::Star, ObjectKind::Triangle];

    pub fn index(self) -> usize {
        self as usize
    }

    fn spawns_on(self, cell: Cell) -> bool {
        matches!(
            (self, cell),
            (_, Cell::SpawnBoth) | (ObjectKind::Star, Cell::SpawnStar) | (ObjectKind::Triangle, Cell::SpawnTriangle)
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Gamma,
    Delta,
    Theta,
    Lambda,
}

impl Region {
    pub const ALL: [Region; 4] = [Region::Gamma, Region::Delta, Region::Theta, Region::Lambda];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pos {
    pub x: i32,
    pub y: i32,
}

impl Pos {
    pub const fn new(x: i32, y: i32) -> Self {
        Self { x, y }
    }
}

/// Parsed map geometry.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GridMap {
    pub width: usize,
    pub height: usize,
    cells: Vec<Cell>,
}

impl GridMap {
    pub fn cell(&self, pos: Pos) -> Option<Cell> {
        self.index(pos).map(|i| self.cells[i])
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn in_bounds(&self, pos: Pos) -> bool {
        pos.x >= 0 && pos.y >= 0 && (pos.x as usize) < self.width && (pos.y as usize) < self.height
    }

    pub fn index(&self, pos: Pos) -> Option<usize> {
        self.in_bounds(pos).then(|| pos.y as usize * self.width + pos.x as usize)
    }

    pub fn pos(&self, index: usize) -> Pos {
        Pos::new((index % self.width) as i32, (index / self.width) as i32)
    }

    /// Walls and out-of-bounds cells block movement.
    pub fn is_blocked(&self, pos: Pos) -> bool {
        !matches!(self.cell(pos), Some(c) if c != Cell::Wall)
    }

    pub fn region(&self, pos: Pos) -> Region {
        let top = (pos.y as usize) < self.height.div_ceil(2);
        let left = (pos.x as usize) < self.width.div_ceil(2);
        match (top, left) {
            (true, true) => Region::Gamma,
            (true, false) => Region::Delta,
            (false, true) => Region::Theta,
            (false, false) => Region::Lambda,
        }
    }

    pub fn start_cells(&self) -> Vec<Pos> {
        self.positions(|c| c == Cell::Start)
    }

    pub fn spawn_cells(&self, kind: ObjectKind) -> Vec<Pos> {
        self.positions(|c| kind.spawns_on(c))
    }

    fn positions(&self, pred: impl Fn(Cell) -> bool) -> Vec<Pos> {
        (0..self.cells.len())
            .filter(|&i| pred(self.cells[i]))
            .map(|i| self.pos(i))
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity((self.width + 1) * self.height);
        for row in self.cells.chunks(self.width) {
            s.extend(row.iter().map(|c| c.to_char()));
            s.push('\n');
        }
        s
    }
}

/// Parses the text map format. Trailing blank lines are ignored.
pub fn load_map(text: &str) -> Result<GridMap> {
    let lines: Vec<&str> = text.trim_end_matches(['\n', '\r']).lines().map(|l| l.trim_end_matches('\r')).collect();
    if lines.is_empty() || lines[0].is_empty() {
        return Err(Error::Parse {
            line: 1,
            column: 1,
            message: "empty map".into(),
        });
    }
    let width = lines[0].chars().count();
    let mut cells = Vec::with_capacity(width * lines.len());
    for (y, line) in lines.iter().enumerate() {
        let n = line.chars().count();
        if n != width {
            return Err(Error::Parse {
                line: y + 1,
                column: n.min(width) + 1,
                message: format!("row has {n} cells, expected {width}"),
            });
        }
        for (x, ch) in line.chars().enumerate() {
            let cell = Cell::from_char(ch).ok_or_else(|| Error::Parse {
                line: y + 1,
                column: x + 1,
                message: format!("unknown map character {ch:?}"),
            })?;
            cells.push(cell);
        }
    }
    let map = GridMap {
        width,
        height: lines.len(),
        cells,
    };
    if !map.cells.iter().any(|c| matches!(c, Cell::SpawnStar | Cell::SpawnTriangle | Cell::SpawnBoth)) {
        return Err(Error::Parse {
            line: 1,
            column: 1,
            message: "map has no spawn cells".into(),
        });
    }
    Ok(map)
}

pub fn default_map() -> GridMap {
    load_map(DEFAULT_MAP).expect("bundled map parses")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_map_with_one_star_spawn() {
        let map = load_map("...\n.g.\n...\n").unwrap();
        assert_eq!((map.width, map.height), (3, 3));
        assert_eq!(map.spawn_cells(ObjectKind::Star), vec![Pos::new(1, 1)]);
        assert!(map.spawn_cells(ObjectKind::Triangle).is_empty());
    }

    #[test]
    fn unknown_character_reports_position() {
        let err = load_map("...\n..x\n").unwrap_err();
        match err {
            Error::Parse { line, column, .. } => assert_eq!((line, column), (2, 3)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ragged_and_spawnless_maps_fail() {
        assert!(matches!(load_map("...\n..\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(load_map("...\n...\n"), Err(Error::Parse { .. })));
    }

    #[test]
    fn default_map_layout() {
        let map = default_map();
        assert_eq!((map.width, map.height), (25, 25));
        assert!(!map.spawn_cells(ObjectKind::Star).is_empty());
        assert!(!map.spawn_cells(ObjectKind::Triangle).is_empty());
        assert!(map.start_cells().len() >= 8);
        assert_eq!(map.to_text(), DEFAULT_MAP);
        let mut seen = std::collections::BTreeSet::new();
        for i in 0..map.cells().len() {
            seen.insert(map.region(map.pos(i)));
        }
        assert_eq!(seen.len(), 4);
    }

    #[test]
    fn quadrant_split_for_odd_grid() {
        let map = default_map();
        assert_eq!(map.region(Pos::new(12, 12)), Region::Gamma);
        assert_eq!(map.region(Pos::new(13, 12)), Region::Delta);
        assert_eq!(map.region(Pos::new(12, 13)), Region::Theta);
        assert_eq!(map.region(Pos::new(13, 13)), Region::Lambda);
    }
}

//! Scan-layout CSV: which object sits in which cell of which tier.
//!
//! Each CSV record is `scan_id, tier, row, id_1, ..., id_M`. Records of one
//! tier give an overhead picture of that tier: record order is row order
//! (row 1 at the top of the aligned overhead view), field order is column
//! order (column 1 at the left). Tier 1 is the bottom-most tier.
//! Empty fields, or the token `EMPTY`, mark cells left empty on purpose.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum LayoutError {
    #[error("identifier {0:?} appears more than once")]
    DuplicateIdentifier(String),
    #[error("rows of tier {0} have different lengths")]
    RaggedTier(usize),
    #[error("tier numbers must run 1..T without gaps, found {0:?}")]
    NonConsecutiveTiers(Vec<usize>),
    #[error("layout has no cells")]
    EmptyLayout,
    #[error("invalid identifier {0:?}")]
    InvalidIdentifier(String),
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("CSV holds several scans ({0:?}); select one")]
    MultipleScans(Vec<String>),
    #[error("scan {0:?} not present in layout")]
    UnknownScan(String),
    #[error("cell (tier {tier}, row {row}, col {col}) is outside the layout")]
    OutOfBounds { tier: usize, row: usize, col: usize },
}

/// Content of one grid cell.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellEntry {
    Object(String),
    Empty,
}

impl CellEntry {
    pub fn is_empty(&self) -> bool {
        matches!(self, CellEntry::Empty)
    }

    pub fn identifier(&self) -> Option<&str> {
        match self {
            CellEntry::Object(id) => Some(id),
            CellEntry::Empty => None,
        }
    }

    fn parse(field: &str) -> Result<Self, LayoutError> {
        let field = field.trim();
        if field.is_empty() || field.eq_ignore_ascii_case("EMPTY") {
            return Ok(CellEntry::Empty);
        }
        validate_identifier(field)?;
        Ok(CellEntry::Object(field.to_string()))
    }
}

impl fmt::Display for CellEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CellEntry::Object(id) => f.write_str(id),
            CellEntry::Empty => Ok(()),
        }
    }
}

/// Identifiers end up in file names, so path separators are rejected.
pub fn validate_identifier(id: &str) -> Result<(), LayoutError> {
    if id.trim().is_empty()
        || id.contains(['/', '\\'])
        || id.chars().any(|c| c.is_control())
        || id == "."
        || id == ".."
    {
        return Err(LayoutError::InvalidIdentifier(id.to_string()));
    }
    Ok(())
}

/// One tier's N×M grid, rows top to bottom.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TierLayout {
    /// 1-based, tier 1 at the bottom of the scan.
    pub tier_index: usize,
    pub rows: Vec<Vec<CellEntry>>,
}

impl TierLayout {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn empty_count(&self) -> usize {
        self.cells().filter(|(_, _, c)| c.is_empty()).count()
    }

    /// `true` where a cell holds an object.
    pub fn occupancy(&self) -> Vec<Vec<bool>> {
        self.rows
            .iter()
            .map(|r| r.iter().map(|c| !c.is_empty()).collect())
            .collect()
    }

    /// `(row, col, entry)` with 1-based indices.
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize, &CellEntry)> {
        self.rows.iter().enumerate().flat_map(|(r, row)| {
            row.iter()
                .enumerate()
                .map(move |(c, cell)| (r + 1, c + 1, cell))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanLayout {
    pub scan_id: String,
    /// Bottom tier first.
    pub tiers: Vec<TierLayout>,
}

impl ScanLayout {
    pub fn n_tiers(&self) -> usize {
        self.tiers.len()
    }

    pub fn tier(&self, tier: usize) -> Option<&TierLayout> {
        tier.checked_sub(1).and_then(|i| self.tiers.get(i))
    }

    /// Entry at a 1-based `(tier, row, col)`.
    pub fn lookup(&self, tier: usize, row: usize, col: usize) -> Result<&CellEntry, LayoutError> {
        self.tier(tier)
            .and_then(|t| row.checked_sub(1).and_then(|r| t.rows.get(r)))
            .and_then(|r| col.checked_sub(1).and_then(|c| r.get(c)))
            .ok_or(LayoutError::OutOfBounds { tier, row, col })
    }

    pub fn total_cells(&self) -> usize {
        self.tiers.iter().map(|t| t.n_rows() * t.n_cols()).sum()
    }

    pub fn occupied_count(&self) -> usize {
        self.total_cells() - self.tiers.iter().map(TierLayout::empty_count).sum::<usize>()
    }

    /// All identifiers in tier, row, column order.
    pub fn identifiers(&self) -> Vec<&str> {
        self.tiers
            .iter()
            .flat_map(|t| t.cells().filter_map(|(_, _, c)| c.identifier()))
            .collect()
    }

    /// Serializes back to the CSV format accepted by [`parse_layout`].
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for tier in &self.tiers {
            for (r, row) in tier.rows.iter().enumerate() {
                out.push_str(&format!("{},{},{}", self.scan_id, tier.tier_index, r + 1));
                for cell in row {
                    out.push(',');
                    out.push_str(&cell.to_string());
                }
                out.push('\n');
            }
        }
        out
    }

    /// Human-readable problems that do not prevent processing.
    pub fn warnings(&self) -> Vec<String> {
        let mut warnings = Vec::new();
        for tier in &self.tiers {
            if tier.empty_count() < 2 {
                warnings.push(format!(
                    "tier {} has {} empty cell(s); at least 2 are needed to fix orientation",
                    tier.tier_index,
                    tier.empty_count()
                ));
            }
        }
        for t in validate_asymmetry(self).tiers {
            if t.is_symmetric() {
                warnings.push(format!(
                    "tier {} empty-cell pattern is symmetric under {:?}; orientation is ambiguous",
                    t.tier_index,
                    t.symmetries()
                ));
            }
        }
        warnings
    }
}

/// Parses a layout CSV holding exactly one scan.
pub fn parse_layout(csv_text: &str) -> Result<ScanLayout, LayoutError> {
    let mut scans = parse_layouts(csv_text)?;
    match scans.len() {
        0 => Err(LayoutError::EmptyLayout),
        1 => Ok(scans.remove(0)),
        _ => Err(LayoutError::MultipleScans(
            scans.into_iter().map(|s| s.scan_id).collect(),
        )),
    }
}

/// Parses a layout CSV and returns the scan with the given id.
pub fn parse_layout_for(csv_text: &str, scan_id: &str) -> Result<ScanLayout, LayoutError> {
    parse_layouts(csv_text)?
        .into_iter()
        .find(|s| s.scan_id == scan_id)
        .ok_or_else(|| LayoutError::UnknownScan(scan_id.to_string()))
}

/// Parses every scan in a layout CSV, in order of first appearance.
pub fn parse_layouts(csv_text: &str) -> Result<Vec<ScanLayout>, LayoutError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(csv_text.as_bytes());

    // scan id -> tier -> rows as (row number, line, cells)
    type Rows = Vec<(usize, usize, Vec<CellEntry>)>;
    let mut scans: Vec<(String, BTreeMap<usize, Rows>)> = Vec::new();

    for (n, record) in reader.records().enumerate() {
        let line = n + 1;
        let record = record.map_err(|e| LayoutError::Malformed {
            line,
            reason: e.to_string(),
        })?;
        if record.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        if record.len() < 4 {
            return Err(LayoutError::Malformed {
                line,
                reason: "expected scan_id, tier, row and at least one cell".into(),
            });
        }
        let tier_field = record[1].trim();
        let Ok(tier) = tier_field.parse::<usize>() else {
            if n == 0 {
                // header row
                continue;
            }
            return Err(LayoutError::Malformed {
                line,
                reason: format!("tier {tier_field:?} is not a number"),
            });
        };
        let row_field = record[2].trim();
        let row: usize = row_field.parse().map_err(|_| LayoutError::Malformed {
            line,
            reason: format!("row {row_field:?} is not a number"),
        })?;
        let scan_id = record[0].trim().to_string();
        let cells = record
            .iter()
            .skip(3)
            .map(CellEntry::parse)
            .collect::<Result<Vec<_>, _>>()?;

        let idx = match scans.iter().position(|(id, _)| *id == scan_id) {
            Some(i) => i,
            None => {
                scans.push((scan_id, BTreeMap::new()));
                scans.len() - 1
            }
        };
        scans[idx].1.entry(tier).or_default().push((row, line, cells));
    }

    let mut seen = HashSet::new();
    let mut layouts = Vec::with_capacity(scans.len());
    for (scan_id, tiers) in scans {
        let indices: Vec<usize> = tiers.keys().copied().collect();
        if indices.iter().enumerate().any(|(i, &t)| t != i + 1) {
            return Err(LayoutError::NonConsecutiveTiers(indices));
        }
        let mut out = Vec::with_capacity(tiers.len());
        for (tier_index, rows) in tiers {
            let width = rows[0].2.len();
            if rows.iter().any(|(_, _, cells)| cells.len() != width) {
                return Err(LayoutError::RaggedTier(tier_index));
            }
            for (i, (row, line, _)) in rows.iter().enumerate() {
                if *row != i + 1 {
                    return Err(LayoutError::Malformed {
                        line: *line,
                        reason: format!("tier {tier_index}: expected row {}, found {row}", i + 1),
                    });
                }
            }
            let rows: Vec<Vec<CellEntry>> = rows.into_iter().map(|(_, _, c)| c).collect();
            for id in rows.iter().flatten().filter_map(CellEntry::identifier) {
                if !seen.insert(id.to_string()) {
                    return Err(LayoutError::DuplicateIdentifier(id.to_string()));
                }
            }
            out.push(TierLayout { tier_index, rows });
        }
        layouts.push(ScanLayout { scan_id, tiers: out });
    }
    if layouts.is_empty() {
        return Err(LayoutError::EmptyLayout);
    }
    Ok(layouts)
}

/// Rigid re-orientations of an N×M grid seen from above.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    Identity,
    Rot180,
    /// Left-right mirror (columns reversed).
    FlipHorizontal,
    /// Top-bottom mirror (rows reversed).
    FlipVertical,
}

impl Orientation {
    pub const ALL: [Orientation; 4] = [
        Orientation::Identity,
        Orientation::Rot180,
        Orientation::FlipHorizontal,
        Orientation::FlipVertical,
    ];

    pub fn apply<T: Clone>(self, grid: &[Vec<T>]) -> Vec<Vec<T>> {
        let flip_rows = matches!(self, Orientation::Rot180 | Orientation::FlipVertical);
        let flip_cols = matches!(self, Orientation::Rot180 | Orientation::FlipHorizontal);
        let mut rows: Vec<Vec<T>> = grid
            .iter()
            .map(|r| {
                let mut r = r.clone();
                if flip_cols {
                    r.reverse();
                }
                r
            })
            .collect();
        if flip_rows {
            rows.reverse();
        }
        rows
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TierSymmetry {
    pub tier_index: usize,
    pub rot180: bool,
    pub flip_horizontal: bool,
    pub flip_vertical: bool,
}

impl TierSymmetry {
    pub fn is_symmetric(&self) -> bool {
        self.rot180 || self.flip_horizontal || self.flip_vertical
    }

    pub fn symmetries(&self) -> Vec<Orientation> {
        let mut v = Vec::new();
        if self.rot180 {
            v.push(Orientation::Rot180);
        }
        if self.flip_horizontal {
            v.push(Orientation::FlipHorizontal);
        }
        if self.flip_vertical {
            v.push(Orientation::FlipVertical);
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymmetryReport {
    pub tiers: Vec<TierSymmetry>,
}

impl SymmetryReport {
    pub fn all_asymmetric(&self) -> bool {
        self.tiers.iter().all(|t| !t.is_symmetric())
    }
}

/// Checks whether each tier's empty-cell pattern pins down its orientation.
///
/// Only occupancy matters, never the identifiers.
pub fn validate_asymmetry(layout: &ScanLayout) -> SymmetryReport {
    let tiers = layout
        .tiers
        .iter()
        .map(|t| {
            let occ = t.occupancy();
            let same = |o: Orientation| o.apply(&occ) == occ;
            TierSymmetry {
                tier_index: t.tier_index,
                rot180: same(Orientation::Rot180),
                flip_horizontal: same(Orientation::FlipHorizontal),
                flip_vertical: same(Orientation::FlipVertical),
            }
        })
        .collect();
    SymmetryReport { tiers }
}

//! Meshes and the two field representations: elementwise-decoupled DG
//! coordinates and globally coupled CG hat/bubble coordinates.

mod cg;
mod dg;

pub use cg::{CGField, CgBasis, CgFilter, CgFilterOptions};
pub use dg::{filter_field, flag_elements, DGField, DgFilter, DgFilterOptions};

use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::filter::FilterError;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    /// Mass-matrix assembly produced a matrix that is not positive definite.
    #[error("mass matrix is not positive definite")]
    NotSpd,
    #[error("unsupported option: {0}")]
    UnsupportedOption(String),
    #[error("filter failed{}: {source}", element_label(.element))]
    Filter {
        element: Option<usize>,
        source: FilterError,
    },
    #[error("snapshot io: {0}")]
    Io(#[from] std::io::Error),
}

fn element_label(element: &Option<usize>) -> String {
    match element {
        Some(e) => format!(" on element {e}"),
        None => String::new(),
    }
}

/// A 1D interval partitioned into elements by strictly increasing breaks.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh1D {
    breaks: Vec<f64>,
}

impl Mesh1D {
    pub fn uniform(a: f64, b: f64, elements: usize) -> Self {
        assert!(elements >= 1 && b > a);
        let h = (b - a) / elements as f64;
        let breaks = (0..=elements)
            .map(|i| if i == elements { b } else { a + i as f64 * h })
            .collect();
        Self { breaks }
    }

    pub fn from_breaks(breaks: Vec<f64>) -> Result<Self, FieldError> {
        if breaks.len() < 2 {
            return Err(FieldError::InvalidMesh("need at least one element".into()));
        }
        if breaks.windows(2).any(|w| w[1] <= w[0]) {
            return Err(FieldError::InvalidMesh(
                "breaks must be strictly increasing".into(),
            ));
        }
        Ok(Self { breaks })
    }

    pub fn breaks(&self) -> &[f64] {
        &self.breaks
    }

    pub fn element_count(&self) -> usize {
        self.breaks.len() - 1
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.breaks[0], *self.breaks.last().unwrap())
    }

    pub fn element_interval(&self, e: usize) -> (f64, f64) {
        (self.breaks[e], self.breaks[e + 1])
    }

    pub fn element_width(&self, e: usize) -> f64 {
        self.breaks[e + 1] - self.breaks[e]
    }

    /// Index of the element containing x (points on breaks go right, except
    /// at the very end).
    pub fn locate(&self, x: f64) -> usize {
        let e = self.breaks.partition_point(|&b| b <= x);
        e.saturating_sub(1).min(self.element_count() - 1)
    }

    /// Affine map of element e onto the reference interval.
    pub fn to_reference(&self, e: usize, x: f64) -> f64 {
        let (l, r) = self.element_interval(e);
        2.0 * (x - l) / (r - l) - 1.0
    }

    pub fn from_reference(&self, e: usize, xi: f64) -> f64 {
        let (l, r) = self.element_interval(e);
        0.5 * (l + r) + 0.5 * (r - l) * xi
    }
}

/// Write a flat text snapshot: one line of mesh breaks followed by one
/// coefficient row per element (DG) or a single global row (CG).
pub fn write_snapshot(
    path: &Path,
    mesh: &Mesh1D,
    coefficient_rows: &[&[f64]],
) -> Result<(), FieldError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "# mesh breaks")?;
    let fmt = |v: &[f64]| {
        v.iter()
            .map(|x| format!("{x:.17e}"))
            .collect::<Vec<_>>()
            .join(",")
    };
    writeln!(out, "{}", fmt(mesh.breaks()))?;
    writeln!(out, "# coefficients")?;
    for row in coefficient_rows {
        writeln!(out, "{}", fmt(row))?;
    }
    Ok(())
}

/// Parse a snapshot written by [`write_snapshot`].
pub fn read_snapshot(path: &Path) -> Result<(Mesh1D, Vec<Vec<f64>>), FieldError> {
    let text = std::fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for line in text.lines() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|e| FieldError::InvalidMesh(format!("bad number {t:?}: {e}")))
            })
            .collect::<Result<Vec<f64>, _>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(FieldError::InvalidMesh("empty snapshot".into()));
    }
    let mesh = Mesh1D::from_breaks(rows.remove(0))?;
    Ok((mesh, rows))
}

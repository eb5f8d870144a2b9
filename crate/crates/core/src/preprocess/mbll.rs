//! Modified Beer-Lambert conversion between optical density and
//! chromophore concentration changes.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Molar extinction coefficients (base-10, cm^-1 per mol/L) at one wavelength.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtinctionRow {
    pub wavelength_nm: f64,
    pub eps_hbo: f64,
    pub eps_hbr: f64,
}

const SHIPPED_TABLE: &str = include_str!("../../data/extinction.csv");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtinctionTable {
    pub rows: Vec<ExtinctionRow>,
}

impl ExtinctionTable {
    /// The table shipped with the crate (760 and 850 nm).
    pub fn shipped() -> ExtinctionTable {
        ExtinctionTable::parse(SHIPPED_TABLE, Path::new("<shipped extinction table>"))
            .expect("shipped extinction table parses")
    }

    pub fn load(path: &Path) -> Result<ExtinctionTable> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ExtinctionTable::parse(&text, path)
    }

    /// CSV with `wavelength_nm,eps_hbo,eps_hbr`; `#` lines are comments.
    pub fn parse(text: &str, origin: &Path) -> Result<ExtinctionTable> {
        let body: String = text
            .lines()
            .filter(|l| !l.trim_start().starts_with('#'))
            .map(|l| format!("{l}\n"))
            .collect();
        let mut rdr = csv::Reader::from_reader(body.as_bytes());
        let rows = rdr
            .deserialize()
            .collect::<std::result::Result<Vec<ExtinctionRow>, _>>()
            .map_err(|e| Error::parse(origin, e))?;
        Ok(ExtinctionTable { rows })
    }

    pub fn at(&self, wavelength_nm: f64) -> Result<ExtinctionRow> {
        self.rows
            .iter()
            .copied()
            .find(|r| (r.wavelength_nm - wavelength_nm).abs() < 0.5)
            .ok_or_else(|| Error::Config(format!("no extinction coefficients for {wavelength_nm} nm")))
    }
}

/// The per-channel 2x2 system `dOD = M dc` with `M[i] = [eps_hbo, eps_hbr](l_i) * d * ppf_i`,
/// concentrations in micromolar.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeerLambert {
    /// `eps[i] = [hbo, hbr]` for wavelength `i` (shorter first), per mol/L.
    pub eps: [[f64; 2]; 2],
    pub ppf: [f64; 2],
}

const MICRO: f64 = 1e-6;

impl BeerLambert {
    pub fn from_table(table: &ExtinctionTable, wavelengths_nm: [f64; 2], ppf: [f64; 2]) -> Result<BeerLambert> {
        let a = table.at(wavelengths_nm[0])?;
        let b = table.at(wavelengths_nm[1])?;
        Ok(BeerLambert { eps: [[a.eps_hbo, a.eps_hbr], [b.eps_hbo, b.eps_hbr]], ppf })
    }

    /// System matrix mapping micromolar changes to OD for separation `d_cm`.
    pub fn matrix(&self, d_cm: f64) -> [[f64; 2]; 2] {
        let mut m = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                m[i][j] = self.eps[i][j] * d_cm * self.ppf[i] * MICRO;
            }
        }
        m
    }

    pub fn forward(&self, d_cm: f64, dc_um: [f64; 2]) -> [f64; 2] {
        let m = self.matrix(d_cm);
        [
            m[0][0] * dc_um[0] + m[0][1] * dc_um[1],
            m[1][0] * dc_um[0] + m[1][1] * dc_um[1],
        ]
    }

    /// Inverse of [`BeerLambert::matrix`], rejecting near-singular systems.
    pub fn inverse(&self, d_cm: f64) -> Result<[[f64; 2]; 2]> {
        let m = self.matrix(d_cm);
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        let scale = m.iter().flatten().map(|v| v * v).sum::<f64>();
        if !(det.abs() > 1e-12 * scale) {
            return Err(Error::Singular { det });
        }
        Ok([[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]])
    }
}

/// Converts a `(time, 2 * n_ch)` OD matrix (per channel: shorter wavelength,
/// then longer) into `(time, 2 * n_ch)` concentrations (per channel: HbO, HbR).
pub fn mbll(od: &Array2<f64>, model: &BeerLambert, separations_cm: &[f64]) -> Result<Array2<f64>> {
    if od.ncols() != 2 * separations_cm.len() {
        return Err(Error::ColumnMismatch {
            expected: format!("{} columns", 2 * separations_cm.len()),
            found: format!("{} columns", od.ncols()),
        });
    }
    let mut out = Array2::zeros(od.raw_dim());
    for (ch, &d) in separations_cm.iter().enumerate() {
        let inv = model.inverse(d)?;
        for t in 0..od.nrows() {
            let a = od[[t, 2 * ch]];
            let b = od[[t, 2 * ch + 1]];
            out[[t, 2 * ch]] = inv[0][0] * a + inv[0][1] * b;
            out[[t, 2 * ch + 1]] = inv[1][0] * a + inv[1][1] * b;
        }
    }
    Ok(out)
}

/// Forward Beer-Lambert: concentrations to OD, the exact inverse of [`mbll`].
pub fn beer_lambert_forward(dc: &Array2<f64>, model: &BeerLambert, separations_cm: &[f64]) -> Result<Array2<f64>> {
    if dc.ncols() != 2 * separations_cm.len() {
        return Err(Error::ColumnMismatch {
            expected: format!("{} columns", 2 * separations_cm.len()),
            found: format!("{} columns", dc.ncols()),
        });
    }
    let mut out = Array2::zeros(dc.raw_dim());
    for (ch, &d) in separations_cm.iter().enumerate() {
        for t in 0..dc.nrows() {
            let od = model.forward(d, [dc[[t, 2 * ch]], dc[[t, 2 * ch + 1]]]);
            out[[t, 2 * ch]] = od[0];
            out[[t, 2 * ch + 1]] = od[1];
        }
    }
    Ok(out)
}

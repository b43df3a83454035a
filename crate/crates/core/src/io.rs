//! JSON serialization of measures.
//!
//! Schema (field names are stable):
//! `{ "dimension": N, "domain": { "lo": [...], "hi": [...] }, "grid": [...],
//!    "ac_density": [...], "facets": [ { "center": [...], "normal": [...],
//!    "extent": [...], "amplitude": [[...]] } ] }`
//! with `ac_density` cell-major and row-major within each d x N block.

use crate::error::{Result, SdError};
use crate::geom::{Domain, Facet};
use crate::measure::VectorMeasure;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Serialize, Deserialize)]
pub struct MeasureDoc {
    pub dimension: usize,
    pub domain: DomainDoc,
    pub grid: Vec<usize>,
    pub ac_density: Vec<f64>,
    pub facets: Vec<FacetDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DomainDoc {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FacetDoc {
    pub center: Vec<f64>,
    pub normal: Vec<f64>,
    pub extent: Vec<f64>,
    pub amplitude: Vec<Vec<f64>>,
}

pub fn measure_to_doc(mu: &VectorMeasure) -> MeasureDoc {
    let dim = mu.domain.dim;
    let cells = mu.domain.cell_count();
    let mut ac = Vec::with_capacity(cells * mu.d * dim);
    for c in 0..cells {
        ac.extend_from_slice(mu.ac_slice(c));
    }
    MeasureDoc {
        dimension: dim,
        domain: DomainDoc { lo: mu.domain.lo[..dim].to_vec(), hi: mu.domain.hi[..dim].to_vec() },
        grid: mu.domain.res[..dim].to_vec(),
        ac_density: ac,
        facets: mu
            .facets
            .iter()
            .map(|f| FacetDoc {
                center: f.center[..dim].to_vec(),
                normal: f.normal[..dim].to_vec(),
                extent: f.extent[..dim.saturating_sub(1)].to_vec(),
                amplitude: (0..f.amplitude.nrows())
                    .map(|i| (0..dim).map(|j| f.amplitude[(i, j)]).collect())
                    .collect(),
            })
            .collect(),
    }
}

pub fn measure_from_doc(doc: &MeasureDoc) -> Result<VectorMeasure> {
    let dim = doc.dimension;
    if doc.domain.lo.len() != dim || doc.domain.hi.len() != dim || doc.grid.len() != dim {
        return Err(SdError::DimensionMismatch("domain arrays must have length `dimension`".into()));
    }
    let mut lo = [0.0; 3];
    let mut hi = [0.0; 3];
    let mut res = [1usize; 3];
    for a in 0..dim {
        lo[a] = doc.domain.lo[a];
        hi[a] = doc.domain.hi[a];
        res[a] = doc.grid[a];
    }
    let domain = Domain::new(dim, lo, hi, res)?;
    let cells = domain.cell_count();
    if cells == 0 || doc.ac_density.len() % (cells * dim) != 0 {
        return Err(SdError::DimensionMismatch("ac_density length must be cells * d * N".into()));
    }
    let d = doc.ac_density.len() / (cells * dim);
    if d == 0 {
        return Err(SdError::DimensionMismatch("empty ac_density".into()));
    }
    let mut mu = VectorMeasure::zero(domain, d);
    for c in 0..cells {
        let block = &doc.ac_density[c * d * dim..(c + 1) * d * dim];
        let m = DMatrix::from_fn(d, dim, |i, j| block[i * dim + j]);
        mu.set_ac(c, &m);
    }
    for fd in &doc.facets {
        if fd.center.len() != dim || fd.normal.len() != dim {
            return Err(SdError::DimensionMismatch("facet center/normal length".into()));
        }
        if fd.amplitude.len() != d || fd.amplitude.iter().any(|row| row.len() != dim) {
            return Err(SdError::DimensionMismatch("facet amplitude must be d x N".into()));
        }
        let mut center = [0.0; 3];
        let mut normal = [0.0; 3];
        for a in 0..dim {
            center[a] = fd.center[a];
            normal[a] = fd.normal[a];
        }
        let mut extent = [1.0, 1.0];
        for (i, e) in fd.extent.iter().take(2).enumerate() {
            extent[i] = *e;
        }
        let amp = DMatrix::from_fn(d, dim, |i, j| fd.amplitude[i][j]);
        mu.push_facet(Facet::new(dim, center, normal, extent, amp)?)?;
    }
    Ok(mu)
}

pub fn measure_to_json(mu: &VectorMeasure) -> String {
    serde_json::to_string_pretty(&measure_to_doc(mu)).expect("measure serializes")
}

pub fn measure_from_json(text: &str) -> Result<VectorMeasure> {
    let doc: MeasureDoc =
        serde_json::from_str(text).map_err(|e| SdError::DimensionMismatch(format!("bad measure JSON: {e}")))?;
    measure_from_doc(&doc)
}

//! Allometric AGB models and volume to biomass to carbon conversion.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Bundled coefficient file.
pub const ALLOMETRIC_TOML: &str = include_str!("../data/allometric.toml");

pub const CARBON_FRACTION: f64 = 0.5;
pub const DEFAULT_WOOD_DENSITY: f64 = 650.0;
pub const M2_PER_HA: f64 = 10_000.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BiomassError {
    #[error("diameter {d} cm is outside the {model} model domain (0, {max}) cm")]
    OutsideDomain { model: String, d: f64, max: f64 },
    #[error("height must be positive, got {0} m")]
    NonPositiveHeight(f64),
    #[error("{field} must be positive, got {value}")]
    NonPositive { field: &'static str, value: f64 },
    #[error("volume must be non-negative, got {0} m³")]
    NegativeVolume(f64),
    #[error("tiles use different wood densities ({0} and {1} kg/m³)")]
    MixedDensity(f64, f64),
    #[error("no tiles to aggregate")]
    Empty,
    #[error("unknown allometric model {0:?}")]
    UnknownModel(String),
    #[error("coefficient file: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DiameterKind {
    D130,
    D10,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AllometricModel {
    pub name: String,
    pub diameter_kind: DiameterKind,
    pub ln_a: f64,
    pub b: f64,
    pub c: f64,
    pub domain_max_cm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeightModel {
    pub ln_a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AllometricTable {
    pub model: Vec<AllometricModel>,
    pub height: HeightModel,
}

impl AllometricTable {
    pub fn parse(src: &str) -> Result<Self, BiomassError> {
        let t: AllometricTable = toml::from_str(src).map_err(|e| BiomassError::Parse(e.to_string()))?;
        for m in &t.model {
            if !(m.domain_max_cm > 0.0) {
                return Err(BiomassError::Parse(format!(
                    "model {:?} has non-positive domain",
                    m.name
                )));
            }
        }
        Ok(t)
    }

    pub fn bundled() -> Self {
        Self::parse(ALLOMETRIC_TOML).expect("bundled coefficient file parses")
    }

    pub fn get(&self, name: &str) -> Result<&AllometricModel, BiomassError> {
        self.model
            .iter()
            .find(|m| m.name == name)
            .ok_or_else(|| BiomassError::UnknownModel(name.to_string()))
    }
}

/// Diameter-based AGB in kg for a stem diameter in cm.
pub fn agb_from_diameter(model: &AllometricModel, d: f64) -> Result<f64, BiomassError> {
    if !(d > 0.0 && d < model.domain_max_cm) {
        return Err(BiomassError::OutsideDomain {
            model: model.name.clone(),
            d,
            max: model.domain_max_cm,
        });
    }
    Ok((model.ln_a + model.b * d.ln()).exp() * model.c)
}

/// Height-based AGB in kg for a tree height in m, with the bundled coefficients.
pub fn agb_from_height(h: f64) -> Result<f64, BiomassError> {
    agb_from_height_with(&AllometricTable::bundled().height, h)
}

pub fn agb_from_height_with(model: &HeightModel, h: f64) -> Result<f64, BiomassError> {
    if !(h > 0.0) {
        return Err(BiomassError::NonPositiveHeight(h));
    }
    Ok((model.ln_a + model.b * h.ln()).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlotEstimate {
    pub id: String,
    pub predicted_volume: f64,
    /// tonnes
    pub agb: f64,
    /// tonnes
    pub carbon: f64,
    /// hectares
    pub area: f64,
    pub agb_per_ha: f64,
    pub carbon_per_ha: f64,
    pub wood_density: f64,
}

/// Volume (m³) to AGB and carbon (t) with density in kg/m³ and area in ha.
pub fn volume_to_carbon(
    id: impl Into<String>,
    volume: f64,
    density: f64,
    area_ha: f64,
) -> Result<PlotEstimate, BiomassError> {
    if !(volume >= 0.0) {
        return Err(BiomassError::NegativeVolume(volume));
    }
    if !(density > 0.0) {
        return Err(BiomassError::NonPositive {
            field: "density",
            value: density,
        });
    }
    if !(area_ha > 0.0) {
        return Err(BiomassError::NonPositive {
            field: "area",
            value: area_ha,
        });
    }
    let agb = volume * density / 1000.0;
    let carbon = CARBON_FRACTION * agb;
    Ok(PlotEstimate {
        id: id.into(),
        predicted_volume: volume,
        agb,
        carbon,
        area: area_ha,
        agb_per_ha: agb / area_ha,
        carbon_per_ha: carbon / area_ha,
        wood_density: density,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SiteTotals {
    pub agb: f64,
    pub carbon: f64,
    pub area: f64,
    pub agb_per_ha: f64,
    pub carbon_per_ha: f64,
    pub wood_density: f64,
    pub n_tiles: usize,
}

/// Sums tile totals; per-hectare values are area-weighted.
pub fn aggregate_tiles(estimates: &[PlotEstimate], allow_mixed_density: bool) -> Result<SiteTotals, BiomassError> {
    let first = estimates.first().ok_or(BiomassError::Empty)?;
    if !allow_mixed_density {
        if let Some(e) = estimates.iter().find(|e| e.wood_density != first.wood_density) {
            return Err(BiomassError::MixedDensity(first.wood_density, e.wood_density));
        }
    }
    let agb: f64 = estimates.iter().map(|e| e.agb).sum();
    let carbon: f64 = estimates.iter().map(|e| e.carbon).sum();
    let area: f64 = estimates.iter().map(|e| e.area).sum();
    Ok(SiteTotals {
        agb,
        carbon,
        area,
        agb_per_ha: agb / area,
        carbon_per_ha: carbon / area,
        wood_density: first.wood_density,
        n_tiles: estimates.len(),
    })
}

pub const SITE_CSV_HEADER: &str = "site,method,agb_t_ha,carbon_t_ha,density_kg_m3,n_tiles";

pub fn site_csv_row(site: &str, method: &str, t: &SiteTotals) -> String {
    format!(
        "{site},{method},{},{},{},{}",
        t.agb_per_ha, t.carbon_per_ha, t.wood_density, t.n_tiles
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eucalypt_values() {
        let t = AllometricTable::bundled();
        let e = t.get("eucalypt").unwrap();
        let oracle = (-2.016f64).exp() * 10f64.powf(2.375) * 1.0668;
        let v = agb_from_diameter(e, 10.0).unwrap();
        assert!((v - oracle).abs() < 1e-9);
        assert!((v - 33.70).abs() < 0.01, "{v}");
        assert!((agb_from_diameter(e, 1.0).unwrap() - 0.1420).abs() < 1e-4);
        assert!(matches!(
            agb_from_diameter(e, 200.0),
            Err(BiomassError::OutsideDomain { .. })
        ));
        assert!(agb_from_diameter(e, 0.0).is_err());
        assert!(agb_from_diameter(e, 169.0).is_err());
    }

    #[test]
    fn height_values() {
        let v = agb_from_height(10.0).unwrap();
        assert!((v - 99.0).abs() < 0.1, "{v}");
        assert!((agb_from_height(1.0).unwrap() - 0.0290).abs() < 5e-5);
        let ratio = agb_from_height(14.0).unwrap() / agb_from_height(7.0).unwrap();
        assert!((ratio - 2f64.powf(3.5337)).abs() < 1e-9);
        assert!((ratio - 11.58).abs() < 0.01);
        assert!(agb_from_height(0.0).is_err());
        assert!(agb_from_height(-3.0).is_err());
    }

    #[test]
    fn conversion_examples() {
        let e = volume_to_carbon("p", 2.0, 650.0, 1.0).unwrap();
        assert!((e.agb - 1.3).abs() < 1e-12);
        assert!((e.carbon - 0.65).abs() < 1e-12);
        let z = volume_to_carbon("z", 0.0, 650.0, 0.03).unwrap();
        assert_eq!((z.agb, z.carbon), (0.0, 0.0));
        assert!(volume_to_carbon("x", 1.0, 0.0, 1.0).is_err());
        assert!(volume_to_carbon("x", 1.0, 650.0, 0.0).is_err());
        assert!(volume_to_carbon("x", -1.0, 650.0, 1.0).is_err());
    }

    #[test]
    fn aggregation() {
        // 100 t and 300 t over 1 ha each
        let a = volume_to_carbon("a", 100_000.0 / 650.0, 650.0, 1.0).unwrap();
        let b = volume_to_carbon("b", 300_000.0 / 650.0, 650.0, 1.0).unwrap();
        let s = aggregate_tiles(&[a.clone(), b], false).unwrap();
        assert!((s.agb_per_ha - 200.0).abs() < 1e-9);
        assert!((s.carbon_per_ha - 100.0).abs() < 1e-9);
        let one = aggregate_tiles(std::slice::from_ref(&a), false).unwrap();
        assert_eq!(one.agb_per_ha, a.agb_per_ha);
        let c = volume_to_carbon("c", 1.0, 500.0, 1.0).unwrap();
        assert!(matches!(
            aggregate_tiles(&[a.clone(), c.clone()], false),
            Err(BiomassError::MixedDensity(..))
        ));
        assert!(aggregate_tiles(&[a, c], true).is_ok());
        assert_eq!(aggregate_tiles(&[], false), Err(BiomassError::Empty));
    }
}

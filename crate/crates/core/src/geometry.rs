//! Deployment geometry: AP corners, users on a circle around the surface,
//! and the square element grid.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::error::{Error, Result};

pub type Point3 = [f64; 3];

pub fn distance(a: &Point3, b: &Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub ap_positions: Vec<Point3>,
    /// Antenna positions per AP: a uniform linear array along x with half-wavelength spacing.
    pub antenna_positions: Vec<Vec<Point3>>,
    pub user_positions: Vec<Point3>,
    pub ris_center: Point3,
    /// Row-major over the `sqrt(M) x sqrt(M)` grid in the horizontal plane.
    pub ris_element_positions: Vec<Point3>,
    pub ris_normal: Point3,
    pub element_spacing_m: f64,
}

/// AP corners in the order they are assigned; more than four APs cycle.
const CORNERS: [(f64, f64); 4] = [(-1.0, -1.0), (1.0, 1.0), (-1.0, 1.0), (1.0, -1.0)];

pub fn build_geometry(config: &SystemConfig) -> Result<Geometry> {
    config.validate()?;
    let side = config
        .ris_side()
        .ok_or_else(|| Error::Config("element count is not a perfect square".into()))?;
    let a = config.area_half_width_m;
    let lambda = config.wavelength_m;

    let ap_positions: Vec<Point3> = (0..config.num_aps)
        .map(|n| {
            let (sx, sy) = CORNERS[n % CORNERS.len()];
            [sx * a, sy * a, config.ap_height_m]
        })
        .collect();

    let antenna_spacing = lambda / 2.0;
    let l_count = config.antennas_per_ap;
    let antenna_positions = ap_positions
        .iter()
        .map(|p| {
            (0..l_count)
                .map(|l| {
                    let offset = (l as f64 - (l_count as f64 - 1.0) / 2.0) * antenna_spacing;
                    [p[0] + offset, p[1], p[2]]
                })
                .collect()
        })
        .collect();

    let k_count = config.num_users;
    let radius = config.user_circle_radius_m;
    let user_positions = (0..k_count)
        .map(|k| {
            let angle = 2.0 * PI * k as f64 / k_count as f64;
            [radius * angle.cos(), radius * angle.sin(), config.user_height_m]
        })
        .collect();

    let spacing = lambda / 4.0;
    let half = (side as f64 - 1.0) / 2.0;
    let ris_center = [0.0, 0.0, config.ris_height_m];
    let mut ris_element_positions = Vec::with_capacity(side * side);
    for row in 0..side {
        for col in 0..side {
            ris_element_positions.push([
                (col as f64 - half) * spacing,
                (row as f64 - half) * spacing,
                config.ris_height_m,
            ]);
        }
    }

    Ok(Geometry {
        ap_positions,
        antenna_positions,
        user_positions,
        ris_center,
        ris_element_positions,
        ris_normal: [0.0, 0.0, 1.0],
        element_spacing_m: spacing,
    })
}

/// `sin(pi x) / (pi x)`, with the removable singularity at zero.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = PI * x;
        px.sin() / px
    }
}

/// Spatial correlation of an isotropic planar array,
/// `[R]_{m,m'} = sinc(2 |u_m - u_m'| / lambda)`. Real symmetric, unit diagonal.
pub fn ris_correlation_matrix(geometry: &Geometry, wavelength: f64) -> DMatrix<f64> {
    let pos = &geometry.ris_element_positions;
    let m = pos.len();
    DMatrix::from_fn(m, m, |i, j| sinc(2.0 * distance(&pos[i], &pos[j]) / wavelength))
}

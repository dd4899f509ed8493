//! Ground-space helpers: bounding boxes and local metric scale on the WGS84 ellipsoid.

use crate::rpc::GroundPoint;

const WGS84_A: f64 = 6_378_137.0;
const WGS84_E2: f64 = 6.694_379_990_14e-3;

/// Meters per degree of latitude and of longitude at geodetic latitude `lat`.
pub fn meters_per_degree(lat: f64) -> (f64, f64) {
    let phi = lat.to_radians();
    let s2 = phi.sin().powi(2);
    let w = (1.0 - WGS84_E2 * s2).sqrt();
    let meridional = WGS84_A * (1.0 - WGS84_E2) / (w * w * w);
    let normal = WGS84_A / w;
    let k = std::f64::consts::PI / 180.0;
    (meridional * k, normal * phi.cos() * k)
}

/// Axis-aligned box in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundBBox {
    pub min_lat: f64,
    pub max_lat: f64,
    pub min_lon: f64,
    pub max_lon: f64,
}

impl GroundBBox {
    pub fn enclosing<'a>(points: impl IntoIterator<Item = &'a GroundPoint>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = it.next()?;
        let mut b = GroundBBox { min_lat: first.lat, max_lat: first.lat, min_lon: first.lon, max_lon: first.lon };
        for p in it {
            b.min_lat = b.min_lat.min(p.lat);
            b.max_lat = b.max_lat.max(p.lat);
            b.min_lon = b.min_lon.min(p.lon);
            b.max_lon = b.max_lon.max(p.lon);
        }
        Some(b)
    }

    /// Area in square degrees; only ratios of areas are meaningful.
    pub fn area(&self) -> f64 {
        (self.max_lat - self.min_lat).max(0.0) * (self.max_lon - self.min_lon).max(0.0)
    }

    pub fn intersection(&self, other: &GroundBBox) -> Option<GroundBBox> {
        let b = GroundBBox {
            min_lat: self.min_lat.max(other.min_lat),
            max_lat: self.max_lat.min(other.max_lat),
            min_lon: self.min_lon.max(other.min_lon),
            max_lon: self.max_lon.min(other.max_lon),
        };
        (b.min_lat <= b.max_lat && b.min_lon <= b.max_lon).then_some(b)
    }

    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        (self.min_lat..=self.max_lat).contains(&lat) && (self.min_lon..=self.max_lon).contains(&lon)
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.min_lat + self.max_lat), 0.5 * (self.min_lon + self.max_lon))
    }
}

/// Area of a ground polygon in square meters, using a local equirectangular
/// frame at the polygon's mean latitude.
pub fn polygon_area_m2(corners: &[GroundPoint]) -> f64 {
    if corners.len() < 3 {
        return 0.0;
    }
    let lat0 = corners.iter().map(|c| c.lat).sum::<f64>() / corners.len() as f64;
    let (mlat, mlon) = meters_per_degree(lat0);
    let xy: Vec<(f64, f64)> = corners.iter().map(|c| (c.lon * mlon, c.lat * mlat)).collect();
    let twice: f64 = (0..xy.len())
        .map(|i| {
            let (x0, y0) = xy[i];
            let (x1, y1) = xy[(i + 1) % xy.len()];
            x0 * y1 - x1 * y0
        })
        .sum();
    0.5 * twice.abs()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_degree_of_latitude_is_about_111_km() {
        let (mlat, mlon) = meters_per_degree(0.0);
        assert!((mlat - 110_574.0).abs() < 1.0, "{mlat}");
        assert!((mlon - 111_319.5).abs() < 1.0, "{mlon}");
        let (_, mlon60) = meters_per_degree(60.0);
        assert!((mlon60 - 55_800.0).abs() < 50.0, "{mlon60}");
    }

    #[test]
    fn bbox_intersection() {
        let a = GroundBBox { min_lat: 0.0, max_lat: 1.0, min_lon: 0.0, max_lon: 1.0 };
        let b = GroundBBox { min_lat: 0.0, max_lat: 1.0, min_lon: 0.5, max_lon: 1.5 };
        assert_eq!(a.intersection(&b).unwrap().area(), 0.5);
        let c = GroundBBox { min_lat: 2.0, max_lat: 3.0, min_lon: 0.0, max_lon: 1.0 };
        assert!(a.intersection(&c).is_none());
    }

    #[test]
    fn rectangle_area() {
        let (mlat, mlon) = meters_per_degree(10.0);
        let dlat = 100.0 / mlat;
        let dlon = 50.0 / mlon;
        let c = [
            GroundPoint::new(10.0 - dlat / 2.0, 0.0, 0.0),
            GroundPoint::new(10.0 - dlat / 2.0, dlon, 0.0),
            GroundPoint::new(10.0 + dlat / 2.0, dlon, 0.0),
            GroundPoint::new(10.0 + dlat / 2.0, 0.0, 0.0),
        ];
        assert!((polygon_area_m2(&c) - 5000.0).abs() < 1e-6);
    }
}

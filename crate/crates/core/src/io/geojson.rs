//! Voltage snapshots as GeoJSON point collections.

use std::collections::BTreeMap;

use serde_json::{json, Value};

use crate::analytics::ViolationBand;
use crate::grid::{BusId, Coord, Network};

pub fn network_coords(network: &Network) -> BTreeMap<BusId, Coord> {
    network
        .buses
        .iter()
        .filter_map(|b| b.coord.map(|c| (b.id, c)))
        .collect()
}

/// One Point feature per bus with known coordinates. Buses without
/// coordinates are counted under `metadata.omitted`. Object keys come out
/// sorted, so identical inputs serialize identically.
pub fn export_geojson(
    bus_ids: &[BusId],
    v_mag: &[f64],
    coords: &BTreeMap<BusId, Coord>,
    band: &ViolationBand,
) -> Value {
    let mut features = Vec::new();
    let mut omitted = 0usize;
    for (&bus, &v) in bus_ids.iter().zip(v_mag) {
        match coords.get(&bus) {
            Some(c) => features.push(json!({
                "type": "Feature",
                "geometry": {"type": "Point", "coordinates": [c.lon, c.lat]},
                "properties": {"bus_id": bus, "v_pu": v, "violating": band.violates(v)},
            })),
            None => omitted += 1,
        }
    }
    json!({
        "type": "FeatureCollection",
        "metadata": {"omitted": omitted, "band": [band.lower, band.upper]},
        "features": features,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_violating_bus() {
        let coords = BTreeMap::from([(
            1,
            Coord {
                lat: 30.27,
                lon: -97.74,
            },
        )]);
        let g = export_geojson(&[1], &[0.93], &coords, &ViolationBand::default());
        let f = &g["features"][0];
        assert_eq!(g["features"].as_array().unwrap().len(), 1);
        assert_eq!(f["properties"]["violating"], true);
        assert_eq!(f["properties"]["v_pu"], 0.93);
        assert_eq!(f["geometry"]["coordinates"], json!([-97.74, 30.27]));
        assert_eq!(g["metadata"]["omitted"], 0);
    }

    #[test]
    fn no_coordinates_gives_empty_collection() {
        let g = export_geojson(&[1, 2], &[1.0, 1.0], &BTreeMap::new(), &ViolationBand::default());
        assert!(g["features"].as_array().unwrap().is_empty());
        assert_eq!(g["metadata"]["omitted"], 2);
    }

    #[test]
    fn collapsed_export_all_violating() {
        let coords: BTreeMap<_, _> = (0..4)
            .map(|i| {
                (
                    i,
                    Coord {
                        lat: 30.0,
                        lon: -97.0 + i as f64,
                    },
                )
            })
            .collect();
        let g = export_geojson(&[0, 1, 2, 3], &[0.01; 4], &coords, &ViolationBand::default());
        for f in g["features"].as_array().unwrap() {
            assert_eq!(f["properties"]["v_pu"], 0.01);
            assert_eq!(f["properties"]["violating"], true);
        }
    }
}

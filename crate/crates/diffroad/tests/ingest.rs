use diffroad::ingest::{
    build_scenario, clip_to_window, overpass_query, parse_geojson, parse_overpass, Bbox, Built, CenterSpec,
    IngestError, OverpassClient, ScenarioShape,
};
use diffroad_core::geo::{denormalize, ScenarioType, ShapePoint};
use diffroad_core::geometry::{polyline_length, Point2};
use proptest::prelude::*;

fn fixture(name: &str) -> String {
    std::fs::read_to_string(format!("{}/tests/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

fn window() -> Bbox {
    Bbox::around(ShapePoint::new(1.3, 103.85).unwrap(), 200.0)
}

fn classes() -> Vec<String> {
    vec!["primary".into(), "residential".into()]
}

fn shape() -> ScenarioShape {
    ScenarioShape {
        roads: 4,
        points: 16,
        half_extent_m: 200.0,
    }
}

#[test]
fn geojson_fixture_yields_roads_and_centers() {
    let input = parse_geojson(&fixture("roads.geojson")).unwrap();
    assert_eq!(input.roads.len(), 4);
    assert_eq!(input.centers.len(), 3);
    assert_eq!(input.roads[0].id, "w1");
    assert_eq!(input.roads[0].highway_class, "primary");
    assert_eq!(input.centers[1].scenario_type, ScenarioType::Roundabout);
    assert!((input.centers[0].lng - 103.85).abs() < 1e-12);
}

#[test]
fn geojson_fixture_builds_two_scenarios() {
    let input = parse_geojson(&fixture("roads.geojson")).unwrap();
    let built: Vec<Built> = input
        .centers
        .iter()
        .map(|c| build_scenario(&input.roads, c, &shape()).unwrap())
        .collect();
    let scenarios: Vec<_> = built
        .iter()
        .filter_map(|b| match b {
            Built::Scenario(s) => Some(s),
            Built::Empty => None,
        })
        .collect();
    assert_eq!(scenarios.len(), 2);
    assert_eq!(built[2], Built::Empty);
    let cross = scenarios[0];
    assert_eq!(cross.valid_roads(), 2);
    assert!(cross.is_well_formed());
    // both arms of the cross are clipped to the 400 m window
    let m = denormalize(cross).unwrap();
    let lengths: Vec<f64> = m.roads.iter().map(|r| polyline_length(r)).collect();
    assert!(lengths.iter().all(|l| (l - 400.0).abs() < 1.0), "{lengths:?}");
}

#[test]
fn geojson_errors() {
    assert!(matches!(parse_geojson("{}"), Err(IngestError::Parse { .. })));
    assert!(matches!(parse_geojson("not json"), Err(IngestError::Parse { .. })));
    let bad_type = r#"{"type":"FeatureCollection","features":[{"type":"Feature","properties":{"scenario_type":"bridge"},"geometry":{"type":"Point","coordinates":[1,2]}}]}"#;
    assert!(matches!(parse_geojson(bad_type), Err(IngestError::Parse { element, .. }) if element.contains("scenario_type")));
}

#[test]
fn overpass_keeps_requested_classes() {
    let roads = parse_overpass(&fixture("overpass.json"), &window(), &classes()).unwrap();
    let ids: Vec<&str> = roads.iter().map(|r| r.id.as_str()).collect();
    assert_eq!(ids, ["way/101", "way/102"]);
    let all = parse_overpass(&fixture("overpass.json"), &window(), &[]).unwrap();
    assert_eq!(all.len(), 3);
}

#[test]
fn overpass_ways_are_trimmed_to_the_window() {
    let bbox = window();
    let roads = parse_overpass(&fixture("overpass.json"), &bbox, &classes()).unwrap();
    for r in &roads {
        let outside = r.points.iter().filter(|p| !bbox.contains(**p)).count();
        assert!(outside <= 2, "{} keeps {outside} outside points", r.id);
        assert!(r.points.iter().any(|p| bbox.contains(*p)));
    }
    // way 101 spans 21 vertices 111 m apart; 3 lie inside plus one on each side
    assert_eq!(roads[0].points.len(), 5);
}

#[test]
fn overpass_malformed_response() {
    assert!(matches!(parse_overpass("{\"elements\": 3}", &window(), &[]), Err(IngestError::Parse { .. })));
    let no_geom = r#"{"elements":[{"type":"way","id":5,"tags":{"highway":"primary"}}]}"#;
    assert!(matches!(parse_overpass(no_geom, &window(), &[]), Err(IngestError::Parse { element, .. }) if element.ends_with("geometry")));
}

#[test]
fn empty_bbox_returns_no_roads_without_a_request() {
    let client = OverpassClient {
        endpoint: "http://127.0.0.1:9/unreachable".into(),
        ..Default::default()
    };
    let zero = Bbox {
        south: 1.3,
        west: 103.85,
        north: 1.3,
        east: 103.85,
    };
    assert!(client.fetch_osm_roads(&zero, &classes()).unwrap().is_empty());
    let inverted = Bbox {
        south: 2.0,
        west: 0.0,
        north: 1.0,
        east: 1.0,
    };
    assert!(matches!(client.fetch_osm_roads(&inverted, &[]), Err(IngestError::Bbox(_))));
}

#[test]
fn offline_uses_the_cache_or_fails() {
    let dir = tempfile::tempdir().unwrap();
    let client = OverpassClient {
        cache_dir: Some(dir.path().to_path_buf()),
        offline: true,
        ..Default::default()
    };
    let bbox = window();
    let err = client.fetch_osm_roads(&bbox, &classes()).unwrap_err();
    let key = client.cache_key(&overpass_query(&bbox, &classes()));
    assert_eq!(err, IngestError::OfflineMiss { key: key.clone() });
    std::fs::write(dir.path().join(format!("{key}.json")), fixture("overpass.json")).unwrap();
    assert_eq!(client.fetch_osm_roads(&bbox, &classes()).unwrap().len(), 2);
}

#[test]
fn unreachable_endpoint_is_a_network_error() {
    let client = OverpassClient {
        endpoint: "http://127.0.0.1:9/api".into(),
        timeout: std::time::Duration::from_secs(2),
        ..Default::default()
    };
    assert!(matches!(client.fetch_osm_roads(&window(), &[]), Err(IngestError::Network { .. })));
}

#[test]
fn cache_key_depends_on_endpoint_and_query() {
    let a = OverpassClient::default();
    let b = OverpassClient {
        endpoint: "https://example.org/api".into(),
        ..Default::default()
    };
    let q = overpass_query(&window(), &[]);
    assert_eq!(a.cache_key(&q), a.cache_key(&q));
    assert_ne!(a.cache_key(&q), b.cache_key(&q));
    assert_ne!(a.cache_key(&q), a.cache_key(&overpass_query(&window(), &classes())));
    assert_eq!(a.cache_key(&q).len(), 64);
}

#[test]
fn clip_fixtures() {
    let inside = vec![[0.0, 0.0], [5.0, 5.0]];
    assert_eq!(clip_to_window(&inside, 10.0).unwrap(), inside);
    let through = vec![[-20.0, 0.0], [20.0, 0.0]];
    assert_eq!(clip_to_window(&through, 10.0).unwrap(), vec![[-10.0, 0.0], [10.0, 0.0]]);
    assert!(clip_to_window(&[[20.0, 20.0], [30.0, 20.0]], 10.0).is_none());
    // leaves and re-enters: the longer piece wins
    let wander = vec![[0.0, 0.0], [0.0, 20.0], [5.0, 20.0], [5.0, -9.0]];
    assert_eq!(clip_to_window(&wander, 10.0).unwrap(), vec![[5.0, 10.0], [5.0, -9.0]]);
}

#[test]
fn center_spec_validates_coordinates() {
    let c = CenterSpec {
        id: "x".into(),
        lat: 95.0,
        lng: 0.0,
        scenario_type: ScenarioType::Pudo,
    };
    assert!(c.point().is_err());
}

proptest! {
    #[test]
    fn clipped_pieces_stay_in_the_window(pts in prop::collection::vec((-30.0f64..30.0, -30.0f64..30.0), 2..12)) {
        let line: Vec<Point2> = pts.into_iter().map(|(x, y)| [x, y]).collect();
        if let Some(piece) = clip_to_window(&line, 10.0) {
            prop_assert!(piece.len() >= 2);
            for p in &piece {
                prop_assert!(p[0].abs() <= 10.0 + 1e-9 && p[1].abs() <= 10.0 + 1e-9);
            }
            prop_assert!(polyline_length(&piece) <= polyline_length(&line) + 1e-9);
        }
    }

    #[test]
    fn bbox_around_contains_its_center(lat in -60.0f64..60.0, lng in -179.0f64..179.0, h in 10.0f64..2000.0) {
        let c = ShapePoint::new(lat, lng).unwrap();
        let b = Bbox::around(c, h);
        prop_assert!(b.validate().is_ok());
        prop_assert!(b.contains(c));
        prop_assert!(!b.is_empty());
    }
}

use anticipation::builders::{build_anticipate_avoid, build_rps, build_rps_mem};
use anticipation::error::Error;
use anticipation::format::*;

#[test]
fn builders_round_trip() {
    for g in [build_rps(), build_rps_mem(), build_anticipate_avoid(10).unwrap()] {
        let back = load_game(&save_game(&g)).unwrap();
        assert_eq!(back, g);
    }
}

#[test]
fn renormalizes_within_tolerance_only() {
    let text = |p: &str| {
        format!(
            r#"{{"states":["t"],"p1_actions":["a"],"p2_actions":["x","y"],
            "policies":[{{"name":"p","choice":{{"t":{{"x":{p},"y":0.5}}}}}}],"switch":[[1.0]]}}"#
        )
    };
    let g = load_game(&text("0.5000000001")).unwrap();
    assert!((g.policies[0].prob(0, 0) + g.policies[0].prob(0, 1) - 1.0).abs() < 1e-15);
    assert!(matches!(load_game(&text("0.4")), Err(Error::InvalidGame(_))));
}

#[test]
fn reports_parse_position_and_bad_names() {
    match load_game("{\n  \"states\": [,]\n}") {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
        other => panic!("{other:?}"),
    }
    let bad = r#"{"states":["t"],"p1_actions":["a"],"p2_actions":["x"],
        "policies":[{"name":"p","choice":{"u":{"x":1.0}}}],"switch":[[1.0]]}"#;
    assert!(matches!(load_game(bad), Err(Error::InvalidGame(_))));
}

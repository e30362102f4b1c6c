use oedtomo::datagen::{gen_pentagons, TrainingSet};
use oedtomo::io::{
    format_g17, format_short, parse_tomoset, pgm_to_string, read_tomoset, tomoset_to_string, write_pgm, write_tomoset,
    CsvTable, FormatError,
};
use oedtomo::{Grid, Image};
use proptest::prelude::*;

#[test]
fn tomoset_round_trip_is_exact() {
    let ts = gen_pentagons(3, Grid::square(12).unwrap(), 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pent.tomoset");
    write_tomoset(&path, &ts).unwrap();
    let back = read_tomoset(&path).unwrap();
    assert_eq!(back.grid(), ts.grid());
    assert_eq!(back.len(), 3);
    for (a, b) in ts.images().iter().zip(back.images()) {
        assert_eq!(a.values(), b.values());
    }
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("TOMOSET 1 3 12 12\n"));
    assert_eq!(text.lines().count(), 1 + 3 * 12);
}

#[test]
fn tomoset_parse_errors() {
    assert!(matches!(parse_tomoset("", "x"), Err(FormatError::Parse { line: 1, .. })));
    assert!(matches!(parse_tomoset("TOMOSET 2 1 1 1\n0\n", "x"), Err(FormatError::Parse { line: 1, .. })));
    assert!(matches!(parse_tomoset("TOMOSET 1 1 2 2\n0 1\n0\n", "x"), Err(FormatError::Parse { line: 3, .. })));
    assert!(matches!(parse_tomoset("TOMOSET 1 1 2 2\n0 1\n0 z\n", "x"), Err(FormatError::Parse { line: 3, .. })));
    assert!(matches!(parse_tomoset("TOMOSET 1 1 2 2\n0 1\n", "x"), Err(FormatError::Parse { .. })));
    assert!(matches!(parse_tomoset("TOMOSET 1 1 2 2\n0 1\n1 0\n5\n", "x"), Err(FormatError::Parse { line: 4, .. })));
    assert!(matches!(read_tomoset(std::path::Path::new("/nonexistent/a.tomoset")), Err(FormatError::Io { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn g17_round_trips(x in any::<f64>().prop_filter("finite", |v| v.is_finite())) {
        prop_assert_eq!(format_g17(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
        prop_assert_eq!(format_short(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
    }

    #[test]
    fn tomoset_text_round_trips(values in proptest::collection::vec(-1e3f64..1e3, 9)) {
        let g = Grid::square(3).unwrap();
        let ts = TrainingSet::new("t", 0, g, vec![Image::new(g, values.clone()).unwrap()]).unwrap();
        let back = parse_tomoset(&tomoset_to_string(&ts), "t").unwrap();
        prop_assert_eq!(back.images()[0].values(), &values[..]);
    }
}

#[test]
fn csv_has_header_and_rows() {
    let mut t = CsvTable::new(&["alpha", "mse_per_pixel"]);
    t.push(vec!["0.1".into(), "2".into()]);
    t.push(vec!["1".into(), "3".into()]);
    assert_eq!(t.to_csv_string(), "alpha,mse_per_pixel\n0.1,2\n1,3\n");
}

#[test]
fn pgm_scales_to_full_range() {
    let (body, lo, hi) = pgm_to_string(2, 2, &[1.0, 2.0, 3.0, 5.0]);
    assert_eq!((lo, hi), (1.0, 5.0));
    assert_eq!(body, "P2\n2 2\n255\n0 64\n128 255\n");
    let (flat, _, _) = pgm_to_string(2, 1, &[4.0, 4.0]);
    assert_eq!(flat, "P2\n2 1\n255\n0 0\n");
}

#[test]
fn pgm_writes_sidecar_range() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("img.pgm");
    write_pgm(&path, 2, 1, &[-0.5, 0.25]).unwrap();
    let meta = std::fs::read_to_string(dir.path().join("img.pgm.meta")).unwrap();
    assert_eq!(meta, "min = -0.5\nmax = 0.25\n");
}

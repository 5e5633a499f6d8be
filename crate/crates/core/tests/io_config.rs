use std::fs;

use nlpf::config::{default_1d, RunConfig};
use nlpf::grid::Grid;
use nlpf::io::*;
use nlpf::solver::{self, State};
use nlpf::Error;

fn state(m: usize, d: usize, t: f64) -> State {
    let mut s = State::new((0..m).map(|i| 1.0 + i as f64 / 7.0).collect(), (0..m * d).map(|k| k as f64 / (m * d) as f64).collect());
    s.t = t;
    s
}

#[test]
fn snapshot_layout_is_component_major() {
    let g = Grid::build(2, &[1.0, 1.0], &[3, 2]).unwrap();
    let s = state(6, 2, 0.25);
    let bytes = encode_snapshot(&g, 2, &s);
    assert_eq!(&bytes[..5], b"NLPF1");
    assert_eq!(bytes[5..8], [1, 2, 2]);
    assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 3);
    assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 2);
    assert_eq!(f64::from_le_bytes(bytes[24..32].try_into().unwrap()), 0.25);
    let word = |k: usize| f64::from_le_bytes(bytes[32 + 8 * k..40 + 8 * k].try_into().unwrap());
    // θ over 6 cells, then component 0 of χ over all cells.
    assert_eq!(word(5), s.theta[5]);
    assert_eq!(word(6), s.chi[0]);
    assert_eq!(word(7), s.chi[2]);
    assert_eq!(word(12), s.chi[1]);
    assert_eq!(bytes.len(), 32 + 8 * 18);
    let back = decode_snapshot("x".as_ref(), &bytes).unwrap();
    assert_eq!(back.state, s);
}

#[test]
fn trajectory_errors_name_the_file() {
    let tmp = tempfile::tempdir().unwrap();
    let g = Grid::build(1, &[1.0], &[4]).unwrap();
    for k in 0..3 {
        write_snapshot(&tmp.path().join(snapshot_name(k)), &g, 1, &state(4, 1, k as f64)).unwrap();
    }
    assert_eq!(read_trajectory(tmp.path(), &g, 1).unwrap().len(), 3);

    let other = Grid::build(1, &[1.0], &[5]).unwrap();
    assert!(matches!(read_trajectory(tmp.path(), &other, 1), Err(Error::Format { .. })));

    write_snapshot(&tmp.path().join(snapshot_name(2)), &g, 1, &state(4, 1, 0.5)).unwrap();
    let err = read_trajectory(tmp.path(), &g, 1).unwrap_err().to_string();
    assert!(err.contains("snap_000002.bin") && err.contains("increasing"), "{err}");

    fs::remove_file(tmp.path().join(snapshot_name(1))).unwrap();
    let err = read_trajectory(tmp.path(), &g, 1).unwrap_err().to_string();
    assert!(err.contains("snap_000001.bin"), "{err}");

    let empty = tempfile::tempdir().unwrap();
    assert!(read_trajectory(empty.path(), &g, 1).unwrap_err().is_validation());
}

#[test]
fn records_round_trip_through_csv() {
    let b = default_1d(6).build().unwrap();
    let mut cfg = b.solver;
    cfg.horizon = 0.05;
    cfg.dt = 0.01;
    let tr = solver::run(&b.system, b.init.clone(), &cfg).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("records.csv");
    write_records(&path, &tr.records).unwrap();
    let back = read_records(&path).unwrap();
    assert_eq!(back.len(), tr.records.len());
    for (row, r) in back.iter().zip(&tr.records) {
        assert_eq!(row[0], r.t);
        assert_eq!(row[1], r.total_energy);
        assert_eq!(row[7], r.selection_margin);
    }
    let text = fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().next().unwrap().split(',').count(), 8);
    fs::write(&path, text.replacen("t,", "time,", 1)).unwrap();
    assert!(read_records(&path).is_err());
}

#[test]
fn config_round_trip_and_rejections() {
    let c = default_1d(12);
    let back = RunConfig::from_toml(&c.to_toml().unwrap()).unwrap();
    assert_eq!(back.to_toml().unwrap(), c.to_toml().unwrap());
    assert!(matches!(RunConfig::from_toml("grid.cellz = [3]"), Err(Error::Config(_))));
    assert!(matches!(RunConfig::from_toml("solver.rho = \"often\""), Err(Error::Config(_))));
    let b = c.build().unwrap();
    let resolved = c.resolved(b.solver.rho);
    assert!(resolved.to_toml().unwrap().contains(&format!("rho = {:?}", b.solver.rho)));
}

#[test]
fn every_shipped_config_parses() {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs");
    let mut count = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let text = fs::read_to_string(&path).unwrap();
        RunConfig::from_toml(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        count += 1;
    }
    assert!(count >= 6);
}

#[test]
fn float_format_is_round_trip_exact() {
    for v in [0.1, -1.0 / 3.0, 1e-300, 6.02e23] {
        assert_eq!(format_float(v).parse::<f64>().unwrap(), v);
    }
}

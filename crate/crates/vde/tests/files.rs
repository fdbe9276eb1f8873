use std::fs;

use lvde::io::{read_frame_dir, read_lvt, read_video, write_frame_dir, write_lvt};
use lvde::{evaluate, FrameSequence, Plugins, VdeConfig, VdeError, VdeReport};

fn video(c: usize) -> FrameSequence {
    // Multiples of 1/255 survive both 8-bit and f32 storage exactly.
    let data = (0..6 * 5 * 4 * c).map(|i| ((i * 31) % 256) as f64 / 255.0).collect();
    FrameSequence::new(6, 5, 4, c, data, 24.0).unwrap()
}

#[test]
fn pnm_directory_round_trip() {
    for c in [1, 3] {
        let dir = tempfile::tempdir().unwrap();
        let v = video(c);
        let paths = write_frame_dir(&v, dir.path()).unwrap();
        assert_eq!(paths.len(), 6);
        let back = read_frame_dir(dir.path()).unwrap();
        assert_eq!(back.len(), 6);
        assert_eq!((back.height(), back.width(), back.channels()), (5, 4, c));
        for (a, b) in back.data().iter().zip(v.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn frames_are_read_in_lexicographic_order() {
    let dir = tempfile::tempdir().unwrap();
    let v = video(1);
    write_frame_dir(&v, dir.path()).unwrap();
    fs::rename(dir.path().join("frame_00000.pgm"), dir.path().join("z_last.pgm")).unwrap();
    fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
    let back = read_frame_dir(dir.path()).unwrap();
    let first = &v.data()[..20];
    assert_eq!(&back.data()[5 * 20..], first);
}

#[test]
fn unreadable_frame_is_named() {
    let dir = tempfile::tempdir().unwrap();
    write_frame_dir(&video(1), dir.path()).unwrap();
    let bad = dir.path().join("frame_00003.pgm");
    fs::write(&bad, b"P5\n2 2\n255\n").unwrap();
    match read_frame_dir(dir.path()) {
        Err(VdeError::File { path, .. }) => assert_eq!(path, bad),
        other => panic!("expected file error, got {other:?}"),
    }
    assert!(read_frame_dir(&dir.path().join("missing")).unwrap_err().to_string().contains("missing"));
}

#[test]
fn mixed_frame_sizes_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_frame_dir(&video(1), dir.path()).unwrap();
    let other = FrameSequence::new(1, 3, 3, 1, vec![0.5; 9], 24.0).unwrap();
    let sub = tempfile::tempdir().unwrap();
    let p = write_frame_dir(&other, sub.path()).unwrap();
    fs::copy(&p[0], dir.path().join("frame_99999.pgm")).unwrap();
    assert!(matches!(read_frame_dir(dir.path()), Err(VdeError::File { .. })));
}

#[test]
fn lvt_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.lvt");
    let v = video(3);
    write_lvt(&v, &path).unwrap();
    let stored: Vec<f64> = v.data().iter().map(|x| *x as f32 as f64).collect();
    let expected = FrameSequence::new(6, 5, 4, 3, stored, 24.0).unwrap();
    assert_eq!(read_lvt(&path).unwrap(), expected);
    assert_eq!(read_video(&path).unwrap(), expected);
    fs::write(&path, b"LVTF").unwrap();
    assert!(matches!(read_lvt(&path), Err(VdeError::File { .. })));
}

#[test]
fn report_files_agree() {
    let mut data = video(3).data().to_vec();
    data.extend(video(3).data().iter().map(|v| v * 0.5));
    let v = FrameSequence::new(12, 5, 4, 3, data, 24.0).unwrap();
    let report = evaluate(&v, &VdeConfig::default(), &Plugins::default()).unwrap();

    let mut json = Vec::new();
    report.write_json(&mut json).unwrap();
    let back = VdeReport::from_json(&serde_json::from_slice(&json).unwrap()).unwrap();
    assert_eq!(back, report);

    let mut csv_bytes = Vec::new();
    report.write_csv(&mut csv_bytes).unwrap();
    let mut rdr = csv::Reader::from_reader(csv_bytes.as_slice());
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let kind = lvde::MetricKind::parse(&rec[0]).unwrap();
        let seg: usize = rec[1].parse().unwrap();
        let q: f64 = rec[2].parse().unwrap();
        assert_eq!(report.get(kind).q().unwrap()[seg - 1].to_bits(), q.to_bits());
        rows += 1;
    }
    assert_eq!(rows, 25);
}

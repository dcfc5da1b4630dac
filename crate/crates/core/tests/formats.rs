//! Byte-level checks of the feature containers the exporter produces.

use ilpc::features::{load_features, save_features, FeatureFormat, FeatureSet};
use ndarray::{array, Array2};
use std::fs;

fn npy_v1(descr: &str, shape: &str, body: &[u8]) -> Vec<u8> {
    let mut header = format!("{{'descr': '{descr}', 'fortran_order': False, 'shape': {shape}, }}");
    // Magic (6) + version (2) + length (2) + header + newline, padded to 64.
    while (10 + header.len() + 1) % 64 != 0 {
        header.push(' ');
    }
    header.push('\n');
    let mut out = b"\x93NUMPY\x01\x00".to_vec();
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(body);
    out
}

#[test]
fn hand_built_raw_container_loads() {
    let mut bytes = b"ILPC".to_vec();
    for word in [3u32, 2, 1] {
        bytes.extend_from_slice(&word.to_le_bytes());
    }
    for v in [0.5f32, -1.0, 2.25, 0.0, 1e-3, 7.0] {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    for l in [1i32, 0, 1] {
        bytes.extend_from_slice(&l.to_le_bytes());
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.f32");
    fs::write(&path, &bytes).unwrap();
    let fs_ = load_features(&path, FeatureFormat::RawF32).unwrap();
    assert_eq!((fs_.len(), fs_.dim()), (3, 2));
    assert_eq!(fs_.data()[[2, 0]], f64::from(1e-3f32));
    assert_eq!(fs_.data()[[1, 0]], 2.25);
    assert_eq!(fs_.labels(), Some(&[1, 0, 1][..]));

    // Saving reproduces the exact bytes.
    let again = dir.path().join("y.f32");
    save_features(&fs_, &again, FeatureFormat::RawF32).unwrap();
    assert_eq!(fs::read(&again).unwrap(), bytes);
}

#[test]
fn unlabeled_raw_container_has_no_label_block() {
    let fs_ = FeatureSet::new(array![[1.0, 2.0]], None, "t").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("u.f32");
    save_features(&fs_, &path, FeatureFormat::RawF32).unwrap();
    let bytes = fs::read(&path).unwrap();
    assert_eq!(bytes.len(), 16 + 8);
    assert_eq!(&bytes[12..16], &0u32.to_le_bytes());
}

#[test]
fn hand_built_npy_with_int64_labels_loads() {
    let mut body = Vec::new();
    for v in [1.5f32, 2.0, -3.0, 0.25, 8.0, 9.5] {
        body.extend_from_slice(&v.to_le_bytes());
    }
    let mut labels = Vec::new();
    for l in [2i64, 0] {
        labels.extend_from_slice(&l.to_le_bytes());
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("feats.npy");
    fs::write(&path, npy_v1("<f4", "(2, 3)", &body)).unwrap();
    fs::write(dir.path().join("feats.labels.npy"), npy_v1("<i8", "(2,)", &labels)).unwrap();
    let fs_ = load_features(&path, FeatureFormat::Npy).unwrap();
    assert_eq!(fs_.data(), &array![[1.5, 2.0, -3.0], [0.25, 8.0, 9.5]]);
    assert_eq!(fs_.labels(), Some(&[2, 0][..]));
    assert_eq!(fs_.class_count(), 3);
}

#[test]
fn exporter_sized_npy_round_trips() {
    let data = Array2::from_shape_fn((600, 640), |(i, j)| ((i * 640 + j) % 977) as f64 / 977.0);
    let fs_ = FeatureSet::new(data.clone(), None, "export").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("feats.npy");
    save_features(&fs_, &path, FeatureFormat::Npy).unwrap();
    let back = load_features(&path, FeatureFormat::Npy).unwrap();
    assert_eq!((back.len(), back.dim()), (600, 640));
    assert!(back.labels().is_none());
    assert_eq!(back.data(), &data);

    // The exporter writes float32; those load exactly too.
    let f32_path = dir.path().join("f.npy");
    let body: Vec<u8> = data.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
    fs::write(&f32_path, npy_v1("<f4", "(600, 640)", &body)).unwrap();
    let back = load_features(&f32_path, FeatureFormat::Npy).unwrap();
    assert_eq!(back.data(), &data.mapv(|v| f64::from(v as f32)));
}

#[test]
fn two_row_csv_example() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.csv");
    fs::write(&path, "0.0,1.0,0\n1.0,0.0,1").unwrap();
    let fs_ = load_features(&path, FeatureFormat::Csv).unwrap();
    assert_eq!((fs_.len(), fs_.dim()), (2, 2));
    assert_eq!(fs_.labels(), Some(&[0, 1][..]));

    let out = dir.path().join("b.csv");
    save_features(&fs_, &out, FeatureFormat::Csv).unwrap();
    assert_eq!(fs::read_to_string(&out).unwrap(), "#d=2,labeled=1\n0.0,1.0,0\n1.0,0.0,1\n");
}

#[test]
fn truncated_npy_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.npy");
    fs::write(&path, npy_v1("<f4", "(4, 4)", &[0u8; 12])).unwrap();
    assert!(load_features(&path, FeatureFormat::Npy).is_err());
}

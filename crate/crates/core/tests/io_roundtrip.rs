use equireg::io::{
    format_keypoints, parse_keypoints, read_dten, read_dten_array, read_keypoints, read_labels, write_dten,
    write_keypoints, write_labels, DtenArray,
};
use equireg::registration::LabelMap;
use equireg::{DType, Error, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;

#[test]
fn f32_tensor_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let t = Tensor::from_fn(&[2, 16, 16], |_| rng.gen_range(-1e3f32..1e3) * rng.gen_range(0.0f32..1e-3));
    let path = dir.path().join("t.dten");
    write_dten(&path, &t).unwrap();
    let back: Tensor<f32> = read_dten(&path).unwrap();
    assert_eq!(back.shape(), t.shape());
    assert!(t.data().iter().zip(back.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn header_layout() {
    let t = Tensor::new(vec![2, 3], vec![1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
    let bytes = DtenArray::from_tensor(&t).unwrap().encode();
    assert_eq!(&bytes[..4], b"DTEN");
    assert_eq!(bytes[5], DType::F64.code());
    assert_eq!(bytes[6], 2);
    assert_eq!(&bytes[7..15], &[2, 0, 0, 0, 3, 0, 0, 0]);
    assert_eq!(bytes.len(), 7 + 2 * 4 + 6 * 8);
    assert_eq!(&bytes[15..23], &1.0f64.to_le_bytes());
}

#[test]
fn labels_preserve_histogram() {
    let dir = tempfile::tempdir().unwrap();
    let m = LabelMap::from_fn(13, 7, |y, x| ((y * 7 + x) % 5) as u8);
    let path = dir.path().join("l.dten");
    write_labels(&path, &m).unwrap();
    let back = read_labels(&path).unwrap();
    assert_eq!(back, m);
    for l in 0..5 {
        assert_eq!(back.count(l), m.count(l));
    }
    assert_eq!(read_dten_array(&path).unwrap().dtype, DType::U8);
}

#[test]
fn hundred_keypoints_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pts: Vec<(f64, f64)> = (0..100).map(|_| (rng.gen_range(0.0..64.0), rng.gen_range(0.0..64.0))).collect();
    let path = dir.path().join("k.csv");
    write_keypoints(&path, &pts).unwrap();
    assert_eq!(read_keypoints(&path).unwrap(), pts);
}

#[test]
fn keypoint_parse_error_names_line() {
    let err = parse_keypoints("1,2\n3;4\n", Path::new("k.csv")).unwrap_err();
    assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
}

#[test]
fn corrupt_files_are_rejected() {
    let t = Tensor::new(vec![3], vec![1.0f32, 2.0, 3.0]).unwrap();
    let good = DtenArray::from_tensor(&t).unwrap().encode();
    let mut magic = good.clone();
    magic[0] = b'X';
    assert_eq!(DtenArray::decode(&magic).unwrap_err().code(), 1);
    assert_eq!(DtenArray::decode(&good[..good.len() - 1]).unwrap_err().code(), 4);
    let mut extra = good.clone();
    extra.push(0);
    assert_eq!(DtenArray::decode(&extra).unwrap_err().code(), 7);
    let arr = DtenArray::decode(&good).unwrap();
    assert!(arr.to_tensor::<f64>().is_err());
    let nan = Tensor::new(vec![1], vec![f32::NAN]).unwrap();
    assert!(DtenArray::from_tensor(&nan).is_err());
}

#[test]
fn missing_file_is_io_error() {
    let err = read_dten::<f32>("/nonexistent/x.dten").unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
}

proptest! {
    #[test]
    fn f64_round_trip(values in prop::collection::vec(-1e300f64..1e300, 1..64)) {
        let n = values.len();
        let t = Tensor::new(vec![n], values).unwrap();
        let back: Tensor<f64> = DtenArray::decode(&DtenArray::from_tensor(&t).unwrap().encode()).unwrap().to_tensor().unwrap();
        prop_assert_eq!(back, t);
    }

    #[test]
    fn keypoint_text_round_trip(pts in prop::collection::vec((-1e6f64..1e6, -1e6f64..1e6), 0..20)) {
        let text = format_keypoints(&pts);
        prop_assert_eq!(parse_keypoints(&text, Path::new("p")).unwrap(), pts);
    }
}

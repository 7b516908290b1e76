use proptest::prelude::*;
use pvsnet::tensorcore::{ParamSet, Tensor};
use pvsnet::weights::{decode, encode, load_weights, save_weights, MAGIC};

fn params_from(shapes: &[Vec<usize>], values: &[f32]) -> ParamSet {
    let mut p = ParamSet::new();
    let mut it = values.iter().cycle();
    for (i, s) in shapes.iter().enumerate() {
        let n: usize = s.iter().product();
        let data: Vec<f32> = (0..n).map(|_| *it.next().unwrap()).collect();
        p.insert(format!("layer{i}.w"), Tensor::new(s.clone(), data).unwrap());
    }
    p
}

fn bits(p: &ParamSet) -> Vec<(String, Vec<usize>, Vec<u32>)> {
    p.iter().map(|(n, t)| (n.to_string(), t.shape().to_vec(), t.data().iter().map(|v| v.to_bits()).collect())).collect()
}

proptest! {
    #[test]
    fn round_trip_is_bit_exact(
        shapes in prop::collection::vec(prop::collection::vec(1usize..5, 1..4), 0..6),
        values in prop::collection::vec(any::<f32>(), 1..64),
    ) {
        let p = params_from(&shapes, &values);
        let q = decode(&encode(&p)).unwrap();
        prop_assert_eq!(bits(&p), bits(&q));
    }

    #[test]
    fn every_truncation_is_rejected(values in prop::collection::vec(-1.0f32..1.0, 1..20), cut in 0.0f64..1.0) {
        let p = params_from(&[vec![2, 3], vec![4]], &values);
        let buf = encode(&p);
        let n = ((buf.len() as f64) * cut) as usize;
        prop_assert!(decode(&buf[..n.min(buf.len() - 1)]).is_err());
    }
}

#[test]
fn empty_set_is_a_valid_file() {
    let buf = encode(&ParamSet::new());
    assert_eq!(&buf[..4], MAGIC);
    assert!(decode(&buf).unwrap().is_empty());
}

#[test]
fn file_round_trip_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.vfw");
    let p = params_from(&[vec![3, 3], vec![1]], &[0.5, -0.0, f32::MIN_POSITIVE, 7.25]);
    save_weights(&p, &path).unwrap();
    assert_eq!(bits(&load_weights(&path).unwrap()), bits(&p));
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[0] = b'X';
    std::fs::write(&path, &bytes).unwrap();
    assert!(load_weights(&path).is_err());
    assert!(load_weights(&dir.path().join("missing.vfw")).unwrap_err().is_io());
}

//! Blob generation and CSV loading.

use ist::data::{gen_blobs, load_csv, parse_csv, Split};

#[test]
fn blobs_regenerate_byte_identically() {
    let a = gen_blobs(10, 64, 1200, 1.0, 7).unwrap();
    let b = gen_blobs(10, 64, 1200, 1.0, 7).unwrap();
    assert_eq!(a.to_csv_string(), b.to_csv_string());
    assert_eq!(a.len(), 12_000);
    assert_eq!(a.indices(Split::Train).len(), 9600);
}

#[test]
fn class_means_are_pairwise_distinct() {
    let d = gen_blobs(5, 4, 200, 0.5, 3).unwrap();
    let mut means = vec![vec![0.0; 4]; 5];
    let mut counts = vec![0.0; 5];
    for (r, &label) in d.labels().iter().enumerate() {
        for (m, v) in means[label].iter_mut().zip(d.features().row(r)) {
            *m += v;
        }
        counts[label] += 1.0;
    }
    for (m, c) in means.iter_mut().zip(&counts) {
        m.iter_mut().for_each(|v| *v /= c);
    }
    for i in 0..5 {
        for j in i + 1..5 {
            let dist: f64 = means[i].iter().zip(&means[j]).map(|(a, b)| (a - b).powi(2)).sum();
            assert!(dist > 0.0);
        }
    }
}

#[test]
fn splits_do_not_overlap() {
    let d = gen_blobs(3, 2, 17, 1.0, 0).unwrap();
    let train = d.indices(Split::Train);
    let test = d.indices(Split::Test);
    assert_eq!(train.len() + test.len(), d.len());
    assert!(train.iter().all(|i| !test.contains(i)));
}

#[test]
fn csv_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    let d = gen_blobs(4, 3, 5, 1.0, 9).unwrap();
    d.save_csv(&path).unwrap();
    let back = load_csv(&path).unwrap();
    assert_eq!(back.features(), d.features());
    assert_eq!(back.labels(), d.labels());
    assert!(load_csv(&dir.path().join("missing.csv")).is_err());
}

#[test]
fn parse_errors_name_the_line() {
    let err = parse_csv("x0,label\n1.0,0\n2.0,1\nnope,0\n").unwrap_err();
    assert!(err.to_string().contains("line 4"), "{err}");
    let ok = parse_csv("1.5,0\n-2.5,1\n").unwrap();
    assert_eq!(ok.len(), 2);
}

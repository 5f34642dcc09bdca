mod common;

use std::f64::consts::PI;
use std::fs;

use common::{max_abs, rng};
use nalgebra::DMatrix;
use rand::Rng;
use unitary_core::data::{fft2_orthonormal, load_idx, preprocess, write_idx, RawDataset};
use unitary_core::{Error, ParseErrorKind};

fn naive_dft(img: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let (h, w) = img.shape();
    let scale = 1.0 / ((h * w) as f64).sqrt();
    let mut re = DMatrix::zeros(h, w);
    let mut im = DMatrix::zeros(h, w);
    for u in 0..h {
        for v in 0..w {
            let (mut sr, mut si) = (0.0, 0.0);
            for r in 0..h {
                for c in 0..w {
                    let ang = -2.0 * PI * ((u * r) as f64 / h as f64 + (v * c) as f64 / w as f64);
                    sr += img[(r, c)] * ang.cos();
                    si += img[(r, c)] * ang.sin();
                }
            }
            re[(u, v)] = sr * scale;
            im[(u, v)] = si * scale;
        }
    }
    (re, im)
}

fn fixture() -> RawDataset {
    let mut pixels: Vec<u8> = (0..=255u8).cycle().take(2 * 28 * 28).collect();
    pixels[0] = 0;
    pixels[28 * 28] = 255;
    RawDataset {
        rows: 28,
        cols: 28,
        pixels,
        labels: vec![7, 0],
    }
}

#[test]
fn fft_matches_naive_dft() {
    let mut r = rng(20);
    for _ in 0..5 {
        let img = DMatrix::from_fn(8, 8, |_, _| r.random_range(0.0..1.0));
        let (re, im) = fft2_orthonormal(&img);
        let (ore, oim) = naive_dft(&img);
        assert!(max_abs(&re, &ore) <= 1e-10);
        assert!(max_abs(&im, &oim) <= 1e-10);
    }
}

#[test]
fn fft_of_real_image_is_hermitian_and_norm_preserving() {
    let mut r = rng(21);
    let n = 16;
    let img = DMatrix::from_fn(n, n, |_, _| r.random_range(0.0..1.0));
    let (re, im) = fft2_orthonormal(&img);
    for u in 0..n {
        for v in 0..n {
            let (cu, cv) = ((n - u) % n, (n - v) % n);
            assert!((re[(u, v)] - re[(cu, cv)]).abs() <= 1e-12);
            assert!((im[(u, v)] + im[(cu, cv)]).abs() <= 1e-12);
        }
    }
    let energy = re.norm_squared() + im.norm_squared();
    assert!((energy - img.norm_squared()).abs() <= 1e-10 * energy);
}

#[test]
fn idx_fixture_round_trips_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let (ip, lp) = (dir.path().join("img"), dir.path().join("lab"));
    let raw = fixture();
    write_idx(&ip, &lp, &raw).unwrap();
    let back = load_idx(&ip, &lp).unwrap();
    assert_eq!(back.rows, 28);
    assert_eq!(back.cols, 28);
    assert_eq!(back.pixels, raw.pixels);
    assert_eq!(back.labels, raw.labels);
}

#[test]
fn gzip_input_is_accepted() {
    use flate2::{write::GzEncoder, Compression};
    use std::io::Write;
    let dir = tempfile::tempdir().unwrap();
    let (ip, lp) = (dir.path().join("img"), dir.path().join("lab"));
    let raw = fixture();
    write_idx(&ip, &lp, &raw).unwrap();
    let gz = dir.path().join("img.gz");
    let mut enc = GzEncoder::new(Vec::new(), Compression::default());
    enc.write_all(&fs::read(&ip).unwrap()).unwrap();
    fs::write(&gz, enc.finish().unwrap()).unwrap();
    assert_eq!(load_idx(&gz, &lp).unwrap().pixels, raw.pixels);
}

#[test]
fn label_magic_in_image_slot_is_bad_magic() {
    let dir = tempfile::tempdir().unwrap();
    let (ip, lp) = (dir.path().join("img"), dir.path().join("lab"));
    write_idx(&ip, &lp, &fixture()).unwrap();
    match load_idx(&lp, &lp) {
        Err(Error::Parse {
            kind: ParseErrorKind::BadMagic { found, .. },
            offset,
            ..
        }) => {
            assert_eq!(found, 0x801);
            assert_eq!(offset, 0);
        }
        other => panic!("expected bad magic, got {other:?}"),
    }
}

#[test]
fn truncated_images_report_file_length() {
    let dir = tempfile::tempdir().unwrap();
    let (ip, lp) = (dir.path().join("img"), dir.path().join("lab"));
    write_idx(&ip, &lp, &fixture()).unwrap();
    let bytes = fs::read(&ip).unwrap();
    let cut = bytes.len() - 100;
    fs::write(&ip, &bytes[..cut]).unwrap();
    match load_idx(&ip, &lp) {
        Err(Error::Parse {
            kind: ParseErrorKind::Truncated,
            offset,
            path,
        }) => {
            assert_eq!(offset, cut as u64);
            assert_eq!(path, ip);
        }
        other => panic!("expected truncation, got {other:?}"),
    }
}

#[test]
fn missing_label_file_names_path() {
    let dir = tempfile::tempdir().unwrap();
    let (ip, lp) = (dir.path().join("img"), dir.path().join("lab"));
    write_idx(&ip, &lp, &fixture()).unwrap();
    fs::remove_file(&lp).unwrap();
    let err = load_idx(&ip, &lp).unwrap_err();
    assert!(err.to_string().contains(&*lp.to_string_lossy()));
}

#[test]
fn full_size_preprocess_is_plain_fft() {
    let raw = fixture();
    let pre = preprocess(&raw, 28).unwrap();
    let img = DMatrix::from_fn(28, 28, |r, c| raw.image(1)[r * 28 + c] as f64 / 255.0);
    let (re, im) = fft2_orthonormal(&img);
    assert!(max_abs(&pre.maps.re.sample(1).into_owned(), &re) == 0.0);
    assert!(max_abs(&pre.maps.im.sample(1).into_owned(), &im) == 0.0);
    assert_eq!(pre.labels, vec![7, 0]);
}

#[test]
fn downsampled_preprocess_keeps_mean_intensity() {
    let raw = fixture();
    let pre = preprocess(&raw, 16).unwrap();
    assert_eq!(pre.dim(), 16);
    // The DC coefficient is the sum divided by n, so it tracks the mean pixel.
    for i in 0..2 {
        let inner: Vec<f64> = (2..26)
            .flat_map(|r| (2..26).map(move |c| (r, c)))
            .map(|(r, c)| raw.image(i)[r * 28 + c] as f64 / 255.0)
            .collect();
        let mean = inner.iter().sum::<f64>() / inner.len() as f64;
        assert!((pre.maps.re.sample(i)[(0, 0)] / 16.0 - mean).abs() <= 1e-12);
    }
}

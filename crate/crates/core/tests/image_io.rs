use image::{GrayAlphaImage, GrayImage, ImageBuffer, Luma, Rgb, RgbImage, Rgba, RgbaImage};
use qmap_core::image::{load_image, save_image, Image};
use qmap_core::Error;

#[test]
fn black_png_loads_as_zeros() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("black.png");
    GrayImage::new(2, 2).save(&p).unwrap();
    let img = load_image(&p).unwrap();
    assert_eq!((img.height(), img.width(), img.channels()), (2, 2, 1));
    assert!(img.data().iter().all(|&v| v == 0.0));
}

#[test]
fn full_intensity_maps_to_one() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("white.png");
    GrayImage::from_pixel(1, 1, Luma([255])).save(&p).unwrap();
    assert_eq!(load_image(&p).unwrap().data(), &[1.0]);
    let p16 = dir.path().join("white16.png");
    ImageBuffer::<Luma<u16>, Vec<u16>>::from_pixel(1, 1, Luma([65535])).save(&p16).unwrap();
    assert_eq!(load_image(&p16).unwrap().data(), &[1.0]);
}

#[test]
fn gradient_round_trips_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("grad.png");
    let bytes: Vec<u8> = (0..27).map(|i| (i * 9) as u8).collect();
    RgbImage::from_raw(3, 3, bytes.clone()).unwrap().save(&p).unwrap();
    let img = load_image(&p).unwrap();
    for (v, b) in img.data().iter().zip(&bytes) {
        assert_eq!(*v, *b as f64 / 255.0);
    }
    let q = dir.path().join("again.png");
    save_image(&img, &q).unwrap();
    assert_eq!(load_image(&q).unwrap(), img);
}

#[test]
fn alpha_is_dropped_and_bmp_is_read() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("rgba.png");
    RgbaImage::from_pixel(2, 1, Rgba([10, 20, 30, 40])).save(&p).unwrap();
    let img = load_image(&p).unwrap();
    assert_eq!(img.channels(), 3);
    assert_eq!(img.data()[..3], [10.0 / 255.0, 20.0 / 255.0, 30.0 / 255.0]);

    let b = dir.path().join("x.bmp");
    RgbImage::from_pixel(3, 2, Rgb([200, 100, 0])).save(&b).unwrap();
    let img = load_image(&b).unwrap();
    assert_eq!((img.height(), img.width()), (2, 3));
    assert_eq!(img.get(1, 2, 0), 200.0 / 255.0);
}

#[test]
fn rejects_unsupported_and_unreadable_files() {
    let dir = tempfile::tempdir().unwrap();
    let la = dir.path().join("la.png");
    GrayAlphaImage::new(2, 2).save(&la).unwrap();
    assert!(matches!(load_image(&la), Err(Error::Format(_))));

    let junk = dir.path().join("junk.png");
    std::fs::write(&junk, b"\x89PNG\r\n\x1a\nnot really").unwrap();
    assert!(matches!(load_image(&junk), Err(Error::Decode { .. })));

    let missing = dir.path().join("missing.png");
    let err = load_image(&missing).unwrap_err();
    assert!(err.to_string().contains("missing.png"));

    let txt = dir.path().join("notes.txt");
    std::fs::write(&txt, "hello").unwrap();
    assert!(load_image(&txt).is_err());
}

#[test]
fn rgb_save_load_stays_within_quantization() {
    let img = Image::from_fn(4, 5, 3, |y, x, c| (y + x + c) as f64 / 10.0);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("rgb.png");
    save_image(&img, &p).unwrap();
    let back = load_image(&p).unwrap();
    for (a, b) in img.data().iter().zip(back.data()) {
        assert!((a - b).abs() <= 1.0 / 510.0 + 1e-12);
    }
}

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use fwd_core::ImageTensor;
use image::imageops::{self, FilterType};
use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn photo_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/data/photos")
}

pub fn load_photos() -> Vec<RgbImage> {
    let mut paths: Vec<_> = std::fs::read_dir(photo_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("png" | "jpg")))
        .collect();
    paths.sort();
    paths.iter().map(|p| image::open(p).unwrap().to_rgb8()).collect()
}

/// `n` square crops of random scale and position, resized to `size`.
pub fn photo_crops(n: usize, size: u32, seed: u64) -> Vec<RgbImage> {
    let photos = load_photos();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let photo = &photos[rng.random_range(0..photos.len())];
            let max_side = photo.width().min(photo.height()).min(3 * size);
            let side = rng.random_range(size..=max_side);
            let x = rng.random_range(0..=photo.width() - side);
            let y = rng.random_range(0..=photo.height() - side);
            let crop = imageops::crop_imm(photo, x, y, side, side).to_image();
            let mut out = imageops::resize(&crop, size, size, FilterType::Triangle);
            if rng.random_bool(0.5) {
                imageops::flip_horizontal_in_place(&mut out);
            }
            out
        })
        .collect()
}

pub fn to_tensor(img: &RgbImage) -> ImageTensor {
    ImageTensor::from_u8(img.as_raw(), img.height() as usize, img.width() as usize, 3).unwrap()
}

pub fn photo_tensors(n: usize, size: u32, seed: u64) -> Vec<ImageTensor> {
    photo_crops(n, size, seed).iter().map(to_tensor).collect()
}

/// Writes the crops as numbered PNG files.
pub fn write_photo_dataset(dir: &Path, n: usize, size: u32, seed: u64) {
    std::fs::create_dir_all(dir).unwrap();
    for (i, img) in photo_crops(n, size, seed).iter().enumerate() {
        img.save(dir.join(format!("img_{i:05}.png"))).unwrap();
    }
}

pub fn random_image(rng: &mut impl Rng, h: usize, w: usize, c: usize) -> ImageTensor {
    let data = (0..h * w * c).map(|_| rng.random::<f64>()).collect();
    ImageTensor::new(data, h, w, c).unwrap()
}

//! Data ingestion, preprocessing, augmentation and splitting.

pub mod augment;
pub mod manifest;
pub mod nifti;
pub mod preprocess;
pub mod split;
pub mod volume;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use augment::{augment_mri, augment_us, MriAugment, UsAugment};
pub use manifest::{load_image, load_volume, Modality, Pairing, Sample, SampleManifest, Split};
pub use nifti::{read_nifti, write_nifti, WriteOptions};
pub use preprocess::{preprocess_mri, preprocess_us};
pub use split::{class_weights, oversample_minority, stratified_split, Draw};
pub use volume::{read_rimg, read_rvol, write_rimg, write_rvol, Axis, Image, Volume};

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent RNG stream for one sample draw, derived from the run seed,
/// the patient, the epoch and the duplicate index. Results therefore do not
/// depend on loading order.
pub fn sample_rng(seed: u64, patient_id: &str, epoch: u64, copy: u32) -> ChaCha8Rng {
    let mut h = splitmix(seed);
    for part in [fnv1a(patient_id), epoch, copy as u64] {
        h = splitmix(h ^ part);
    }
    ChaCha8Rng::seed_from_u64(h)
}

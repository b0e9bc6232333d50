//! IDX image/label loading, downscaling, and intensity-to-latency encoding.
//!
//! Pixels map to spike times as t = tau_in * (1 - x): the brightest pixel
//! fires immediately, dim ones fire late, and fully black pixels never fire
//! at all. Training may add Gaussian jitter to the encoded times.

use crate::error::{Result, SnnError};
use crate::io::read_file;
use crate::network::SpikeVector;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use std::path::Path;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

/// Images normalized to [0, 1] plus their labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub images: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
    pub rows: usize,
    pub cols: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

struct IdxReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> IdxReader<'a> {
    fn u32_be(&mut self, what: &str) -> Result<u32> {
        if self.pos + 4 > self.bytes.len() {
            return Err(SnnError::IdxFormat {
                path: self.path.display().to_string(),
                problem: format!("file ends inside {what}"),
            });
        }
        let v = u32::from_be_bytes(self.bytes[self.pos..self.pos + 4].try_into().unwrap());
        self.pos += 4;
        Ok(v)
    }

    fn rest(&self) -> &'a [u8] {
        &self.bytes[self.pos..]
    }
}

/// Read an IDX image file (big-endian header: magic, count, rows, cols; then
/// one byte per pixel) and normalize intensities by 255.
pub fn read_idx_images(path: impl AsRef<Path>) -> Result<(Vec<Vec<f64>>, usize, usize)> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let mut r = IdxReader {
        bytes: &bytes,
        pos: 0,
        path,
    };
    let magic = r.u32_be("magic")?;
    if magic != IMAGE_MAGIC {
        return Err(SnnError::IdxBadMagic {
            path: path.display().to_string(),
            expected: IMAGE_MAGIC,
            got: magic,
        });
    }
    let count = r.u32_be("item count")? as usize;
    let rows = r.u32_be("row count")? as usize;
    let cols = r.u32_be("column count")? as usize;
    let data = r.rest();
    let need = count * rows * cols;
    if data.len() != need {
        return Err(SnnError::IdxFormat {
            path: path.display().to_string(),
            problem: format!("payload has {} bytes, header implies {need}", data.len()),
        });
    }
    let images = data
        .chunks_exact(rows * cols)
        .map(|px| px.iter().map(|&b| b as f64 / 255.0).collect())
        .collect();
    Ok((images, rows, cols))
}

/// Read an IDX label file (magic, count, one byte per label).
pub fn read_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let mut r = IdxReader {
        bytes: &bytes,
        pos: 0,
        path,
    };
    let magic = r.u32_be("magic")?;
    if magic != LABEL_MAGIC {
        return Err(SnnError::IdxBadMagic {
            path: path.display().to_string(),
            expected: LABEL_MAGIC,
            got: magic,
        });
    }
    let count = r.u32_be("item count")? as usize;
    let data = r.rest();
    if data.len() != count {
        return Err(SnnError::IdxFormat {
            path: path.display().to_string(),
            problem: format!("payload has {} labels, header says {count}", data.len()),
        });
    }
    Ok(data.to_vec())
}

/// Load a matching image/label pair and validate counts and label range.
pub fn load_dataset(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<Dataset> {
    let (images, rows, cols) = read_idx_images(images_path)?;
    let labels = read_idx_labels(labels_path)?;
    if images.len() != labels.len() {
        return Err(SnnError::IdxCountMismatch {
            images: images.len(),
            labels: labels.len(),
        });
    }
    if let Some((index, &value)) = labels.iter().enumerate().find(|&(_, &l)| l > 9) {
        return Err(SnnError::IdxBadLabel { index, value });
    }
    Ok(Dataset {
        images,
        labels,
        rows,
        cols,
    })
}

/// Downscale with a 4x4 box kernel at stride 2: each output pixel is the
/// mean of a 4x4 window, windows overlapping by two pixels. 28x28 becomes
/// 13x13 and every input pixel is covered.
pub fn shrink(image: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    assert_eq!(image.len(), rows * cols);
    assert!(rows >= 4 && cols >= 4);
    let out_rows = (rows - 4) / 2 + 1;
    let out_cols = (cols - 4) / 2 + 1;
    let mut out = Vec::with_capacity(out_rows * out_cols);
    for i in 0..out_rows {
        for j in 0..out_cols {
            let mut sum = 0.0;
            for k in 0..4 {
                for m in 0..4 {
                    sum += image[(2 * i + k) * cols + (2 * j + m)];
                }
            }
            out.push(sum / 16.0);
        }
    }
    out
}

/// Latency encoding: intensity x in (0, 1] spikes at tau_in * (1 - x);
/// zero intensity never spikes.
pub fn encode(image: &[f64], tau_in: f64) -> SpikeVector {
    SpikeVector::new(
        image
            .iter()
            .map(|&x| (x > 0.0).then_some(tau_in * (1.0 - x)))
            .collect(),
    )
}

/// Add Gaussian jitter to every present spike. With `clamp`, jittered times
/// stay nonnegative (a spike cannot precede its stimulus); without it the
/// raw draws pass through. Sigma zero returns the input bit-identically.
pub fn jitter(spikes: &SpikeVector, sigma_t: f64, clamp: bool, rng: &mut impl Rng) -> SpikeVector {
    if sigma_t == 0.0 {
        return spikes.clone();
    }
    let dist = Normal::new(0.0, sigma_t).expect("sigma_t must be finite");
    SpikeVector::new(
        spikes
            .times
            .iter()
            .map(|t| {
                t.map(|t| {
                    let j = t + dist.sample(rng);
                    if clamp {
                        j.max(0.0)
                    } else {
                        j
                    }
                })
            })
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::fs;
    use std::io::Write;

    fn write_images(path: &Path, images: &[Vec<u8>], rows: usize, cols: usize) {
        let mut f = fs::File::create(path).unwrap();
        f.write_all(&IMAGE_MAGIC.to_be_bytes()).unwrap();
        f.write_all(&(images.len() as u32).to_be_bytes()).unwrap();
        f.write_all(&(rows as u32).to_be_bytes()).unwrap();
        f.write_all(&(cols as u32).to_be_bytes()).unwrap();
        for img in images {
            f.write_all(img).unwrap();
        }
    }

    fn write_labels(path: &Path, labels: &[u8]) {
        let mut f = fs::File::create(path).unwrap();
        f.write_all(&LABEL_MAGIC.to_be_bytes()).unwrap();
        f.write_all(&(labels.len() as u32).to_be_bytes()).unwrap();
        f.write_all(labels).unwrap();
    }

    #[test]
    fn idx_round_trip_and_normalization() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("img.idx");
        let lp = dir.path().join("lab.idx");
        write_images(&ip, &[vec![0, 51, 255, 102], vec![255; 4]], 2, 2);
        write_labels(&lp, &[7, 0]);
        let ds = load_dataset(&ip, &lp).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!((ds.rows, ds.cols), (2, 2));
        assert_eq!(ds.images[0][0], 0.0);
        assert!((ds.images[0][1] - 0.2).abs() < 1e-15);
        assert_eq!(ds.images[0][2], 1.0);
        assert_eq!(ds.labels, vec![7, 0]);
    }

    #[test]
    fn idx_errors_are_specific() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("img.idx");
        let lp = dir.path().join("lab.idx");

        fs::write(&ip, 0x0000_0801u32.to_be_bytes()).unwrap();
        assert!(matches!(
            read_idx_images(&ip),
            Err(SnnError::IdxBadMagic { .. })
        ));

        write_images(&ip, &[vec![1, 2, 3, 4]], 2, 2);
        let mut bytes = fs::read(&ip).unwrap();
        bytes.pop();
        fs::write(&ip, &bytes).unwrap();
        assert!(matches!(
            read_idx_images(&ip),
            Err(SnnError::IdxFormat { .. })
        ));

        write_images(&ip, &[vec![1, 2, 3, 4]], 2, 2);
        write_labels(&lp, &[1, 2]);
        assert!(matches!(
            load_dataset(&ip, &lp),
            Err(SnnError::IdxCountMismatch {
                images: 1,
                labels: 2
            })
        ));

        write_labels(&lp, &[10]);
        assert!(matches!(
            load_dataset(&ip, &lp),
            Err(SnnError::IdxBadLabel {
                index: 0,
                value: 10
            })
        ));
    }

    #[test]
    fn shrink_dimensions_and_mean() {
        // A constant image stays constant; 28x28 -> 13x13.
        let img = vec![0.5; 28 * 28];
        let out = shrink(&img, 28, 28);
        assert_eq!(out.len(), 13 * 13);
        assert!(out.iter().all(|&v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn shrink_impulse_spreads_over_windows() {
        // A single bright pixel at (0, 0) contributes 1/16 to output (0, 0)
        // only; a pixel at (2, 2) lands in windows (0,0), (0,1), (1,0), (1,1).
        let mut img = vec![0.0; 28 * 28];
        img[0] = 1.0;
        let out = shrink(&img, 28, 28);
        assert!((out[0] - 1.0 / 16.0).abs() < 1e-15);
        assert_eq!(out.iter().filter(|&&v| v != 0.0).count(), 1);

        let mut img = vec![0.0; 28 * 28];
        img[2 * 28 + 2] = 1.0;
        let out = shrink(&img, 28, 28);
        let hits: Vec<usize> = (0..out.len()).filter(|&k| out[k] != 0.0).collect();
        assert_eq!(hits, vec![0, 1, 13, 14]);
    }

    #[test]
    fn encode_maps_intensity_to_latency() {
        let s = encode(&[1.0, 0.5, 0.0, 0.2], 5.0);
        assert_eq!(s.times[0], Some(0.0));
        assert_eq!(s.times[1], Some(2.5));
        assert_eq!(s.times[2], None);
        assert_eq!(s.times[3], Some(4.0));
    }

    #[test]
    fn encode_then_decode_recovers_intensity() {
        let tau = 5.0;
        let xs: Vec<f64> = (1..=20).map(|k| k as f64 / 20.0).collect();
        let s = encode(&xs, tau);
        for (x, t) in xs.iter().zip(&s.times) {
            let back = 1.0 - t.unwrap() / tau;
            assert!((back - x).abs() < 1e-12);
        }
    }

    #[test]
    fn jitter_zero_sigma_is_identity() {
        let s = SpikeVector::new(vec![Some(1.0), None, Some(0.25)]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(jitter(&s, 0.0, true, &mut rng), s);
    }

    #[test]
    fn jitter_clamps_at_zero_only_when_asked() {
        let s = SpikeVector::new(vec![Some(0.01); 200]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let clamped = jitter(&s, 1.0, true, &mut rng);
        assert!(clamped.times.iter().all(|t| t.unwrap() >= 0.0));
        assert!(clamped.times.iter().any(|t| t.unwrap() == 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let raw = jitter(&s, 1.0, false, &mut rng);
        assert!(raw.times.iter().any(|t| t.unwrap() < 0.0));
        // Silent entries stay silent either way.
        let silent = SpikeVector::new(vec![None; 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert_eq!(jitter(&silent, 1.0, true, &mut rng).fired_count(), 0);
    }
}

//! Dataset ingestion: MNIST IDX files, N-MNIST event files, spike encoding,
//! and batch construction.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;

pub const MNIST_PIXELS: usize = 28 * 28;
pub const NMNIST_SENSOR: usize = 34;
pub const NMNIST_UNITS: usize = NMNIST_SENSOR * NMNIST_SENSOR * 2;
/// Events past this point are discarded when binning.
pub const NMNIST_WINDOW_US: u32 = 300_000;
pub const NMNIST_BIN_US: u32 = 5_000;
pub const NMNIST_STEPS: usize = 60;

const IDX_IMAGE_MAGIC: u32 = 2051;
const IDX_LABEL_MAGIC: u32 = 2049;

/// Byte-intensity images with class labels.
#[derive(Clone, Debug)]
pub struct ImageDataset {
    /// Row-major 28x28 grids, one per sample.
    pub images: Vec<Vec<u8>>,
    pub labels: Vec<u8>,
}

impl ImageDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Splits off the last `n` samples of the canonical file order.
    ///
    /// The split is taken before any shuffling and is the same for every
    /// seed, so validation-based model selection is comparable across runs.
    pub fn split_tail(self, n: usize) -> Result<(ImageDataset, ImageDataset)> {
        if n > self.len() {
            return Err(Error::Invalid(format!(
                "cannot split {} samples off a dataset of {}",
                n,
                self.len()
            )));
        }
        let cut = self.len() - n;
        let mut images = self.images;
        let mut labels = self.labels;
        let tail_images = images.split_off(cut);
        let tail_labels = labels.split_off(cut);
        Ok((
            ImageDataset { images, labels },
            ImageDataset {
                images: tail_images,
                labels: tail_labels,
            },
        ))
    }

    /// Keeps only the first `n` samples.
    pub fn truncate(&mut self, n: usize) {
        self.images.truncate(n);
        self.labels.truncate(n);
    }
}

fn read_u32_be(r: &mut impl Read, path: &Path) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| Error::io(path, e))?;
    Ok(u32::from_be_bytes(b))
}

/// Loads an MNIST image/label file pair in the IDX container format.
pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<ImageDataset> {
    let mut ir = BufReader::new(File::open(images_path).map_err(|e| Error::io(images_path, e))?);
    let magic = read_u32_be(&mut ir, images_path)?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(Error::Format(format!(
            "expected image magic {IDX_IMAGE_MAGIC}, got {magic} in {}",
            images_path.display()
        )));
    }
    let count = read_u32_be(&mut ir, images_path)? as usize;
    let rows = read_u32_be(&mut ir, images_path)? as usize;
    let cols = read_u32_be(&mut ir, images_path)? as usize;
    if rows != 28 || cols != 28 {
        return Err(Error::Format(format!(
            "expected 28x28 images, got {rows}x{cols}"
        )));
    }
    let mut payload = Vec::new();
    ir.read_to_end(&mut payload)
        .map_err(|e| Error::io(images_path, e))?;
    if payload.len() != count * rows * cols {
        return Err(Error::Format(format!(
            "image payload truncated: expected {} bytes, got {}",
            count * rows * cols,
            payload.len()
        )));
    }
    let images: Vec<Vec<u8>> = payload.chunks_exact(rows * cols).map(<[u8]>::to_vec).collect();

    let mut lr = BufReader::new(File::open(labels_path).map_err(|e| Error::io(labels_path, e))?);
    let magic = read_u32_be(&mut lr, labels_path)?;
    if magic != IDX_LABEL_MAGIC {
        return Err(Error::Format(format!(
            "expected label magic {IDX_LABEL_MAGIC}, got {magic} in {}",
            labels_path.display()
        )));
    }
    let lcount = read_u32_be(&mut lr, labels_path)? as usize;
    if lcount != count {
        return Err(Error::Format(format!(
            "image count {count} does not match label count {lcount}"
        )));
    }
    let mut labels = Vec::new();
    lr.read_to_end(&mut labels)
        .map_err(|e| Error::io(labels_path, e))?;
    if labels.len() != count {
        return Err(Error::Format(format!(
            "label payload truncated: expected {count} bytes, got {}",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l > 9) {
        return Err(Error::Format(format!("label {bad} out of range 0-9")));
    }
    Ok(ImageDataset { images, labels })
}

/// Binary spike tensor of shape (timesteps x input units).
#[derive(Clone)]
pub struct SpikeTrain {
    steps: usize,
    units: usize,
    data: Vec<u8>,
}

impl SpikeTrain {
    pub fn zeros(steps: usize, units: usize) -> Self {
        SpikeTrain {
            steps,
            units,
            data: vec![0; steps * units],
        }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn units(&self) -> usize {
        self.units
    }

    #[inline]
    pub fn get(&self, t: usize, j: usize) -> u8 {
        self.data[t * self.units + j]
    }

    #[inline]
    pub fn set(&mut self, t: usize, j: usize) {
        self.data[t * self.units + j] = 1;
    }

    #[inline]
    pub fn row(&self, t: usize) -> &[u8] {
        &self.data[t * self.units..(t + 1) * self.units]
    }

    /// Indices of units that spike at step `t`.
    pub fn active_at(&self, t: usize) -> Vec<u32> {
        self.row(t)
            .iter()
            .enumerate()
            .filter(|(_, &s)| s != 0)
            .map(|(j, _)| j as u32)
            .collect()
    }

    /// Sorted indices of units that spike at any step.
    pub fn ever_active(&self) -> Vec<u32> {
        let mut seen = vec![false; self.units];
        for t in 0..self.steps {
            for (j, &s) in self.row(t).iter().enumerate() {
                if s != 0 {
                    seen[j] = true;
                }
            }
        }
        seen.iter()
            .enumerate()
            .filter(|(_, &s)| s)
            .map(|(j, _)| j as u32)
            .collect()
    }

    pub fn total_spikes(&self) -> usize {
        self.data.iter().map(|&s| s as usize).sum()
    }
}

/// Poisson rate coding: each pixel spikes independently per step with
/// probability intensity/255.
pub fn encode_poisson(image: &[u8], steps: usize, rng: &mut Rng) -> SpikeTrain {
    let mut train = SpikeTrain::zeros(steps, image.len());
    for t in 0..steps {
        for (j, &px) in image.iter().enumerate() {
            if px == 0 {
                continue;
            }
            let p = px as f64 / 255.0;
            if rng.gen::<f64>() < p {
                train.set(t, j);
            }
        }
    }
    train
}

/// One DVS event of the N-MNIST sensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Event {
    pub x: u8,
    pub y: u8,
    pub polarity: u8,
    pub timestamp_us: u32,
}

impl Event {
    /// Decodes the 5-byte record layout of the N-MNIST distribution.
    pub fn decode(record: [u8; 5]) -> Result<Event> {
        let x = record[0];
        let y = record[1];
        if x as usize >= NMNIST_SENSOR || y as usize >= NMNIST_SENSOR {
            return Err(Error::Format(format!(
                "event coordinate ({x},{y}) outside the {NMNIST_SENSOR}x{NMNIST_SENSOR} sensor"
            )));
        }
        let polarity = record[2] >> 7;
        let timestamp_us = ((record[2] & 0x7f) as u32) << 16 | (record[3] as u32) << 8 | record[4] as u32;
        Ok(Event {
            x,
            y,
            polarity,
            timestamp_us,
        })
    }

    pub fn encode(&self) -> [u8; 5] {
        [
            self.x,
            self.y,
            (self.polarity << 7) | ((self.timestamp_us >> 16) as u8 & 0x7f),
            (self.timestamp_us >> 8) as u8,
            self.timestamp_us as u8,
        ]
    }
}

/// Loads one N-MNIST sample: a concatenation of 5-byte event records.
pub fn load_nmnist_sample(path: &Path) -> Result<Vec<Event>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_nmnist_bytes(&bytes)
}

pub fn decode_nmnist_bytes(bytes: &[u8]) -> Result<Vec<Event>> {
    if bytes.len() % 5 != 0 {
        return Err(Error::Format(format!(
            "event payload length {} is not a multiple of 5",
            bytes.len()
        )));
    }
    let mut events = Vec::with_capacity(bytes.len() / 5);
    let mut last = 0u32;
    for rec in bytes.chunks_exact(5) {
        let ev = Event::decode([rec[0], rec[1], rec[2], rec[3], rec[4]])?;
        last = last.max(ev.timestamp_us);
        events.push(ev);
    }
    // Saccade boundaries can leave slightly unordered tails; normalize.
    events.sort_by_key(|e| e.timestamp_us);
    Ok(events)
}

/// Bins events into a binary spike train. Unit index is
/// polarity*34*34 + y*34 + x; multiple events in one bin saturate to 1.
pub fn bin_events(events: &[Event], bin_us: u32, steps: usize) -> SpikeTrain {
    let mut train = SpikeTrain::zeros(steps, NMNIST_UNITS);
    for ev in events {
        if ev.timestamp_us >= bin_us * steps as u32 {
            continue;
        }
        let bin = (ev.timestamp_us / bin_us) as usize;
        let unit =
            ev.polarity as usize * NMNIST_SENSOR * NMNIST_SENSOR + ev.y as usize * NMNIST_SENSOR + ev.x as usize;
        train.data[bin * NMNIST_UNITS + unit] = 1;
    }
    train
}

/// Event-file dataset: one pre-binned spike train per sample.
#[derive(Clone)]
pub struct EventDataset {
    pub trains: Vec<SpikeTrain>,
    pub labels: Vec<u8>,
}

impl EventDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Splits off the last `n` samples of the canonical load order.
    pub fn split_tail(self, n: usize) -> Result<(EventDataset, EventDataset)> {
        if n > self.len() {
            return Err(Error::Invalid(format!(
                "cannot split {} samples off a dataset of {}",
                n,
                self.len()
            )));
        }
        let cut = self.len() - n;
        let mut trains = self.trains;
        let mut labels = self.labels;
        let tail_trains = trains.split_off(cut);
        let tail_labels = labels.split_off(cut);
        Ok((
            EventDataset { trains, labels },
            EventDataset { trains: tail_trains, labels: tail_labels },
        ))
    }

    /// Keeps only the first `n` samples.
    pub fn truncate(&mut self, n: usize) {
        self.trains.truncate(n);
        self.labels.truncate(n);
    }
}

/// Loads an N-MNIST split directory laid out as `<root>/<digit>/<sample>.bin`,
/// keeping at most `limit` samples per class when `limit` is set.
pub fn load_nmnist_dir(root: &Path, limit: Option<usize>) -> Result<EventDataset> {
    let mut trains = Vec::new();
    let mut labels = Vec::new();
    for digit in 0..10u8 {
        let dir = root.join(digit.to_string());
        if !dir.is_dir() {
            return Err(Error::Format(format!(
                "missing class directory {}",
                dir.display()
            )));
        }
        let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().map_or(false, |x| x == "bin"))
            .collect();
        files.sort();
        if let Some(n) = limit {
            files.truncate(n);
        }
        for f in files {
            let events = load_nmnist_sample(&f)?;
            trains.push(bin_events(&events, NMNIST_BIN_US, NMNIST_STEPS));
            labels.push(digit);
        }
    }
    Ok(EventDataset { trains, labels })
}

/// Seeded shuffle into batches of `batch_size` indices; the final short
/// batch is kept.
pub fn make_batches(n_samples: usize, batch_size: usize, rng: &mut Rng) -> Result<Vec<Vec<usize>>> {
    if n_samples == 0 {
        return Err(Error::Invalid("cannot batch an empty dataset".into()));
    }
    if batch_size == 0 {
        return Err(Error::Invalid("batch size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..n_samples).collect();
    order.shuffle(rng);
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{sample_rng, Stream};
    use rand_chacha::rand_core::SeedableRng;
    use std::io::Write;

    fn write_idx_pair(
        dir: &Path,
        image_magic: u32,
        label_magic: u32,
        images: &[Vec<u8>],
        labels: &[u8],
    ) -> (PathBuf, PathBuf) {
        let ip = dir.join("images");
        let lp = dir.join("labels");
        let mut f = File::create(&ip).unwrap();
        f.write_all(&image_magic.to_be_bytes()).unwrap();
        f.write_all(&(images.len() as u32).to_be_bytes()).unwrap();
        f.write_all(&28u32.to_be_bytes()).unwrap();
        f.write_all(&28u32.to_be_bytes()).unwrap();
        for img in images {
            f.write_all(img).unwrap();
        }
        let mut f = File::create(&lp).unwrap();
        f.write_all(&label_magic.to_be_bytes()).unwrap();
        f.write_all(&(labels.len() as u32).to_be_bytes()).unwrap();
        f.write_all(labels).unwrap();
        (ip, lp)
    }

    #[test]
    fn idx_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let images = vec![vec![0u8; 784], vec![255u8; 784]];
        let labels = vec![3u8, 7u8];
        let (ip, lp) = write_idx_pair(dir.path(), 2051, 2049, &images, &labels);
        let ds = load_mnist_idx(&ip, &lp).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.images[1][0], 255);
        assert_eq!(ds.labels, labels);
    }

    #[test]
    fn idx_wrong_magic() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = write_idx_pair(dir.path(), 2051, 2051, &[vec![0; 784]], &[0]);
        let err = load_mnist_idx(&ip, &lp).unwrap_err();
        assert!(err.to_string().contains("2049"), "{err}");
        assert!(err.to_string().contains("2051"), "{err}");
    }

    #[test]
    fn idx_truncated_payload() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("images");
        let lp = dir.path().join("labels");
        let mut f = File::create(&ip).unwrap();
        f.write_all(&2051u32.to_be_bytes()).unwrap();
        f.write_all(&2u32.to_be_bytes()).unwrap();
        f.write_all(&28u32.to_be_bytes()).unwrap();
        f.write_all(&28u32.to_be_bytes()).unwrap();
        f.write_all(&[0u8; 784]).unwrap(); // one image short
        let mut f = File::create(&lp).unwrap();
        f.write_all(&2049u32.to_be_bytes()).unwrap();
        f.write_all(&2u32.to_be_bytes()).unwrap();
        f.write_all(&[0, 1]).unwrap();
        let err = load_mnist_idx(&ip, &lp).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn poisson_extremes() {
        let mut rng = Rng::seed_from_u64(1);
        let zero = encode_poisson(&[0u8; 16], 20, &mut rng);
        assert_eq!(zero.total_spikes(), 0);
        let full = encode_poisson(&[255u8; 16], 20, &mut rng);
        assert_eq!(full.total_spikes(), 16 * 20);
    }

    #[test]
    fn poisson_rate_matches_intensity() {
        // Binomial(20, 128/255) mean is ~10.04 per pixel-train.
        let n = 10_000;
        let mut total = 0usize;
        for i in 0..n {
            let mut rng = sample_rng(9, Stream::Encode, 0, i);
            total += encode_poisson(&[128u8], 20, &mut rng).total_spikes();
        }
        let mean = total as f64 / n as f64;
        assert!((mean - 20.0 * 128.0 / 255.0).abs() < 0.1, "mean {mean}");
    }

    #[test]
    fn nmnist_record_decoding() {
        let ev = Event::decode([1, 2, 0x80, 0, 5]).unwrap();
        assert_eq!(
            ev,
            Event {
                x: 1,
                y: 2,
                polarity: 1,
                timestamp_us: 5
            }
        );
        let ev = Event::decode([0, 0, 0, 0, 0]).unwrap();
        assert_eq!(ev.polarity, 0);
        assert_eq!(ev.timestamp_us, 0);
        let ev = Event::decode([0, 0, 1, 0, 0]).unwrap();
        assert_eq!(ev.timestamp_us, 65_536);
    }

    #[test]
    fn nmnist_range_and_length_errors() {
        assert!(Event::decode([34, 0, 0, 0, 0]).is_err());
        assert!(Event::decode([0, 34, 0, 0, 0]).is_err());
        assert!(decode_nmnist_bytes(&[1, 2, 3]).is_err());
    }

    #[test]
    fn nmnist_round_trip() {
        let ev = Event {
            x: 33,
            y: 17,
            polarity: 1,
            timestamp_us: 299_999,
        };
        assert_eq!(Event::decode(ev.encode()).unwrap(), ev);
    }

    #[test]
    fn binning_boundaries() {
        let mk = |t| Event {
            x: 0,
            y: 0,
            polarity: 0,
            timestamp_us: t,
        };
        let train = bin_events(&[mk(4_999), mk(5_000), mk(5_001), mk(400_000)], NMNIST_BIN_US, NMNIST_STEPS);
        assert_eq!(train.get(0, 0), 1);
        assert_eq!(train.get(1, 0), 1); // two events saturate to one spike
        assert_eq!(train.total_spikes(), 2); // late event dropped
        let empty = bin_events(&[], NMNIST_BIN_US, NMNIST_STEPS);
        assert_eq!(empty.total_spikes(), 0);
    }

    #[test]
    fn batches_cover_and_repeat() {
        let mut rng = Rng::seed_from_u64(5);
        let batches = make_batches(10, 4, &mut rng).unwrap();
        assert_eq!(batches.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
        let mut all: Vec<usize> = batches.into_iter().flatten().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());

        let a = make_batches(10, 3, &mut Rng::seed_from_u64(7)).unwrap();
        let b = make_batches(10, 3, &mut Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a, b);
        assert!(make_batches(0, 4, &mut rng).is_err());
    }
}

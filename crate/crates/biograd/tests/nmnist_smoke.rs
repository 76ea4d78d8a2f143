//! End-to-end wiring check for the event-camera path: digits are converted
//! into 5-byte event records on disk, loaded back through the directory
//! loader, binned, and trained on for a few epochs. This guards the format
//! round-trip and the 60-step training path, not benchmark accuracy.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng as _;

use biograd::config::parse_config;
use biograd::data::{load_mnist_idx, Event, NMNIST_WINDOW_US};
use biograd::rng::{sample_rng, Stream};
use biograd::trainer::{train, Corpus};

fn data_dir() -> PathBuf {
    std::env::var_os("BIOGRAD_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

/// Renders one image as an event stream: each pixel emits intensity-scaled
/// ON events at random times inside the recording window, offset into the
/// 34x34 sensor frame.
fn image_to_events(image: &[u8], rng: &mut biograd::rng::Rng) -> Vec<Event> {
    let mut events = Vec::new();
    for (p, &v) in image.iter().enumerate() {
        if v < 32 {
            continue;
        }
        let (r, c) = (p / 28, p % 28);
        // Event density roughly matches a real recording: a few thousand
        // events per sample, so the hidden layer sees a usable drive.
        for _ in 0..(v as u32 / 2) {
            events.push(Event {
                x: (c + 3) as u8,
                y: (r + 3) as u8,
                polarity: u8::from(rng.gen_bool(0.5)),
                timestamp_us: rng.gen_range(0..NMNIST_WINDOW_US),
            });
        }
    }
    events
}

fn write_split(
    root: &Path,
    images: &[Vec<u8>],
    labels: &[u8],
    salt: u64,
) {
    let mut counters = [0usize; 10];
    for (i, (img, &label)) in images.iter().zip(labels).enumerate() {
        let dir = root.join(label.to_string());
        std::fs::create_dir_all(&dir).unwrap();
        let mut rng = sample_rng(99, Stream::Encode, salt, i as u64);
        let events = image_to_events(img, &mut rng);
        let mut f = std::fs::File::create(dir.join(format!("{:05}.bin", counters[label as usize])))
            .unwrap();
        for e in &events {
            f.write_all(&e.encode()).unwrap();
        }
        counters[label as usize] += 1;
    }
}

#[test]
fn event_pipeline_smoke() {
    let dir = data_dir();
    let mnist = load_mnist_idx(
        &dir.join("train-images-idx3-ubyte"),
        &dir.join("train-labels-idx1-ubyte"),
    )
    .unwrap();

    let root = tempfile::tempdir().unwrap();
    write_split(&root.path().join("Train"), &mnist.images[..1200], &mnist.labels[..1200], 0);
    write_split(
        &root.path().join("Test"),
        &mnist.images[1200..1700],
        &mnist.labels[1200..1700],
        1,
    );

    let overrides: Vec<(String, String)> = [
        ("dataset", "nmnist"),
        ("arch", "2312-100-10"),
        ("epochs", "4"),
        ("val_size", "200"),
        ("train_subset", "1000"),
        ("seed", "7"),
    ]
    .iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .chain([("data_dir".to_string(), root.path().display().to_string())])
    .collect();
    let cfg = parse_config(None, &overrides).unwrap();

    let corpus = Corpus::load(&cfg).unwrap();
    assert_eq!(corpus.train_len(), 1000);
    let out = train(&cfg, &corpus, |_, _| Ok(())).unwrap();
    assert!(
        out.test_acc > 0.60,
        "event-path smoke accuracy {:.3} (needed > 0.60)",
        out.test_acc
    );
}

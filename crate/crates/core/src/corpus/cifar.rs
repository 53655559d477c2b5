//! The published CIFAR binary layouts.
//!
//! CIFAR-10: `<label><1024 R><1024 G><1024 B>` (3073 bytes per record).
//! CIFAR-100: `<coarse><fine><3072 pixels>` (3074 bytes per record).

use super::{BaseCorpus, CorpusError, ImageTensor, Record, CIFAR_CHANNELS, CIFAR_SIDE};
use std::path::{Path, PathBuf};

pub const PIXELS: usize = CIFAR_CHANNELS * CIFAR_SIDE * CIFAR_SIDE;
pub const CIFAR10_RECORD: usize = 1 + PIXELS;
pub const CIFAR100_RECORD: usize = 2 + PIXELS;

const CIFAR10_TRAIN_FILES: [&str; 5] =
    ["data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin", "data_batch_4.bin", "data_batch_5.bin"];

fn check_length(bytes: &[u8], record: usize) -> Result<(), CorpusError> {
    if !bytes.len().is_multiple_of(record) {
        return Err(CorpusError::Truncated { offset: bytes.len() - bytes.len() % record, len: bytes.len(), record });
    }
    Ok(())
}

fn image_at(bytes: &[u8]) -> ImageTensor {
    ImageTensor::from_planar(CIFAR_CHANNELS, CIFAR_SIDE, CIFAR_SIDE, bytes[..PIXELS].to_vec())
}

/// Decode CIFAR-10 records. Returns the records; wrap with [`BaseCorpus`] as needed.
pub fn parse_cifar10_records(bytes: &[u8]) -> Result<Vec<Record>, CorpusError> {
    check_length(bytes, CIFAR10_RECORD)?;
    bytes
        .chunks_exact(CIFAR10_RECORD)
        .enumerate()
        .map(|(i, rec)| {
            let label = rec[0];
            if label >= 10 {
                return Err(CorpusError::LabelOutOfRange { offset: i * CIFAR10_RECORD, field: "class", value: label, bound: 10 });
            }
            Ok(Record { image: image_at(&rec[1..]), label, fine_label: None })
        })
        .collect()
}

pub fn parse_cifar100_records(bytes: &[u8]) -> Result<Vec<Record>, CorpusError> {
    check_length(bytes, CIFAR100_RECORD)?;
    bytes
        .chunks_exact(CIFAR100_RECORD)
        .enumerate()
        .map(|(i, rec)| {
            let offset = i * CIFAR100_RECORD;
            let (coarse, fine) = (rec[0], rec[1]);
            if coarse >= 20 {
                return Err(CorpusError::LabelOutOfRange { offset, field: "coarse", value: coarse, bound: 20 });
            }
            if fine >= 100 {
                return Err(CorpusError::LabelOutOfRange { offset: offset + 1, field: "fine", value: fine, bound: 100 });
            }
            Ok(Record { image: image_at(&rec[2..]), label: coarse, fine_label: Some(fine) })
        })
        .collect()
}

/// Parse a CIFAR-10 stream into a corpus whose records all sit in the train split.
pub fn parse_cifar10(bytes: &[u8]) -> Result<BaseCorpus, CorpusError> {
    Ok(BaseCorpus {
        name: "cifar10".into(),
        num_classes: 10,
        num_fine: None,
        train_records: parse_cifar10_records(bytes)?,
        test_records: Vec::new(),
    })
}

pub fn parse_cifar100(bytes: &[u8]) -> Result<BaseCorpus, CorpusError> {
    Ok(BaseCorpus {
        name: "cifar100".into(),
        num_classes: 20,
        num_fine: Some(100),
        train_records: parse_cifar100_records(bytes)?,
        test_records: Vec::new(),
    })
}

fn read(path: &Path, hint: &str) -> Result<Vec<u8>, CorpusError> {
    if !path.is_file() {
        return Err(CorpusError::MissingFile { path: path.to_path_buf(), hint: hint.to_string() });
    }
    std::fs::read(path).map_err(|source| CorpusError::Io { path: path.to_path_buf(), source })
}

/// Load `cifar-10-batches-bin` style directory: `data_batch_{1..5}.bin` and `test_batch.bin`.
pub fn load_cifar10_dir(dir: &Path) -> Result<BaseCorpus, CorpusError> {
    let hint = "CIFAR-10 binary version (data_batch_1..5.bin, test_batch.bin)";
    let mut train = Vec::new();
    for f in CIFAR10_TRAIN_FILES {
        train.extend(parse_cifar10_records(&read(&dir.join(f), hint)?)?);
    }
    let test = parse_cifar10_records(&read(&dir.join("test_batch.bin"), hint)?)?;
    Ok(BaseCorpus { name: "cifar10".into(), num_classes: 10, num_fine: None, train_records: train, test_records: test })
}

/// Load `cifar-100-binary` style directory: `train.bin` and `test.bin`.
pub fn load_cifar100_dir(dir: &Path) -> Result<BaseCorpus, CorpusError> {
    let hint = "CIFAR-100 binary version (train.bin, test.bin)";
    let train = parse_cifar100_records(&read(&dir.join("train.bin"), hint)?)?;
    let test = parse_cifar100_records(&read(&dir.join("test.bin"), hint)?)?;
    Ok(BaseCorpus { name: "cifar100".into(), num_classes: 20, num_fine: Some(100), train_records: train, test_records: test })
}

/// Encode records in the CIFAR-10 layout. Images must be 3x32x32.
pub fn write_cifar10<'a>(records: impl IntoIterator<Item = (&'a ImageTensor, u8)>) -> Vec<u8> {
    let mut out = Vec::new();
    for (img, label) in records {
        assert_eq!(img.len(), PIXELS, "CIFAR records are 3x32x32");
        out.push(label);
        out.extend_from_slice(&img.data);
    }
    out
}

pub fn write_cifar100<'a>(records: impl IntoIterator<Item = (&'a ImageTensor, u8, u8)>) -> Vec<u8> {
    let mut out = Vec::new();
    for (img, coarse, fine) in records {
        assert_eq!(img.len(), PIXELS, "CIFAR records are 3x32x32");
        out.push(coarse);
        out.push(fine);
        out.extend_from_slice(&img.data);
    }
    out
}

/// Write a corpus to `dir` in the on-disk layout the loaders expect.
pub fn save_corpus_dir(corpus: &BaseCorpus, dir: &Path) -> Result<Vec<PathBuf>, CorpusError> {
    let io = |path: &Path| {
        let p = path.to_path_buf();
        move |source| CorpusError::Io { path: p, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let mut written = Vec::new();
    let mut put = |name: &str, bytes: Vec<u8>| -> Result<(), CorpusError> {
        let p = dir.join(name);
        std::fs::write(&p, bytes).map_err(io(&p))?;
        written.push(p);
        Ok(())
    };
    if corpus.has_fine_labels() {
        let enc = |rs: &[Record]| write_cifar100(rs.iter().map(|r| (&r.image, r.label, r.fine_label.unwrap_or(0))));
        put("train.bin", enc(&corpus.train_records))?;
        put("test.bin", enc(&corpus.test_records))?;
    } else {
        let per = corpus.train_records.len().div_ceil(CIFAR10_TRAIN_FILES.len());
        for (i, f) in CIFAR10_TRAIN_FILES.iter().enumerate() {
            let lo = (i * per).min(corpus.train_records.len());
            let hi = ((i + 1) * per).min(corpus.train_records.len());
            put(f, write_cifar10(corpus.train_records[lo..hi].iter().map(|r| (&r.image, r.label))))?;
        }
        put("test_batch.bin", write_cifar10(corpus.test_records.iter().map(|r| (&r.image, r.label))))?;
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_record_is_black_class_zero() {
        let c = parse_cifar10(&[0u8; CIFAR10_RECORD]).unwrap();
        assert_eq!(c.train_records.len(), 1);
        assert_eq!(c.train_records[0].label, 0);
        assert!(c.train_records[0].image.data.iter().all(|&v| v == 0));
    }

    #[test]
    fn labels_are_first_octets() {
        let mut bytes = vec![0u8; 2 * CIFAR10_RECORD];
        bytes[0] = 3;
        bytes[CIFAR10_RECORD] = 7;
        let c = parse_cifar10(&bytes).unwrap();
        let labels: Vec<u8> = c.train_records.iter().map(|r| r.label).collect();
        assert_eq!(labels, vec![3, 7]);
    }

    #[test]
    fn planes_are_r_then_g_then_b() {
        let mut bytes = vec![0u8; CIFAR10_RECORD];
        bytes[1] = 11;
        bytes[1 + 1024] = 22;
        bytes[1 + 2048 + 33] = 44;
        let img = &parse_cifar10(&bytes).unwrap().train_records[0].image;
        assert_eq!(img.get(0, 0, 0), 11);
        assert_eq!(img.get(1, 0, 0), 22);
        assert_eq!(img.get(2, 1, 1), 44);
    }

    #[test]
    fn truncation_reports_offset() {
        let err = parse_cifar10(&vec![0u8; CIFAR10_RECORD + 10]).unwrap_err();
        assert!(matches!(err, CorpusError::Truncated { offset, .. } if offset == CIFAR10_RECORD));
    }

    #[test]
    fn label_ten_is_corrupt() {
        let mut bytes = vec![0u8; 2 * CIFAR10_RECORD];
        bytes[CIFAR10_RECORD] = 10;
        let err = parse_cifar10(&bytes).unwrap_err();
        assert!(matches!(err, CorpusError::LabelOutOfRange { offset, .. } if offset == CIFAR10_RECORD));
    }

    #[test]
    fn cifar100_zero_and_bad_fine() {
        let c = parse_cifar100(&[0u8; CIFAR100_RECORD]).unwrap();
        assert_eq!((c.train_records[0].label, c.train_records[0].fine_label), (0, Some(0)));
        let mut bytes = vec![0u8; CIFAR100_RECORD];
        bytes[1] = 100;
        assert!(matches!(parse_cifar100(&bytes), Err(CorpusError::LabelOutOfRange { field: "fine", .. })));
    }

    #[test]
    fn write_then_parse_round_trips() {
        let img = ImageTensor::from_planar(3, 32, 32, (0..PIXELS).map(|i| (i % 251) as u8).collect());
        let bytes = write_cifar100([(&img, 4u8, 17u8)]);
        let c = parse_cifar100(&bytes).unwrap();
        assert_eq!(c.train_records[0].image, img);
        assert_eq!(c.fine_to_coarse()[17], Some(4));
    }

    #[test]
    fn missing_directory_names_the_path() {
        let err = load_cifar10_dir(Path::new("/nonexistent/cifar")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/cifar/data_batch_1.bin"));
    }
}

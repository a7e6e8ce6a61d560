//! Descriptor files.
//!
//! Binary layout (little-endian): `"CMID"`, version `u16` = 1, image count
//! `u32`; per image `image_id u32`, `group_id u32`, feature count `u32`; per
//! feature `x, y, scale` as `f32`, 128 SIFT `f32` (rootSIFT values), 11 Color
//! Names `f32`.
//!
//! The text variant starts with a `cmid-text 1` line, then per image an
//! `image <id> <group> <count>` line followed by one whitespace-separated line
//! of 3 + 128 + 11 numbers per feature. Blank lines and `#` comments are
//! ignored.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{CnDescriptor, FeatureTuple, ImageRecord, Keypoint, SiftDescriptor, CN_DIM, SIFT_DIM};
use crate::error::{eof_as_format, Error, Result};

const MAGIC: &[u8; 4] = b"CMID";
const VERSION: u16 = 1;
const TEXT_HEADER: &str = "cmid-text 1";

pub fn write_corpus(path: &Path, images: &[ImageRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_binary(&mut w, images)?;
    w.flush()?;
    Ok(())
}

pub fn write_corpus_text(path: &Path, images: &[ImageRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_text(&mut w, images)?;
    w.flush()?;
    Ok(())
}

/// Reads either the binary or the text variant, by sniffing the magic.
pub fn read_corpus(path: &Path) -> Result<Vec<ImageRecord>> {
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    let mut r = BufReader::new(File::open(path)?);
    let head = r.fill_buf()?;
    if head.starts_with(MAGIC) {
        read_binary(&mut r)
    } else {
        read_text(r)
    }
}

pub fn read_corpus_text(path: &Path) -> Result<Vec<ImageRecord>> {
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    read_text(BufReader::new(File::open(path)?))
}

pub(crate) fn write_binary<W: Write>(w: &mut W, images: &[ImageRecord]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_u16::<LittleEndian>(VERSION)?;
    w.write_u32::<LittleEndian>(len_u32(images.len())?)?;
    for img in images {
        w.write_u32::<LittleEndian>(img.image_id)?;
        w.write_u32::<LittleEndian>(img.group_id)?;
        w.write_u32::<LittleEndian>(len_u32(img.features.len())?)?;
        for f in &img.features {
            w.write_f32::<LittleEndian>(f.keypoint.x)?;
            w.write_f32::<LittleEndian>(f.keypoint.y)?;
            w.write_f32::<LittleEndian>(f.keypoint.scale)?;
            for &v in f.sift.as_slice() {
                w.write_f32::<LittleEndian>(v)?;
            }
            for &v in f.color.as_slice() {
                w.write_f32::<LittleEndian>(v)?;
            }
        }
    }
    Ok(())
}

pub(crate) fn read_binary<R: Read>(r: &mut R) -> Result<Vec<ImageRecord>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(eof_as_format)?;
    if &magic != MAGIC {
        return Err(Error::format("descriptor file: bad magic"));
    }
    let version = r.read_u16::<LittleEndian>().map_err(eof_as_format)?;
    if version != VERSION {
        return Err(Error::format(format!(
            "descriptor file: unsupported version {version}"
        )));
    }
    let count = r.read_u32::<LittleEndian>().map_err(eof_as_format)?;
    let mut images = Vec::new();
    let mut seen = HashSet::new();
    let mut sift = vec![0.0f32; SIFT_DIM];
    let mut cn = [0.0f32; CN_DIM];
    for _ in 0..count {
        let image_id = r.read_u32::<LittleEndian>().map_err(eof_as_format)?;
        let group_id = r.read_u32::<LittleEndian>().map_err(eof_as_format)?;
        let n = r.read_u32::<LittleEndian>().map_err(eof_as_format)?;
        if !seen.insert(image_id) {
            return Err(Error::format(format!(
                "descriptor file: duplicate image id {image_id}"
            )));
        }
        let mut features = Vec::new();
        for _ in 0..n {
            let x = r.read_f32::<LittleEndian>().map_err(eof_as_format)?;
            let y = r.read_f32::<LittleEndian>().map_err(eof_as_format)?;
            let scale = r.read_f32::<LittleEndian>().map_err(eof_as_format)?;
            r.read_f32_into::<LittleEndian>(&mut sift)
                .map_err(eof_as_format)?;
            r.read_f32_into::<LittleEndian>(&mut cn)
                .map_err(eof_as_format)?;
            features.push(FeatureTuple::new(
                SiftDescriptor::new(sift.clone())?,
                CnDescriptor::new(&cn)?,
                Keypoint { x, y, scale },
            )?);
        }
        images.push(ImageRecord {
            image_id,
            group_id,
            features,
        });
    }
    Ok(images)
}

pub(crate) fn write_text<W: Write>(w: &mut W, images: &[ImageRecord]) -> Result<()> {
    writeln!(w, "{TEXT_HEADER}")?;
    for img in images {
        writeln!(
            w,
            "image {} {} {}",
            img.image_id,
            img.group_id,
            img.features.len()
        )?;
        for f in &img.features {
            let kp = f.keypoint;
            let mut line = format!("{} {} {}", kp.x, kp.y, kp.scale);
            for v in f.sift.as_slice().iter().chain(f.color.as_slice()) {
                line.push(' ');
                line.push_str(&v.to_string());
            }
            writeln!(w, "{line}")?;
        }
    }
    Ok(())
}

pub(crate) fn read_text<R: BufRead>(r: R) -> Result<Vec<ImageRecord>> {
    let mut lines = r
        .lines()
        .enumerate()
        .map(|(n, l)| l.map(|l| (n + 1, l)))
        .filter(|l| match l {
            Ok((_, s)) => {
                let t = s.trim();
                !t.is_empty() && !t.starts_with('#')
            }
            Err(_) => true,
        });

    match lines.next().transpose()? {
        Some((_, l)) if l.trim() == TEXT_HEADER => {}
        _ => {
            return Err(Error::format(format!(
                "descriptor text: expected `{TEXT_HEADER}` header"
            )))
        }
    }

    let mut images = Vec::new();
    let mut seen = HashSet::new();
    while let Some((n, line)) = lines.next().transpose()? {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 4 || toks[0] != "image" {
            return Err(Error::format(format!(
                "line {n}: expected `image <id> <group> <count>`"
            )));
        }
        let image_id: u32 = parse_tok(toks[1], n)?;
        let group_id: u32 = parse_tok(toks[2], n)?;
        let count: usize = parse_tok(toks[3], n)?;
        if !seen.insert(image_id) {
            return Err(Error::format(format!(
                "line {n}: duplicate image id {image_id}"
            )));
        }
        let mut features = Vec::with_capacity(count);
        for _ in 0..count {
            let (n, line) = lines
                .next()
                .transpose()?
                .ok_or_else(|| Error::format("descriptor text: truncated feature list"))?;
            let vals = line
                .split_whitespace()
                .map(|t| parse_tok::<f32>(t, n))
                .collect::<Result<Vec<f32>>>()?;
            if vals.len() != 3 + SIFT_DIM + CN_DIM {
                return Err(Error::format(format!(
                    "line {n}: expected {} numbers, found {}",
                    3 + SIFT_DIM + CN_DIM,
                    vals.len()
                )));
            }
            let kp = Keypoint {
                x: vals[0],
                y: vals[1],
                scale: vals[2],
            };
            let sift = SiftDescriptor::new(vals[3..3 + SIFT_DIM].to_vec())?;
            let color = CnDescriptor::new(&vals[3 + SIFT_DIM..])?;
            features.push(FeatureTuple::new(sift, color, kp)?);
        }
        images.push(ImageRecord {
            image_id,
            group_id,
            features,
        });
    }
    Ok(images)
}

fn parse_tok<T: std::str::FromStr>(tok: &str, line: usize) -> Result<T> {
    tok.parse()
        .map_err(|_| Error::format(format!("line {line}: cannot parse `{tok}`")))
}

fn len_u32(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::format(format!("count {n} exceeds u32")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{generate_synthetic_corpus, SynthConfig};

    fn small() -> Vec<ImageRecord> {
        let cfg = SynthConfig {
            groups: 3,
            images_per_group: 2,
            features_per_image: 4,
            ..SynthConfig::default()
        };
        generate_synthetic_corpus(&cfg, 11).unwrap()
    }

    #[test]
    fn binary_and_text_agree() {
        let corpus = small();
        let mut bin = Vec::new();
        write_binary(&mut bin, &corpus).unwrap();
        assert_eq!(read_binary(&mut bin.as_slice()).unwrap(), corpus);

        let mut txt = Vec::new();
        write_text(&mut txt, &corpus).unwrap();
        assert_eq!(read_text(txt.as_slice()).unwrap(), corpus);
    }

    #[test]
    fn truncated_binary_is_format_error() {
        let mut bin = Vec::new();
        write_binary(&mut bin, &small()).unwrap();
        bin.truncate(bin.len() - 3);
        assert!(matches!(
            read_binary(&mut bin.as_slice()),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bin = Vec::new();
        write_binary(&mut bin, &small()).unwrap();
        let mut bad = bin.clone();
        bad[0] = b'X';
        assert!(matches!(
            read_binary(&mut bad.as_slice()),
            Err(Error::Format(_))
        ));
        let mut bad = bin;
        bad[4] = 9;
        assert!(matches!(
            read_binary(&mut bad.as_slice()),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn text_rejects_short_rows_and_duplicates() {
        let txt = "cmid-text 1\nimage 1 0 1\n1 2 3 4\n";
        assert!(matches!(read_text(txt.as_bytes()), Err(Error::Format(_))));
        let txt = "cmid-text 1\nimage 1 0 0\n# comment\n\nimage 1 0 0\n";
        assert!(matches!(read_text(txt.as_bytes()), Err(Error::Format(_))));
        let txt = "cmid-text 1\nimage 1 0 0\nimage 2 0 0\n";
        assert_eq!(read_text(txt.as_bytes()).unwrap().len(), 2);
    }
}

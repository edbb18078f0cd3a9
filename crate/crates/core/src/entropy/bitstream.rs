//! `.lsc` container: fixed little-endian header, hyper-latent segment, latent
//! segment, trailing CRC-32.

use super::EntropyError;

pub const MAGIC: [u8; 4] = *b"LSC\x1a";
pub const FORMAT_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 26;
pub const CHECKSUM_LEN: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BitstreamHeader {
    pub quality_index: u8,
    pub true_height: u32,
    pub true_width: u32,
    pub latent_channels: u16,
    pub hyper_channels: u16,
    pub z_len: u32,
    pub y_len: u32,
}

impl BitstreamHeader {
    fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&MAGIC);
        out.push(FORMAT_VERSION);
        out.push(self.quality_index);
        out.extend_from_slice(&self.true_height.to_le_bytes());
        out.extend_from_slice(&self.true_width.to_le_bytes());
        out.extend_from_slice(&self.latent_channels.to_le_bytes());
        out.extend_from_slice(&self.hyper_channels.to_le_bytes());
        out.extend_from_slice(&self.z_len.to_le_bytes());
        out.extend_from_slice(&self.y_len.to_le_bytes());
    }

    fn read(b: &[u8]) -> Result<Self, EntropyError> {
        if b.len() < 5 {
            return Err(EntropyError::Truncated);
        }
        if b[..4] != MAGIC {
            return Err(EntropyError::BadMagic([b[0], b[1], b[2], b[3]]));
        }
        if b[4] != FORMAT_VERSION {
            return Err(EntropyError::UnsupportedVersion(b[4]));
        }
        if b.len() < HEADER_LEN {
            return Err(EntropyError::Truncated);
        }
        let u32_at = |i: usize| u32::from_le_bytes([b[i], b[i + 1], b[i + 2], b[i + 3]]);
        let u16_at = |i: usize| u16::from_le_bytes([b[i], b[i + 1]]);
        Ok(Self {
            quality_index: b[5],
            true_height: u32_at(6),
            true_width: u32_at(10),
            latent_channels: u16_at(14),
            hyper_channels: u16_at(16),
            z_len: u32_at(18),
            y_len: u32_at(22),
        })
    }
}

/// Writes header and payloads. The header's segment lengths are taken from
/// the payloads themselves. The checksum covers header and both segments.
pub fn serialize(header: &BitstreamHeader, z_payload: &[u8], y_payload: &[u8]) -> Vec<u8> {
    let header = BitstreamHeader {
        z_len: z_payload.len() as u32,
        y_len: y_payload.len() as u32,
        ..*header
    };
    let mut out = Vec::with_capacity(HEADER_LEN + z_payload.len() + y_payload.len() + CHECKSUM_LEN);
    header.write(&mut out);
    out.extend_from_slice(z_payload);
    out.extend_from_slice(y_payload);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// Parses and validates a stream. Magic and version are checked before
/// anything else is read.
pub fn parse(bytes: &[u8]) -> Result<(BitstreamHeader, &[u8], &[u8]), EntropyError> {
    let header = BitstreamHeader::read(bytes)?;
    let body = HEADER_LEN + header.z_len as usize + header.y_len as usize;
    if bytes.len() != body + CHECKSUM_LEN {
        return Err(EntropyError::LengthMismatch {
            expected: body + CHECKSUM_LEN,
            actual: bytes.len(),
        });
    }
    let stored = u32::from_le_bytes(bytes[body..].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(&bytes[..body]);
    if stored != computed {
        return Err(EntropyError::ChecksumMismatch { stored, computed });
    }
    let z_end = HEADER_LEN + header.z_len as usize;
    Ok((header, &bytes[HEADER_LEN..z_end], &bytes[z_end..body]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header() -> BitstreamHeader {
        BitstreamHeader {
            quality_index: 4,
            true_height: 224,
            true_width: 224,
            latent_channels: 192,
            hyper_channels: 128,
            z_len: 0,
            y_len: 0,
        }
    }

    #[test]
    fn round_trip() {
        let z = vec![1u8, 2, 3];
        let y: Vec<u8> = (0..=255).collect();
        let bytes = serialize(&header(), &z, &y);
        let (h, zp, yp) = parse(&bytes).unwrap();
        assert_eq!(h.quality_index, 4);
        assert_eq!((h.z_len, h.y_len), (3, 256));
        assert_eq!((zp, yp), (&z[..], &y[..]));
    }

    #[test]
    fn empty_payloads_occupy_header_and_checksum_only() {
        let bytes = serialize(&header(), &[], &[]);
        assert_eq!(bytes.len(), HEADER_LEN + CHECKSUM_LEN);
        assert_eq!(&bytes[..4], &MAGIC);
        assert_eq!(&bytes[6..10], &224u32.to_le_bytes());
    }

    #[test]
    fn distinct_error_categories() {
        let good = serialize(&header(), &[9, 9], &[7]);
        let mut bad_magic = good.clone();
        bad_magic[0] ^= 1;
        assert!(matches!(parse(&bad_magic), Err(EntropyError::BadMagic(_))));
        let mut bad_version = good.clone();
        bad_version[4] = 9;
        assert!(matches!(parse(&bad_version), Err(EntropyError::UnsupportedVersion(9))));
        let mut bad_crc = good.clone();
        bad_crc[HEADER_LEN] ^= 0x10;
        assert!(matches!(parse(&bad_crc), Err(EntropyError::ChecksumMismatch { .. })));
        assert!(matches!(
            parse(&good[..good.len() - 1]),
            Err(EntropyError::LengthMismatch { .. })
        ));
    }
}

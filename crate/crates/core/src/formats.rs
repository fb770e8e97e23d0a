//! Binary containers for phrase corpora (`.lpr`), correlation sets (`.cor`)
//! and token corpora (`.tok`), plus the FNV-1a digest used in run manifests.

use std::io::{Read, Write};

use crate::codec::TokenSequence;
use crate::correlation::{CorrMatrix, CORR_VEC_LEN};
use crate::error::{Error, Result};
use crate::pianoroll::{Corpus, PianorollPhrase, BARS_PER_PHRASE, PHRASE_CELLS, PITCHES, STEPS_PER_BAR};

pub const LPR_MAGIC: &[u8; 4] = b"LPR1";
pub const COR_MAGIC: &[u8; 4] = b"CORR";
pub const TOK_MAGIC: &[u8; 4] = b"TOK1";

/// Bytes per bit-packed phrase.
pub const PACKED_PHRASE_BYTES: usize = PHRASE_CELLS.div_ceil(8);

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

struct Cursor<'a> {
    format: &'static str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.format,
                format!("truncated at byte {} (need {n} more)", self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        if self.take(4)? != magic {
            return Err(Error::format(self.format, "bad magic"));
        }
        Ok(())
    }

    fn finish(self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::format(
                self.format,
                format!("{} trailing bytes", self.bytes.len() - self.pos),
            ));
        }
        Ok(())
    }
}

fn read_all(mut r: impl Read) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    Ok(buf)
}

fn count_u32(format: &'static str, n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::format(format, "too many entries"))
}

pub fn pack_phrase(phrase: &PianorollPhrase) -> Vec<u8> {
    let mut out = vec![0u8; PACKED_PHRASE_BYTES];
    for (i, &c) in phrase.cells().iter().enumerate() {
        out[i / 8] |= c << (i % 8);
    }
    out
}

pub fn unpack_phrase(bytes: &[u8]) -> Result<PianorollPhrase> {
    let cells: Vec<u8> = (0..PHRASE_CELLS).map(|i| (bytes[i / 8] >> (i % 8)) & 1).collect();
    PianorollPhrase::from_cells(cells).map_err(|e| Error::format("lpr", e.to_string()))
}

pub fn lpr_to_bytes(corpus: &Corpus) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(14 + corpus.len() * PACKED_PHRASE_BYTES);
    out.extend_from_slice(LPR_MAGIC);
    out.extend_from_slice(&count_u32("lpr", corpus.len())?.to_le_bytes());
    for dim in [STEPS_PER_BAR, BARS_PER_PHRASE, PITCHES] {
        out.extend_from_slice(&(dim as u16).to_le_bytes());
    }
    for p in corpus.phrases() {
        out.extend_from_slice(&pack_phrase(p));
    }
    Ok(out)
}

/// Reads a phrase corpus; provenance is the phrase index.
pub fn lpr_from_bytes(bytes: &[u8]) -> Result<Corpus> {
    let mut c = Cursor {
        format: "lpr",
        bytes,
        pos: 0,
    };
    c.magic(LPR_MAGIC)?;
    let count = c.u32()? as usize;
    let dims = [c.u16()?, c.u16()?, c.u16()?];
    if dims.map(usize::from) != [STEPS_PER_BAR, BARS_PER_PHRASE, PITCHES] {
        return Err(Error::format("lpr", format!("unsupported grid T,B,P = {dims:?}")));
    }
    let mut phrases = Vec::with_capacity(count.min(bytes.len() / PACKED_PHRASE_BYTES));
    for _ in 0..count {
        phrases.push(unpack_phrase(c.take(PACKED_PHRASE_BYTES)?)?);
    }
    c.finish()?;
    Ok(Corpus::from_phrases(phrases))
}

pub fn write_lpr(corpus: &Corpus, mut w: impl Write) -> Result<()> {
    w.write_all(&lpr_to_bytes(corpus)?)?;
    Ok(())
}

pub fn read_lpr(r: impl Read) -> Result<Corpus> {
    lpr_from_bytes(&read_all(r)?)
}

/// Values are stored as fp32.
pub fn cor_to_bytes(mats: &[CorrMatrix]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(10 + mats.len() * CORR_VEC_LEN * 4);
    out.extend_from_slice(COR_MAGIC);
    out.extend_from_slice(&count_u32("cor", mats.len())?.to_le_bytes());
    out.extend_from_slice(&(BARS_PER_PHRASE as u16).to_le_bytes());
    for m in mats {
        if m.bars() != BARS_PER_PHRASE {
            return Err(Error::format("cor", format!("matrix has {} bars", m.bars())));
        }
        for v in m.upper() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn cor_from_bytes(bytes: &[u8]) -> Result<Vec<CorrMatrix>> {
    let mut c = Cursor {
        format: "cor",
        bytes,
        pos: 0,
    };
    c.magic(COR_MAGIC)?;
    let count = c.u32()? as usize;
    let bars = usize::from(c.u16()?);
    if bars != BARS_PER_PHRASE {
        return Err(Error::format("cor", format!("unsupported bar count {bars}")));
    }
    let mut mats = Vec::with_capacity(count.min(bytes.len() / (CORR_VEC_LEN * 4)));
    for _ in 0..count {
        let upper: Vec<f64> = c
            .take(CORR_VEC_LEN * 4)?
            .chunks_exact(4)
            .map(|b| f64::from(f32::from_le_bytes(b.try_into().expect("4 bytes"))))
            .collect();
        mats.push(CorrMatrix::from_upper(bars, &upper).map_err(|e| Error::format("cor", e.to_string()))?);
    }
    c.finish()?;
    Ok(mats)
}

pub fn write_cor(mats: &[CorrMatrix], mut w: impl Write) -> Result<()> {
    w.write_all(&cor_to_bytes(mats)?)?;
    Ok(())
}

pub fn read_cor(r: impl Read) -> Result<Vec<CorrMatrix>> {
    cor_from_bytes(&read_all(r)?)
}

pub fn tok_to_bytes(seqs: &[TokenSequence]) -> Result<Vec<u8>> {
    let s = TokenSequence::LEN;
    let mut out = Vec::with_capacity(10 + seqs.len() * s * 2);
    out.extend_from_slice(TOK_MAGIC);
    out.extend_from_slice(&count_u32("tok", seqs.len())?.to_le_bytes());
    out.extend_from_slice(&(s as u16).to_le_bytes());
    for seq in seqs {
        for &k in seq.indices() {
            out.extend_from_slice(&k.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn tok_from_bytes(bytes: &[u8]) -> Result<Vec<TokenSequence>> {
    let mut c = Cursor {
        format: "tok",
        bytes,
        pos: 0,
    };
    c.magic(TOK_MAGIC)?;
    let count = c.u32()? as usize;
    let s = usize::from(c.u16()?);
    if s != TokenSequence::LEN {
        return Err(Error::format("tok", format!("unsupported sequence length {s}")));
    }
    let mut seqs = Vec::with_capacity(count.min(bytes.len() / (2 * s)));
    for _ in 0..count {
        let idx: Vec<u16> = c
            .take(2 * s)?
            .chunks_exact(2)
            .map(|b| u16::from_le_bytes([b[0], b[1]]))
            .collect();
        seqs.push(TokenSequence::new(idx).map_err(|e| Error::format("tok", e.to_string()))?);
    }
    c.finish()?;
    Ok(seqs)
}

pub fn write_tok(seqs: &[TokenSequence], mut w: impl Write) -> Result<()> {
    w.write_all(&tok_to_bytes(seqs)?)?;
    Ok(())
}

pub fn read_tok(r: impl Read) -> Result<Vec<TokenSequence>> {
    tok_from_bytes(&read_all(r)?)
}

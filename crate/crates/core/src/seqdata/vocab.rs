use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const MASK: usize = 1;
pub const CLS: usize = 2;
pub const EOS: usize = 3;
pub const UNK: usize = 4;

const N_SPECIAL: usize = 5;
/// The 20 canonical amino acids, in id order.
pub const CANONICAL: &[u8; 20] = b"ACDEFGHIKLMNPQRSTVWY";
/// Ambiguity and rare residue codes.
pub const AMBIGUOUS: &[u8; 5] = b"XBZUO";

/// Single-character amino-acid vocabulary. Ids are dense from zero:
/// specials, then canonical residues, then ambiguity codes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary;

impl Vocabulary {
    pub const SIZE: usize = N_SPECIAL + CANONICAL.len() + AMBIGUOUS.len();

    pub fn size(&self) -> usize {
        Self::SIZE
    }

    pub fn encode_char(&self, c: u8) -> usize {
        let c = c.to_ascii_uppercase();
        if let Some(i) = CANONICAL.iter().position(|&a| a == c) {
            return N_SPECIAL + i;
        }
        if let Some(i) = AMBIGUOUS.iter().position(|&a| a == c) {
            return N_SPECIAL + CANONICAL.len() + i;
        }
        UNK
    }

    /// Residue symbol for an id; specials have none.
    pub fn symbol(&self, id: usize) -> Option<char> {
        let r = id.checked_sub(N_SPECIAL)?;
        CANONICAL
            .get(r)
            .or_else(|| AMBIGUOUS.get(r - CANONICAL.len()))
            .map(|&b| b as char)
    }

    pub fn is_special(&self, id: usize) -> bool {
        id < N_SPECIAL
    }

    /// Canonical or ambiguity residue.
    pub fn is_residue(&self, id: usize) -> bool {
        (N_SPECIAL..Self::SIZE).contains(&id)
    }

    pub fn canonical_ids(&self) -> std::ops::Range<usize> {
        N_SPECIAL..N_SPECIAL + CANONICAL.len()
    }
}

/// Single-character tokenizer with optional CLS/EOS framing and right
/// truncation to `max_len` total ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tokenizer {
    pub framing: bool,
    pub max_len: usize,
}

impl Default for Tokenizer {
    fn default() -> Self {
        Tokenizer {
            framing: true,
            max_len: 512,
        }
    }
}

impl Tokenizer {
    pub fn new(framing: bool, max_len: usize) -> Self {
        Tokenizer { framing, max_len }
    }

    pub fn tokenize(&self, sequence: &str) -> Result<Vec<usize>> {
        let residues = sequence.trim().as_bytes();
        if residues.is_empty() {
            return Err(Error::InvalidArgument("cannot tokenize an empty sequence".into()));
        }
        let frame = if self.framing { 2 } else { 0 };
        if self.max_len <= frame {
            return Err(Error::Config(format!(
                "max_len {} leaves no room for residues",
                self.max_len
            )));
        }
        let keep = residues.len().min(self.max_len - frame);
        let vocab = Vocabulary;
        let mut ids = Vec::with_capacity(keep + frame);
        if self.framing {
            ids.push(CLS);
        }
        ids.extend(residues[..keep].iter().map(|&c| vocab.encode_char(c)));
        if self.framing {
            ids.push(EOS);
        }
        Ok(ids)
    }

    /// Residue string for `ids`; framing and padding are dropped, MASK
    /// renders as `#` and UNK as `?`.
    pub fn decode(&self, ids: &[usize]) -> String {
        let vocab = Vocabulary;
        ids.iter()
            .filter_map(|&id| match id {
                PAD | CLS | EOS => None,
                MASK => Some('#'),
                UNK => Some('?'),
                _ => vocab.symbol(id),
            })
            .collect()
    }
}

//! Token ids. Corpora store integer ids directly; ids below
//! [`NUM_SPECIAL`] are reserved.

pub const PAD: u32 = 0;
pub const CLS: u32 = 1;
pub const MASK: u32 = 2;
pub const UNK: u32 = 3;
pub const NUM_SPECIAL: usize = 4;

/// First id available to ordinary tokens.
pub const FIRST_WORD: u32 = NUM_SPECIAL as u32;

pub fn is_special(id: u32) -> bool {
    (id as usize) < NUM_SPECIAL
}

use std::fmt;

/// A set of byte values used as record-template formatting characters.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CharSet([u64; 4]);

impl CharSet {
    pub const fn empty() -> CharSet {
        CharSet([0; 4])
    }

    pub fn from_bytes(bytes: &[u8]) -> CharSet {
        let mut set = CharSet::empty();
        for &b in bytes {
            set.insert(b);
        }
        set
    }

    /// ASCII punctuation, space and tab: the bytes allowed to act as formatting.
    ///
    /// `\n` is not a candidate; it always separates blocks and is implicitly part
    /// of every record charset (see [`CharSet::with_newline`]).
    pub fn default_candidates() -> CharSet {
        let mut set = CharSet::empty();
        for b in 0u8..128 {
            if b.is_ascii_punctuation() || b == b' ' || b == b'\t' {
                set.insert(b);
            }
        }
        set
    }

    #[inline]
    pub fn contains(&self, b: u8) -> bool {
        self.0[(b >> 6) as usize] & (1u64 << (b & 63)) != 0
    }

    #[inline]
    pub fn insert(&mut self, b: u8) {
        self.0[(b >> 6) as usize] |= 1u64 << (b & 63);
    }

    pub fn remove(&mut self, b: u8) {
        self.0[(b >> 6) as usize] &= !(1u64 << (b & 63));
    }

    pub fn with(mut self, b: u8) -> CharSet {
        self.insert(b);
        self
    }

    pub fn with_newline(self) -> CharSet {
        self.with(b'\n')
    }

    pub fn union(self, other: CharSet) -> CharSet {
        CharSet(std::array::from_fn(|i| self.0[i] | other.0[i]))
    }

    pub fn intersection(self, other: CharSet) -> CharSet {
        CharSet(std::array::from_fn(|i| self.0[i] & other.0[i]))
    }

    pub fn is_subset(&self, other: &CharSet) -> bool {
        self.intersection(*other) == *self
    }

    pub fn len(&self) -> usize {
        self.0.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.0 == [0; 4]
    }

    /// Members in ascending byte order.
    pub fn iter(&self) -> impl Iterator<Item = u8> + '_ {
        (0u16..256)
            .map(|b| b as u8)
            .filter(move |&b| self.contains(b))
    }

    pub fn to_vec(&self) -> Vec<u8> {
        self.iter().collect()
    }
}

impl fmt::Debug for CharSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, b) in self.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{:?}", b as char)?;
        }
        f.write_str("}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn candidates_are_punctuation_and_blanks() {
        let c = CharSet::default_candidates();
        assert_eq!(c.len(), 34);
        assert!(c.contains(b',') && c.contains(b' ') && c.contains(b'\t'));
        assert!(!c.contains(b'\n') && !c.contains(b'F') && !c.contains(b'7'));
    }

    #[test]
    fn set_ops() {
        let a = CharSet::from_bytes(b",;");
        let b = CharSet::from_bytes(b";:");
        assert_eq!(a.union(b).to_vec(), b",:;".to_vec());
        assert_eq!(a.intersection(b).to_vec(), b";".to_vec());
        assert!(CharSet::from_bytes(b";").is_subset(&a));
        let mut c = a;
        c.remove(b',');
        assert_eq!(c.len(), 1);
        assert!(CharSet::empty().is_empty());
    }
}

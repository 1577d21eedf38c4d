//! Right-angle rotations and flips of square patches.

/// One of the eight symmetries of the square: `op & 3` quarter turns
/// counter-clockwise, then a horizontal flip when `op & 4` is set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dihedral(pub u8);

impl Dihedral {
    pub const IDENTITY: Dihedral = Dihedral(0);

    /// Source coordinates for output pixel `(y, x)` of a `side`-wide square.
    fn source(self, y: usize, x: usize, side: usize) -> (usize, usize) {
        let last = side - 1;
        let (y, x) = if self.0 & 4 != 0 { (y, last - x) } else { (y, x) };
        match self.0 & 3 {
            0 => (y, x),
            1 => (x, last - y),
            2 => (last - y, last - x),
            _ => (last - x, y),
        }
    }

    /// Applies the transform to an interleaved `side × side × channels` array.
    pub fn apply<T: Copy>(self, data: &[T], side: usize, channels: usize) -> Vec<T> {
        assert_eq!(data.len(), side * side * channels, "not a square patch");
        if self.0 == 0 {
            return data.to_vec();
        }
        let mut out = Vec::with_capacity(data.len());
        for y in 0..side {
            for x in 0..side {
                let (sy, sx) = self.source(y, x, side);
                let at = (sy * side + sx) * channels;
                out.extend_from_slice(&data[at..at + channels]);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quarter_turn_of_2x2() {
        // 0 1      1 3
        // 2 3  ->  0 2
        assert_eq!(Dihedral(1).apply(&[0, 1, 2, 3], 2, 1), vec![1, 3, 0, 2]);
        assert_eq!(Dihedral(4).apply(&[0, 1, 2, 3], 2, 1), vec![1, 0, 3, 2]);
    }

    #[test]
    fn all_eight_are_distinct_permutations() {
        let data: Vec<u16> = (0..9).collect();
        let mut seen = std::collections::HashSet::new();
        for op in 0..8 {
            let out = Dihedral(op).apply(&data, 3, 1);
            let mut sorted = out.clone();
            sorted.sort();
            assert_eq!(sorted, data);
            seen.insert(out);
        }
        assert_eq!(seen.len(), 8);
    }

    #[test]
    fn four_quarter_turns_are_identity_and_channels_move_together() {
        let data: Vec<u8> = (0..4 * 4 * 3).map(|v| v as u8).collect();
        let mut cur = data.clone();
        for _ in 0..4 {
            cur = Dihedral(1).apply(&cur, 4, 3);
        }
        assert_eq!(cur, data);
        let turned = Dihedral(3).apply(&data, 4, 3);
        for px in turned.chunks(3) {
            assert_eq!(px[1], px[0] + 1);
            assert_eq!(px[2], px[0] + 2);
        }
    }
}

//! Unscrambled base-2 Sobol sequence with Joe–Kuo direction numbers.

/// Maximum dimension supported by the embedded direction-number table.
pub const MAX_DIM: usize = 64;

const BITS: usize = 32;

// (primitive polynomial, initial direction integers m_1..m_s) for dimensions
// 1..=64; the first entry is the van der Corput dimension.
const TABLE: [(u32, &[u32]); MAX_DIM] = [
    (1, &[1]),
    (3, &[1]),
    (7, &[1, 3]),
    (11, &[1, 3, 1]),
    (13, &[1, 1, 1]),
    (19, &[1, 1, 3, 3]),
    (25, &[1, 3, 5, 13]),
    (37, &[1, 1, 5, 5, 17]),
    (41, &[1, 1, 5, 5, 5]),
    (47, &[1, 1, 7, 11, 19]),
    (55, &[1, 1, 5, 1, 1]),
    (59, &[1, 1, 1, 3, 11]),
    (61, &[1, 3, 5, 5, 31]),
    (67, &[1, 3, 3, 9, 7, 49]),
    (91, &[1, 1, 1, 15, 21, 21]),
    (97, &[1, 3, 1, 13, 27, 49]),
    (103, &[1, 1, 1, 15, 7, 5]),
    (109, &[1, 3, 1, 15, 13, 25]),
    (115, &[1, 1, 5, 5, 19, 61]),
    (131, &[1, 3, 7, 11, 23, 15, 103]),
    (137, &[1, 3, 7, 13, 13, 15, 69]),
    (143, &[1, 1, 3, 13, 7, 35, 63]),
    (145, &[1, 3, 5, 9, 1, 25, 53]),
    (157, &[1, 3, 1, 13, 9, 35, 107]),
    (167, &[1, 3, 1, 5, 27, 61, 31]),
    (171, &[1, 1, 5, 11, 19, 41, 61]),
    (185, &[1, 3, 5, 3, 3, 13, 69]),
    (191, &[1, 1, 7, 13, 1, 19, 1]),
    (193, &[1, 3, 7, 5, 13, 19, 59]),
    (203, &[1, 1, 3, 9, 25, 29, 41]),
    (211, &[1, 3, 5, 13, 23, 1, 55]),
    (213, &[1, 3, 7, 3, 13, 59, 17]),
    (229, &[1, 3, 1, 3, 5, 53, 69]),
    (239, &[1, 1, 5, 5, 23, 33, 13]),
    (241, &[1, 1, 7, 7, 1, 61, 123]),
    (247, &[1, 1, 7, 9, 13, 61, 49]),
    (253, &[1, 3, 3, 5, 3, 55, 33]),
    (285, &[1, 3, 1, 15, 31, 13, 49, 245]),
    (299, &[1, 3, 5, 15, 31, 59, 63, 97]),
    (301, &[1, 3, 1, 11, 11, 11, 77, 249]),
    (333, &[1, 3, 1, 11, 27, 43, 71, 9]),
    (351, &[1, 1, 7, 15, 21, 11, 81, 45]),
    (355, &[1, 3, 7, 3, 25, 31, 65, 79]),
    (357, &[1, 3, 1, 1, 19, 11, 3, 205]),
    (361, &[1, 1, 5, 9, 19, 21, 29, 157]),
    (369, &[1, 3, 7, 11, 1, 33, 89, 185]),
    (391, &[1, 3, 3, 3, 15, 9, 79, 71]),
    (397, &[1, 3, 7, 11, 15, 39, 119, 27]),
    (425, &[1, 1, 3, 1, 11, 31, 97, 225]),
    (451, &[1, 1, 1, 3, 23, 43, 57, 177]),
    (463, &[1, 3, 7, 7, 17, 17, 37, 71]),
    (487, &[1, 3, 1, 5, 27, 63, 123, 213]),
    (501, &[1, 1, 3, 5, 11, 43, 53, 133]),
    (529, &[1, 3, 5, 5, 29, 17, 47, 173, 479]),
    (539, &[1, 3, 3, 11, 3, 1, 109, 9, 69]),
    (545, &[1, 1, 1, 5, 17, 39, 23, 5, 343]),
    (557, &[1, 3, 1, 5, 25, 15, 31, 103, 499]),
    (563, &[1, 1, 1, 11, 11, 17, 63, 105, 183]),
    (601, &[1, 1, 5, 11, 9, 29, 97, 231, 363]),
    (607, &[1, 1, 5, 15, 19, 45, 41, 7, 383]),
    (617, &[1, 3, 7, 7, 31, 19, 83, 137, 221]),
    (623, &[1, 1, 1, 3, 23, 15, 111, 223, 83]),
    (631, &[1, 1, 5, 13, 31, 15, 55, 25, 161]),
    (637, &[1, 1, 3, 13, 25, 47, 39, 87, 257]),
];

/// Direction numbers, `v[d][j]` scaled to 32-bit fixed point.
#[derive(Debug, Clone)]
pub struct SobolSequence {
    directions: Vec<[u32; BITS]>,
}

impl SobolSequence {
    /// `None` if `dim` exceeds [`MAX_DIM`] or is zero.
    pub fn new(dim: usize) -> Option<Self> {
        if dim == 0 || dim > MAX_DIM {
            return None;
        }
        let mut directions = Vec::with_capacity(dim);
        directions.push(std::array::from_fn(|j| 1u32 << (BITS - 1 - j)));
        for &(poly, init) in TABLE.iter().take(dim).skip(1) {
            let degree = (31 - poly.leading_zeros()) as usize;
            let mut m = [0u32; BITS];
            m[..degree].copy_from_slice(&init[..degree]);
            for j in degree..BITS {
                let mut next = m[j - degree] ^ (m[j - degree] << degree);
                for k in 1..degree {
                    if (poly >> (degree - k)) & 1 == 1 {
                        next ^= m[j - k] << k;
                    }
                }
                m[j] = next;
            }
            directions.push(std::array::from_fn(|j| m[j] << (BITS - 1 - j)));
        }
        Some(Self { directions })
    }

    pub fn dim(&self) -> usize {
        self.directions.len()
    }

    /// First `count` points in the unit cube, starting at the origin.
    pub fn points(&self, count: usize) -> Vec<Vec<f64>> {
        let scale = 1.0 / (1u64 << BITS) as f64;
        let mut state = vec![0u32; self.dim()];
        let mut out = Vec::with_capacity(count);
        for i in 0..count {
            if i > 0 {
                // Gray-code update: flip the direction of the lowest zero bit of i-1.
                let c = (i - 1).trailing_ones() as usize;
                for (s, v) in state.iter_mut().zip(&self.directions) {
                    *s ^= v[c];
                }
            }
            out.push(state.iter().map(|&s| f64::from(s) * scale).collect());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_points_match_reference() {
        let s = SobolSequence::new(3).unwrap();
        let pts = s.points(8);
        let expected = [
            [0.0, 0.0, 0.0],
            [0.5, 0.5, 0.5],
            [0.75, 0.25, 0.25],
            [0.25, 0.75, 0.75],
            [0.375, 0.375, 0.625],
            [0.875, 0.875, 0.125],
            [0.625, 0.125, 0.875],
            [0.125, 0.625, 0.375],
        ];
        for (p, e) in pts.iter().zip(expected) {
            assert_eq!(p.as_slice(), e.as_slice());
        }
    }

    // Values generated by an independent unscrambled Sobol implementation
    // using the same Joe–Kuo table, columns 0, 1, 2, 7, 31, 62, 63.
    #[test]
    fn high_dimensions_match_reference() {
        let s = SobolSequence::new(64).unwrap();
        let pts = s.points(128);
        let cols = [0, 1, 2, 7, 31, 62, 63];
        let expected: [(usize, [f64; 7]); 4] = [
            (5, [0.875, 0.875, 0.125, 0.375, 0.625, 0.375, 0.625]),
            (13, [0.8125, 0.6875, 0.8125, 0.5625, 0.4375, 0.0625, 0.0625]),
            (
                77,
                [0.8359375, 0.8359375, 0.0078125, 0.6484375, 0.7421875, 0.2578125, 0.8828125],
            ),
            (
                127,
                [0.0078125, 0.6640625, 0.5546875, 0.0703125, 0.1328125, 0.4296875, 0.3046875],
            ),
        ];
        for (idx, row) in expected {
            for (c, e) in cols.iter().zip(row) {
                assert_eq!(pts[idx][*c], e, "point {idx} dim {c}");
            }
        }
    }

    #[test]
    fn dimension_limits() {
        assert!(SobolSequence::new(0).is_none());
        assert!(SobolSequence::new(MAX_DIM + 1).is_none());
    }
}

//! Random linear network coding over GF(2).

use rand::Rng;
use thiserror::Error;

use crate::bits::Bits;
use crate::engine::{Packet, PacketKind};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RlncError {
    #[error("packet belongs to generation {got}, space holds {expected}")]
    GenerationMismatch { expected: u32, got: u32 },
    #[error("expected {expected} bits, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("only coded packets can be inserted")]
    NotCoded,
    #[error("the zero vector is not a valid test vector")]
    ZeroVector,
    #[error("an empty space has nothing to encode")]
    Empty,
    #[error("a generation needs at least one message")]
    NoMessages,
}

/// `g` messages of equal length coded together.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Generation {
    pub id: u32,
    pub messages: Vec<Bits>,
}

impl Generation {
    pub fn new(id: u32, messages: Vec<Bits>) -> Result<Self, RlncError> {
        let first = messages.first().ok_or(RlncError::NoMessages)?.len();
        if let Some(m) = messages.iter().find(|m| m.len() != first) {
            return Err(RlncError::LengthMismatch { expected: first, got: m.len() });
        }
        Ok(Generation { id, messages })
    }

    /// `g` random messages of `body_len` bits.
    pub fn random<R: Rng + ?Sized>(id: u32, g: usize, body_len: usize, rng: &mut R) -> Self {
        Generation { id, messages: (0..g).map(|_| Bits::random(body_len, rng)).collect() }
    }

    pub fn size(&self) -> usize {
        self.messages.len()
    }

    pub fn body_len(&self) -> usize {
        self.messages[0].len()
    }

    /// The body a packet with these coefficients must carry.
    pub fn combine(&self, coefficients: &Bits) -> Bits {
        let mut body = Bits::zeros(self.body_len());
        for i in coefficients.ones() {
            body.xor_assign(&self.messages[i]);
        }
        body
    }
}

/// Row-reduced basis of everything a node has received for one generation. Rows
/// are kept in reduced echelon form sorted by pivot.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KnowledgeSpace {
    generation: u32,
    size: usize,
    body_len: usize,
    rows: Vec<(usize, Bits, Bits)>,
}

impl KnowledgeSpace {
    pub fn new(generation: u32, size: usize, body_len: usize) -> Self {
        KnowledgeSpace { generation, size, body_len, rows: Vec::new() }
    }

    /// The space of a node holding every message of `gen`.
    pub fn full(gen: &Generation) -> Self {
        let mut s = KnowledgeSpace::new(gen.id, gen.size(), gen.body_len());
        for (i, m) in gen.messages.iter().enumerate() {
            s.rows.push((i, Bits::unit(gen.size(), i), m.clone()));
        }
        s
    }

    pub fn generation(&self) -> u32 {
        self.generation
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn rank(&self) -> usize {
        self.rows.len()
    }

    /// Forgets everything received.
    pub fn clear(&mut self) {
        self.rows.clear();
    }

    pub fn is_full(&self) -> bool {
        self.rows.len() == self.size
    }

    pub fn basis(&self) -> impl Iterator<Item = (&Bits, &Bits)> {
        self.rows.iter().map(|(_, c, b)| (c, b))
    }

    /// Adds a coded packet; true iff it was innovative.
    pub fn insert_packet(&mut self, packet: &Packet) -> Result<bool, RlncError> {
        match &packet.kind {
            PacketKind::Coded { generation, coefficients, body } => {
                if *generation != self.generation {
                    return Err(RlncError::GenerationMismatch { expected: self.generation, got: *generation });
                }
                self.insert(coefficients.clone(), body.clone())
            }
            _ => Err(RlncError::NotCoded),
        }
    }

    pub fn insert(&mut self, mut coefficients: Bits, mut body: Bits) -> Result<bool, RlncError> {
        if coefficients.len() != self.size {
            return Err(RlncError::LengthMismatch { expected: self.size, got: coefficients.len() });
        }
        if body.len() != self.body_len {
            return Err(RlncError::LengthMismatch { expected: self.body_len, got: body.len() });
        }
        for (p, c, b) in &self.rows {
            if coefficients.get(*p) {
                coefficients.xor_assign(c);
                body.xor_assign(b);
            }
        }
        let Some(pivot) = coefficients.first_one() else { return Ok(false) };
        for (_, c, b) in self.rows.iter_mut() {
            if c.get(pivot) {
                c.xor_assign(&coefficients);
                b.xor_assign(&body);
            }
        }
        let at = self.rows.partition_point(|(p, _, _)| *p < pivot);
        self.rows.insert(at, (pivot, coefficients, body));
        Ok(true)
    }

    /// A uniformly random nonzero element of the space, as coefficients and body.
    pub fn encode_random<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(Bits, Bits), RlncError> {
        if self.rows.is_empty() {
            return Err(RlncError::Empty);
        }
        loop {
            let mut c = Bits::zeros(self.size);
            let mut b = Bits::zeros(self.body_len);
            for (_, rc, rb) in &self.rows {
                if rng.gen::<bool>() {
                    c.xor_assign(rc);
                    b.xor_assign(rb);
                }
            }
            if !c.is_zero() {
                return Ok((c, b));
            }
        }
    }

    pub fn encode_packet<R: Rng + ?Sized>(&self, src: usize, round: u64, rng: &mut R) -> Result<Packet, RlncError> {
        let (coefficients, body) = self.encode_random(rng)?;
        Ok(Packet::new(src, round, PacketKind::Coded { generation: self.generation, coefficients, body }))
    }

    /// The original messages once the space is full.
    pub fn decode(&self) -> Option<Vec<Bits>> {
        // Full rank in reduced echelon form means row `i` is the unit vector `e_i`.
        self.is_full().then(|| self.rows.iter().map(|(_, _, b)| b.clone()).collect())
    }

    /// True iff some basis row has odd inner product with `mu`.
    pub fn is_infected(&self, mu: &Bits) -> Result<bool, RlncError> {
        if mu.len() != self.size {
            return Err(RlncError::LengthMismatch { expected: self.size, got: mu.len() });
        }
        if mu.is_zero() {
            return Err(RlncError::ZeroVector);
        }
        Ok(self.rows.iter().any(|(_, c, _)| c.dot(mu)))
    }

    /// Every basis body matches its coefficients applied to the ground truth.
    pub fn consistent_with(&self, gen: &Generation) -> bool {
        self.rows.iter().all(|(_, c, b)| gen.combine(c) == *b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::SmallRng;
    use rand::SeedableRng;

    fn bits(s: &str) -> Bits {
        Bits::parse_bit_string(s).unwrap()
    }

    /// Rank by plain elimination on boolean rows.
    fn dense_rank(mut rows: Vec<Vec<bool>>) -> usize {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut rank = 0;
        for col in 0..cols {
            let Some(p) = (rank..rows.len()).find(|&i| rows[i][col]) else { continue };
            rows.swap(rank, p);
            for i in 0..rows.len() {
                if i != rank && rows[i][col] {
                    let pivot = rows[rank].clone();
                    for (a, b) in rows[i].iter_mut().zip(pivot) {
                        *a ^= b;
                    }
                }
            }
            rank += 1;
        }
        rank
    }

    #[test]
    fn unit_insert_and_repeat() {
        let mut s = KnowledgeSpace::new(0, 4, 3);
        assert!(s.insert(bits("1000"), bits("101")).unwrap());
        assert!(!s.insert(bits("1000"), bits("101")).unwrap());
        assert_eq!(s.rank(), 1);
    }

    #[test]
    fn rejects_wrong_packets() {
        let mut s = KnowledgeSpace::new(3, 2, 2);
        assert_eq!(s.insert_packet(&Packet::noise(0, 1)), Err(RlncError::NotCoded));
        let p = Packet::new(0, 1, PacketKind::Coded { generation: 4, coefficients: bits("10"), body: bits("11") });
        assert_eq!(s.insert_packet(&p), Err(RlncError::GenerationMismatch { expected: 3, got: 4 }));
        assert_eq!(s.insert(bits("100"), bits("11")), Err(RlncError::LengthMismatch { expected: 2, got: 3 }));
        assert_eq!(s.is_infected(&bits("00")), Err(RlncError::ZeroVector));
    }

    #[test]
    fn rank_matches_dense_elimination() {
        for seed in 0..50 {
            let mut rng = SmallRng::seed_from_u64(seed);
            let mut s = KnowledgeSpace::new(0, 8, 1);
            let mut dense = Vec::new();
            for _ in 0..20 {
                let row: Vec<bool> = (0..8).map(|_| rng.gen_bool(0.3)).collect();
                let before = s.rank();
                let innovative = s.insert(Bits::from_bools(&row), Bits::zeros(1)).unwrap();
                dense.push(row);
                assert_eq!(s.rank(), dense_rank(dense.clone()));
                assert_eq!(innovative, s.rank() == before + 1);
            }
        }
    }

    #[test]
    fn two_by_two_decode() {
        let gen = Generation::new(0, vec![bits("1100"), bits("1010")]).unwrap();
        let mut s = KnowledgeSpace::new(0, 2, 4);
        s.insert(bits("11"), gen.combine(&bits("11"))).unwrap();
        assert_eq!(s.decode(), None);
        s.insert(bits("01"), gen.combine(&bits("01"))).unwrap();
        assert_eq!(s.decode().unwrap(), gen.messages);
        assert_eq!(KnowledgeSpace::full(&gen).decode().unwrap(), gen.messages);
    }

    #[test]
    fn random_full_rank_decodes_to_originals() {
        for seed in 0..100 {
            let mut rng = SmallRng::seed_from_u64(seed);
            let gen = Generation::random(1, 16, 40, &mut rng);
            let source = KnowledgeSpace::full(&gen);
            let mut s = KnowledgeSpace::new(1, 16, 40);
            while !s.is_full() {
                let (c, b) = source.encode_random(&mut rng).unwrap();
                s.insert(c, b).unwrap();
                assert!(s.consistent_with(&gen));
            }
            assert_eq!(s.decode().unwrap(), gen.messages, "seed {seed}");
        }
    }

    #[test]
    fn rank_one_space_always_sends_its_vector() {
        let mut s = KnowledgeSpace::new(0, 5, 2);
        s.insert(bits("01100"), bits("11")).unwrap();
        let mut rng = SmallRng::seed_from_u64(9);
        for _ in 0..50 {
            assert_eq!(s.encode_random(&mut rng).unwrap(), (bits("01100"), bits("11")));
        }
        assert_eq!(KnowledgeSpace::new(0, 5, 2).encode_random(&mut rng), Err(RlncError::Empty));
    }

    #[test]
    fn encoding_is_uniform_over_nonzero_vectors() {
        let gen = Generation::new(0, vec![bits("1"), bits("0"), bits("1")]).unwrap();
        let s = KnowledgeSpace::full(&gen);
        let mut rng = SmallRng::seed_from_u64(5);
        let mut counts = [0u32; 8];
        let draws = 100_000;
        for _ in 0..draws {
            let (c, _) = s.encode_random(&mut rng).unwrap();
            counts[c.ones().map(|i| 1 << i).sum::<usize>()] += 1;
        }
        assert_eq!(counts[0], 0);
        let expected = draws as f64 / 7.0;
        let chi2: f64 = counts[1..].iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 6 degrees of freedom; 22.46 is the 0.999 quantile.
        assert!(chi2 < 22.46, "chi2 {chi2}");
    }

    #[test]
    fn infection_basics() {
        let mut s = KnowledgeSpace::new(0, 2, 1);
        s.insert(bits("10"), bits("0")).unwrap();
        assert!(s.is_infected(&bits("10")).unwrap());
        assert!(!s.is_infected(&bits("01")).unwrap());
    }
}

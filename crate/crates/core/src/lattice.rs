//! Discrete torus geometry and packed occupancy configurations.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::ModelParams;

/// The torus `Z^d / nZ^d` with a precomputed neighbour table.
///
/// Neighbour order of site `x` is `x+e_1, x-e_1, ..., x+e_d, x-e_d`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Torus {
    d: usize,
    n: usize,
    volume: usize,
    table: Vec<u32>,
}

impl Torus {
    pub fn new(d: usize, n: usize) -> Result<Self> {
        if d == 0 || n < 2 {
            return Err(Error::InvalidScaling("torus needs d >= 1 and n >= 2"));
        }
        let volume = n
            .checked_pow(d as u32)
            .filter(|&v| v <= u32::MAX as usize)
            .ok_or(Error::InvalidScaling("torus volume overflows"))?;
        let mut table = vec![0u32; volume * 2 * d];
        let mut stride = 1;
        for i in 0..d {
            for x in 0..volume {
                let coord = (x / stride) % n;
                let up = if coord + 1 == n { x + stride - n * stride } else { x + stride };
                let down = if coord == 0 { x + (n - 1) * stride } else { x - stride };
                table[x * 2 * d + 2 * i] = up as u32;
                table[x * 2 * d + 2 * i + 1] = down as u32;
            }
            stride *= n;
        }
        Ok(Self { d, n, volume, table })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn side(&self) -> usize {
        self.n
    }

    pub fn volume(&self) -> usize {
        self.volume
    }

    /// Number of ordered bonds `(x, x+e_i)`, `d n^d`.
    pub fn bond_count(&self) -> usize {
        self.d * self.volume
    }

    #[inline]
    pub fn neighbors(&self, site: usize) -> &[u32] {
        &self.table[site * 2 * self.d..(site + 1) * 2 * self.d]
    }

    /// `x + e_i`.
    #[inline]
    pub fn step_up(&self, site: usize, axis: usize) -> usize {
        self.table[site * 2 * self.d + 2 * axis] as usize
    }

    /// `x - e_i`.
    #[inline]
    pub fn step_down(&self, site: usize, axis: usize) -> usize {
        self.table[site * 2 * self.d + 2 * axis + 1] as usize
    }

    /// Endpoints of bond `b = x d + i`, i.e. `(x, x+e_i)`.
    #[inline]
    pub fn bond(&self, b: usize) -> (usize, usize) {
        let x = b / self.d;
        (x, self.step_up(x, b % self.d))
    }

    pub fn coords(&self, site: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.d);
        let mut s = site;
        for _ in 0..self.d {
            out.push(s % self.n);
            s /= self.n;
        }
        out
    }

    pub fn site(&self, coords: &[usize]) -> usize {
        coords.iter().rev().fold(0, |acc, &c| acc * self.n + c % self.n)
    }
}

/// A single effective transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Event {
    /// Exchange across the ordered bond `(x, y = x + e_axis)`.
    Exchange { x: usize, y: usize, axis: usize },
    Flip { x: usize },
}

/// Occupancies `η ∈ {0,1}^{T_n^d}`, one bit per site, with a cached count.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Configuration {
    words: Vec<u64>,
    len: usize,
    count: usize,
}

impl Configuration {
    pub fn empty(volume: usize) -> Self {
        Self { words: vec![0; volume.div_ceil(64)], len: volume, count: 0 }
    }

    pub fn full(volume: usize) -> Self {
        let mut c = Self::empty(volume);
        for x in 0..volume {
            c.set(x, true);
        }
        c
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        let mut c = Self::empty(bits.len());
        for (x, &b) in bits.iter().enumerate() {
            c.set(x, b);
        }
        c
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn particle_count(&self) -> usize {
        self.count
    }

    #[inline]
    pub fn get(&self, x: usize) -> bool {
        (self.words[x >> 6] >> (x & 63)) & 1 == 1
    }

    #[inline]
    pub fn occ(&self, x: usize) -> f64 {
        if self.get(x) {
            1.0
        } else {
            0.0
        }
    }

    pub fn set(&mut self, x: usize, v: bool) {
        if self.get(x) != v {
            self.flip(x);
        }
    }

    /// `η ↦ η^x`.
    #[inline]
    pub fn flip(&mut self, x: usize) {
        let w = &mut self.words[x >> 6];
        *w ^= 1 << (x & 63);
        if (*w >> (x & 63)) & 1 == 1 {
            self.count += 1;
        } else {
            self.count -= 1;
        }
    }

    /// `η ↦ η^{x,y}`.
    #[inline]
    pub fn swap(&mut self, x: usize, y: usize) {
        if self.get(x) != self.get(y) {
            self.words[x >> 6] ^= 1 << (x & 63);
            self.words[y >> 6] ^= 1 << (y & 63);
        }
    }

    pub fn apply(&mut self, event: &Event) {
        match *event {
            Event::Exchange { x, y, .. } => self.swap(x, y),
            Event::Flip { x } => self.flip(x),
        }
    }

    /// Occupancy at `z` after `event` is applied to `self`.
    #[inline]
    pub fn occ_after(&self, event: &Event, z: usize) -> f64 {
        let v = match *event {
            Event::Exchange { x, y, .. } if z == x => self.get(y),
            Event::Exchange { x, y, .. } if z == y => self.get(x),
            Event::Flip { x } if z == x => !self.get(x),
            _ => self.get(z),
        };
        if v {
            1.0
        } else {
            0.0
        }
    }

    /// Particle count from scratch by word popcount.
    pub fn recount(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(|x| self.get(x))
    }

    /// Occupied neighbours of `x`.
    #[inline]
    pub fn neighbor_sum(&self, torus: &Torus, x: usize) -> usize {
        torus.neighbors(x).iter().filter(|&&y| self.get(y as usize)).count()
    }

    /// Snapshot bytes: magic `RDCF`, `d` and `n` as little-endian u32, then the
    /// occupancy bits packed little-endian (site 0 in bit 0 of byte 0).
    pub fn to_snapshot(&self, torus: &Torus) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.len.div_ceil(8));
        out.extend_from_slice(b"RDCF");
        out.extend_from_slice(&(torus.dim() as u32).to_le_bytes());
        out.extend_from_slice(&(torus.side() as u32).to_le_bytes());
        for byte in 0..self.len.div_ceil(8) {
            let w = self.words[byte / 8];
            out.push((w >> (8 * (byte % 8))) as u8);
        }
        out
    }

    /// Inverse of [`Configuration::to_snapshot`]; returns `(d, n, cfg)`.
    pub fn from_snapshot(bytes: &[u8]) -> Result<(usize, usize, Self)> {
        if bytes.len() < 12 || &bytes[..4] != b"RDCF" {
            return Err(Error::Snapshot("missing RDCF header"));
        }
        let d = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let volume = n
            .checked_pow(d as u32)
            .ok_or(Error::Snapshot("volume overflows"))?;
        let body = &bytes[12..];
        if body.len() != volume.div_ceil(8) {
            return Err(Error::Snapshot("payload length does not match header"));
        }
        let mut cfg = Self::empty(volume);
        for x in 0..volume {
            if (body[x / 8] >> (x % 8)) & 1 == 1 {
                cfg.set(x, true);
            }
        }
        Ok((d, n, cfg))
    }
}

/// Glauber rate `c_x(η) = (a + λ/(2d) Σ_{y∼x} η_y)(1-η_x) + b η_x`.
#[inline]
pub fn flip_rate(cfg: &Configuration, torus: &Torus, x: usize, p: &ModelParams) -> f64 {
    if cfg.get(x) {
        p.b
    } else {
        let s = cfg.neighbor_sum(torus, x) as f64;
        p.a + p.lambda / (2.0 * torus.dim() as f64) * s
    }
}
